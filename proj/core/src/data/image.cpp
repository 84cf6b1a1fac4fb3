#include "deal/data/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <fstream>
#include <string>
#include <iterator>

namespace deal::data {

Image::Image(std::size_t width, std::size_t height) : width_(width), height_(height), pixels_(3 * width * height, 0) {}

Tensor Image::to_tensor(std::size_t pad_h, std::size_t pad_w) const {
    const std::size_t h = std::max(pad_h, height_);
    const std::size_t w = std::max(pad_w, width_);
    std::vector<double> data(3 * h * w, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < height_; ++y) {
            for (std::size_t x = 0; x < width_; ++x) data[(c * h + y) * w + x] = at(c, y, x) / 255.0;
        }
    }
    return Tensor::from_data({1, 3, h, w}, std::move(data));
}

namespace {

struct PngWriteBuffer {
    std::vector<std::uint8_t> bytes;
};

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* buffer = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
    buffer->bytes.insert(buffer->bytes.end(), data, data + length);
}

void png_flush_noop(png_structp) {}

struct PngReadCursor {
    const std::vector<std::uint8_t>* bytes;
    std::size_t pos;
};

void png_read_from_vector(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
    if (cursor->pos + length > cursor->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, cursor->bytes->data() + cursor->pos, length);
    cursor->pos += length;
}

// libpng reports errors by longjmp; the message is parked here first.
thread_local std::string g_png_error;

[[noreturn]] void png_error_to_jump(png_structp png, png_const_charp message) {
    g_png_error = message;
    png_longjmp(png, 1);
}

void png_warning_silent(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.empty()) throw ImageIoError("cannot encode an empty image");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_jump, png_warning_silent);
    png_infop info = png_create_info_struct(png);
    PngWriteBuffer buffer;
    std::vector<std::uint8_t> row(3 * image.width());
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError("PNG encode failed: " + g_png_error);
    }
    {
        png_set_write_fn(png, &buffer, png_write_to_vector, png_flush_noop);
        png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (std::size_t y = 0; y < image.height(); ++y) {
            for (std::size_t x = 0; x < image.width(); ++x) {
                for (std::size_t c = 0; c < 3; ++c) row[3 * x + c] = image.at(c, y, x);
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    return std::move(buffer.bytes);
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageIoError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_jump, png_warning_silent);
    png_infop info = png_create_info_struct(png);
    PngReadCursor cursor{&bytes, 0};
    Image image;
    std::vector<std::uint8_t> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("PNG decode failed: " + g_png_error);
    }
    {
        png_set_read_fn(png, &cursor, png_read_from_vector);
        png_read_info(png, info);
        const png_uint_32 width = png_get_image_width(png, info);
        const png_uint_32 height = png_get_image_height(png, info);
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        image = Image(width, height);
        row.resize(png_get_rowbytes(png, info));
        for (std::size_t y = 0; y < height; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (std::size_t x = 0; x < width; ++x) {
                for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = row[3 * x + c];
            }
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageIoError("cannot write image " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("missing image file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_png(bytes);
    } catch (const ImageIoError& e) {
        throw ImageIoError(path.string() + ": " + e.what());
    }
}

}  // namespace deal::data
