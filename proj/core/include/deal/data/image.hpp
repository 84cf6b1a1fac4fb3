#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "deal/tensor/tensor.hpp"

namespace deal::data {

class ImageIoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// 8-bit RGB raster, planar (R plane, G plane, B plane).
class Image {
  public:
    Image() = default;
    Image(std::size_t width, std::size_t height);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    bool empty() const { return pixels_.empty(); }

    std::uint8_t& at(std::size_t channel, std::size_t y, std::size_t x) {
        return pixels_[(channel * height_ + y) * width_ + x];
    }
    std::uint8_t at(std::size_t channel, std::size_t y, std::size_t x) const {
        return pixels_[(channel * height_ + y) * width_ + x];
    }
    const std::vector<std::uint8_t>& planes() const { return pixels_; }

    // 1x3xHxW tensor with values k/255, optionally zero-padded on the
    // bottom/right to (pad_h, pad_w).
    Tensor to_tensor(std::size_t pad_h = 0, std::size_t pad_w = 0) const;

    friend bool operator==(const Image&, const Image&) = default;

  private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace deal::data
