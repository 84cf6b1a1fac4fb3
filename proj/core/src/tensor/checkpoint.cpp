#include "deal/tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace deal {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'A', 'L', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void doubles(double* dst, std::size_t n) {
        need(n * sizeof(double));
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::map<std::string, Tensor>& tensors) {
    std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint64_t>(out, d);
        for (double v : t.data()) put<double>(out, v);
    }
    return out;
}

std::map<std::string, Tensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes);
    if (in.string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    std::map<std::string, Tensor> tensors;
    for (std::uint32_t e = 0; e < count; ++e) {
        std::string name = in.string(in.get<std::uint32_t>());
        const auto rank = in.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
        std::vector<double> data(shape_numel(shape));
        in.doubles(data.data(), data.size());
        tensors.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    if (!in.done()) throw CheckpointError("trailing bytes after checkpoint entries");
    return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors) {
    const auto bytes = encode_checkpoint(tensors);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("short write on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

void assign_checkpoint(const std::map<std::string, Tensor>& source, const std::map<std::string, Tensor>& params) {
    for (const auto& [name, param] : params) {
        auto it = source.find(name);
        if (it == source.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape() != param.shape()) {
            throw CheckpointError("parameter '" + name + "' has shape " + shape_to_string(param.shape()) +
                                  " but checkpoint holds " + shape_to_string(it->second.shape()));
        }
    }
    for (const auto& [name, t] : source) {
        if (!params.count(name)) throw CheckpointError("checkpoint has unexpected parameter '" + name + "'");
    }
    for (const auto& [name, param] : params) {
        Tensor target = param;
        auto src = source.at(name).data();
        std::copy(src.begin(), src.end(), target.mutable_data().begin());
    }
}

}  // namespace deal
