#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "deal/tensor/tensor.hpp"

namespace deal {

// Binary layout, all integers little-endian:
//   magic "DEALCKPT" | u32 version | u32 entry count
//   per entry (sorted by name): u32 name length | name bytes | u32 rank |
//   u64 extent * rank | f64 payload * numel
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_checkpoint(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into existing parameters in place; names and
// shapes must match exactly.
void assign_checkpoint(const std::map<std::string, Tensor>& source, const std::map<std::string, Tensor>& params);

}  // namespace deal
