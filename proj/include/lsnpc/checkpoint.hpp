#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsnpc/tensor.hpp"

namespace lsnpc {

/// Tensor checkpoint layout:
///   "LSNP" | version u8 | count u32 |
///   count x (name str, rank u32, dims u64[rank], offset u64)  -- sorted by name
///   payload: little-endian f64 values, offsets relative to payload start
inline constexpr char kCheckpointMagic[4] = {'L', 'S', 'N', 'P'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace lsnpc
