#pragma once

// "TCNN" container: magic, u16 version, then records of (u16 name length,
// name, u8 rank, u32 extents, float32 values) up to end of file. All
// integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tcnn/network.hpp"
#include "tcnn/tensor.hpp"

namespace tcnn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

void write_tensor_records(const std::vector<NamedTensor>& records, const std::filesystem::path& path);

/// Throws DataError (bad_magic, truncated, format) on malformed files.
std::vector<NamedTensor> read_tensor_records(const std::filesystem::path& path);

/// Stores every parameter of `net` (frozen ones included) in network order.
template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path);

/// Loads values into `net`; names, count and shapes must match exactly.
template <typename T>
void load_checkpoint(Network<T>& net, const std::filesystem::path& path);

} // namespace tcnn
