#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stylesketch/tensor.hpp"

// Portable tensor file: 8-byte magic "PTNSR01\0", then little-endian uint32
// dtype code (0 = float32), ndim, ndim dims, then the row-major little-endian
// IEEE-754 binary32 payload.
namespace stylesketch {

inline constexpr char kTensorMagic[8] = {'P', 'T', 'N', 'S', 'R', '0', '1', '\0'};
inline constexpr uint32_t kDtypeFloat32 = 0;

std::vector<uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes);

}  // namespace stylesketch
