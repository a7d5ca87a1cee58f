#include "stylesketch/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "stylesketch/error.hpp"

namespace stylesketch {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(std::span<const uint8_t> bytes, size_t& pos) {
  if (pos + 4 > bytes.size()) throw IoError("tensor file truncated in header");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

std::vector<uint8_t> encode_tensor(const Tensor& t) {
  std::vector<uint8_t> out(std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u32(out, kDtypeFloat32);
  put_u32(out, static_cast<uint32_t>(t.dim()));
  for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
  out.reserve(out.size() + 4 * static_cast<size_t>(t.numel()));
  for (float f : t.data()) put_u32(out, std::bit_cast<uint32_t>(f));
  return out;
}

Tensor decode_tensor(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kTensorMagic, 8) != 0) {
    throw IoError("bad tensor magic");
  }
  size_t pos = 8;
  const uint32_t dtype = get_u32(bytes, pos);
  if (dtype != kDtypeFloat32) throw IoError("unsupported tensor dtype code " + std::to_string(dtype));
  const uint32_t ndim = get_u32(bytes, pos);
  Shape shape;
  for (uint32_t i = 0; i < ndim; ++i) shape.push_back(get_u32(bytes, pos));
  const int64_t n = numel_of(shape);
  if (bytes.size() - pos != static_cast<size_t>(n) * 4) {
    throw IoError("tensor payload size " + std::to_string(bytes.size() - pos) + " does not match shape " +
                  shape_str(shape));
  }
  std::vector<float> data(static_cast<size_t>(n));
  for (auto& f : data) f = std::bit_cast<float>(get_u32(bytes, pos));
  return Tensor(std::move(shape), std::move(data));
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_tensor(t)); }

Tensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace stylesketch
