#include "fcc/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "fcc/error.hpp"

namespace fcc {
namespace {

constexpr char kMagic[4] = {'F', 'C', 'C', 'T'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int shift = 0; shift < 64; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int b = 0; b < width; ++b) v |= std::uint64_t{bytes[offset + b]} << (8 * b);
  return v;
}

std::size_t checked_count(std::span<const std::size_t> dims, std::size_t payload_size) {
  require(!dims.empty() && dims.size() <= kMaxTensorRank, ErrorCode::unsupported,
          "tensor rank must be in [1, 4], got " + std::to_string(dims.size()));
  std::size_t count = 1;
  for (std::size_t d : dims) {
    require(d >= 1, ErrorCode::invalid_argument, "tensor dims must be >= 1");
    require(d <= kMaxTensorDim, ErrorCode::dimension_overflow,
            "tensor dim " + std::to_string(d) + " exceeds 2^31-1");
    count *= d;
  }
  require(count == payload_size, ErrorCode::shape_mismatch,
          "payload length " + std::to_string(payload_size) + " does not match dims product " +
              std::to_string(count));
  return count;
}

std::vector<std::uint8_t> encode_header(std::span<const std::size_t> dims, DType dtype,
                                        std::size_t count, std::size_t payload_bytes) {
  std::vector<std::uint8_t> out;
  out.reserve(kTensorHeaderBytes + 4 * dims.size() + payload_bytes);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kTensorVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(dims.size()));
  put_u16(out, 0);
  put_u64(out, count);
  for (std::size_t d : dims) put_u32(out, static_cast<std::uint32_t>(d));
  return out;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  require(out.good(), ErrorCode::io, "write failed: " + path.string());
}

}  // namespace

std::size_t TensorFile::element_count() const noexcept {
  std::size_t count = 1;
  for (std::size_t d : dims) count *= d;
  return count;
}

std::vector<std::uint8_t> encode_tensor(std::span<const std::size_t> dims,
                                        std::span<const float> payload) {
  const std::size_t count = checked_count(dims, payload.size());
  for (float v : payload) {
    require(std::isfinite(v), ErrorCode::non_finite, "tensor payload contains a non-finite value");
  }
  auto out = encode_header(dims, DType::f32, count, 4 * count);
  for (float v : payload) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::uint8_t> encode_tensor(std::span<const std::size_t> dims,
                                        std::span<const std::uint8_t> payload) {
  const std::size_t count = checked_count(dims, payload.size());
  auto out = encode_header(dims, DType::u8, count, count);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

TensorFile decode_tensor(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= kTensorHeaderBytes, ErrorCode::truncated, "tensor header truncated");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::bad_magic,
          "bad tensor magic (expected FCCT)");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  require(version == kTensorVersion, ErrorCode::unsupported,
          "unsupported tensor version " + std::to_string(version));
  const std::uint8_t dtype = bytes[8];
  require(dtype <= 1, ErrorCode::unsupported, "unsupported tensor dtype " + std::to_string(dtype));
  const std::size_t rank = bytes[9];
  require(rank >= 1 && rank <= kMaxTensorRank, ErrorCode::unsupported,
          "unsupported tensor rank " + std::to_string(rank));
  require(get_le(bytes, 10, 2) == 0, ErrorCode::unsupported, "reserved header field is nonzero");
  const std::uint64_t count = get_le(bytes, 12, 8);

  require(bytes.size() >= kTensorHeaderBytes + 4 * rank, ErrorCode::truncated,
          "tensor dims truncated");
  TensorFile t;
  t.dtype = static_cast<DType>(dtype);
  std::uint64_t product = 1;
  for (std::size_t r = 0; r < rank; ++r) {
    const std::uint64_t d = get_le(bytes, kTensorHeaderBytes + 4 * r, 4);
    require(d >= 1, ErrorCode::invariant, "tensor dim is zero");
    require(d <= kMaxTensorDim, ErrorCode::dimension_overflow, "tensor dim exceeds 2^31-1");
    product *= d;
    require(product <= (std::uint64_t{1} << 40), ErrorCode::dimension_overflow,
            "tensor element count too large");
    t.dims.push_back(static_cast<std::size_t>(d));
  }
  require(product == count, ErrorCode::invariant,
          "element count " + std::to_string(count) + " disagrees with dims");

  const std::size_t offset = kTensorHeaderBytes + 4 * rank;
  const std::size_t width = t.dtype == DType::f32 ? 4 : 1;
  const std::size_t expected = offset + width * static_cast<std::size_t>(count);
  require(bytes.size() >= expected, ErrorCode::truncated,
          "tensor payload truncated: " + std::to_string(bytes.size()) + " of " +
              std::to_string(expected) + " bytes");
  require(bytes.size() == expected, ErrorCode::invariant, "trailing bytes after tensor payload");

  if (t.dtype == DType::f32) {
    t.f32.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const float v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, offset + 4 * i, 4)));
      require(std::isfinite(v), ErrorCode::non_finite, "tensor payload contains a non-finite value");
      t.f32[i] = v;
    }
  } else {
    t.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, std::span<const std::size_t> dims,
                  std::span<const float> payload) {
  write_bytes(path, encode_tensor(dims, payload));
}

void write_tensor(const std::filesystem::path& path, std::span<const std::size_t> dims,
                  std::span<const std::uint8_t> payload) {
  write_bytes(path, encode_tensor(dims, payload));
}

TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::missing_file, "cannot open tensor file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorCode::io, "read failed: " + path.string());
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace fcc
