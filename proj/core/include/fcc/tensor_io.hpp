#pragma once

// Binary tensor container shared with the feature extractor.
//
// Layout (all integers little-endian):
//   offset 0   4 bytes  magic "FCCT"
//   offset 4   u32      version (1)
//   offset 8   u8       dtype (0 = binary32, 1 = u8)
//   offset 9   u8       rank (1..4)
//   offset 10  u16      reserved (0)
//   offset 12  u64      element count
//   offset 20  rank x u32 dims
//   then the payload, row-major with the last index fastest.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fcc {

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

inline constexpr std::size_t kTensorHeaderBytes = 20;
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::size_t kMaxTensorRank = 4;
inline constexpr std::size_t kMaxTensorDim = 0x7fffffffu;

struct TensorFile {
  std::vector<std::size_t> dims;
  DType dtype = DType::f32;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t element_count() const noexcept;
};

void write_tensor(const std::filesystem::path& path,
                  std::span<const std::size_t> dims,
                  std::span<const float> payload);
void write_tensor(const std::filesystem::path& path,
                  std::span<const std::size_t> dims,
                  std::span<const std::uint8_t> payload);

TensorFile read_tensor(const std::filesystem::path& path);

/// Encodes a complete tensor file image; write_tensor writes exactly these bytes.
std::vector<std::uint8_t> encode_tensor(std::span<const std::size_t> dims,
                                        std::span<const float> payload);
std::vector<std::uint8_t> encode_tensor(std::span<const std::size_t> dims,
                                        std::span<const std::uint8_t> payload);
TensorFile decode_tensor(std::span<const std::uint8_t> bytes);

}  // namespace fcc
