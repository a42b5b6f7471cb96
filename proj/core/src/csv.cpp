#include "fcc/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "fcc/error.hpp"

namespace fcc {

std::string format_number(double value) {
  if (value == 0.0) value = 0.0;  // no "-0"
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

std::string format_matrix_csv(std::span<const double> values, std::size_t rows, std::size_t cols) {
  require(values.size() == rows * cols, ErrorCode::shape_mismatch, "matrix size mismatch");
  std::string out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out += ',';
      out += format_number(values[r * cols + c]);
    }
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot open for writing: " + path.string());
  out << text;
  require(out.good(), ErrorCode::io, "write failed: " + path.string());
}

namespace {

void write_pgm_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
                     std::size_t rows, std::size_t cols) {
  std::string data = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  data.append(pixels.begin(), pixels.end());
  write_text(path, data);
}

}  // namespace

void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t rows,
               std::size_t cols) {
  require(values.size() == rows * cols, ErrorCode::shape_mismatch, "image size mismatch");
  std::vector<std::uint8_t> pixels(values.size());
  std::transform(values.begin(), values.end(), pixels.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  write_pgm_bytes(path, pixels, rows, cols);
}

void write_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> binary, std::size_t rows,
               std::size_t cols) {
  require(binary.size() == rows * cols, ErrorCode::shape_mismatch, "image size mismatch");
  std::vector<std::uint8_t> pixels(binary.size());
  std::transform(binary.begin(), binary.end(), pixels.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  write_pgm_bytes(path, pixels, rows, cols);
}

}  // namespace fcc
