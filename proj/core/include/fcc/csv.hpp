#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace fcc {

/// Fixed 9-significant-digit rendering used by every numeric output file.
std::string format_number(double value);

/// rows x cols values as comma-separated lines.
std::string format_matrix_csv(std::span<const double> values, std::size_t rows, std::size_t cols);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Binary PGM (P5, maxval 255). Values are clamped to [0, 1] and scaled by 255.
void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t rows,
               std::size_t cols);
void write_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> binary, std::size_t rows,
               std::size_t cols);

}  // namespace fcc
