#pragma once

// Shared fixtures and independent reference implementations for the tests.
// The oracles here are written as directly as possible from the definitions
// and share no code with the library kernels.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fcc/correlation.hpp"
#include "fcc/feature_store.hpp"
#include "fcc/reduction.hpp"

namespace fcc::test {

/// Gaussian features; each position is zeroed with probability zero_prob.
inline FeatureSet random_features(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed,
                                  double zero_prob = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::bernoulli_distribution drop(zero_prob);
  std::vector<float> data(n * c * h * w);
  for (float& v : data) v = normal(rng);
  if (zero_prob > 0.0) {
    for (std::size_t l = 0; l < n; ++l) {
      for (std::size_t p = 0; p < h * w; ++p) {
        if (!drop(rng)) continue;
        for (std::size_t ch = 0; ch < c; ++ch) data[(l * c + ch) * h * w + p] = 0.0f;
      }
    }
  }
  return FeatureSet(n, c, h, w, std::move(data));
}

inline GridMask random_mask(std::size_t h, std::size_t w, std::uint64_t seed, double p = 0.4) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(p);
  std::vector<std::uint8_t> cells(h * w);
  for (auto& v : cells) v = on(rng) ? 1 : 0;
  cells[seed % cells.size()] = 1;  // never empty
  return GridMask(h, w, std::move(cells));
}

/// Cosine of two feature vectors read straight from FeatureSet::at.
inline double naive_cosine(const FeatureSet& a, std::size_t la, std::size_t ar, std::size_t ac, const FeatureSet& b,
                           std::size_t lb, std::size_t br, std::size_t bc) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t ch = 0; ch < a.channels(); ++ch) {
    const double x = a.at(la, ch, ar, ac);
    const double y = b.at(lb, ch, br, bc);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Five nested loops over (i, j, q_row, q_col, s_row, s_col); layout [i*n + j][qr][qc][sr][sc].
inline std::vector<double> naive_fcc(const FeatureSet& side, const FeatureSet& query) {
  const std::size_t n = side.n_layers();
  const std::size_t hq = query.grid_h(), wq = query.grid_w(), hs = side.grid_h(), ws = side.grid_w();
  std::vector<double> out;
  out.reserve(n * n * hq * wq * hs * ws);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t qr = 0; qr < hq; ++qr)
        for (std::size_t qc = 0; qc < wq; ++qc)
          for (std::size_t sr = 0; sr < hs; ++sr)
            for (std::size_t sc = 0; sc < ws; ++sc) out.push_back(naive_cosine(side, i, sr, sc, query, j, qr, qc));
  return out;
}

/// out[k][pos] = bias[k] + sum_c w[k][c] * in[c][pos], straight from the definition.
inline std::vector<double> naive_reduce(const std::vector<double>& in, std::size_t positions,
                                        const ReductionWeights& w) {
  std::vector<double> out(w.out_channels * positions);
  for (std::size_t k = 0; k < w.out_channels; ++k) {
    for (std::size_t p = 0; p < positions; ++p) {
      double s = w.bias[k];
      for (std::size_t c = 0; c < w.in_channels; ++c) s += w.weights[k * w.in_channels + c] * in[c * positions + p];
      out[k * positions + p] = s;
    }
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<float>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - static_cast<double>(b[i])));
  return m;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fcc-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fcc::test
