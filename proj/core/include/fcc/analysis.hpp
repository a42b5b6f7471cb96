#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fcc/feature_store.hpp"

namespace fcc {

/// N tokens x C features, row-major.
struct TokenMatrix {
  std::size_t tokens = 0;
  std::size_t features = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t f) const { return values[t * features + f]; }
};

/// Patch tokens of one layer in row-major grid order, optionally restricted to
/// foreground cells of a mask.
TokenMatrix layer_tokens(const LayerView& layer, const GridMask* mask = nullptr);

/// Linear centered kernel alignment:
///   ||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F)
/// over column-centered X, Y. Returns 0 when either input is constant.
double cka(const TokenMatrix& x, const TokenMatrix& y);

struct CKAHeatmap {
  std::size_t rows = 0;  // layers of stack A
  std::size_t cols = 0;  // layers of stack B
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

CKAHeatmap cka_heatmap(const FeatureSet& a, const FeatureSet& b, const std::optional<GridMask>& mask = std::nullopt);

}  // namespace fcc
