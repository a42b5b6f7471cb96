#include "fcc/analysis.hpp"

#include <Eigen/Dense>

#include "fcc/error.hpp"
#include "fcc/parallel.hpp"

namespace fcc {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix centered(const TokenMatrix& m) {
  Matrix out = Eigen::Map<const Matrix>(m.values.data(), static_cast<Eigen::Index>(m.tokens),
                                        static_cast<Eigen::Index>(m.features));
  out.rowwise() -= out.colwise().mean();
  return out;
}

struct Centered {
  Matrix tokens;
  double self_norm = 0.0;  // ||X^T X||_F
};

bool constant_rows(const TokenMatrix& m) {
  for (std::size_t t = 1; t < m.tokens; ++t) {
    for (std::size_t f = 0; f < m.features; ++f) {
      if (m.at(t, f) != m.at(0, f)) return false;
    }
  }
  return true;
}

// Constant inputs are detected exactly; centering them can leave rounding residue.
Centered prepare(const TokenMatrix& m) {
  Centered c{centered(m)};
  c.self_norm = constant_rows(m) ? 0.0 : (c.tokens.transpose() * c.tokens).norm();
  return c;
}

double aligned(const Centered& x, const Centered& y) {
  if (x.self_norm == 0.0 || y.self_norm == 0.0) return 0.0;
  return (y.tokens.transpose() * x.tokens).squaredNorm() / (x.self_norm * y.self_norm);
}

void check_pair(const TokenMatrix& x, const TokenMatrix& y) {
  require(x.tokens == y.tokens, ErrorCode::shape_mismatch,
          "cka: token counts differ (" + std::to_string(x.tokens) + " vs " + std::to_string(y.tokens) + ")");
  require(x.tokens >= 2, ErrorCode::invalid_argument, "cka: need at least 2 tokens");
  require(x.values.size() == x.tokens * x.features && y.values.size() == y.tokens * y.features &&
              x.features >= 1 && y.features >= 1,
          ErrorCode::shape_mismatch, "cka: malformed token matrix");
}

}  // namespace

TokenMatrix layer_tokens(const LayerView& layer, const GridMask* mask) {
  const std::size_t positions = layer.positions();
  if (mask) {
    require(mask->grid_h() == layer.grid_h && mask->grid_w() == layer.grid_w, ErrorCode::shape_mismatch,
            "layer_tokens: mask extents differ from the feature grid");
  }
  TokenMatrix m;
  m.features = layer.channels;
  for (std::size_t p = 0; p < positions; ++p) {
    if (mask && !mask->at(p)) continue;
    for (std::size_t c = 0; c < layer.channels; ++c) m.values.push_back(layer.at(c, p));
    ++m.tokens;
  }
  return m;
}

double cka(const TokenMatrix& x, const TokenMatrix& y) {
  check_pair(x, y);
  return aligned(prepare(x), prepare(y));
}

CKAHeatmap cka_heatmap(const FeatureSet& a, const FeatureSet& b, const std::optional<GridMask>& mask) {
  require(!a.empty() && !b.empty(), ErrorCode::invalid_argument, "cka_heatmap: empty feature set");
  require(a.grid_h() == b.grid_h() && a.grid_w() == b.grid_w(), ErrorCode::shape_mismatch,
          "cka_heatmap: grid extents differ");
  const GridMask* m = mask ? &*mask : nullptr;
  if (m) {
    require(m->foreground() >= 2, ErrorCode::invalid_argument, "cka_heatmap: fewer than 2 foreground tokens");
  }

  std::vector<Centered> xs(a.n_layers()), ys(b.n_layers());
  parallel_for(a.n_layers() + b.n_layers(), [&](std::size_t l0, std::size_t l1) {
    for (std::size_t l = l0; l < l1; ++l) {
      if (l < a.n_layers()) {
        xs[l] = prepare(layer_tokens(a.layer(l), m));
      } else {
        ys[l - a.n_layers()] = prepare(layer_tokens(b.layer(l - a.n_layers()), m));
      }
    }
  });

  CKAHeatmap h{a.n_layers(), b.n_layers(), std::vector<double>(a.n_layers() * b.n_layers(), 0.0)};
  parallel_for(h.values.size(), [&](std::size_t e0, std::size_t e1) {
    for (std::size_t e = e0; e < e1; ++e) h.values[e] = aligned(xs[e / h.cols], ys[e % h.cols]);
  });
  return h;
}

}  // namespace fcc
