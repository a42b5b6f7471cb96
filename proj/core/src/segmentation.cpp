#include "fcc/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fcc/error.hpp"
#include "fcc/parallel.hpp"
#include "fcc/tensor_io.hpp"

namespace fcc {

bool ScoreMap::normalized() const noexcept {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

ScoreMap raw_prior_score(const VolumeView& volume, const GridMask& support_mask) {
  const VolumeShape& s = volume.shape;
  require(support_mask.grid_h() == s.hs && support_mask.grid_w() == s.ws, ErrorCode::shape_mismatch,
          "prior_score: support mask extents differ from the volume's support grid");
  require(volume.values.size() == s.size() && s.channels >= 1, ErrorCode::shape_mismatch,
          "prior_score: malformed volume");

  std::vector<std::size_t> fg;
  for (std::size_t p = 0; p < support_mask.cells(); ++p) {
    if (support_mask.at(p)) fg.push_back(p);
  }
  require(!fg.empty(), ErrorCode::invalid_argument, "prior_score: support mask has no foreground");

  ScoreMap out{s.hq, s.wq, std::vector<double>(s.query_positions(), 0.0)};
  const std::size_t ps = s.support_positions();
  parallel_for(s.query_positions(), [&](std::size_t q0, std::size_t q1) {
    for (std::size_t q = q0; q < q1; ++q) {
      double sum = 0.0;
      for (std::size_t c = 0; c < s.channels; ++c) {
        const float* row = volume.values.data() + c * s.channel_size() + q * ps;
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t p : fg) best = std::max(best, row[p]);
        sum += best;
      }
      out.values[q] = sum / static_cast<double>(s.channels);
    }
  });
  return out;
}

ScoreMap min_max_normalize(ScoreMap map) {
  require(!map.values.empty(), ErrorCode::invalid_argument, "cannot normalize an empty score map");
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double min = *lo;
  const double max = *hi;
  require(std::isfinite(min) && std::isfinite(max), ErrorCode::non_finite, "score map is not finite");
  if (max == min) {
    std::fill(map.values.begin(), map.values.end(), 0.5);
  } else {
    const double range = max - min;
    for (double& v : map.values) v = (v - min) / range;
  }
  return map;
}

ScoreMap prior_score(const VolumeView& volume, const GridMask& support_mask) {
  return min_max_normalize(raw_prior_score(volume, support_mask));
}

GridMask threshold_mask(const ScoreMap& scores, double tau) {
  require(tau >= 0.0 && tau <= 1.0, ErrorCode::invalid_argument, "threshold must lie in [0, 1]");
  require(scores.values.size() == scores.cells() && scores.cells() > 0, ErrorCode::shape_mismatch,
          "threshold_mask: malformed score map");
  require(scores.normalized(), ErrorCode::invalid_argument, "threshold_mask: score map is not normalized");
  std::vector<std::uint8_t> cells(scores.cells());
  std::transform(scores.values.begin(), scores.values.end(), cells.begin(),
                 [tau](double v) { return static_cast<std::uint8_t>(v >= tau ? 1 : 0); });
  return GridMask(scores.grid_h, scores.grid_w, std::move(cells));
}

ScoreMap kshot_merge(std::span<const ScoreMap> predictions) {
  require(!predictions.empty(), ErrorCode::invalid_argument, "kshot_merge: no predictions");
  ScoreMap sum{predictions[0].grid_h, predictions[0].grid_w,
               std::vector<double>(predictions[0].cells(), 0.0)};
  for (const ScoreMap& p : predictions) {
    require(p.grid_h == sum.grid_h && p.grid_w == sum.grid_w && p.values.size() == sum.cells(),
            ErrorCode::shape_mismatch, "kshot_merge: prediction extents differ");
    for (std::size_t q = 0; q < sum.cells(); ++q) sum.values[q] += p.values[q];
  }
  const double max = *std::max_element(sum.values.begin(), sum.values.end());
  if (max <= 0.0) {
    std::fill(sum.values.begin(), sum.values.end(), 0.0);
  } else {
    for (double& v : sum.values) v /= max;
  }
  return sum;
}

GridMask upsample_mask(const GridMask& mask, std::size_t height, std::size_t width) {
  require(height >= mask.grid_h() && width >= mask.grid_w(), ErrorCode::invalid_argument,
          "upsample_mask: target is smaller than the grid");
  std::vector<std::uint8_t> pixels(height * width, 0);
  for (std::size_t gr = 0; gr < mask.grid_h(); ++gr) {
    const std::size_t r0 = gr * height / mask.grid_h();
    const std::size_t r1 = (gr + 1) * height / mask.grid_h();
    for (std::size_t gc = 0; gc < mask.grid_w(); ++gc) {
      if (!mask.at(gr, gc)) continue;
      const std::size_t c0 = gc * width / mask.grid_w();
      const std::size_t c1 = (gc + 1) * width / mask.grid_w();
      for (std::size_t r = r0; r < r1; ++r) std::fill_n(pixels.begin() + r * width + c0, c1 - c0, 1);
    }
  }
  return GridMask(height, width, std::move(pixels));
}

void save_score_map(const std::filesystem::path& path, const ScoreMap& scores) {
  const std::vector<float> values(scores.values.begin(), scores.values.end());
  const std::size_t dims[] = {scores.grid_h, scores.grid_w};
  write_tensor(path, dims, values);
}

ScoreMap load_score_map(const std::filesystem::path& path) {
  TensorFile t = read_tensor(path);
  require(t.dtype == DType::f32 && t.dims.size() == 2, ErrorCode::shape_mismatch,
          path.string() + ": score map must be f32 [h, w]");
  return ScoreMap{t.dims[0], t.dims[1], std::vector<double>(t.f32.begin(), t.f32.end())};
}

}  // namespace fcc
