#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>

#include "fcc/error.hpp"
#include "fcc/evaluation.hpp"

namespace fcc {
namespace {

using Rng = std::mt19937_64;

std::vector<double> unit_gaussian(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    for (double& x : v) x = normal(rng);
    norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  } while (norm < 1e-12);
  for (double& x : v) x /= norm;
  return v;
}

// Unit vectors whose consecutive members have cosine exactly `rho`: each step
// mixes the previous vector with a fresh direction orthogonal to it.
std::vector<std::vector<double>> signature_walk(Rng& rng, std::size_t dim, std::size_t length, double rho) {
  std::vector<std::vector<double>> walk;
  walk.push_back(unit_gaussian(rng, dim));
  const double side = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  while (walk.size() < length) {
    const auto& prev = walk.back();
    std::vector<double> fresh = unit_gaussian(rng, dim);
    if (dim > 1) {
      const double proj = std::inner_product(fresh.begin(), fresh.end(), prev.begin(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) fresh[i] -= proj * prev[i];
      const double n = std::sqrt(std::inner_product(fresh.begin(), fresh.end(), fresh.begin(), 0.0));
      if (n > 1e-9) {
        for (double& x : fresh) x /= n;
      } else {
        fresh = prev;
      }
    } else {
      fresh = prev;
    }
    std::vector<double> next(dim);
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      next[i] = rho * prev[i] + side * fresh[i];
      norm += next[i] * next[i];
    }
    norm = std::sqrt(norm);
    for (double& x : next) x /= norm;
    walk.push_back(std::move(next));
  }
  return walk;
}

enum class Shape { disk, rectangle };

struct Blob {
  Shape shape = Shape::disk;
  double radius_y = 0.0;
  double radius_x = 0.0;
};

std::vector<std::uint8_t> rasterize(const Blob& blob, std::size_t h, std::size_t w, Rng& rng) {
  require(2.0 * blob.radius_y <= static_cast<double>(h) && 2.0 * blob.radius_x <= static_cast<double>(w),
          ErrorCode::invalid_argument, "synth: blob does not fit in the grid");
  std::uniform_real_distribution<double> cy_dist(blob.radius_y, static_cast<double>(h) - blob.radius_y);
  std::uniform_real_distribution<double> cx_dist(blob.radius_x, static_cast<double>(w) - blob.radius_x);
  const double cy = cy_dist(rng);
  const double cx = cx_dist(rng);
  std::vector<std::uint8_t> cells(h * w, 0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double dy = (static_cast<double>(r) + 0.5 - cy) / blob.radius_y;
      const double dx = (static_cast<double>(c) + 0.5 - cx) / blob.radius_x;
      const bool inside = blob.shape == Shape::disk ? dy * dy + dx * dx <= 1.0
                                                    : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
      cells[r * w + c] = inside ? 1 : 0;
    }
  }
  require(std::any_of(cells.begin(), cells.end(), [](std::uint8_t v) { return v != 0; }),
          ErrorCode::invalid_argument, "synth: blob covers no grid cell");
  return cells;
}

// Hides a left-to-right band covering floor(fraction * fg) foreground cells,
// always leaving at least one visible.
std::vector<std::uint8_t> occlude(std::vector<std::uint8_t> mask, std::size_t h, std::size_t w, double fraction) {
  std::vector<std::size_t> fg;
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      if (mask[r * w + c]) fg.push_back(r * w + c);
    }
  }
  std::size_t hidden = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(fg.size())));
  hidden = std::min(hidden, fg.size() - 1);
  for (std::size_t i = 0; i < hidden; ++i) mask[fg[i]] = 0;
  return mask;
}

struct Appearance {
  // Per level: class signature in [0, S), background signature in [S, C).
  std::vector<std::vector<double>> signature;
  std::vector<std::vector<double>> background;
  std::size_t level_offset = 0;  // walk index of support layer 0
};

// Writes clean features: foreground cells of `visible` get the class signature
// of `levels[l]`, the remaining cells the background signature, and cells in
// `blank` get zero vectors.
std::vector<float> render(const SynthSpec& spec, const Appearance& look, std::span<const std::size_t> levels,
                          std::span<const std::uint8_t> visible, std::span<const std::uint8_t> blank) {
  const std::size_t positions = spec.grid_h * spec.grid_w;
  const std::size_t s_dim = spec.signature_dim;
  std::vector<float> data(spec.n_layers * spec.channels * positions, 0.0f);
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    const auto& sig = look.signature[levels[l]];
    const auto& bg = look.background[l];
    float* layer = data.data() + l * spec.channels * positions;
    for (std::size_t p = 0; p < positions; ++p) {
      if (!blank.empty() && blank[p]) continue;
      if (visible[p]) {
        for (std::size_t c = 0; c < s_dim; ++c) layer[c * positions + p] = static_cast<float>(sig[c]);
      } else {
        for (std::size_t c = s_dim; c < spec.channels; ++c) {
          layer[c * positions + p] = static_cast<float>(bg[c - s_dim]);
        }
      }
    }
  }
  return data;
}

void add_noise(std::vector<float>& data, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> normal(0.0, sigma);
  for (float& v : data) v = static_cast<float>(v + normal(rng));
}

}  // namespace

std::string_view to_string(Scenario scenario) noexcept {
  switch (scenario) {
    case Scenario::plain: return "plain";
    case Scenario::scale_diff: return "scale_diff";
    case Scenario::occlusion: return "occlusion";
    case Scenario::shape_diff: return "shape_diff";
    case Scenario::limited_info: return "limited_info";
  }
  return "?";
}

Scenario parse_scenario(std::string_view name) {
  for (Scenario s : {Scenario::plain, Scenario::scale_diff, Scenario::occlusion, Scenario::shape_diff,
                     Scenario::limited_info}) {
    if (name == to_string(s)) return s;
  }
  fail(ErrorCode::invalid_argument, "unknown scenario '" + std::string(name) + "'");
}

void SynthSpec::validate() const {
  require(grid_h >= 2 && grid_w >= 2, ErrorCode::invalid_argument, "synth: grid must be at least 2x2");
  require(n_layers >= 1 && channels >= 1, ErrorCode::invalid_argument, "synth: need >= 1 layer and channel");
  require(signature_dim >= 1 && signature_dim <= channels, ErrorCode::invalid_argument,
          "synth: signature_dim must lie in [1, channels]");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorCode::invalid_argument,
          "synth: noise_sigma must be >= 0");
  require(scale_ratio > 0.0 && std::isfinite(scale_ratio), ErrorCode::invalid_argument,
          "synth: scale_ratio must be > 0");
  require(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0, ErrorCode::invalid_argument,
          "synth: occlusion_fraction must lie in [0, 1)");
  require(shots >= 1, ErrorCode::invalid_argument, "synth: need >= 1 shot");
  require(layer_correlation >= -1.0 && layer_correlation <= 1.0, ErrorCode::invalid_argument,
          "synth: layer_correlation must lie in [-1, 1]");
  require(invariant_fraction >= 0.0 && invariant_fraction <= 1.0, ErrorCode::invalid_argument,
          "synth: invariant_fraction must lie in [0, 1]");
  require(support_radius > 0.0 && support_radius <= 0.5, ErrorCode::invalid_argument,
          "synth: support_radius must lie in (0, 0.5]");
}

EpisodeBundle synth_episode(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.n_layers;
  const std::size_t h = spec.grid_h;
  const std::size_t w = spec.grid_w;
  const std::size_t cells = h * w;

  const bool scaled = spec.scenario == Scenario::scale_diff || spec.scenario == Scenario::limited_info;
  const bool occluded = spec.scenario == Scenario::occlusion || spec.scenario == Scenario::limited_info;
  const bool reshaped = spec.scenario == Scenario::shape_diff || spec.scenario == Scenario::limited_info;

  // A doubling of object size moves low/mid-layer appearance a third of the depth.
  const long shift = scaled ? std::lround(static_cast<double>(n) * std::log2(spec.scale_ratio) / 3.0) : 0;
  const std::size_t reach = static_cast<std::size_t>(std::labs(shift));
  const std::size_t invariant = static_cast<std::size_t>(std::ceil(spec.invariant_fraction * static_cast<double>(n)));

  Appearance look;
  look.level_offset = reach;
  look.signature = signature_walk(rng, spec.signature_dim, n + 2 * reach, spec.layer_correlation);
  if (spec.channels > spec.signature_dim) {
    look.background = signature_walk(rng, spec.channels - spec.signature_dim, n, spec.layer_correlation);
  } else {
    look.background.assign(n, std::vector<double>{});
  }

  std::vector<std::size_t> support_levels(n), query_levels(n);
  for (std::size_t l = 0; l < n; ++l) {
    support_levels[l] = l + reach;
    const bool sensitive = l + invariant < n;
    query_levels[l] = static_cast<std::size_t>(static_cast<long>(l + reach) + (sensitive ? shift : 0));
  }

  const double short_side = static_cast<double>(std::min(h, w));
  double support_r = spec.support_radius * short_side;
  if (spec.scenario == Scenario::limited_info) {
    // Shrink until a disk of this radius covers < 5% of the grid.
    while (support_r > 0.5 && std::numbers::pi * support_r * support_r >= kSmallSupportFraction * static_cast<double>(cells)) {
      support_r *= 0.9;
    }
  }
  const double query_r = scaled ? support_r * spec.scale_ratio : support_r;
  const Blob support_blob{Shape::disk, support_r, support_r};
  // Same area as the disk, twice as wide as tall.
  const double rect_ry = std::sqrt(std::numbers::pi / 8.0) * query_r;
  const Blob query_blob = reshaped ? Blob{Shape::rectangle, rect_ry, 2.0 * rect_ry} : Blob{Shape::disk, query_r, query_r};

  EpisodeBundle e;
  e.class_id = "synthetic-" + std::to_string(spec.seed);
  e.fold_id = spec.fold_id;

  const auto query_mask = rasterize(query_blob, h, w, rng);
  auto query_data = render(spec, look, query_levels, query_mask, {});
  add_noise(query_data, spec.noise_sigma, rng);
  e.query = FeatureSet(n, spec.channels, h, w, std::move(query_data));
  e.query_gt = GridMask(h, w, query_mask);

  for (std::size_t k = 0; k < spec.shots; ++k) {
    const auto object = rasterize(support_blob, h, w, rng);
    auto visible = occluded ? occlude(object, h, w, spec.occlusion_fraction) : object;
    if (spec.scenario == Scenario::limited_info) {
      require(20 * static_cast<std::size_t>(std::count(visible.begin(), visible.end(), 1)) < cells,
              ErrorCode::invalid_argument, "synth: limited_info support does not fit under 5%");
    }
    // Occluded cells carry no signature at all.
    std::vector<std::uint8_t> hidden(cells, 0);
    for (std::size_t p = 0; p < cells; ++p) hidden[p] = object[p] && !visible[p];

    auto full = render(spec, look, support_levels, visible, hidden);
    auto target = full;
    add_noise(full, spec.noise_sigma, rng);
    add_noise(target, spec.noise_sigma, rng);
    for (std::size_t l = 0; l < n * spec.channels; ++l) {
      for (std::size_t p = 0; p < cells; ++p) {
        if (!visible[p]) target[l * cells + p] = 0.0f;
      }
    }
    e.shots.push_back(Shot{FeatureSet(n, spec.channels, h, w, std::move(full)),
                           FeatureSet(n, spec.channels, h, w, std::move(target)), GridMask(h, w, visible)});
  }
  validate(e);
  return e;
}

std::vector<EpisodeBundle> synth_batch(const SynthSpec& spec, std::size_t count) {
  std::vector<EpisodeBundle> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SynthSpec s = spec;
    s.seed = spec.seed + i;
    s.fold_id = static_cast<int>(i % 4);
    out.push_back(synth_episode(s));
  }
  return out;
}

}  // namespace fcc
