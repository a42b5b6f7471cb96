#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "fcc/correlation.hpp"
#include "fcc/feature_store.hpp"

namespace fcc {

/// Real-valued foreground evidence per query cell.
struct ScoreMap {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<double> values;

  std::size_t cells() const noexcept { return grid_h * grid_w; }
  /// True when every value is finite and inside [0, 1].
  bool normalized() const noexcept;
};

/// Mean over channels of the per-channel maximum across foreground support
/// cells, before normalization.
ScoreMap raw_prior_score(const VolumeView& volume, const GridMask& support_mask);

/// raw_prior_score followed by min-max normalization.
ScoreMap prior_score(const VolumeView& volume, const GridMask& support_mask);

/// Maps to [0, 1]; a constant map becomes 0.5 everywhere.
ScoreMap min_max_normalize(ScoreMap map);

/// Cell is foreground iff score >= tau.
GridMask threshold_mask(const ScoreMap& scores, double tau = 0.5);

/// Sums the per-shot maps and divides by the largest sum (all zeros if that is 0).
ScoreMap kshot_merge(std::span<const ScoreMap> predictions);

/// Nearest-neighbour expansion; each grid cell fills its pixel block.
GridMask upsample_mask(const GridMask& mask, std::size_t height, std::size_t width);

void save_score_map(const std::filesystem::path& path, const ScoreMap& scores);
ScoreMap load_score_map(const std::filesystem::path& path);

}  // namespace fcc
