#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fcc/correlation.hpp"
#include "fcc/feature_store.hpp"
#include "fcc/reduction.hpp"
#include "fcc/segmentation.hpp"

namespace fcc {

/// |pred & gt| / |pred | gt|; 1.0 when both are empty.
double iou(const GridMask& pred, const GridMask& gt);

/// Training-free prior-mask pipeline:
/// fcc_subset -> [dcfc_concat] -> [reduce] -> prior_score -> kshot_merge -> threshold.
struct PipelineConfig {
  LayerPattern pattern = LayerPattern::fully_cross();
  bool dual_path = false;
  std::size_t kshot = 0;  // shots used per episode; 0 means all available
  double tau = 0.5;
  std::optional<ReductionWeights> reduction;
};

/// Correlation volume for one shot: target path, plus the support path when dual.
CorrelationVolume shot_volume(const EpisodeBundle& episode, std::size_t shot, const PipelineConfig& config);

ScoreMap predict_scores(const EpisodeBundle& episode, const PipelineConfig& config);
GridMask predict_mask(const EpisodeBundle& episode, const PipelineConfig& config);

struct EpisodeResult {
  std::size_t episode_id = 0;
  int fold_id = 0;
  std::string class_id;
  double iou = 0.0;
};

struct EvalReport {
  std::string stratum = "all";
  std::vector<EpisodeResult> episodes;
  std::map<int, double> fold_miou;
  double miou = 0.0;

  std::size_t episode_count() const noexcept { return episodes.size(); }
};

/// Builds the report from per-episode results (overall and per-fold means).
EvalReport summarize(std::vector<EpisodeResult> results, std::string stratum = "all");

EvalReport evaluate(std::span<const EpisodeBundle> episodes, const PipelineConfig& config,
                    std::string stratum = "all");
EvalReport evaluate(const EpisodeManifest& manifest, const PipelineConfig& config, std::string stratum = "all");

/// CSV with header "episode_id,fold,iou".
std::string format_report_csv(const EvalReport& report);
/// Fold table: columns fold0..foldN (at least fold0..fold3) and mIoU.
std::string format_report_summary(const EvalReport& report);

/// Episodes whose first-shot support foreground covers less than 5% of the grid.
std::vector<EpisodeBundle> stratify_small_support(std::span<const EpisodeBundle> episodes);
inline constexpr double kSmallSupportFraction = 0.05;

enum class Scenario { plain, scale_diff, occlusion, shape_diff, limited_info };

std::string_view to_string(Scenario scenario) noexcept;
Scenario parse_scenario(std::string_view name);

/// Parameters of a seeded synthetic episode. Foreground cells carry a unit
/// class signature in the first signature_dim channels; background cells carry
/// a signature in the remaining channels, so the two are orthogonal.
struct SynthSpec {
  std::size_t grid_h = 12;
  std::size_t grid_w = 12;
  std::size_t n_layers = 12;
  std::size_t channels = 32;
  std::size_t signature_dim = 16;
  double noise_sigma = 0.0;
  Scenario scenario = Scenario::plain;
  double scale_ratio = 2.0;          // query object size relative to support (scale_diff, limited_info)
  double occlusion_fraction = 0.3;   // share of support foreground hidden (occlusion, limited_info)
  std::uint64_t seed = 0;
  std::size_t shots = 1;
  int fold_id = 0;

  // Signature model.
  double layer_correlation = 0.6;         // cosine between adjacent layers' class signatures
  double invariant_fraction = 1.0 / 6.0;  // top layers whose appearance ignores object scale
  double support_radius = 0.2;            // support blob radius relative to the shorter grid side

  /// Throws on any invariant violation.
  void validate() const;
};

EpisodeBundle synth_episode(const SynthSpec& spec);

/// count episodes with seeds spec.seed + i and fold ids i % 4.
std::vector<EpisodeBundle> synth_batch(const SynthSpec& spec, std::size_t count);

}  // namespace fcc
