#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fcc/correlation.hpp"
#include "fcc/feature_store.hpp"
#include "fcc/reduction.hpp"
#include "fcc/segmentation.hpp"

namespace fcc {

/// Minimal trainable head: 1x1 reduction, max over support foreground, then a
/// per-query-cell logistic readout
///   z(q) = b + sum_k v[k] * max_{p in fg} reduced[k, q, p],  prob = sigmoid(z).
struct ToyHeadParams {
  ReductionWeights reduction;
  std::vector<double> readout_w;
  double readout_b = 0.0;

  /// Reduction from ReductionWeights::init, readout uniform in [-1/sqrt(d), 1/sqrt(d)], zero bias.
  static ToyHeadParams init(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed);
  static ToyHeadParams zeros(std::size_t in_channels, std::size_t out_channels);

  void validate() const;
  std::size_t parameter_count() const noexcept;
  /// Flat view order: reduction weights, reduction bias, readout weights, readout bias.
  double& parameter(std::size_t index);
  double parameter(std::size_t index) const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  double dice_weight = 0.5;  // total = w * dice + (1 - w) * ce

  void validate() const;
};

/// Correlation volume and masks for the first shot of an episode.
struct HeadInput {
  CorrelationVolume volume;
  GridMask support_mask;
  GridMask query_gt;
};

HeadInput head_input(const EpisodeBundle& episode, const LayerPattern& pattern, bool dual_path);

struct HeadForward {
  ScoreMap probabilities;
  std::vector<double> logits;                // [q]
  std::vector<double> pooled;                // [k][q], max over foreground of reduced values
  std::vector<std::size_t> argmax;           // [k][q], support cell achieving the max (first on ties)
};

HeadForward head_forward_detail(const HeadInput& input, const ToyHeadParams& params);
ScoreMap head_forward(const HeadInput& input, const ToyHeadParams& params);
ScoreMap head_forward(const EpisodeBundle& episode, const ToyHeadParams& params, const LayerPattern& pattern,
                      bool dual_path);

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kDiceSmoothing = 1.0;

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
double ce_loss(const ScoreMap& pred, const GridMask& gt);
/// 1 - (2 sum p*y + 1) / (sum p + sum y + 1).
double dice_loss(const ScoreMap& pred, const GridMask& gt);

struct HeadLoss {
  double ce = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

HeadLoss head_loss(const HeadInput& input, const ToyHeadParams& params, double dice_weight);

struct HeadGradient {
  HeadLoss loss;
  ReductionGrad reduction;
  std::vector<double> readout_w;
  double readout_b = 0.0;

  /// Same flat order as ToyHeadParams::parameter.
  double parameter(std::size_t index) const;
};

/// Analytic gradient of the combined loss. The max-pool passes gradient only
/// to its recorded argmax.
HeadGradient head_gradient(const HeadInput& input, const ToyHeadParams& params, double dice_weight);

struct TrainLogRow {
  std::size_t step = 0;
  double ce = 0.0;
  double dice = 0.0;
  double total = 0.0;
  double heldout_miou = 0.0;
};

struct TrainResult {
  ToyHeadParams params;          // lowest held-out loss seen
  ToyHeadParams final_params;    // after the last step
  std::vector<TrainLogRow> log;
  std::size_t best_step = 0;     // 0 = initial parameters
  double best_heldout_loss = 0.0;
};

/// Plain gradient descent on batch-mean losses, episodes visited in a seeded
/// shuffled order each epoch. Held-out episodes select the returned
/// parameters; with none, the training episodes stand in. Throws
/// ErrorCode::divergence when the loss becomes non-finite.
TrainResult train(std::span<const HeadInput> train_set, std::span<const HeadInput> heldout,
                  const ToyHeadParams& init, const TrainConfig& config);

double heldout_miou(std::span<const HeadInput> set, const ToyHeadParams& params);

std::string format_train_log(std::span<const TrainLogRow> log);

}  // namespace fcc
