#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fcc/correlation.hpp"

namespace fcc {

/// 1x1 convolution over correlation channels: out[k] = sum_c w[k, c] * in[c] + bias[k].
struct ReductionWeights {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::vector<double> weights;  // [out_channels, in_channels]
  std::vector<double> bias;     // [out_channels]; all zero when use_bias is false
  bool use_bias = true;

  double weight(std::size_t k, std::size_t c) const { return weights[k * in_channels + c]; }

  /// Uniform in [-a, a], a = 1/sqrt(in_channels); zero bias.
  static ReductionWeights init(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed,
                               bool use_bias = true);
  static ReductionWeights zeros(std::size_t in_channels, std::size_t out_channels, bool use_bias = true);
  static ReductionWeights identity(std::size_t channels);

  /// Throws unless shapes are consistent and every value is finite.
  void validate() const;
};

/// Default reduced width: a quarter of the input channels (72 for 288 inputs).
std::size_t default_out_channels(std::size_t in_channels) noexcept;

Volume reduce(const VolumeView& volume, const ReductionWeights& w);

/// Same map with 64-bit outputs; layout [k][q][s].
std::vector<double> reduce_f64(const VolumeView& volume, const ReductionWeights& w);

/// Equivalent to reduce(dcfc_concat(fcc_subset(target, query), fcc_subset(support, query)), w)
/// without materializing the concatenation: query rows are processed in blocks
/// whose full input-channel stack is smaller than one correlation channel.
Volume fused_fcc_reduce(const FeatureSet& target, const FeatureSet& support, const FeatureSet& query,
                        const ReductionWeights& w, const LayerPattern& pattern = LayerPattern::fully_cross());

struct ReductionGrad {
  std::vector<double> weights;  // [out_channels, in_channels]
  std::vector<double> bias;     // [out_channels]
};

/// Adjoint of reduce for an upstream gradient laid out like reduce_f64's output.
ReductionGrad reduce_backward(const VolumeView& volume, const ReductionWeights& w,
                              std::span<const double> upstream);

/// Mean |w| over output channels for every (support layer, query layer) pair, per path.
struct WeightHeatmap {
  std::size_t n_layers = 0;
  std::vector<double> target;   // [n, n]
  std::vector<double> support;  // [n, n]; all zero for single-path weights
};

WeightHeatmap weight_heatmap(const ReductionWeights& w, std::span<const ChannelSource> channel_map);

/// Full-density channel map for single-path (n^2) or dual-path (2n^2) weights.
std::vector<ChannelSource> default_channel_map(std::size_t in_channels);

void save_weights(const std::filesystem::path& weights_path, const std::filesystem::path& bias_path,
                  const ReductionWeights& w);
/// A missing bias file loads as a bias-free map.
ReductionWeights load_weights(const std::filesystem::path& weights_path, const std::filesystem::path& bias_path);

}  // namespace fcc
