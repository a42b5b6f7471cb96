#include "fcc/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fcc/error.hpp"
#include "fcc/parallel.hpp"
#include "fcc/tensor_io.hpp"

namespace fcc {
namespace {

constexpr std::size_t kPositionBlock = 512;

// Accumulates out[k][p] = sum_c w[k,c] * in[c][p] (+ bias) for one block of
// positions. Channels are visited in ascending order for every output entry.
template <typename Out>
void reduce_block(const float* in, std::size_t in_stride, std::size_t count, const ReductionWeights& w,
                  Out* out, std::size_t out_stride, std::vector<double>& acc) {
  const std::size_t d = w.out_channels;
  acc.assign(d * count, 0.0);
  for (std::size_t c = 0; c < w.in_channels; ++c) {
    const float* src = in + c * in_stride;
    for (std::size_t k = 0; k < d; ++k) {
      const double wk = w.weights[k * w.in_channels + c];
      double* dst = acc.data() + k * count;
      for (std::size_t p = 0; p < count; ++p) dst[p] += wk * static_cast<double>(src[p]);
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    const double b = w.bias[k];
    const double* src = acc.data() + k * count;
    Out* dst = out + k * out_stride;
    for (std::size_t p = 0; p < count; ++p) dst[p] = static_cast<Out>(src[p] + b);
  }
}

template <typename Out>
std::vector<Out> reduce_impl(const VolumeView& volume, const ReductionWeights& w) {
  w.validate();
  require(volume.shape.channels == w.in_channels, ErrorCode::shape_mismatch,
          "reduce: volume has " + std::to_string(volume.shape.channels) + " channels, weights expect " +
              std::to_string(w.in_channels));
  require(volume.values.size() == volume.shape.size(), ErrorCode::shape_mismatch, "reduce: volume data size");
  const std::size_t positions = volume.shape.channel_size();
  std::vector<Out> out(w.out_channels * positions);
  const std::size_t blocks = (positions + kPositionBlock - 1) / kPositionBlock;
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    std::vector<double> acc;
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t p0 = b * kPositionBlock;
      const std::size_t count = std::min(kPositionBlock, positions - p0);
      reduce_block(volume.values.data() + p0, positions, count, w, out.data() + p0, positions, acc);
    }
  });
  return out;
}

}  // namespace

ReductionWeights ReductionWeights::zeros(std::size_t in_channels, std::size_t out_channels, bool use_bias) {
  require(in_channels >= 1 && out_channels >= 1, ErrorCode::invalid_argument,
          "reduction needs >= 1 input and output channel");
  ReductionWeights w;
  w.in_channels = in_channels;
  w.out_channels = out_channels;
  w.weights.assign(in_channels * out_channels, 0.0);
  w.bias.assign(out_channels, 0.0);
  w.use_bias = use_bias;
  return w;
}

ReductionWeights ReductionWeights::init(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed,
                                        bool use_bias) {
  ReductionWeights w = zeros(in_channels, out_channels, use_bias);
  const double a = 1.0 / std::sqrt(static_cast<double>(in_channels));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-a, a);
  for (double& v : w.weights) v = dist(rng);
  return w;
}

ReductionWeights ReductionWeights::identity(std::size_t channels) {
  ReductionWeights w = zeros(channels, channels);
  for (std::size_t c = 0; c < channels; ++c) w.weights[c * channels + c] = 1.0;
  return w;
}

void ReductionWeights::validate() const {
  require(in_channels >= 1 && out_channels >= 1, ErrorCode::invariant, "reduction weights are empty");
  require(weights.size() == in_channels * out_channels && bias.size() == out_channels,
          ErrorCode::shape_mismatch, "reduction weight storage does not match its shape");
  for (double v : weights) require(std::isfinite(v), ErrorCode::non_finite, "non-finite reduction weight");
  for (double v : bias) require(std::isfinite(v), ErrorCode::non_finite, "non-finite reduction bias");
  if (!use_bias) {
    require(std::all_of(bias.begin(), bias.end(), [](double b) { return b == 0.0; }), ErrorCode::invariant,
            "bias-free reduction carries a nonzero bias");
  }
}

std::size_t default_out_channels(std::size_t in_channels) noexcept {
  return std::max<std::size_t>(1, in_channels / 4);
}

Volume reduce(const VolumeView& volume, const ReductionWeights& w) {
  Volume out;
  out.shape = volume.shape;
  out.shape.channels = w.out_channels;
  out.data = reduce_impl<float>(volume, w);
  return out;
}

std::vector<double> reduce_f64(const VolumeView& volume, const ReductionWeights& w) {
  return reduce_impl<double>(volume, w);
}

Volume fused_fcc_reduce(const FeatureSet& target, const FeatureSet& support, const FeatureSet& query,
                        const ReductionWeights& w, const LayerPattern& pattern) {
  w.validate();
  for (const FeatureSet* side : {&target, &support}) {
    require(!side->empty() && !query.empty(), ErrorCode::invalid_argument, "fused: empty feature set");
    require(side->n_layers() == query.n_layers(), ErrorCode::shape_mismatch, "fused: layer-count mismatch");
    require(side->channels() == query.channels(), ErrorCode::shape_mismatch, "fused: channel mismatch");
  }
  require(target.grid_h() == support.grid_h() && target.grid_w() == support.grid_w(), ErrorCode::shape_mismatch,
          "fused: target and support grids differ");
  const auto pairs = pattern.pairs(query.n_layers());
  require(w.in_channels == 2 * pairs.size(), ErrorCode::shape_mismatch,
          "fused: weights expect " + std::to_string(w.in_channels) + " channels, dual path yields " +
              std::to_string(2 * pairs.size()));

  const std::size_t n = query.n_layers();
  std::vector<std::vector<double>> target_inv(n), support_inv(n), query_inv(n);
  for (std::size_t l = 0; l < n; ++l) {
    target_inv[l] = inverse_norms(target.layer(l));
    support_inv[l] = inverse_norms(support.layer(l));
    query_inv[l] = inverse_norms(query.layer(l));
  }

  Volume out;
  out.shape = VolumeShape{w.out_channels, query.grid_h(), query.grid_w(), target.grid_h(), target.grid_w()};
  out.data.assign(out.shape.size(), 0.0f);

  const std::size_t pq = out.shape.query_positions();
  const std::size_t ps = out.shape.support_positions();
  const std::size_t positions = out.shape.channel_size();
  // A block's full input stack (in_channels x rows x ps) stays within one channel's footprint.
  const std::size_t rows = std::clamp<std::size_t>(pq / w.in_channels, 1, 32);
  const std::size_t tasks = (pq + rows - 1) / rows;

  parallel_for(tasks, [&](std::size_t t0, std::size_t t1) {
    std::vector<float> stack;
    std::vector<double> acc;
    for (std::size_t t = t0; t < t1; ++t) {
      const std::size_t q0 = t * rows;
      const std::size_t q1 = std::min(pq, q0 + rows);
      const std::size_t local = (q1 - q0) * ps;
      stack.resize(w.in_channels * local);
      for (std::size_t c = 0; c < w.in_channels; ++c) {
        const bool target_path = c < pairs.size();
        const auto [i, j] = pairs[target_path ? c : c - pairs.size()];
        const FeatureSet& side = target_path ? target : support;
        const auto& side_inv = target_path ? target_inv[i] : support_inv[i];
        correlate_rows(side.layer(i), side_inv, query.layer(j), query_inv[j], q0, q1,
                       std::span<float>(stack).subspan(c * local, local));
      }
      for (std::size_t p0 = 0; p0 < local; p0 += kPositionBlock) {
        const std::size_t count = std::min(kPositionBlock, local - p0);
        reduce_block(stack.data() + p0, local, count, w, out.data.data() + q0 * ps + p0, positions, acc);
      }
    }
  });
  return out;
}

ReductionGrad reduce_backward(const VolumeView& volume, const ReductionWeights& w,
                              std::span<const double> upstream) {
  w.validate();
  require(volume.shape.channels == w.in_channels, ErrorCode::shape_mismatch,
          "reduce_backward: volume/weight channel mismatch");
  const std::size_t positions = volume.shape.channel_size();
  require(upstream.size() == w.out_channels * positions, ErrorCode::shape_mismatch,
          "reduce_backward: upstream gradient has the wrong size");

  ReductionGrad g;
  g.weights.assign(w.out_channels * w.in_channels, 0.0);
  g.bias.assign(w.out_channels, 0.0);
  parallel_for(w.out_channels, [&](std::size_t k0, std::size_t k1) {
    for (std::size_t k = k0; k < k1; ++k) {
      const double* up = upstream.data() + k * positions;
      for (std::size_t c = 0; c < w.in_channels; ++c) {
        const float* v = volume.values.data() + c * positions;
        double s = 0.0;
        for (std::size_t p = 0; p < positions; ++p) s += up[p] * static_cast<double>(v[p]);
        g.weights[k * w.in_channels + c] = s;
      }
      if (w.use_bias) {
        double s = 0.0;
        for (std::size_t p = 0; p < positions; ++p) s += up[p];
        g.bias[k] = s;
      }
    }
  });
  return g;
}

WeightHeatmap weight_heatmap(const ReductionWeights& w, std::span<const ChannelSource> channel_map) {
  w.validate();
  require(channel_map.size() == w.in_channels, ErrorCode::shape_mismatch,
          "weight_heatmap: channel map covers " + std::to_string(channel_map.size()) + " of " +
              std::to_string(w.in_channels) + " input channels");
  WeightHeatmap h;
  for (const ChannelSource& s : channel_map) {
    h.n_layers = std::max({h.n_layers, s.support_layer + 1, s.query_layer + 1});
  }
  const std::size_t n = h.n_layers;
  h.target.assign(n * n, 0.0);
  h.support.assign(n * n, 0.0);
  for (std::size_t c = 0; c < w.in_channels; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < w.out_channels; ++k) s += std::abs(w.weight(k, c));
    const ChannelSource& src = channel_map[c];
    auto& grid = src.path == CorrelationPath::target ? h.target : h.support;
    grid[src.support_layer * n + src.query_layer] = s / static_cast<double>(w.out_channels);
  }
  return h;
}

std::vector<ChannelSource> default_channel_map(std::size_t in_channels) {
  for (std::size_t paths : {std::size_t{1}, std::size_t{2}}) {
    if (in_channels % paths) continue;
    const std::size_t per_path = in_channels / paths;
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(per_path))));
    // n^2 and 2n^2 never coincide, so at most one reading applies.
    if (n * n != per_path) continue;
    std::vector<ChannelSource> map;
    for (std::size_t p = 0; p < paths; ++p) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          map.push_back({p == 0 ? CorrelationPath::target : CorrelationPath::support, i, j});
        }
      }
    }
    return map;
  }
  fail(ErrorCode::invalid_argument,
       "cannot infer a channel map for " + std::to_string(in_channels) + " channels (need n^2 or 2n^2)");
}

void save_weights(const std::filesystem::path& weights_path, const std::filesystem::path& bias_path,
                  const ReductionWeights& w) {
  w.validate();
  const std::vector<float> weights(w.weights.begin(), w.weights.end());
  const std::vector<float> bias(w.bias.begin(), w.bias.end());
  const std::size_t wdims[] = {w.out_channels, w.in_channels};
  const std::size_t bdims[] = {w.out_channels};
  write_tensor(weights_path, wdims, weights);
  if (w.use_bias) write_tensor(bias_path, bdims, bias);
}

ReductionWeights load_weights(const std::filesystem::path& weights_path, const std::filesystem::path& bias_path) {
  TensorFile t = read_tensor(weights_path);
  require(t.dtype == DType::f32 && t.dims.size() == 2, ErrorCode::shape_mismatch,
          weights_path.string() + ": weights must be f32 [out_channels, in_channels]");
  const bool has_bias = !bias_path.empty() && std::filesystem::exists(bias_path);
  ReductionWeights w = ReductionWeights::zeros(t.dims[1], t.dims[0], has_bias);
  std::copy(t.f32.begin(), t.f32.end(), w.weights.begin());
  if (has_bias) {
    TensorFile b = read_tensor(bias_path);
    require(b.dtype == DType::f32 && b.dims.size() == 1 && b.dims[0] == w.out_channels,
            ErrorCode::shape_mismatch, bias_path.string() + ": bias must be f32 [out_channels]");
    std::copy(b.f32.begin(), b.f32.end(), w.bias.begin());
  }
  w.validate();
  return w;
}

}  // namespace fcc
