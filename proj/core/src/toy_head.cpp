#include "fcc/toy_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "fcc/csv.hpp"
#include "fcc/error.hpp"
#include "fcc/evaluation.hpp"
#include "fcc/parallel.hpp"

namespace fcc {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_same_grid(const ScoreMap& pred, const GridMask& gt) {
  require(pred.grid_h == gt.grid_h() && pred.grid_w == gt.grid_w() && pred.values.size() == gt.cells(),
          ErrorCode::shape_mismatch, "loss: prediction and ground truth extents differ");
}

std::vector<std::size_t> foreground_cells(const GridMask& mask) {
  std::vector<std::size_t> fg;
  for (std::size_t p = 0; p < mask.cells(); ++p) {
    if (mask.at(p)) fg.push_back(p);
  }
  return fg;
}

// d(loss)/d(prob) for the combined loss.
std::vector<double> loss_gradient(const ScoreMap& pred, const GridMask& gt, double dice_weight) {
  const std::size_t n = pred.values.size();
  double inter = 0.0, psum = 0.0, ysum = 0.0;
  for (std::size_t q = 0; q < n; ++q) {
    const double y = gt.at(q) ? 1.0 : 0.0;
    inter += pred.values[q] * y;
    psum += pred.values[q];
    ysum += y;
  }
  const double denom = psum + ysum + kDiceSmoothing;
  const double numer = 2.0 * inter + kDiceSmoothing;

  std::vector<double> grad(n);
  for (std::size_t q = 0; q < n; ++q) {
    const double y = gt.at(q) ? 1.0 : 0.0;
    const double p = pred.values[q];
    double dce = 0.0;
    if (p > kProbabilityClamp && p < 1.0 - kProbabilityClamp) {
      dce = (-y / p + (1.0 - y) / (1.0 - p)) / static_cast<double>(n);
    }
    const double ddice = -(2.0 * y * denom - numer) / (denom * denom);
    grad[q] = dice_weight * ddice + (1.0 - dice_weight) * dce;
  }
  return grad;
}

}  // namespace

ToyHeadParams ToyHeadParams::zeros(std::size_t in_channels, std::size_t out_channels) {
  ToyHeadParams p;
  p.reduction = ReductionWeights::zeros(in_channels, out_channels);
  p.readout_w.assign(out_channels, 0.0);
  return p;
}

ToyHeadParams ToyHeadParams::init(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed) {
  ToyHeadParams p;
  p.reduction = ReductionWeights::init(in_channels, out_channels, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double a = 1.0 / std::sqrt(static_cast<double>(out_channels));
  std::uniform_real_distribution<double> dist(-a, a);
  p.readout_w.resize(out_channels);
  for (double& v : p.readout_w) v = dist(rng);
  return p;
}

void ToyHeadParams::validate() const {
  reduction.validate();
  require(readout_w.size() == reduction.out_channels, ErrorCode::shape_mismatch,
          "toy head: readout width differs from reduction output channels");
  for (double v : readout_w) require(std::isfinite(v), ErrorCode::non_finite, "toy head: non-finite readout");
  require(std::isfinite(readout_b), ErrorCode::non_finite, "toy head: non-finite readout bias");
}

std::size_t ToyHeadParams::parameter_count() const noexcept {
  return reduction.weights.size() + reduction.bias.size() + readout_w.size() + 1;
}

double& ToyHeadParams::parameter(std::size_t index) {
  std::size_t i = index;
  if (i < reduction.weights.size()) return reduction.weights[i];
  i -= reduction.weights.size();
  if (i < reduction.bias.size()) return reduction.bias[i];
  i -= reduction.bias.size();
  if (i < readout_w.size()) return readout_w[i];
  i -= readout_w.size();
  require(i == 0, ErrorCode::invalid_argument, "toy head: parameter index out of range");
  return readout_b;
}

double ToyHeadParams::parameter(std::size_t index) const {
  return const_cast<ToyHeadParams*>(this)->parameter(index);
}

double HeadGradient::parameter(std::size_t index) const {
  std::size_t i = index;
  if (i < reduction.weights.size()) return reduction.weights[i];
  i -= reduction.weights.size();
  if (i < reduction.bias.size()) return reduction.bias[i];
  i -= reduction.bias.size();
  if (i < readout_w.size()) return readout_w[i];
  i -= readout_w.size();
  require(i == 0, ErrorCode::invalid_argument, "toy head: gradient index out of range");
  return readout_b;
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::invalid_argument,
          "train: learning_rate must be finite and >= 0");
  require(epochs >= 1, ErrorCode::invalid_argument, "train: epochs must be >= 1");
  require(batch >= 1, ErrorCode::invalid_argument, "train: batch must be >= 1");
  require(dice_weight >= 0.0 && dice_weight <= 1.0, ErrorCode::invalid_argument,
          "train: dice weight must lie in [0, 1]");
}

HeadInput head_input(const EpisodeBundle& episode, const LayerPattern& pattern, bool dual_path) {
  validate(episode);
  PipelineConfig config;
  config.pattern = pattern;
  config.dual_path = dual_path;
  return HeadInput{shot_volume(episode, 0, config), episode.shots.front().support_mask, episode.query_gt};
}

HeadForward head_forward_detail(const HeadInput& input, const ToyHeadParams& params) {
  params.validate();
  const VolumeShape& s = input.volume.shape;
  const ReductionWeights& w = params.reduction;
  require(s.channels == w.in_channels, ErrorCode::shape_mismatch,
          "toy head: volume has " + std::to_string(s.channels) + " channels, reduction expects " +
              std::to_string(w.in_channels));
  require(input.support_mask.grid_h() == s.hs && input.support_mask.grid_w() == s.ws, ErrorCode::shape_mismatch,
          "toy head: support mask extents differ from the volume");
  const auto fg = foreground_cells(input.support_mask);
  require(!fg.empty(), ErrorCode::invalid_argument, "toy head: support mask has no foreground");

  const std::size_t d = w.out_channels;
  const std::size_t pq = s.query_positions();
  const std::size_t ps = s.support_positions();
  const std::size_t channel_size = s.channel_size();
  const float* vol = input.volume.data.data();

  HeadForward f;
  f.pooled.assign(d * pq, 0.0);
  f.argmax.assign(d * pq, 0);
  parallel_for(d, [&](std::size_t k0, std::size_t k1) {
    for (std::size_t k = k0; k < k1; ++k) {
      const double* wk = w.weights.data() + k * w.in_channels;
      for (std::size_t q = 0; q < pq; ++q) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_p = fg.front();
        for (std::size_t p : fg) {
          double v = 0.0;
          const float* base = vol + q * ps + p;
          for (std::size_t c = 0; c < w.in_channels; ++c) v += wk[c] * static_cast<double>(base[c * channel_size]);
          if (v > best) {
            best = v;
            best_p = p;
          }
        }
        f.pooled[k * pq + q] = best + w.bias[k];
        f.argmax[k * pq + q] = best_p;
      }
    }
  });

  f.logits.assign(pq, params.readout_b);
  f.probabilities = ScoreMap{s.hq, s.wq, std::vector<double>(pq)};
  for (std::size_t q = 0; q < pq; ++q) {
    for (std::size_t k = 0; k < d; ++k) f.logits[q] += params.readout_w[k] * f.pooled[k * pq + q];
    f.probabilities.values[q] = sigmoid(f.logits[q]);
  }
  return f;
}

ScoreMap head_forward(const HeadInput& input, const ToyHeadParams& params) {
  return head_forward_detail(input, params).probabilities;
}

ScoreMap head_forward(const EpisodeBundle& episode, const ToyHeadParams& params, const LayerPattern& pattern,
                      bool dual_path) {
  return head_forward(head_input(episode, pattern, dual_path), params);
}

double ce_loss(const ScoreMap& pred, const GridMask& gt) {
  require_same_grid(pred, gt);
  double sum = 0.0;
  for (std::size_t q = 0; q < gt.cells(); ++q) {
    const double p = std::clamp(pred.values[q], kProbabilityClamp, 1.0 - kProbabilityClamp);
    sum -= gt.at(q) ? std::log(p) : std::log(1.0 - p);
  }
  return sum / static_cast<double>(gt.cells());
}

double dice_loss(const ScoreMap& pred, const GridMask& gt) {
  require_same_grid(pred, gt);
  double inter = 0.0, psum = 0.0, ysum = 0.0;
  for (std::size_t q = 0; q < gt.cells(); ++q) {
    const double y = gt.at(q) ? 1.0 : 0.0;
    inter += pred.values[q] * y;
    psum += pred.values[q];
    ysum += y;
  }
  return 1.0 - (2.0 * inter + kDiceSmoothing) / (psum + ysum + kDiceSmoothing);
}

namespace {

HeadLoss combine(const ScoreMap& pred, const GridMask& gt, double dice_weight) {
  HeadLoss l;
  l.ce = ce_loss(pred, gt);
  l.dice = dice_loss(pred, gt);
  l.total = dice_weight * l.dice + (1.0 - dice_weight) * l.ce;
  return l;
}

}  // namespace

HeadLoss head_loss(const HeadInput& input, const ToyHeadParams& params, double dice_weight) {
  return combine(head_forward(input, params), input.query_gt, dice_weight);
}

HeadGradient head_gradient(const HeadInput& input, const ToyHeadParams& params, double dice_weight) {
  const HeadForward f = head_forward_detail(input, params);
  const ReductionWeights& w = params.reduction;
  const VolumeShape& s = input.volume.shape;
  const std::size_t d = w.out_channels;
  const std::size_t pq = s.query_positions();
  const std::size_t ps = s.support_positions();
  const std::size_t channel_size = s.channel_size();

  HeadGradient g;
  g.loss = combine(f.probabilities, input.query_gt, dice_weight);
  const auto dprob = loss_gradient(f.probabilities, input.query_gt, dice_weight);

  std::vector<double> dlogit(pq);
  for (std::size_t q = 0; q < pq; ++q) {
    const double p = f.probabilities.values[q];
    dlogit[q] = dprob[q] * p * (1.0 - p);
    g.readout_b += dlogit[q];
  }
  g.readout_w.assign(d, 0.0);
  g.reduction.weights.assign(d * w.in_channels, 0.0);
  g.reduction.bias.assign(d, 0.0);
  const float* vol = input.volume.data.data();
  parallel_for(d, [&](std::size_t k0, std::size_t k1) {
    for (std::size_t k = k0; k < k1; ++k) {
      double* gw = g.reduction.weights.data() + k * w.in_channels;
      for (std::size_t q = 0; q < pq; ++q) {
        g.readout_w[k] += dlogit[q] * f.pooled[k * pq + q];
        const double dpool = dlogit[q] * params.readout_w[k];
        if (w.use_bias) g.reduction.bias[k] += dpool;
        const float* base = vol + q * ps + f.argmax[k * pq + q];
        for (std::size_t c = 0; c < w.in_channels; ++c) gw[c] += dpool * static_cast<double>(base[c * channel_size]);
      }
    }
  });
  return g;
}

double heldout_miou(std::span<const HeadInput> set, const ToyHeadParams& params) {
  if (set.empty()) return 0.0;
  double total = 0.0;
  for (const HeadInput& in : set) total += iou(threshold_mask(head_forward(in, params), 0.5), in.query_gt);
  return total / static_cast<double>(set.size());
}

TrainResult train(std::span<const HeadInput> train_set, std::span<const HeadInput> heldout,
                  const ToyHeadParams& init, const TrainConfig& config) {
  config.validate();
  init.validate();
  require(!train_set.empty(), ErrorCode::invalid_argument, "train: need >= 1 training episode");
  const std::span<const HeadInput> selection = heldout.empty() ? train_set : heldout;

  auto selection_loss = [&](const ToyHeadParams& p) {
    double total = 0.0;
    for (const HeadInput& in : selection) total += head_loss(in, p, config.dice_weight).total;
    return total / static_cast<double>(selection.size());
  };

  TrainResult result;
  ToyHeadParams params = init;
  result.params = params;
  result.best_heldout_loss = selection_loss(params);
  require(std::isfinite(result.best_heldout_loss), ErrorCode::divergence, "train: initial loss is not finite");

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  const std::size_t n_params = params.parameter_count();
  std::vector<double> grad(n_params);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      std::fill(grad.begin(), grad.end(), 0.0);
      HeadLoss batch_loss;
      for (std::size_t b = b0; b < b1; ++b) {
        const HeadGradient g = head_gradient(train_set[order[b]], params, config.dice_weight);
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += scale * g.parameter(i);
        batch_loss.ce += scale * g.loss.ce;
        batch_loss.dice += scale * g.loss.dice;
        batch_loss.total += scale * g.loss.total;
      }
      require(std::isfinite(batch_loss.total), ErrorCode::divergence,
              "train: loss became non-finite at step " + std::to_string(step + 1));
      for (std::size_t i = 0; i < n_params; ++i) params.parameter(i) -= config.learning_rate * grad[i];
      if (!params.reduction.use_bias) std::fill(params.reduction.bias.begin(), params.reduction.bias.end(), 0.0);
      ++step;

      const double held = selection_loss(params);
      require(std::isfinite(held), ErrorCode::divergence,
              "train: held-out loss became non-finite at step " + std::to_string(step));
      result.log.push_back(TrainLogRow{step, batch_loss.ce, batch_loss.dice, batch_loss.total,
                                       heldout_miou(selection, params)});
      if (held < result.best_heldout_loss) {
        result.best_heldout_loss = held;
        result.best_step = step;
        result.params = params;
      }
    }
  }
  result.final_params = params;
  return result;
}

std::string format_train_log(std::span<const TrainLogRow> log) {
  std::string out = "step,ce,dice,total,heldout_miou\n";
  for (const TrainLogRow& r : log) {
    out += std::to_string(r.step) + "," + format_number(r.ce) + "," + format_number(r.dice) + "," +
           format_number(r.total) + "," + format_number(r.heldout_miou) + "\n";
  }
  return out;
}

}  // namespace fcc
