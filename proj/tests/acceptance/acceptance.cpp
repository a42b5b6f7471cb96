// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   fcc_acceptance                 run every criterion
//   fcc_acceptance 3 7             run a subset
//   fcc_acceptance --memory-probe  (internal) the fused workload for criterion 10

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fcc/analysis.hpp"
#include "fcc/correlation.hpp"
#include "fcc/error.hpp"
#include "fcc/evaluation.hpp"
#include "fcc/reduction.hpp"
#include "fcc/segmentation.hpp"
#include "fcc/toy_head.hpp"
#include "fixtures.hpp"
#include "process.hpp"

using namespace fcc;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kChannelRuntimeSeconds = 1.0;
constexpr double kOracleTolerance = 1e-5;
constexpr double kCosineBoundSlack = 1e-6;
constexpr double kScaleInvariance = 1e-6;
constexpr std::size_t kSampledEntries = 1'000'000;
constexpr double kFiniteDifferenceStep = 1e-3;
constexpr double kGradientRelTolerance = 1e-4;
constexpr std::size_t kGradientCoordinates = 150;
constexpr double kGradientRuntimeSeconds = 30.0;
constexpr double kSelfCka = 1e-9;
constexpr double kCkaInvariance = 1e-6;
constexpr double kCkaOracle = 1e-9;
constexpr double kAblationRuntimeSeconds = 300.0;
constexpr double kMemoryBudgetBytes = 1.5e9;

// Directional ablation. Calibrated once with seed base 1000 (50 episodes,
// scale_diff, sigma 0.1): fully-cross dual-path 0.99970, same-layer
// single-path 0.99093, margin 0.0088. The required margin is frozen here.
constexpr std::uint64_t kCalibrationSeed = 1000;
constexpr double kFrozenMargin = 1e-3;
constexpr std::uint64_t kFreshSeeds[] = {2000, 3000, 4000, 5000, 6000};
constexpr std::size_t kAblationEpisodes = 50;
constexpr double kAblationNoise = 0.1;

const std::string kCli = FCC_CLI_PATH;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome channel_counts() {
  const auto t0 = std::chrono::steady_clock::now();
  const FeatureSet target = test::random_features(12, 768, 8, 8, 1);
  const FeatureSet support = test::random_features(12, 768, 8, 8, 2);
  const FeatureSet query = test::random_features(12, 768, 8, 8, 3);
  const CorrelationVolume t = fcc::fcc(target, query);
  const CorrelationVolume s = fcc::fcc(support, query, CorrelationPath::support);
  const CorrelationVolume d = dcfc_concat(t, s);
  const Volume r = reduce(d.view(), ReductionWeights::init(d.shape.channels, default_out_channels(d.shape.channels), 0));
  const double elapsed = seconds_since(t0);
  const bool ok = t.shape.channels == 144 && s.shape.channels == 144 && d.shape.channels == 288 &&
                  r.shape.channels == 72 && elapsed < kChannelRuntimeSeconds;
  return {ok, "fcc " + std::to_string(t.shape.channels) + ", concat " + std::to_string(d.shape.channels) +
                  ", reduce " + std::to_string(r.shape.channels) + " channels; C=768 grid 8x8 in " +
                  fmt("%.3f", elapsed) + " s"};
}

Outcome oracle_equivalence() {
  double fcc_diff = 0.0, fused_diff = 0.0, fused_naive_diff = 0.0;
  const std::size_t instances = 24;
  for (std::uint64_t seed = 0; seed < instances; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 1 + rng() % 4, c = 1 + rng() % 8;
    const std::size_t hs = 1 + rng() % 6, ws = 1 + rng() % 6, hq = 1 + rng() % 6, wq = 1 + rng() % 6;
    const FeatureSet target = test::random_features(n, c, hs, ws, seed * 3, 0.1);
    const FeatureSet support = test::random_features(n, c, hs, ws, seed * 3 + 1, 0.1);
    const FeatureSet query = test::random_features(n, c, hq, wq, seed * 3 + 2, 0.1);

    const CorrelationVolume t = fcc::fcc(target, query);
    const CorrelationVolume s = fcc::fcc(support, query, CorrelationPath::support);
    const auto naive_t = test::naive_fcc(target, query);
    const auto naive_s = test::naive_fcc(support, query);
    fcc_diff = std::max({fcc_diff, test::max_abs_diff(naive_t, t.data), test::max_abs_diff(naive_s, s.data)});

    ReductionWeights w = ReductionWeights::init(2 * n * n, 1 + rng() % 6, seed);
    for (double& b : w.bias) b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const Volume fused = fused_fcc_reduce(target, support, query, w);
    const Volume unfused = reduce(dcfc_concat(t, s).view(), w);
    std::vector<double> unfused_wide(unfused.data.begin(), unfused.data.end());
    fused_diff = std::max(fused_diff, test::max_abs_diff(unfused_wide, fused.data));

    std::vector<double> naive_concat = naive_t;
    naive_concat.insert(naive_concat.end(), naive_s.begin(), naive_s.end());
    const auto naive_out = test::naive_reduce(naive_concat, hq * wq * hs * ws, w);
    fused_naive_diff = std::max(fused_naive_diff, test::max_abs_diff(naive_out, fused.data));
  }
  const bool ok = fcc_diff <= kOracleTolerance && fused_diff <= kOracleTolerance && fused_naive_diff <= kOracleTolerance;
  return {ok, std::to_string(instances) + " instances; fcc vs nested loops " + fmt("%.2e", fcc_diff) +
                  ", fused vs unfused " + fmt("%.2e", fused_diff) + ", fused vs naive " + fmt("%.2e", fused_naive_diff)};
}

Outcome cosine_properties() {
  // 4 layers -> 16 channels of 256 x 256 entries: 1,048,576 entries in total.
  const std::size_t n = 4, c = 16, h = 16, w = 16;
  const FeatureSet side = test::random_features(n, c, h, w, 11, 0.05);
  const FeatureSet query = test::random_features(n, c, h, w, 12, 0.05);
  const CorrelationVolume v = fcc::fcc(side, query);

  std::size_t out_of_bounds = 0;
  for (float x : v.data) out_of_bounds += (x < -1.0 - kCosineBoundSlack || x > 1.0 + kCosineBoundSlack);

  // Rescale every side position by its own positive factor.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> factor(1e-3f, 1e3f);
  std::vector<float> scaled(side.data().begin(), side.data().end());
  for (std::size_t l = 0; l < n; ++l)
    for (std::size_t p = 0; p < h * w; ++p) {
      const float f = factor(rng);
      for (std::size_t ch = 0; ch < c; ++ch) scaled[(l * c + ch) * h * w + p] *= f;
    }
  const CorrelationVolume vs = fcc::fcc(FeatureSet(n, c, h, w, scaled), query);
  double scale_diff = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) scale_diff = std::max(scale_diff, double(std::abs(v.data[i] - vs.data[i])));

  auto zero_at = [c, h, w](const FeatureSet& f, std::size_t l, std::size_t p) {
    for (std::size_t ch = 0; ch < c; ++ch)
      if (f.data()[(l * c + ch) * h * w + p] != 0.0f) return false;
    return true;
  };
  std::size_t zero_entries = 0, nonzero_violations = 0;
  const std::size_t ps = h * w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t q = 0; q < ps; ++q)
        for (std::size_t s = 0; s < ps; ++s) {
          if (!zero_at(side, i, s) && !zero_at(query, j, q)) continue;
          ++zero_entries;
          nonzero_violations += v.channel(i * n + j)[q * ps + s] != 0.0f;
        }

  const bool ok = v.data.size() >= kSampledEntries && out_of_bounds == 0 && scale_diff <= kScaleInvariance &&
                  zero_entries > 0 && nonzero_violations == 0;
  return {ok, std::to_string(v.data.size()) + " entries, " + std::to_string(out_of_bounds) + " out of bounds; scale diff " +
                  fmt("%.2e", scale_diff) + "; " + std::to_string(zero_entries) + " zero-vector entries, " +
                  std::to_string(nonzero_violations) + " nonzero"};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const double eps = kFiniteDifferenceStep;
  double worst_reduce = 0.0, worst_head = 0.0;
  std::size_t reduce_checked = 0, head_checked = 0, skipped = 0;

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    // reduce_backward against differences of a random linear functional.
    const FeatureSet a = test::random_features(3, 6, 4, 4, seed + 40);
    const FeatureSet b = test::random_features(3, 6, 4, 4, seed + 80);
    const CorrelationVolume v = dcfc_concat(fcc::fcc(a, b), fcc::fcc(b, a, CorrelationPath::support));
    const ReductionWeights w = ReductionWeights::init(18, 4, seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> up(4 * v.shape.channel_size());
    for (double& x : up) x = normal(rng);
    const ReductionGrad g = reduce_backward(v.view(), w, up);
    auto functional = [&](const ReductionWeights& ww) {
      const auto out = reduce_f64(v.view(), ww);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += up[i] * out[i];
      return s;
    };
    for (std::size_t k = 0; k < 60; ++k) {
      const std::size_t i = rng() % (w.weights.size() + w.bias.size());
      ReductionWeights plus = w, minus = w;
      const bool is_weight = i < w.weights.size();
      double& pp = is_weight ? plus.weights[i] : plus.bias[i - w.weights.size()];
      double& mm = is_weight ? minus.weights[i] : minus.bias[i - w.weights.size()];
      pp += eps;
      mm -= eps;
      const double numeric = (functional(plus) - functional(minus)) / (2 * eps);
      const double analytic = is_weight ? g.weights[i] : g.bias[i - w.weights.size()];
      worst_reduce = std::max(worst_reduce, std::abs(analytic - numeric) /
                                                std::max({std::abs(analytic), std::abs(numeric), 1e-10}));
      ++reduce_checked;
    }

    // Full toy head on a noisy synthetic episode.
    SynthSpec spec;
    spec.grid_h = spec.grid_w = 6;
    spec.n_layers = 3;
    spec.channels = 8;
    spec.signature_dim = 4;
    spec.noise_sigma = 0.2;
    spec.seed = seed + 300;
    const HeadInput in = head_input(synth_episode(spec), LayerPattern::fully_cross(), true);
    ToyHeadParams p = ToyHeadParams::init(18, 4, seed);
    for (std::size_t k = 0; k < 4; ++k) p.reduction.bias[k] = 0.1 * double(k) - 0.1;
    p.readout_b = 0.2;
    const HeadGradient hg = head_gradient(in, p, 0.5);
    const auto base_argmax = head_forward_detail(in, p).argmax;
    std::size_t done = 0;
    while (done < 60) {
      const std::size_t i = rng() % p.parameter_count();
      ToyHeadParams plus = p, minus = p;
      plus.parameter(i) += eps;
      minus.parameter(i) -= eps;
      // Max-pool kinks: a step that moves the argmax is not differentiable there.
      if (head_forward_detail(in, plus).argmax != base_argmax || head_forward_detail(in, minus).argmax != base_argmax) {
        ++skipped;
        continue;
      }
      const double numeric = (head_loss(in, plus, 0.5).total - head_loss(in, minus, 0.5).total) / (2 * eps);
      const double analytic = hg.parameter(i);
      worst_head = std::max(worst_head, std::abs(analytic - numeric) /
                                            std::max({std::abs(analytic), std::abs(numeric), 1e-10}));
      ++done;
      ++head_checked;
    }
  }
  const double elapsed = seconds_since(t0);
  const bool ok = worst_reduce <= kGradientRelTolerance && worst_head <= kGradientRelTolerance &&
                  reduce_checked >= kGradientCoordinates && head_checked >= kGradientCoordinates &&
                  elapsed < kGradientRuntimeSeconds;
  return {ok, "reduce_backward " + std::to_string(reduce_checked) + " coords max rel " + fmt("%.2e", worst_reduce) +
                  "; toy head " + std::to_string(head_checked) + " coords max rel " + fmt("%.2e", worst_head) + " (" +
                  std::to_string(skipped) + " kink draws resampled); 3 seeds in " + fmt("%.2f", elapsed) + " s"};
}

TokenMatrix random_tokens(std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  TokenMatrix t{n, c, std::vector<double>(n * c)};
  for (double& v : t.values) v = normal(rng);
  return t;
}

double gram_hsic_cka(const TokenMatrix& x, const TokenMatrix& y) {
  const std::size_t n = x.tokens;
  auto centered_gram = [n](const TokenMatrix& m) {
    std::vector<double> k(n * n, 0.0), h(n * n), hk(n * n, 0.0), hkh(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t f = 0; f < m.features; ++f) k[a * n + b] += m.at(a, f) * m.at(b, f);
        h[a * n + b] = (a == b ? 1.0 : 0.0) - 1.0 / double(n);
      }
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < n; ++t) hk[a * n + b] += h[a * n + t] * k[t * n + b];
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < n; ++t) hkh[a * n + b] += hk[a * n + t] * h[t * n + b];
    return hkh;
  };
  const auto k = centered_gram(x), l = centered_gram(y);
  auto tr = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) s += a[i] * b[i];
    return s;
  };
  return tr(k, l) / std::sqrt(tr(k, k) * tr(l, l));
}

Outcome cka_suite() {
  double self = 0.0, symmetry = 0.0, scale = 0.0, rotation = 0.0, oracle = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TokenMatrix x = random_tokens(16, 8, seed);
    const TokenMatrix y = random_tokens(16, 8, seed + 500);
    const double xy = cka(x, y);
    self = std::max(self, std::abs(cka(x, x) - 1.0));
    symmetry = std::max(symmetry, std::abs(xy - cka(y, x)));

    TokenMatrix sx = x;
    for (double& v : sx.values) v *= 0.37 + double(seed);
    scale = std::max(scale, std::abs(cka(sx, y) - xy));

    // Orthogonal transform: Householder reflection I - 2uu^T/|u|^2.
    std::mt19937_64 rng(seed + 900);
    std::normal_distribution<double> normal;
    std::vector<double> u(8);
    double uu = 0.0;
    for (double& e : u) {
      e = normal(rng);
      uu += e * e;
    }
    TokenMatrix rx = x;
    for (std::size_t t = 0; t < 16; ++t) {
      double dot = 0.0;
      for (std::size_t f = 0; f < 8; ++f) dot += x.at(t, f) * u[f];
      for (std::size_t f = 0; f < 8; ++f) rx.values[t * 8 + f] = x.at(t, f) - 2.0 * dot * u[f] / uu;
    }
    rotation = std::max(rotation, std::abs(cka(rx, y) - xy));
    oracle = std::max(oracle, std::abs(xy - gram_hsic_cka(x, y)));
  }
  const bool ok = self <= kSelfCka && symmetry <= kCkaInvariance && scale <= kCkaInvariance &&
                  rotation <= kCkaInvariance && oracle <= kCkaOracle;
  return {ok, "20 instances N=16 C=8: |self-1| " + fmt("%.1e", self) + ", symmetry " + fmt("%.1e", symmetry) +
                  ", scale " + fmt("%.1e", scale) + ", orthogonal " + fmt("%.1e", rotation) + ", Gram/HSIC " +
                  fmt("%.1e", oracle)};
}

Outcome noiseless_end_to_end() {
  SynthSpec spec;
  spec.seed = 100;
  const auto batch = synth_batch(spec, 50);
  PipelineConfig config;
  config.kshot = 1;
  const EvalReport report = evaluate(batch, config);

  // K-shot merge: with 3 shots the merged map peaks at exactly 1 whenever any shot fires.
  SynthSpec multi = spec;
  multi.shots = 3;
  multi.noise_sigma = 0.1;
  multi.seed = 200;
  std::size_t merged = 0, peak_violations = 0;
  for (const EpisodeBundle& e : synth_batch(multi, 10)) {
    std::vector<ScoreMap> per_shot;
    bool fires = false;
    for (std::size_t k = 0; k < e.shots.size(); ++k) {
      per_shot.push_back(prior_score(shot_volume(e, k, config).view(), e.shots[k].support_mask));
      for (double v : per_shot.back().values) fires = fires || v > 0.0;
    }
    const ScoreMap m = kshot_merge(per_shot);
    const double peak = *std::max_element(m.values.begin(), m.values.end());
    ++merged;
    peak_violations += fires ? peak != 1.0 : peak != 0.0;
  }
  const bool ok = report.episode_count() == 50 && report.miou == 1.0 && peak_violations == 0;
  return {ok, "plain sigma=0 K=1: mIoU " + fmt("%.9g", report.miou) + " over " + std::to_string(report.episode_count()) +
                  " episodes; merged max == 1 in " + std::to_string(merged - peak_violations) + "/" +
                  std::to_string(merged) + " 3-shot episodes"};
}

struct Ablation {
  double full = 0.0;
  double same = 0.0;
  double margin() const { return full - same; }
};

Ablation ablation(Scenario scenario, std::uint64_t seed, bool small_support_only = false) {
  SynthSpec spec;
  spec.scenario = scenario;
  spec.noise_sigma = kAblationNoise;
  spec.seed = seed;
  auto batch = synth_batch(spec, kAblationEpisodes);
  if (small_support_only) batch = stratify_small_support(batch);
  PipelineConfig full;
  full.dual_path = true;
  PipelineConfig same;
  same.pattern = LayerPattern::same_layer();
  return {evaluate(batch, full).miou, evaluate(batch, same).miou};
}

Outcome directional_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  const Ablation cal = ablation(Scenario::scale_diff, kCalibrationSeed);
  std::string detail = "calibration seed " + std::to_string(kCalibrationSeed) + " margin " + fmt("%.4f", cal.margin()) +
                       "; frozen margin " + fmt("%.4f", kFrozenMargin) + "; fresh:";
  bool ok = cal.margin() >= kFrozenMargin;
  for (std::uint64_t seed : kFreshSeeds) {
    const Ablation a = ablation(Scenario::scale_diff, seed);
    ok = ok && a.margin() >= kFrozenMargin && a.full >= 0.0 && a.same >= 0.0;
    detail += " " + fmt("%.4f", a.full) + "/" + fmt("%.4f", a.same);
  }
  const double elapsed = seconds_since(t0);
  ok = ok && elapsed < kAblationRuntimeSeconds;
  return {ok, detail + " (full/same) in " + fmt("%.1f", elapsed) + " s"};
}

Outcome small_support() {
  std::string detail = "limited_info full/same:";
  bool ok = true;
  for (std::uint64_t seed : {7000, 8000}) {
    SynthSpec spec;
    spec.scenario = Scenario::limited_info;
    spec.noise_sigma = kAblationNoise;
    spec.seed = seed;
    const auto batch = synth_batch(spec, kAblationEpisodes);
    const auto kept = stratify_small_support(batch);
    const Ablation a = ablation(Scenario::limited_info, seed, true);
    ok = ok && kept.size() == batch.size() && a.full >= a.same;
    detail += " " + fmt("%.4f", a.full) + "/" + fmt("%.4f", a.same) + " (" + std::to_string(kept.size()) + " kept)";
  }

  auto with_foreground = [](std::size_t count) {
    SynthSpec s;
    s.grid_h = s.grid_w = 20;
    s.n_layers = 2;
    s.channels = 4;
    s.signature_dim = 2;
    EpisodeBundle e = synth_episode(s);
    std::vector<std::uint8_t> cells(400, 0);
    std::fill_n(cells.begin(), count, 1);
    e.shots[0].support_mask = GridMask(20, 20, cells);
    return e;
  };
  const EpisodeBundle nineteen[] = {with_foreground(19)};
  const EpisodeBundle twenty[] = {with_foreground(20)};
  const bool boundary = stratify_small_support(nineteen).size() == 1 && stratify_small_support(twenty).empty();
  return {ok && boundary, detail + "; 19/400 " + (stratify_small_support(nineteen).size() == 1 ? "kept" : "dropped") +
                              ", 20/400 " + (stratify_small_support(twenty).empty() ? "dropped" : "kept")};
}

// Every regular file under root, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).generic_string()] = test::slurp(entry.path());
  }
  return files;
}

Outcome cli_determinism() {
  test::TempDir dir("acceptance-cli");
  const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };

  // Fixed inputs shared by every run.
  const fs::path inputs = dir / "inputs";
  auto r = test::run(kCli + " synth --deterministic --episodes 6 --grid 8 --noise 0.1 --scenario scale_diff --shots 2 "
                            "--seed 5 --out-dir " + q(inputs / "ds"),
                     dir.path());
  if (r.exit_code != 0) return {false, "could not prepare inputs: " + r.err};
  r = test::run(kCli + " train-toy --deterministic --manifest " + q(inputs / "ds/manifest.json") +
                    " --epochs 1 --batch 3 --lr 0.1 --out-dir " + q(inputs / "trained"),
                dir.path());
  if (r.exit_code != 0) return {false, "could not prepare weights: " + r.err};

  const std::string dataset = q(inputs / "ds/manifest.json");
  const std::string manifest = " --manifest " + dataset;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "synth --episodes 4 --grid 8 --noise 0.1 --scenario limited_info --seed 9"},
      {"fcc", "fcc" + manifest + " --episode 1 --dual-path"},
      {"segment", "segment" + manifest + " --episode 2 --dual-path --out-channels 8 --kshot 2 --seed 3"},
      {"evaluate", "evaluate" + manifest + " --dual-path --out-channels 8 --seed 3"},
      {"evaluate-synth", "evaluate --synth --episodes 6 --grid 10 --noise 0.1 --scenario limited_info "
                         "--stratum small-support --pattern cross3"},
      {"cka", "cka " + q(inputs / "ds/ep0000/query.fcct") + " " + q(inputs / "ds/ep0000/shot0_full.fcct") + " --mask " +
                  q(inputs / "ds/ep0000/query_mask.fcct")},
      {"train-toy", "train-toy" + manifest + " --heldout-manifest " + dataset +
                        " --dual-path --epochs 2 --batch 2 --lr 0.1 --seed 4"},
      {"weights-heatmap", "weights-heatmap --weights " + q(inputs / "trained/reduction_weights.fcct") + " --bias " +
                              q(inputs / "trained/reduction_bias.fcct") + " --channel-map " +
                              q(inputs / "trained/reduction_weights.fcct.channels.txt")},
  };

  std::vector<std::string> identical, differing;
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    std::vector<std::map<std::string, std::string>> outputs;
    std::vector<std::string> stdouts;
    int run_index = 0;
    for (const char* threads : {"1", "1", "4"}) {
      const fs::path out = dir / "runs" / name / std::to_string(run_index++);
      r = test::run(kCli + " " + args + " --deterministic --threads " + threads + " --out-dir " + q(out), dir.path());
      if (r.exit_code != 0) return {false, name + " failed: " + r.err};
      outputs.push_back(snapshot(out));
      // Summaries echo the output directory; compare everything else.
      std::string text = r.out;
      for (std::size_t pos; (pos = text.find(out.string())) != std::string::npos;) text.replace(pos, out.string().size(), "<out>");
      stdouts.push_back(text);
    }
    const bool same = !outputs[0].empty() && outputs[0] == outputs[1] && outputs[0] == outputs[2] &&
                      stdouts[0] == stdouts[1] && stdouts[0] == stdouts[2];
    (same ? identical : differing).push_back(name);
    files += outputs[0].size();
  }
  std::string detail = std::to_string(identical.size()) + "/" + std::to_string(commands.size()) +
                       " subcommand runs byte-identical across 2 runs and threads {1,4} (" + std::to_string(files) +
                       " files)";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty(), detail};
}

int memory_probe() {
  SynthSpec spec;
  spec.grid_h = spec.grid_w = 30;
  spec.n_layers = 12;
  spec.channels = 768;
  spec.signature_dim = 64;
  spec.noise_sigma = 0.1;
  spec.seed = 3;
  const EpisodeBundle e = synth_episode(spec);
  const Shot& shot = e.shots[0];
  const ReductionWeights w = ReductionWeights::init(288, default_out_channels(288), 1);
  const Volume out = fused_fcc_reduce(shot.support_target, shot.support_full, e.query, w);
  if (out.shape.channels != 72 || out.data.size() != 72ull * 900 * 900) return 3;

  // Spot-check entries against a direct computation from the features.
  const auto pairs = LayerPattern::fully_cross().pairs(12);
  std::mt19937_64 rng(17);
  double worst = 0.0;
  for (int t = 0; t < 16; ++t) {
    const std::size_t k = rng() % 72, q = rng() % 900, p = rng() % 900;
    double expected = w.bias[k];
    for (std::size_t c = 0; c < 288; ++c) {
      const auto [i, j] = pairs[c % 144];
      const FeatureSet& side = c < 144 ? shot.support_target : shot.support_full;
      expected += w.weight(k, c) * test::naive_cosine(side, i, p / 30, p % 30, e.query, j, q / 30, q % 30);
    }
    worst = std::max(worst, std::abs(expected - double(out.data[(k * 900 + q) * 900 + p])));
  }
  std::printf("%.3e\n", worst);
  return worst <= kOracleTolerance ? 0 : 4;
}

Outcome memory_contract(const char* self) {
  test::TempDir dir("acceptance-memory");
  const fs::path out = dir / "probe.txt";
  const auto t0 = std::chrono::steady_clock::now();
  const pid_t pid = fork();
  if (pid == 0) {
    if (!std::freopen(out.c_str(), "w", stdout)) _exit(5);
    execl(self, self, "--memory-probe", static_cast<char*>(nullptr));
    _exit(6);
  }
  int status = 0;
  rusage usage{};
  if (pid < 0 || wait4(pid, &status, 0, &usage) != pid) return {false, "could not run the memory probe"};
  const double elapsed = seconds_since(t0);
  const double peak = double(usage.ru_maxrss) * 1024.0;  // kilobytes on Linux
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::string spot = test::slurp(out);
  if (!spot.empty() && spot.back() == '\n') spot.pop_back();
  const bool ok = code == 0 && peak <= kMemoryBudgetBytes;
  return {ok, "n=12 C=768 grid 30x30 d=72 fused: peak RSS " + fmt("%.0f", peak / 1e6) + " MB (budget " +
                  fmt("%.0f", kMemoryBudgetBytes / 1e6) + " MB), spot-check max diff " + (spot.empty() ? "?" : spot) +
                  ", exit " + std::to_string(code) + ", " + fmt("%.1f", elapsed) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc == 2 && std::strcmp(argv[1], "--memory-probe") == 0) return memory_probe();

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"channel-count contract", channel_counts},
      {"oracle equivalence", oracle_equivalence},
      {"cosine bounds and invariances", cosine_properties},
      {"gradient suite", gradient_suite},
      {"CKA suite", cka_suite},
      {"noiseless end-to-end", noiseless_end_to_end},
      {"directional ablation", directional_ablation},
      {"small-support stratum", small_support},
      {"CLI determinism", cli_determinism},
      {"memory contract", [&] { return memory_contract("/proc/self/exe"); }},
  };

  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2zu %-30s %s  %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
