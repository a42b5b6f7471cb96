// fcc: batch front end for the correlation pipeline.
//
// Every subcommand writes its artifacts under --out-dir and prints a short
// summary on stdout. Failures print one line on stderr,
//   error: code=<code> msg=<message>
// and exit nonzero (2 for usage errors, 1 otherwise).

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fcc/analysis.hpp"
#include "fcc/correlation.hpp"
#include "fcc/csv.hpp"
#include "fcc/error.hpp"
#include "fcc/evaluation.hpp"
#include "fcc/feature_store.hpp"
#include "fcc/parallel.hpp"
#include "fcc/reduction.hpp"
#include "fcc/segmentation.hpp"
#include "fcc/tensor_io.hpp"
#include "fcc/toy_head.hpp"

namespace fs = std::filesystem;

namespace {

struct RunConfig {
  std::string manifest;
  std::size_t episode = 0;
  std::size_t shot = 0;
  std::string pattern = "full";
  bool dual_path = false;
  std::size_t out_channels = 0;  // 0: no reduction (segment/evaluate), default width (train-toy)
  double tau = 0.5;
  std::size_t kshot = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: FCC_THREADS, then hardware concurrency
  bool deterministic = false;
  std::string out_dir = ".";
};

struct SynthOptions {
  fcc::SynthSpec spec;
  std::string scenario = "plain";
  std::size_t grid = 12;
  std::size_t episodes = 50;
};

void add_common(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--threads", rc.threads, "Worker threads (default: FCC_THREADS or hardware concurrency)");
  cmd->add_flag("--deterministic", rc.deterministic,
                "Require run-to-run identical outputs (always honoured: every kernel has a fixed order)");
  cmd->add_option("--seed", rc.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out-dir", rc.out_dir, "Output directory")->capture_default_str();
}

void add_pipeline(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--pattern", rc.pattern, "Layer pairs: same | cross3 | dcross3 | cross5 | full")
      ->capture_default_str()
      ->check(CLI::IsMember({"same", "cross3", "dcross3", "cross5", "full"}));
  cmd->add_flag("--dual-path", rc.dual_path, "Add the unmasked support path (doubles the channels)");
}

void add_episode(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--manifest", rc.manifest, "Episode manifest (JSON)")->required();
  cmd->add_option("--episode", rc.episode, "Episode index in the manifest")->capture_default_str();
}

void add_synth(CLI::App* cmd, SynthOptions& so) {
  cmd->add_option("--episodes", so.episodes, "Episode count")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--grid", so.grid, "Square grid side")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--layers", so.spec.n_layers, "Layers per feature stack")->capture_default_str();
  cmd->add_option("--channels", so.spec.channels, "Feature channels")->capture_default_str();
  cmd->add_option("--signature-dim", so.spec.signature_dim, "Channels carrying class identity")
      ->capture_default_str();
  cmd->add_option("--noise", so.spec.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  cmd->add_option("--scenario", so.scenario, "plain | scale_diff | occlusion | shape_diff | limited_info")
      ->capture_default_str()
      ->check(CLI::IsMember({"plain", "scale_diff", "occlusion", "shape_diff", "limited_info"}));
  cmd->add_option("--scale-ratio", so.spec.scale_ratio, "Query/support object size ratio")->capture_default_str();
  cmd->add_option("--occlusion", so.spec.occlusion_fraction, "Hidden share of the support object")
      ->capture_default_str();
  cmd->add_option("--shots", so.spec.shots, "Support shots per episode")->capture_default_str();
}

fcc::SynthSpec resolve(const SynthOptions& so, const RunConfig& rc) {
  fcc::SynthSpec s = so.spec;
  s.grid_h = s.grid_w = so.grid;
  s.scenario = fcc::parse_scenario(so.scenario);
  s.seed = rc.seed;
  s.validate();
  return s;
}

fcc::PipelineConfig pipeline(const RunConfig& rc) {
  fcc::PipelineConfig c;
  c.pattern = fcc::LayerPattern::parse(rc.pattern);
  c.dual_path = rc.dual_path;
  c.kshot = rc.kshot;
  c.tau = rc.tau;
  return c;
}

// Seeded reduction for the training-free pipeline, sized to the episode's channel count.
void attach_reduction(fcc::PipelineConfig& c, const RunConfig& rc, std::size_t n_layers) {
  if (rc.out_channels == 0) return;
  const std::size_t in = c.pattern.pairs(n_layers).size() * (c.dual_path ? 2 : 1);
  c.reduction = fcc::ReductionWeights::init(in, rc.out_channels, rc.seed);
}

fs::path out_path(const RunConfig& rc, const std::string& name) { return fs::path(rc.out_dir) / name; }

void prepare(const RunConfig& rc) {
  fcc::set_num_threads(rc.threads == 0 ? fcc::default_num_threads() : rc.threads);
  std::error_code ec;
  fs::create_directories(rc.out_dir, ec);
  fcc::require(!ec, fcc::ErrorCode::io, "cannot create output directory " + rc.out_dir + ": " + ec.message());
}

int cmd_synth(const RunConfig& rc, const SynthOptions& so) {
  const fcc::SynthSpec spec = resolve(so, rc);
  const auto episodes = fcc::synth_batch(spec, so.episodes);
  fcc::EpisodeManifest m;
  m.header = {spec.n_layers, spec.channels, spec.grid_h, spec.grid_w};
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const fcc::EpisodeBundle& e = episodes[i];
    char dir_name[32];
    std::snprintf(dir_name, sizeof dir_name, "ep%04zu", i);
    const fs::path dir(dir_name);
    fs::create_directories(out_path(rc, dir_name));
    fcc::EpisodeRecord r;
    r.query_features = dir / "query.fcct";
    r.query_mask = dir / "query_mask.fcct";
    fcc::save_features(out_path(rc, r.query_features.string()), e.query);
    fcc::save_mask(out_path(rc, r.query_mask.string()), e.query_gt);
    for (std::size_t s = 0; s < e.shots.size(); ++s) {
      const std::string tag = "shot" + std::to_string(s);
      fcc::ShotRecord sr{dir / (tag + "_full.fcct"), dir / (tag + "_target.fcct"), dir / (tag + "_mask.fcct")};
      fcc::save_features(out_path(rc, sr.support_features.string()), e.shots[s].support_full);
      fcc::save_features(out_path(rc, sr.target_features.string()), e.shots[s].support_target);
      fcc::save_mask(out_path(rc, sr.support_mask.string()), e.shots[s].support_mask);
      r.shots.push_back(sr);
    }
    r.class_id = e.class_id;
    r.fold_id = e.fold_id;
    m.episodes.push_back(std::move(r));
  }
  fcc::write_manifest(out_path(rc, "manifest.json"), m);
  std::cout << "episodes: " << episodes.size() << "\nmanifest: " << out_path(rc, "manifest.json").string() << "\n";
  return 0;
}

int cmd_fcc(const RunConfig& rc) {
  const fcc::EpisodeManifest m = fcc::read_manifest(rc.manifest);
  const fcc::EpisodeBundle e = fcc::load_episode(m, rc.episode);
  const fcc::CorrelationVolume v = fcc::shot_volume(e, rc.shot, pipeline(rc));
  fcc::write_volume(out_path(rc, "volume.fcct"), v);
  std::cout << "channels: " << v.shape.channels << "\nvolume: " << out_path(rc, "volume.fcct").string() << "\n";
  return 0;
}

int cmd_segment(const RunConfig& rc) {
  const fcc::EpisodeManifest m = fcc::read_manifest(rc.manifest);
  const fcc::EpisodeBundle e = fcc::load_episode(m, rc.episode);
  fcc::PipelineConfig c = pipeline(rc);
  attach_reduction(c, rc, e.query.n_layers());
  const fcc::ScoreMap scores = fcc::predict_scores(e, c);
  const fcc::GridMask mask = fcc::threshold_mask(scores, c.tau);
  fcc::save_score_map(out_path(rc, "scores.fcct"), scores);
  fcc::write_text(out_path(rc, "scores.csv"), fcc::format_matrix_csv(scores.values, scores.grid_h, scores.grid_w));
  fcc::write_pgm(out_path(rc, "scores.pgm"), scores.values, scores.grid_h, scores.grid_w);
  fcc::write_pgm(out_path(rc, "mask.pgm"), mask.values(), mask.grid_h(), mask.grid_w());
  std::cout << "iou: " << fcc::format_number(fcc::iou(mask, e.query_gt)) << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const SynthOptions& so, bool synthetic, const std::string& stratum) {
  fcc::PipelineConfig c = pipeline(rc);
  fcc::EvalReport report;
  if (synthetic) {
    const fcc::SynthSpec spec = resolve(so, rc);
    std::vector<fcc::EpisodeBundle> episodes = fcc::synth_batch(spec, so.episodes);
    if (stratum == "small-support") episodes = fcc::stratify_small_support(episodes);
    fcc::require(!episodes.empty(), fcc::ErrorCode::invalid_argument, "evaluate: stratum " + stratum + " is empty");
    attach_reduction(c, rc, spec.n_layers);
    report = fcc::evaluate(episodes, c, stratum == "small-support" ? "support-mask<5%" : "all");
  } else {
    const fcc::EpisodeManifest m = fcc::read_manifest(rc.manifest);
    attach_reduction(c, rc, m.header.n_layers);
    if (stratum == "small-support") {
      std::vector<fcc::EpisodeBundle> episodes;
      for (std::size_t i = 0; i < m.episodes.size(); ++i) episodes.push_back(fcc::load_episode(m, i));
      episodes = fcc::stratify_small_support(episodes);
      fcc::require(!episodes.empty(), fcc::ErrorCode::invalid_argument, "evaluate: stratum " + stratum + " is empty");
      report = fcc::evaluate(episodes, c, "support-mask<5%");
    } else {
      report = fcc::evaluate(m, c);
    }
  }
  const std::string summary = fcc::format_report_summary(report);
  fcc::write_text(out_path(rc, "report.csv"), fcc::format_report_csv(report));
  fcc::write_text(out_path(rc, "summary.txt"), summary);
  std::cout << summary;
  return 0;
}

int cmd_cka(const RunConfig& rc, const std::string& a_path, const std::string& b_path, const std::string& mask_path) {
  const fcc::FeatureSet a = fcc::load_features(a_path);
  const fcc::FeatureSet b = fcc::load_features(b_path);
  std::optional<fcc::GridMask> mask;
  if (!mask_path.empty()) mask = fcc::load_mask(mask_path);
  const fcc::CKAHeatmap h = fcc::cka_heatmap(a, b, mask);
  fcc::write_text(out_path(rc, "cka.csv"), fcc::format_matrix_csv(h.values, h.rows, h.cols));
  fcc::write_pgm(out_path(rc, "cka.pgm"), h.values, h.rows, h.cols);
  std::cout << "layers: " << h.rows << "x" << h.cols << "\n";
  return 0;
}

struct TrainOptions {
  std::string heldout_manifest;
  fcc::TrainConfig config;
};

std::vector<fcc::HeadInput> head_inputs(const std::string& manifest_path, const RunConfig& rc) {
  const fcc::EpisodeManifest m = fcc::read_manifest(manifest_path);
  const fcc::LayerPattern pattern = fcc::LayerPattern::parse(rc.pattern);
  std::vector<fcc::HeadInput> out;
  for (std::size_t i = 0; i < m.episodes.size(); ++i) {
    out.push_back(fcc::head_input(fcc::load_episode(m, i), pattern, rc.dual_path));
  }
  return out;
}

int cmd_train_toy(const RunConfig& rc, TrainOptions to) {
  const auto train_set = head_inputs(rc.manifest, rc);
  fcc::require(!train_set.empty(), fcc::ErrorCode::invalid_argument, "train-toy: manifest has no episodes");
  const auto heldout = to.heldout_manifest.empty() ? std::vector<fcc::HeadInput>{} : head_inputs(to.heldout_manifest, rc);
  const std::size_t in = train_set.front().volume.shape.channels;
  const std::size_t d = rc.out_channels == 0 ? fcc::default_out_channels(in) : rc.out_channels;
  to.config.seed = rc.seed;
  const fcc::TrainResult r = fcc::train(train_set, heldout, fcc::ToyHeadParams::init(in, d, rc.seed), to.config);

  fcc::save_weights(out_path(rc, "reduction_weights.fcct"), out_path(rc, "reduction_bias.fcct"), r.params.reduction);
  std::vector<float> readout(r.params.readout_w.begin(), r.params.readout_w.end());
  readout.push_back(static_cast<float>(r.params.readout_b));
  const std::size_t dims[] = {readout.size()};
  fcc::write_tensor(out_path(rc, "readout.fcct"), dims, readout);
  fcc::write_text(out_path(rc, "train_log.csv"), fcc::format_train_log(r.log));
  fcc::write_text(out_path(rc, "reduction_weights.fcct.channels.txt"),
                  fcc::format_channel_map(train_set.front().volume.shape, train_set.front().volume.channel_map));
  std::cout << "steps: " << r.log.size() << "\nbest_step: " << r.best_step
            << "\nbest_heldout_loss: " << fcc::format_number(r.best_heldout_loss) << "\n";
  return 0;
}

int cmd_weights_heatmap(const RunConfig& rc, const std::string& weights, const std::string& bias,
                        const std::string& channel_map) {
  const fcc::ReductionWeights w = fcc::load_weights(weights, bias);
  std::vector<fcc::ChannelSource> map;
  if (channel_map.empty()) {
    map = fcc::default_channel_map(w.in_channels);
  } else {
    std::ifstream in(channel_map, std::ios::binary);
    fcc::require(in.good(), fcc::ErrorCode::missing_file, "cannot open channel map: " + channel_map);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    map = fcc::parse_channel_map(text);
  }
  const fcc::WeightHeatmap h = fcc::weight_heatmap(w, map);
  const std::size_t n = h.n_layers;
  fcc::write_text(out_path(rc, "heatmap_target.csv"), fcc::format_matrix_csv(h.target, n, n));
  fcc::write_text(out_path(rc, "heatmap_support.csv"), fcc::format_matrix_csv(h.support, n, n));
  // PGMs are scaled to the largest entry so the pattern stays visible.
  double peak = 0.0;
  for (double v : h.target) peak = std::max(peak, v);
  for (double v : h.support) peak = std::max(peak, v);
  auto scaled = [peak](std::vector<double> v) {
    if (peak > 0.0) for (double& x : v) x /= peak;
    return v;
  };
  fcc::write_pgm(out_path(rc, "heatmap_target.pgm"), scaled(h.target), n, n);
  fcc::write_pgm(out_path(rc, "heatmap_support.pgm"), scaled(h.support), n, n);
  std::cout << "layers: " << n << "\n";
  return 0;
}

void report_error(std::string_view code, const std::string& message) {
  std::string flat = message;
  for (char& ch : flat) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::cerr << "error: code=" << code << " msg=" << flat << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully cross-layer correlation pipeline"};
  app.require_subcommand(1);

  RunConfig rc;
  SynthOptions so;
  TrainOptions to;
  bool synthetic = false;
  std::string stratum = "all";
  std::string cka_a, cka_b, cka_mask;
  std::string weights, bias, channel_map;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic manifest and feature files");
  add_common(synth, rc);
  add_synth(synth, so);

  auto* fcc_cmd = app.add_subcommand("fcc", "Compute and spill one episode's correlation volume");
  add_common(fcc_cmd, rc);
  add_episode(fcc_cmd, rc);
  add_pipeline(fcc_cmd, rc);
  fcc_cmd->add_option("--shot", rc.shot, "Support shot index")->capture_default_str();

  auto* segment = app.add_subcommand("segment", "Prior-mask pipeline on one episode");
  add_common(segment, rc);
  add_episode(segment, rc);
  add_pipeline(segment, rc);
  segment->add_option("--out-channels", rc.out_channels, "Seeded 1x1 reduction width (0: none)")
      ->capture_default_str();
  segment->add_option("--tau", rc.tau, "Mask threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  segment->add_option("--kshot", rc.kshot, "Shots to merge (0: all)")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a manifest or a synthetic batch");
  add_common(evaluate, rc);
  add_pipeline(evaluate, rc);
  evaluate->add_option("--manifest", rc.manifest, "Episode manifest (JSON)");
  evaluate->add_flag("--synth", synthetic, "Generate the batch from the synthetic options instead");
  add_synth(evaluate, so);
  evaluate->add_option("--out-channels", rc.out_channels, "Seeded 1x1 reduction width (0: none)")
      ->capture_default_str();
  evaluate->add_option("--tau", rc.tau, "Mask threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  evaluate->add_option("--kshot", rc.kshot, "Shots to merge (0: all)")->capture_default_str();
  evaluate->add_option("--stratum", stratum, "all | small-support")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "small-support"}));

  auto* cka = app.add_subcommand("cka", "CKA heatmap between two feature files");
  add_common(cka, rc);
  cka->add_option("features_a", cka_a, "First feature file")->required();
  cka->add_option("features_b", cka_b, "Second feature file")->required();
  cka->add_option("--mask", cka_mask, "Restrict tokens to this mask's foreground");

  auto* train = app.add_subcommand("train-toy", "Train the toy head");
  add_common(train, rc);
  add_pipeline(train, rc);
  train->add_option("--manifest", rc.manifest, "Training manifest (JSON)")->required();
  train->add_option("--heldout-manifest", to.heldout_manifest, "Held-out manifest for model selection");
  train->add_option("--out-channels", rc.out_channels, "Reduction width (0: a quarter of the inputs)")
      ->capture_default_str();
  train->add_option("--lr", to.config.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--epochs", to.config.epochs, "Epochs")->capture_default_str();
  train->add_option("--batch", to.config.batch, "Episodes per step")->capture_default_str();
  train->add_option("--dice-weight", to.config.dice_weight, "Dice share of the loss")->capture_default_str();

  auto* heatmap = app.add_subcommand("weights-heatmap", "Layer-pair heatmap of saved reduction weights");
  add_common(heatmap, rc);
  heatmap->add_option("--weights", weights, "Weight tensor [d, in]")->required();
  heatmap->add_option("--bias", bias, "Bias tensor [d] (optional)");
  heatmap->add_option("--channel-map", channel_map, "Channel map sidecar (default: dense n^2 or 2n^2 layout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    prepare(rc);
    if (*synth) return cmd_synth(rc, so);
    if (*fcc_cmd) return cmd_fcc(rc);
    if (*segment) return cmd_segment(rc);
    if (*evaluate) {
      fcc::require(synthetic != !rc.manifest.empty(), fcc::ErrorCode::invalid_argument,
                   "evaluate: give exactly one of --manifest or --synth");
      return cmd_evaluate(rc, so, synthetic, stratum);
    }
    if (*cka) return cmd_cka(rc, cka_a, cka_b, cka_mask);
    if (*train) return cmd_train_toy(rc, to);
    if (*heatmap) return cmd_weights_heatmap(rc, weights, bias, channel_map);
  } catch (const fcc::Error& e) {
    report_error(fcc::to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}
