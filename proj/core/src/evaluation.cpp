#include "fcc/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "fcc/csv.hpp"
#include "fcc/error.hpp"

namespace fcc {

double iou(const GridMask& pred, const GridMask& gt) {
  require(pred.grid_h() == gt.grid_h() && pred.grid_w() == gt.grid_w(), ErrorCode::shape_mismatch,
          "iou: mask extents differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < pred.cells(); ++i) {
    inter += pred.at(i) && gt.at(i);
    uni += pred.at(i) || gt.at(i);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

CorrelationVolume shot_volume(const EpisodeBundle& episode, std::size_t shot, const PipelineConfig& config) {
  require(shot < episode.shots.size(), ErrorCode::invalid_argument, "shot index out of range");
  const Shot& s = episode.shots[shot];
  CorrelationVolume target = fcc_subset(s.support_target, episode.query, config.pattern, CorrelationPath::target);
  if (!config.dual_path) return target;
  return dcfc_concat(target, fcc_subset(s.support_full, episode.query, config.pattern, CorrelationPath::support));
}

ScoreMap predict_scores(const EpisodeBundle& episode, const PipelineConfig& config) {
  validate(episode);
  const std::size_t k = config.kshot == 0 ? episode.shots.size() : std::min(config.kshot, episode.shots.size());
  std::vector<ScoreMap> per_shot;
  per_shot.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    CorrelationVolume vol = shot_volume(episode, i, config);
    const GridMask& mask = episode.shots[i].support_mask;
    if (config.reduction) {
      per_shot.push_back(prior_score(reduce(vol.view(), *config.reduction).view(), mask));
    } else {
      per_shot.push_back(prior_score(vol.view(), mask));
    }
  }
  return kshot_merge(per_shot);
}

GridMask predict_mask(const EpisodeBundle& episode, const PipelineConfig& config) {
  return threshold_mask(predict_scores(episode, config), config.tau);
}

EvalReport summarize(std::vector<EpisodeResult> results, std::string stratum) {
  EvalReport r;
  r.stratum = std::move(stratum);
  r.episodes = std::move(results);
  std::map<int, std::pair<double, std::size_t>> folds;
  double total = 0.0;
  for (const EpisodeResult& e : r.episodes) {
    total += e.iou;
    auto& f = folds[e.fold_id];
    f.first += e.iou;
    ++f.second;
  }
  r.miou = r.episodes.empty() ? 0.0 : total / static_cast<double>(r.episodes.size());
  for (const auto& [fold, acc] : folds) r.fold_miou[fold] = acc.first / static_cast<double>(acc.second);
  return r;
}

EvalReport evaluate(std::span<const EpisodeBundle> episodes, const PipelineConfig& config, std::string stratum) {
  require(!episodes.empty(), ErrorCode::invalid_argument, "evaluate: no episodes");
  const FeatureSet& first = episodes.front().query;
  std::vector<EpisodeResult> results;
  results.reserve(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const EpisodeBundle& e = episodes[i];
    require(e.query.n_layers() == first.n_layers() && e.query.channels() == first.channels(),
            ErrorCode::shape_mismatch, "evaluate: episode " + std::to_string(i) + " has inconsistent shapes");
    results.push_back(EpisodeResult{i, e.fold_id, e.class_id, iou(predict_mask(e, config), e.query_gt)});
  }
  return summarize(std::move(results), std::move(stratum));
}

EvalReport evaluate(const EpisodeManifest& manifest, const PipelineConfig& config, std::string stratum) {
  require(!manifest.episodes.empty(), ErrorCode::invalid_argument, "evaluate: manifest has no episodes");
  std::vector<EpisodeResult> results;
  results.reserve(manifest.episodes.size());
  for (std::size_t i = 0; i < manifest.episodes.size(); ++i) {
    const EpisodeBundle e = load_episode(manifest, i);
    results.push_back(EpisodeResult{i, e.fold_id, e.class_id, iou(predict_mask(e, config), e.query_gt)});
  }
  return summarize(std::move(results), std::move(stratum));
}

std::string format_report_csv(const EvalReport& report) {
  std::string out = "episode_id,fold,iou\n";
  for (const EpisodeResult& e : report.episodes) {
    out += std::to_string(e.episode_id) + "," + std::to_string(e.fold_id) + "," + format_number(e.iou) + "\n";
  }
  return out;
}

std::string format_report_summary(const EvalReport& report) {
  int last_fold = 3;
  for (const auto& [fold, _] : report.fold_miou) last_fold = std::max(last_fold, fold);
  std::string out = "stratum: " + report.stratum + "\n";
  out += "episodes: " + std::to_string(report.episode_count()) + "\n";
  std::string header;
  std::string row;
  for (int f = 0; f <= last_fold; ++f) {
    header += "fold" + std::to_string(f) + ",";
    const auto it = report.fold_miou.find(f);
    row += (it == report.fold_miou.end() ? std::string("-") : format_number(it->second)) + ",";
  }
  out += header + "mIoU\n" + row + format_number(report.miou) + "\n";
  return out;
}

std::vector<EpisodeBundle> stratify_small_support(std::span<const EpisodeBundle> episodes) {
  std::vector<EpisodeBundle> kept;
  for (const EpisodeBundle& e : episodes) {
    if (e.shots.empty()) continue;
    const GridMask& m = e.shots.front().support_mask;
    // Integer form of fg / cells < 0.05.
    if (20 * m.foreground() < m.cells()) kept.push_back(e);
  }
  return kept;
}

}  // namespace fcc
