#include "fcc/feature_store.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fcc/error.hpp"
#include "fcc/tensor_io.hpp"

namespace fcc {

FeatureSet::FeatureSet(std::size_t n_layers, std::size_t channels, std::size_t grid_h,
                       std::size_t grid_w, std::vector<float> data)
    : n_layers_(n_layers), channels_(channels), grid_h_(grid_h), grid_w_(grid_w) {
  require(n_layers >= 1 && channels >= 1 && grid_h >= 1 && grid_w >= 1, ErrorCode::invariant,
          "feature set extents must all be >= 1");
  require(data.size() == n_layers * channels * grid_h * grid_w, ErrorCode::shape_mismatch,
          "feature data length does not match [n_layers, C, h, w]");
  for (float v : data) {
    require(std::isfinite(v), ErrorCode::non_finite, "feature set contains a non-finite value");
  }
  data_ = std::make_shared<const std::vector<float>>(std::move(data));
}

std::span<const float> FeatureSet::data() const noexcept {
  if (!data_) return {};
  return *data_;
}

LayerView FeatureSet::layer(std::size_t index) const {
  require(index < n_layers_, ErrorCode::invalid_argument,
          "layer index " + std::to_string(index) + " out of range");
  const std::size_t stride = channels_ * grid_h_ * grid_w_;
  return LayerView{channels_, grid_h_, grid_w_, data().subspan(index * stride, stride)};
}

float FeatureSet::at(std::size_t layer, std::size_t channel, std::size_t row, std::size_t col) const {
  return (*data_)[((layer * channels_ + channel) * grid_h_ + row) * grid_w_ + col];
}

GridMask::GridMask(std::size_t grid_h, std::size_t grid_w, std::vector<std::uint8_t> values)
    : grid_h_(grid_h), grid_w_(grid_w), values_(std::move(values)) {
  require(grid_h >= 1 && grid_w >= 1, ErrorCode::invariant, "mask extents must be >= 1");
  require(values_.size() == grid_h * grid_w, ErrorCode::shape_mismatch,
          "mask length does not match its extents");
  for (std::uint8_t v : values_) {
    require(v <= 1, ErrorCode::invariant, "mask values must be 0 or 1");
  }
}

GridMask GridMask::filled(std::size_t grid_h, std::size_t grid_w, bool on) {
  return GridMask(grid_h, grid_w, std::vector<std::uint8_t>(grid_h * grid_w, on ? 1 : 0));
}

std::size_t GridMask::foreground() const noexcept {
  std::size_t n = 0;
  for (std::uint8_t v : values_) n += v;
  return n;
}

double GridMask::foreground_fraction() const noexcept {
  return cells() == 0 ? 0.0 : static_cast<double>(foreground()) / static_cast<double>(cells());
}

void validate(const EpisodeBundle& episode) {
  const FeatureSet& q = episode.query;
  require(!q.empty(), ErrorCode::invariant, "episode has no query features");
  require(!episode.shots.empty(), ErrorCode::invariant, ">=1 shot required");
  require(episode.query_gt.grid_h() == q.grid_h() && episode.query_gt.grid_w() == q.grid_w(),
          ErrorCode::shape_mismatch, "query mask extents differ from query features");
  for (std::size_t k = 0; k < episode.shots.size(); ++k) {
    const Shot& shot = episode.shots[k];
    const std::string where = "shot " + std::to_string(k) + ": ";
    for (const FeatureSet* fs : {&shot.support_full, &shot.support_target}) {
      require(!fs->empty(), ErrorCode::invariant, where + "missing support features");
      require(fs->n_layers() == q.n_layers(), ErrorCode::shape_mismatch,
              where + "support has " + std::to_string(fs->n_layers()) + " layers, query has " +
                  std::to_string(q.n_layers()));
      require(fs->channels() == q.channels(), ErrorCode::shape_mismatch,
              where + "support channel count differs from query");
    }
    require(shot.support_full.grid_h() == shot.support_target.grid_h() &&
                shot.support_full.grid_w() == shot.support_target.grid_w(),
            ErrorCode::shape_mismatch, where + "support and target grids differ");
    require(shot.support_mask.grid_h() == shot.support_full.grid_h() &&
                shot.support_mask.grid_w() == shot.support_full.grid_w(),
            ErrorCode::shape_mismatch, where + "support mask extents differ from support features");
  }
}

GridMask downsample_mask(std::span<const std::uint8_t> pixels, std::size_t height, std::size_t width,
                         std::size_t grid_h, std::size_t grid_w) {
  require(grid_h >= 1 && grid_w >= 1, ErrorCode::invalid_argument, "grid extents must be >= 1");
  require(height >= grid_h && width >= grid_w, ErrorCode::invalid_argument,
          "mask is smaller than the target grid");
  require(pixels.size() == height * width, ErrorCode::shape_mismatch,
          "pixel count does not match mask extents");
  for (std::uint8_t v : pixels) {
    require(v <= 1, ErrorCode::invalid_argument, "full-resolution mask must be binary");
  }

  std::vector<std::uint8_t> cells(grid_h * grid_w, 0);
  for (std::size_t gr = 0; gr < grid_h; ++gr) {
    const std::size_t r0 = gr * height / grid_h;
    const std::size_t r1 = (gr + 1) * height / grid_h;
    for (std::size_t gc = 0; gc < grid_w; ++gc) {
      const std::size_t c0 = gc * width / grid_w;
      const std::size_t c1 = (gc + 1) * width / grid_w;
      std::size_t on = 0;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) on += pixels[r * width + c];
      }
      const std::size_t total = (r1 - r0) * (c1 - c0);
      cells[gr * grid_w + gc] = 2 * on >= total ? 1 : 0;
    }
  }
  return GridMask(grid_h, grid_w, std::move(cells));
}

void save_features(const std::filesystem::path& path, const FeatureSet& features) {
  const std::size_t dims[] = {features.n_layers(), features.channels(), features.grid_h(),
                              features.grid_w()};
  write_tensor(path, dims, features.data());
}

FeatureSet load_features(const std::filesystem::path& path) {
  TensorFile t = read_tensor(path);
  require(t.dtype == DType::f32 && t.dims.size() == 4, ErrorCode::shape_mismatch,
          path.string() + ": feature file must be f32 with dims [n_layers, C, h, w]");
  return FeatureSet(t.dims[0], t.dims[1], t.dims[2], t.dims[3], std::move(t.f32));
}

void save_mask(const std::filesystem::path& path, const GridMask& mask) {
  const std::size_t dims[] = {mask.grid_h(), mask.grid_w()};
  write_tensor(path, dims, mask.values());
}

GridMask load_mask(const std::filesystem::path& path) {
  TensorFile t = read_tensor(path);
  require(t.dtype == DType::u8 && t.dims.size() == 2, ErrorCode::shape_mismatch,
          path.string() + ": mask file must be u8 with dims [h, w]");
  try {
    return GridMask(t.dims[0], t.dims[1], std::move(t.u8));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

namespace {

using nlohmann::json;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::missing_file, "cannot open manifest: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t positive(const json& node, const char* key) {
  require(node.contains(key) && node.at(key).is_number_unsigned(), ErrorCode::invariant,
          std::string("manifest header field '") + key + "' must be a positive integer");
  const auto v = node.at(key).get<std::size_t>();
  require(v >= 1, ErrorCode::invariant, std::string("manifest header field '") + key + "' is zero");
  return v;
}

std::filesystem::path path_field(const json& node, const char* key) {
  require(node.contains(key) && node.at(key).is_string(), ErrorCode::invariant,
          std::string("manifest field '") + key + "' must be a string path");
  return std::filesystem::path(node.at(key).get<std::string>());
}

}  // namespace

EpisodeManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::invariant, std::string("manifest is not valid JSON: ") + e.what());
  }
  require(doc.is_object() && doc.contains("header") && doc.contains("episodes") &&
              doc.at("episodes").is_array(),
          ErrorCode::invariant, "manifest needs 'header' and 'episodes'");

  EpisodeManifest m;
  m.base_dir = base_dir;
  const json& h = doc.at("header");
  m.header = ManifestHeader{positive(h, "n_layers"), positive(h, "channels"), positive(h, "grid_h"),
                            positive(h, "grid_w")};

  for (const json& e : doc.at("episodes")) {
    require(e.is_object(), ErrorCode::invariant, "manifest episode must be an object");
    EpisodeRecord r;
    r.query_features = path_field(e, "query_features");
    r.query_mask = path_field(e, "query_mask");
    require(e.contains("shots") && e.at("shots").is_array(), ErrorCode::invariant,
            "manifest episode needs a 'shots' array");
    for (const json& s : e.at("shots")) {
      r.shots.push_back(ShotRecord{path_field(s, "support_features"), path_field(s, "target_features"),
                                   path_field(s, "support_mask")});
    }
    if (e.contains("class_id")) {
      const json& c = e.at("class_id");
      r.class_id = c.is_string() ? c.get<std::string>() : c.dump();
    }
    if (e.contains("fold_id")) {
      require(e.at("fold_id").is_number_integer(), ErrorCode::invariant, "fold_id must be an integer");
      r.fold_id = e.at("fold_id").get<int>();
    }
    m.episodes.push_back(std::move(r));
  }
  return m;
}

EpisodeManifest read_manifest(const std::filesystem::path& path) {
  try {
    return parse_manifest(read_text(path), path.parent_path());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::missing_file) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string format_manifest(const EpisodeManifest& manifest) {
  json doc;
  doc["header"] = {{"n_layers", manifest.header.n_layers},
                   {"channels", manifest.header.channels},
                   {"grid_h", manifest.header.grid_h},
                   {"grid_w", manifest.header.grid_w}};
  json episodes = json::array();
  for (const EpisodeRecord& r : manifest.episodes) {
    json shots = json::array();
    for (const ShotRecord& s : r.shots) {
      shots.push_back({{"support_features", s.support_features.generic_string()},
                       {"target_features", s.target_features.generic_string()},
                       {"support_mask", s.support_mask.generic_string()}});
    }
    episodes.push_back({{"query_features", r.query_features.generic_string()},
                        {"query_mask", r.query_mask.generic_string()},
                        {"shots", std::move(shots)},
                        {"class_id", r.class_id},
                        {"fold_id", r.fold_id}});
  }
  doc["episodes"] = std::move(episodes);
  return doc.dump(2) + "\n";
}

void write_manifest(const std::filesystem::path& path, const EpisodeManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot open for writing: " + path.string());
  out << format_manifest(manifest);
  require(out.good(), ErrorCode::io, "write failed: " + path.string());
}

EpisodeBundle load_episode(const EpisodeManifest& manifest, std::size_t index) {
  require(index < manifest.episodes.size(), ErrorCode::invalid_argument,
          "episode index " + std::to_string(index) + " out of range (manifest has " +
              std::to_string(manifest.episodes.size()) + ")");
  const EpisodeRecord& r = manifest.episodes[index];
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() ? p : manifest.base_dir / p; };

  require(!r.shots.empty(), ErrorCode::invariant, ">=1 shot required");
  EpisodeBundle b;
  b.query = load_features(resolve(r.query_features));
  b.query_gt = load_mask(resolve(r.query_mask));
  for (const ShotRecord& s : r.shots) {
    b.shots.push_back(Shot{load_features(resolve(s.support_features)),
                           load_features(resolve(s.target_features)), load_mask(resolve(s.support_mask))});
  }
  b.class_id = r.class_id;
  b.fold_id = r.fold_id;

  const ManifestHeader& h = manifest.header;
  require(b.query.n_layers() == h.n_layers && b.query.channels() == h.channels &&
              b.query.grid_h() == h.grid_h && b.query.grid_w() == h.grid_w,
          ErrorCode::shape_mismatch, "query features disagree with manifest header");
  validate(b);
  return b;
}

}  // namespace fcc
