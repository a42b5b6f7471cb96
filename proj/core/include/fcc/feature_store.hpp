#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fcc {

/// One layer of a FeatureSet: C channels over an h x w grid, channel-major.
struct LayerView {
  std::size_t channels = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::span<const float> values;  // [channel][row][col]

  std::size_t positions() const noexcept { return grid_h * grid_w; }
  float at(std::size_t channel, std::size_t position) const noexcept {
    return values[channel * positions() + position];
  }
};

/// An n-layer stack of C-channel features on a patch grid, indexed
/// [layer, channel, row, col]. Immutable; copies share storage.
class FeatureSet {
 public:
  FeatureSet() = default;
  /// Throws if any extent is zero, the data length is wrong, or a value is non-finite.
  FeatureSet(std::size_t n_layers, std::size_t channels, std::size_t grid_h, std::size_t grid_w,
             std::vector<float> data);

  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t grid_h() const noexcept { return grid_h_; }
  std::size_t grid_w() const noexcept { return grid_w_; }
  std::size_t positions() const noexcept { return grid_h_ * grid_w_; }
  bool empty() const noexcept { return n_layers_ == 0; }

  std::span<const float> data() const noexcept;
  LayerView layer(std::size_t index) const;
  float at(std::size_t layer, std::size_t channel, std::size_t row, std::size_t col) const;

  bool same_shape(const FeatureSet& other) const noexcept {
    return n_layers_ == other.n_layers_ && channels_ == other.channels_ &&
           grid_h_ == other.grid_h_ && grid_w_ == other.grid_w_;
  }

 private:
  std::size_t n_layers_ = 0;
  std::size_t channels_ = 0;
  std::size_t grid_h_ = 0;
  std::size_t grid_w_ = 0;
  std::shared_ptr<const std::vector<float>> data_;
};

/// Strictly binary raster. Used for patch-grid masks and for full-resolution
/// masks produced by upsampling.
class GridMask {
 public:
  GridMask() = default;
  GridMask(std::size_t grid_h, std::size_t grid_w, std::vector<std::uint8_t> values);
  static GridMask filled(std::size_t grid_h, std::size_t grid_w, bool on);

  std::size_t grid_h() const noexcept { return grid_h_; }
  std::size_t grid_w() const noexcept { return grid_w_; }
  std::size_t cells() const noexcept { return grid_h_ * grid_w_; }
  std::span<const std::uint8_t> values() const noexcept { return values_; }
  bool at(std::size_t row, std::size_t col) const { return values_[row * grid_w_ + col] != 0; }
  bool at(std::size_t cell) const { return values_[cell] != 0; }
  std::size_t foreground() const noexcept;
  double foreground_fraction() const noexcept;

  bool operator==(const GridMask&) const = default;

 private:
  std::size_t grid_h_ = 0;
  std::size_t grid_w_ = 0;
  std::vector<std::uint8_t> values_;
};

struct Shot {
  FeatureSet support_full;
  FeatureSet support_target;
  GridMask support_mask;
};

struct EpisodeBundle {
  FeatureSet query;
  GridMask query_gt;
  std::vector<Shot> shots;
  std::string class_id;
  int fold_id = 0;
};

/// Throws unless every type invariant of the bundle holds.
void validate(const EpisodeBundle& episode);

/// Patch-grid mask from a full-resolution binary mask: a cell is 1 iff at
/// least half of its pixel block is foreground.
GridMask downsample_mask(std::span<const std::uint8_t> pixels, std::size_t height, std::size_t width,
                         std::size_t grid_h, std::size_t grid_w);

// Tensor-file adapters. Feature files are f32 [n_layers, C, h, w]; masks are u8 [h, w].
void save_features(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet load_features(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const GridMask& mask);
GridMask load_mask(const std::filesystem::path& path);

struct ShotRecord {
  std::filesystem::path support_features;
  std::filesystem::path target_features;
  std::filesystem::path support_mask;
};

struct EpisodeRecord {
  std::filesystem::path query_features;
  std::filesystem::path query_mask;
  std::vector<ShotRecord> shots;
  std::string class_id;
  int fold_id = 0;
};

struct ManifestHeader {
  std::size_t n_layers = 0;
  std::size_t channels = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

/// Episode list stored as JSON. Relative file paths resolve against base_dir,
/// the directory holding the manifest.
struct EpisodeManifest {
  ManifestHeader header;
  std::vector<EpisodeRecord> episodes;
  std::filesystem::path base_dir;
};

EpisodeManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
EpisodeManifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const EpisodeManifest& manifest);
void write_manifest(const std::filesystem::path& path, const EpisodeManifest& manifest);

EpisodeBundle load_episode(const EpisodeManifest& manifest, std::size_t index);

}  // namespace fcc
