#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fcc/feature_store.hpp"

namespace fcc {

/// Extents of a channel stack of 4-D maps indexed [channel, q_row, q_col, s_row, s_col].
struct VolumeShape {
  std::size_t channels = 0;
  std::size_t hq = 0, wq = 0;
  std::size_t hs = 0, ws = 0;

  std::size_t query_positions() const noexcept { return hq * wq; }
  std::size_t support_positions() const noexcept { return hs * ws; }
  std::size_t channel_size() const noexcept { return query_positions() * support_positions(); }
  std::size_t size() const noexcept { return channels * channel_size(); }
  bool same_grid(const VolumeShape& o) const noexcept {
    return hq == o.hq && wq == o.wq && hs == o.hs && ws == o.ws;
  }
  bool operator==(const VolumeShape&) const = default;
};

struct VolumeView {
  VolumeShape shape;
  std::span<const float> values;

  std::span<const float> channel(std::size_t c) const {
    return values.subspan(c * shape.channel_size(), shape.channel_size());
  }
};

/// A dense channel stack; also the output type of the 1x1 reduction.
struct Volume {
  VolumeShape shape;
  std::vector<float> data;

  VolumeView view() const noexcept { return {shape, data}; }
  std::span<const float> channel(std::size_t c) const { return view().channel(c); }
  float at(std::size_t c, std::size_t qr, std::size_t qc, std::size_t sr, std::size_t sc) const {
    return data[((c * shape.hq + qr) * shape.wq + qc) * shape.support_positions() + sr * shape.ws + sc];
  }
};

enum class CorrelationPath : std::uint8_t { target = 0, support = 1 };

std::string_view to_string(CorrelationPath path) noexcept;

/// Origin of one correlation channel: support-side layer i against query-side layer j.
struct ChannelSource {
  CorrelationPath path = CorrelationPath::target;
  std::size_t support_layer = 0;
  std::size_t query_layer = 0;

  bool operator==(const ChannelSource&) const = default;
};

struct CorrelationVolume : Volume {
  std::vector<ChannelSource> channel_map;
};

/// Layer-pair selector for partial cross-layer correlation.
struct LayerPattern {
  enum class Kind { same_layer, cross, dilated_cross3, fully_cross };
  Kind kind = Kind::fully_cross;
  std::size_t width = 0;  // odd window for Kind::cross

  static LayerPattern same_layer() { return {Kind::same_layer, 1}; }
  static LayerPattern cross(std::size_t k);
  static LayerPattern dilated_cross3() { return {Kind::dilated_cross3, 3}; }
  static LayerPattern fully_cross() { return {Kind::fully_cross, 0}; }

  /// Accepts same | cross<k> (odd k) | dcross3 | full.
  static LayerPattern parse(std::string_view name);
  std::string name() const;

  bool selects(std::size_t support_layer, std::size_t query_layer, std::size_t n_layers) const noexcept;
  /// Selected (i, j) pairs in ascending row-major order.
  std::vector<std::pair<std::size_t, std::size_t>> pairs(std::size_t n_layers) const;
};

/// Inverse L2 norm of every position's C-vector, in 64-bit. Zero vectors map to 0.
std::vector<double> inverse_norms(const LayerView& layer);

/// Fills out[(q - q_begin) * Ps + s] with cos(side(s), query(q)) for q in
/// [q_begin, q_end). Dot products accumulate in 64-bit in ascending channel
/// order, so each entry is independent of blocking and threading.
void correlate_rows(const LayerView& side, std::span<const double> side_inv, const LayerView& query,
                    std::span<const double> query_inv, std::size_t q_begin, std::size_t q_end,
                    std::span<float> out);

/// 4-D cosine map indexed [b_row, b_col, a_row, a_col].
std::vector<float> cosine_map(const LayerView& a, const LayerView& b);

/// All n^2 layer pairs; channel i*n + j holds cosine_map(side layer i, query layer j).
CorrelationVolume fcc(const FeatureSet& side, const FeatureSet& query,
                      CorrelationPath path = CorrelationPath::target);

CorrelationVolume fcc_subset(const FeatureSet& side, const FeatureSet& query, const LayerPattern& pattern,
                             CorrelationPath path = CorrelationPath::target);

/// Target-path channels first, then support-path channels.
CorrelationVolume dcfc_concat(const CorrelationVolume& target, const CorrelationVolume& support);

/// Writes the volume as an f32 tensor [channels, hq*wq, hs*ws] and a
/// "<path>.channels.txt" sidecar holding the grid extents and channel map.
void write_volume(const std::filesystem::path& path, const CorrelationVolume& volume);
CorrelationVolume read_volume(const std::filesystem::path& path);
std::filesystem::path channel_map_path(const std::filesystem::path& volume_path);

std::string format_channel_map(const VolumeShape& shape, std::span<const ChannelSource> channel_map);
std::vector<ChannelSource> parse_channel_map(const std::string& text, VolumeShape* shape = nullptr);

}  // namespace fcc
