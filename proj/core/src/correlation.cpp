#include "fcc/correlation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fcc/error.hpp"
#include "fcc/parallel.hpp"
#include "fcc/tensor_io.hpp"

namespace fcc {
namespace {

// Register/L1 tile: kQueryBlock query positions against kSupportBlock support
// positions. Accumulators are 8 KiB of doubles.
constexpr std::size_t kQueryBlock = 8;
constexpr std::size_t kSupportBlock = 128;

// Rows of query positions handed to one task in fcc().
constexpr std::size_t kRowsPerTask = 32;

void require_compatible(const LayerView& side, const LayerView& query) {
  require(side.channels == query.channels, ErrorCode::shape_mismatch,
          "channel mismatch: " + std::to_string(side.channels) + " vs " + std::to_string(query.channels));
}

void require_stacks(const FeatureSet& side, const FeatureSet& query) {
  require(!side.empty() && !query.empty(), ErrorCode::invalid_argument, "empty feature set");
  require(side.n_layers() == query.n_layers(), ErrorCode::shape_mismatch,
          "layer-count mismatch: " + std::to_string(side.n_layers()) + " vs " +
              std::to_string(query.n_layers()));
  require(side.channels() == query.channels(), ErrorCode::shape_mismatch,
          "channel mismatch: " + std::to_string(side.channels()) + " vs " +
              std::to_string(query.channels()));
}

std::vector<std::vector<double>> all_inverse_norms(const FeatureSet& fs) {
  std::vector<std::vector<double>> out(fs.n_layers());
  parallel_for(fs.n_layers(), [&](std::size_t b, std::size_t e) {
    for (std::size_t l = b; l < e; ++l) out[l] = inverse_norms(fs.layer(l));
  });
  return out;
}

}  // namespace

std::string_view to_string(CorrelationPath path) noexcept {
  return path == CorrelationPath::target ? "target" : "support";
}

LayerPattern LayerPattern::cross(std::size_t k) {
  require(k >= 1 && k % 2 == 1, ErrorCode::invalid_argument,
          "cross window must be odd, got " + std::to_string(k));
  return {Kind::cross, k};
}

LayerPattern LayerPattern::parse(std::string_view name) {
  if (name == "same" || name == "same_layer") return same_layer();
  if (name == "full" || name == "fully_cross") return fully_cross();
  if (name == "dcross3" || name == "dilated_cross3") return dilated_cross3();
  if (name.starts_with("cross")) {
    const std::string digits(name.substr(5));
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      return cross(std::stoul(digits));
    }
  }
  fail(ErrorCode::invalid_argument, "unknown layer pattern '" + std::string(name) + "'");
}

std::string LayerPattern::name() const {
  switch (kind) {
    case Kind::same_layer: return "same";
    case Kind::cross: return "cross" + std::to_string(width);
    case Kind::dilated_cross3: return "dcross3";
    case Kind::fully_cross: return "full";
  }
  return "?";
}

bool LayerPattern::selects(std::size_t i, std::size_t j, std::size_t n) const noexcept {
  if (i >= n || j >= n) return false;
  const std::size_t gap = i > j ? i - j : j - i;
  switch (kind) {
    case Kind::same_layer: return gap == 0;
    case Kind::cross: return gap <= (width - 1) / 2;
    case Kind::dilated_cross3: return gap == 0 || gap == 2;
    case Kind::fully_cross: return true;
  }
  return false;
}

std::vector<std::pair<std::size_t, std::size_t>> LayerPattern::pairs(std::size_t n) const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (selects(i, j, n)) out.emplace_back(i, j);
    }
  }
  return out;
}

std::vector<double> inverse_norms(const LayerView& layer) {
  const std::size_t positions = layer.positions();
  std::vector<double> sq(positions, 0.0);
  for (std::size_t c = 0; c < layer.channels; ++c) {
    const float* row = layer.values.data() + c * positions;
    for (std::size_t p = 0; p < positions; ++p) {
      const double v = row[p];
      sq[p] += v * v;
    }
  }
  for (double& s : sq) s = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
  return sq;
}

void correlate_rows(const LayerView& side, std::span<const double> side_inv, const LayerView& query,
                    std::span<const double> query_inv, std::size_t q_begin, std::size_t q_end,
                    std::span<float> out) {
  require_compatible(side, query);
  const std::size_t ps = side.positions();
  const std::size_t pq = query.positions();
  const std::size_t channels = side.channels;
  require(q_begin <= q_end && q_end <= pq, ErrorCode::invalid_argument, "query row range out of bounds");
  require(out.size() >= (q_end - q_begin) * ps, ErrorCode::shape_mismatch, "output block too small");
  require(side_inv.size() == ps && query_inv.size() == pq, ErrorCode::shape_mismatch,
          "inverse-norm table size mismatch");

  const float* a = side.values.data();
  const float* b = query.values.data();
  std::array<double, kQueryBlock * kSupportBlock> acc;

  for (std::size_t q0 = q_begin; q0 < q_end; q0 += kQueryBlock) {
    const std::size_t nq = std::min(kQueryBlock, q_end - q0);
    for (std::size_t s0 = 0; s0 < ps; s0 += kSupportBlock) {
      const std::size_t ns = std::min(kSupportBlock, ps - s0);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t c = 0; c < channels; ++c) {
        const float* arow = a + c * ps + s0;
        const float* brow = b + c * pq + q0;
        for (std::size_t qi = 0; qi < nq; ++qi) {
          const double bv = brow[qi];
          double* dst = acc.data() + qi * kSupportBlock;
          for (std::size_t si = 0; si < ns; ++si) dst[si] += bv * static_cast<double>(arow[si]);
        }
      }
      for (std::size_t qi = 0; qi < nq; ++qi) {
        const double qinv = query_inv[q0 + qi];
        float* dst = out.data() + (q0 + qi - q_begin) * ps + s0;
        const double* src = acc.data() + qi * kSupportBlock;
        for (std::size_t si = 0; si < ns; ++si) {
          dst[si] = static_cast<float>(src[si] * side_inv[s0 + si] * qinv);
        }
      }
    }
  }
}

std::vector<float> cosine_map(const LayerView& a, const LayerView& b) {
  require_compatible(a, b);
  const auto a_inv = inverse_norms(a);
  const auto b_inv = inverse_norms(b);
  const std::size_t pb = b.positions();
  const std::size_t pa = a.positions();
  std::vector<float> out(pa * pb);
  const std::size_t tasks = (pb + kRowsPerTask - 1) / kRowsPerTask;
  parallel_for(tasks, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t t = t0; t < t1; ++t) {
      const std::size_t q0 = t * kRowsPerTask;
      const std::size_t q1 = std::min(pb, q0 + kRowsPerTask);
      correlate_rows(a, a_inv, b, b_inv, q0, q1, std::span<float>(out).subspan(q0 * pa, (q1 - q0) * pa));
    }
  });
  return out;
}

CorrelationVolume fcc_subset(const FeatureSet& side, const FeatureSet& query, const LayerPattern& pattern,
                             CorrelationPath path) {
  require_stacks(side, query);
  const std::size_t n = side.n_layers();
  const auto selected = pattern.pairs(n);

  CorrelationVolume vol;
  vol.shape = VolumeShape{selected.size(), query.grid_h(), query.grid_w(), side.grid_h(), side.grid_w()};
  vol.channel_map.reserve(selected.size());
  for (auto [i, j] : selected) vol.channel_map.push_back(ChannelSource{path, i, j});
  vol.data.resize(vol.shape.size());

  const auto side_inv = all_inverse_norms(side);
  const auto query_inv = all_inverse_norms(query);

  const std::size_t pq = query.positions();
  const std::size_t ps = side.positions();
  const std::size_t blocks_per_channel = (pq + kRowsPerTask - 1) / kRowsPerTask;
  parallel_for(selected.size() * blocks_per_channel, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t t = t0; t < t1; ++t) {
      const std::size_t c = t / blocks_per_channel;
      const std::size_t q0 = (t % blocks_per_channel) * kRowsPerTask;
      const std::size_t q1 = std::min(pq, q0 + kRowsPerTask);
      const auto [i, j] = selected[c];
      auto dst = std::span<float>(vol.data).subspan(c * vol.shape.channel_size() + q0 * ps, (q1 - q0) * ps);
      correlate_rows(side.layer(i), side_inv[i], query.layer(j), query_inv[j], q0, q1, dst);
    }
  });
  return vol;
}

CorrelationVolume fcc(const FeatureSet& side, const FeatureSet& query, CorrelationPath path) {
  return fcc_subset(side, query, LayerPattern::fully_cross(), path);
}

CorrelationVolume dcfc_concat(const CorrelationVolume& target, const CorrelationVolume& support) {
  require(target.shape.same_grid(support.shape), ErrorCode::shape_mismatch,
          "dcfc_concat: spatial extents differ");
  require(target.shape.channels == support.shape.channels, ErrorCode::shape_mismatch,
          "dcfc_concat: channel counts differ");
  require(target.channel_map.size() == target.shape.channels &&
              support.channel_map.size() == support.shape.channels,
          ErrorCode::invariant, "dcfc_concat: inputs need complete channel maps");

  CorrelationVolume out;
  out.shape = target.shape;
  out.shape.channels = 2 * target.shape.channels;
  out.data.reserve(out.shape.size());
  out.data.insert(out.data.end(), target.data.begin(), target.data.end());
  out.data.insert(out.data.end(), support.data.begin(), support.data.end());
  out.channel_map.reserve(out.shape.channels);
  for (ChannelSource s : target.channel_map) {
    s.path = CorrelationPath::target;
    out.channel_map.push_back(s);
  }
  for (ChannelSource s : support.channel_map) {
    s.path = CorrelationPath::support;
    out.channel_map.push_back(s);
  }
  return out;
}

std::filesystem::path channel_map_path(const std::filesystem::path& volume_path) {
  std::filesystem::path p = volume_path;
  p += ".channels.txt";
  return p;
}

std::string format_channel_map(const VolumeShape& shape, std::span<const ChannelSource> channel_map) {
  std::ostringstream os;
  os << "grid " << shape.hq << ' ' << shape.wq << ' ' << shape.hs << ' ' << shape.ws << '\n';
  os << "channel,path,support_layer,query_layer\n";
  for (std::size_t c = 0; c < channel_map.size(); ++c) {
    const ChannelSource& s = channel_map[c];
    os << c << ',' << to_string(s.path) << ',' << s.support_layer << ',' << s.query_layer << '\n';
  }
  return os.str();
}

std::vector<ChannelSource> parse_channel_map(const std::string& text, VolumeShape* shape) {
  std::istringstream in(text);
  std::string line;
  VolumeShape grid;
  require(std::getline(in, line) && line.starts_with("grid "), ErrorCode::invariant,
          "channel map must start with a 'grid' line");
  {
    std::istringstream g(line.substr(5));
    require(static_cast<bool>(g >> grid.hq >> grid.wq >> grid.hs >> grid.ws), ErrorCode::invariant,
            "malformed channel map grid line");
  }
  require(std::getline(in, line) && line == "channel,path,support_layer,query_layer", ErrorCode::invariant,
          "malformed channel map column header");
  std::vector<ChannelSource> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string index, path, i, j;
    require(std::getline(row, index, ',') && std::getline(row, path, ',') && std::getline(row, i, ',') &&
                std::getline(row, j),
            ErrorCode::invariant, "malformed channel map row: " + line);
    require(std::stoul(index) == out.size(), ErrorCode::invariant, "channel map rows out of order");
    require(path == "target" || path == "support", ErrorCode::invariant, "unknown path '" + path + "'");
    out.push_back(ChannelSource{path == "target" ? CorrelationPath::target : CorrelationPath::support,
                                std::stoul(i), std::stoul(j)});
  }
  grid.channels = out.size();
  if (shape) *shape = grid;
  return out;
}

void write_volume(const std::filesystem::path& path, const CorrelationVolume& volume) {
  require(volume.channel_map.size() == volume.shape.channels, ErrorCode::invariant,
          "volume channel map is incomplete");
  const std::size_t dims[] = {volume.shape.channels, volume.shape.query_positions(),
                              volume.shape.support_positions()};
  write_tensor(path, dims, volume.data);
  std::ofstream side(channel_map_path(path), std::ios::trunc);
  require(side.good(), ErrorCode::io, "cannot write channel map for " + path.string());
  side << format_channel_map(volume.shape, volume.channel_map);
  require(side.good(), ErrorCode::io, "write failed: " + channel_map_path(path).string());
}

CorrelationVolume read_volume(const std::filesystem::path& path) {
  TensorFile t = read_tensor(path);
  std::ifstream in(channel_map_path(path));
  require(in.good(), ErrorCode::missing_file, "missing channel map: " + channel_map_path(path).string());
  std::ostringstream ss;
  ss << in.rdbuf();
  CorrelationVolume vol;
  vol.channel_map = parse_channel_map(ss.str(), &vol.shape);
  require(t.dtype == DType::f32 && t.dims.size() == 3 && t.dims[0] == vol.shape.channels &&
              t.dims[1] == vol.shape.query_positions() && t.dims[2] == vol.shape.support_positions(),
          ErrorCode::shape_mismatch, path.string() + ": volume dims disagree with its channel map");
  vol.data = std::move(t.f32);
  return vol;
}

}  // namespace fcc
