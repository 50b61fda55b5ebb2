#include "palletpose/belief_codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "palletpose/errors.hpp"

namespace palletpose {

namespace {

constexpr char kMagic[4] = {'P', 'B', 'T', '1'};

// Belief below this level is not splatted and carries no vector field.
constexpr double kEncodeFloor = 0.01;

struct CellBox {
  int x0, x1, y0, y1;
};

CellBox clip_radius(const Eigen::Vector2d& center, double radius, int w, int h) {
  CellBox box;
  box.x0 = std::max(0, static_cast<int>(std::floor(center.x() - radius)));
  box.x1 = std::min(w - 1, static_cast<int>(std::ceil(center.x() + radius)));
  box.y0 = std::max(0, static_cast<int>(std::floor(center.y() - radius)));
  box.y1 = std::min(h - 1, static_cast<int>(std::ceil(center.y() + radius)));
  return box;
}

double bilinear(const BeliefTensor& t, int channel, double x, double y) {
  const int w = t.map_width();
  const int h = t.map_height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(x), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = t.belief(channel, x0, y0);
  const double v10 = t.belief(channel, x1, y0);
  const double v01 = t.belief(channel, x0, y1);
  const double v11 = t.belief(channel, x1, y1);
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

// Intensity-weighted centroid over a 5x5 unit-spaced window, re-centred on the
// running estimate until stationary. With the window centred on the true mode
// the truncated-window bias cancels by symmetry, so the fixed point recovers
// the sub-cell position.
Eigen::Vector2d refine_peak(const BeliefTensor& t, int channel, int px, int py) {
  Eigen::Vector2d pos(px, py);
  for (int iter = 0; iter < 40; ++iter) {
    double sum = 0.0;
    Eigen::Vector2d weighted = Eigen::Vector2d::Zero();
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) {
        const double sx = pos.x() + dx;
        const double sy = pos.y() + dy;
        const double v = bilinear(t, channel, sx, sy);
        sum += v;
        weighted += v * Eigen::Vector2d(sx, sy);
      }
    }
    if (sum <= 0.0) break;
    const Eigen::Vector2d next = weighted / sum;
    const double step = (next - pos).norm();
    pos = next;
    if (step < 1e-4) break;
  }
  pos.x() = std::clamp(pos.x(), 0.0, static_cast<double>(t.map_width() - 1));
  pos.y() = std::clamp(pos.y(), 0.0, static_cast<double>(t.map_height() - 1));
  return pos;
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

BeliefTensor::BeliefTensor(int map_width, int map_height, int stride)
    : map_width_(map_width), map_height_(map_height), stride_(stride) {
  if (map_width <= 0 || map_height <= 0 || stride <= 0) {
    throw Error("BeliefTensor: map size and stride must be positive");
  }
  data_.assign(static_cast<std::size_t>(kChannelCount) * cells(), 0.0f);
}

BeliefTensor encode(const std::vector<Keypoints2D>& instances, int map_width,
                    int map_height, int stride, double sigma) {
  if (!(sigma > 0.0)) {
    throw Error("encode: sigma must be positive");
  }
  BeliefTensor tensor(map_width, map_height, stride);

  // Radius at which the Gaussian drops to the encode floor.
  const double radius = sigma * std::sqrt(2.0 * std::log(1.0 / kEncodeFloor));
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

  // Per vector pair, the squared vertex distance currently owning each cell.
  std::vector<float> owner_sq(
      static_cast<std::size_t>(CuboidModel::kCornerCount) *
          static_cast<std::size_t>(map_width) * static_cast<std::size_t>(map_height),
      std::numeric_limits<float>::infinity());
  const auto owner_at = [&](int pair, int x, int y) -> float& {
    return owner_sq[(static_cast<std::size_t>(pair) * map_height + y) * map_width + x];
  };

  for (const Keypoints2D& instance : instances) {
    for (int k = 0; k < Keypoints2D::kCount; ++k) {
      if (!instance.has(k)) continue;
      const Eigen::Vector2d center = instance.point(k) / static_cast<double>(stride);
      const CellBox box = clip_radius(center, radius, map_width, map_height);
      for (int y = box.y0; y <= box.y1; ++y) {
        for (int x = box.x0; x <= box.x1; ++x) {
          const double d2 = (Eigen::Vector2d(x, y) - center).squaredNorm();
          const double value = std::exp(-d2 * inv_two_sigma_sq);
          if (value < kEncodeFloor) continue;
          float& cell = tensor.belief(k, x, y);
          cell = std::max(cell, static_cast<float>(std::min(value, 1.0)));
        }
      }
    }

    // Vector fields: constant patch per vertex pointing at this instance's
    // centroid. A cell overlapped by two instances keeps the nearer vertex.
    if (!instance.has(CuboidModel::kCentroidIndex)) continue;
    const Eigen::Vector2d centroid =
        instance.point(CuboidModel::kCentroidIndex) / static_cast<double>(stride);
    for (int v = 0; v < CuboidModel::kCornerCount; ++v) {
      if (!instance.has(v)) continue;
      const Eigen::Vector2d vertex = instance.point(v) / static_cast<double>(stride);
      Eigen::Vector2d dir = centroid - vertex;
      const double len = dir.norm();
      if (len < 1e-9) continue;  // degenerate projection
      dir /= len;
      const CellBox box = clip_radius(vertex, radius, map_width, map_height);
      for (int y = box.y0; y <= box.y1; ++y) {
        for (int x = box.x0; x <= box.x1; ++x) {
          const auto d2 =
              static_cast<float>((Eigen::Vector2d(x, y) - vertex).squaredNorm());
          if (d2 > radius * radius) continue;
          float& owner = owner_at(v, x, y);
          if (d2 >= owner) continue;
          owner = d2;
          tensor.vector_field(v, 0, x, y) = static_cast<float>(dir.x());
          tensor.vector_field(v, 1, x, y) = static_cast<float>(dir.y());
        }
      }
    }
  }
  return tensor;
}

PeakSet extract_peaks(const BeliefTensor& tensor, double threshold) {
  PeakSet peaks;
  const int w = tensor.map_width();
  const int h = tensor.map_height();
  for (int c = 0; c < BeliefTensor::kBeliefChannels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float value = tensor.belief(c, x, y);
        if (value < threshold) continue;
        // 3x3 local maximum; plateau ties go to the first cell in scan order.
        bool is_peak = true;
        for (int dy = -1; dy <= 1 && is_peak; ++dy) {
          for (int dx = -1; dx <= 1 && is_peak; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const int nx = x + dx;
            const int ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const float nv = tensor.belief(c, nx, ny);
            if (nv > value || (nv == value && (ny * w + nx) < (y * w + x))) {
              is_peak = false;
            }
          }
        }
        if (!is_peak) continue;
        const Eigen::Vector2d map_pos = refine_peak(tensor, c, x, y);
        peaks.channels[static_cast<std::size_t>(c)].push_back(
            Peak{map_pos * static_cast<double>(tensor.stride()), static_cast<double>(value)});
      }
    }
    auto& list = peaks.channels[static_cast<std::size_t>(c)];
    std::sort(list.begin(), list.end(), [](const Peak& a, const Peak& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      if (a.position_px.y() != b.position_px.y()) return a.position_px.y() < b.position_px.y();
      return a.position_px.x() < b.position_px.x();
    });
  }
  return peaks;
}

std::vector<Keypoints2D> associate_instances(const PeakSet& peaks,
                                             const BeliefTensor& tensor,
                                             double angle_tolerance_rad,
                                             int min_correspondences) {
  const auto& centroid_peaks = peaks.channels[BeliefTensor::kCentroidChannel];
  if (centroid_peaks.empty()) return {};

  const double stride = tensor.stride();
  std::vector<Keypoints2D> instances(centroid_peaks.size());
  for (std::size_t j = 0; j < centroid_peaks.size(); ++j) {
    instances[j].set(CuboidModel::kCentroidIndex, centroid_peaks[j].position_px,
                     centroid_peaks[j].confidence);
  }

  for (int v = 0; v < CuboidModel::kCornerCount; ++v) {
    // Peaks arrive confidence-descending, so the first claim on a slot wins.
    for (const Peak& peak : peaks.channels[static_cast<std::size_t>(v)]) {
      const Eigen::Vector2d vertex_map = peak.position_px / stride;
      const int cx = std::clamp(static_cast<int>(std::lround(vertex_map.x())), 0,
                                tensor.map_width() - 1);
      const int cy = std::clamp(static_cast<int>(std::lround(vertex_map.y())), 0,
                                tensor.map_height() - 1);
      Eigen::Vector2d field(tensor.vector_field(v, 0, cx, cy),
                            tensor.vector_field(v, 1, cx, cy));
      const double field_norm = field.norm();
      if (field_norm < 1e-6) continue;  // no direction evidence at this vertex
      field /= field_norm;

      int best = -1;
      double best_angle = angle_tolerance_rad;
      for (std::size_t j = 0; j < centroid_peaks.size(); ++j) {
        const Eigen::Vector2d to_centroid =
            centroid_peaks[j].position_px / stride - vertex_map;
        const double len = to_centroid.norm();
        if (len < 1e-9) continue;
        const double angle =
            std::acos(std::clamp(field.dot(to_centroid / len), -1.0, 1.0));
        if (angle <= best_angle) {
          best_angle = angle;
          best = static_cast<int>(j);
        }
      }
      if (best >= 0 && !instances[static_cast<std::size_t>(best)].has(v)) {
        instances[static_cast<std::size_t>(best)].set(v, peak.position_px,
                                                      peak.confidence);
      }
    }
  }

  std::vector<Keypoints2D> kept;
  for (auto& instance : instances) {
    if (instance.present_count() >= min_correspondences) {
      kept.push_back(std::move(instance));
    }
  }
  return kept;
}

void save_belief_tensor(const BeliefTensor& tensor, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("save_belief_tensor: cannot open " + path.string());
  }
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(tensor.map_width()));
  put_u32(out, static_cast<std::uint32_t>(tensor.map_height()));
  put_u32(out, BeliefTensor::kChannelCount);
  put_u32(out, static_cast<std::uint32_t>(tensor.stride()));
  static_assert(std::endian::native == std::endian::little,
                "tensor payload is written as raw little-endian floats");
  for (int c = 0; c < BeliefTensor::kChannelCount; ++c) {
    const auto span = tensor.channel(c);
    out.write(reinterpret_cast<const char*>(span.data()),
              static_cast<std::streamsize>(span.size() * sizeof(float)));
  }
  if (!out) {
    throw IoError("save_belief_tensor: write failed for " + path.string());
  }
}

BeliefTensor load_belief_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("load_belief_tensor: cannot open " + path.string());
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("load_belief_tensor: bad magic in " + path.string());
  }
  const auto width = static_cast<int>(get_u32(in));
  const auto height = static_cast<int>(get_u32(in));
  const auto channels = get_u32(in);
  const auto stride = static_cast<int>(get_u32(in));
  if (!in || channels != BeliefTensor::kChannelCount) {
    throw IoError("load_belief_tensor: unsupported channel layout in " + path.string());
  }
  BeliefTensor tensor(width, height, stride);
  for (int c = 0; c < BeliefTensor::kChannelCount; ++c) {
    auto span = tensor.channel(c);
    in.read(reinterpret_cast<char*>(span.data()),
            static_cast<std::streamsize>(span.size() * sizeof(float)));
  }
  if (!in) {
    throw IoError("load_belief_tensor: truncated file " + path.string());
  }
  return tensor;
}

}  // namespace palletpose
