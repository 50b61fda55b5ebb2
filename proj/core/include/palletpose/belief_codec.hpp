#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "palletpose/geometry.hpp"

namespace palletpose {

/// Decoder knobs. Defaults target a 640x480 input at stride 8.
struct CodecConfig {
  int stride = 8;                 // input pixels per map cell
  double sigma = 2.0;             // Gaussian std in map cells
  double peak_threshold = 0.1;    // minimum belief for a detected peak
  double angle_tolerance_rad = deg_to_rad(30.0);
  int min_correspondences = 4;    // keypoints (vertices + centroid) per instance
};

/// Nine belief maps (8 cuboid vertices + centroid) and sixteen vector-field
/// channels (8 vertex->centroid pairs x 2 components) on a grid of
/// map_width x map_height cells, each cell covering `stride` input pixels.
/// Map-cell coordinates are input-pixel coordinates divided by the stride.
class BeliefTensor {
 public:
  static constexpr int kBeliefChannels = 9;
  static constexpr int kCentroidChannel = 8;
  static constexpr int kVectorChannels = 16;
  static constexpr int kChannelCount = kBeliefChannels + kVectorChannels;

  BeliefTensor(int map_width, int map_height, int stride);

  int map_width() const { return map_width_; }
  int map_height() const { return map_height_; }
  int stride() const { return stride_; }

  float belief(int channel, int x, int y) const { return data_[offset(channel, x, y)]; }
  float& belief(int channel, int x, int y) { return data_[offset(channel, x, y)]; }

  /// Vector-field component for vertex pair 0..7, component 0 (x) or 1 (y).
  float vector_field(int pair, int component, int x, int y) const {
    return data_[offset(kBeliefChannels + 2 * pair + component, x, y)];
  }
  float& vector_field(int pair, int component, int x, int y) {
    return data_[offset(kBeliefChannels + 2 * pair + component, x, y)];
  }

  std::span<const float> channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * cells(), cells()};
  }
  std::span<float> channel(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * cells(), cells()};
  }

  std::size_t cells() const {
    return static_cast<std::size_t>(map_width_) * static_cast<std::size_t>(map_height_);
  }

 private:
  std::size_t offset(int channel, int x, int y) const {
    return (static_cast<std::size_t>(channel) * static_cast<std::size_t>(map_height_) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(map_width_) +
           static_cast<std::size_t>(x);
  }

  int map_width_;
  int map_height_;
  int stride_;
  std::vector<float> data_;  // channel-major, row-major inside a channel
};

/// Renders ground-truth keypoints into the ideal network output. Each present
/// keypoint splats a Gaussian with continuous peak value 1.0; overlapping
/// instances merge by element-wise max so no cell exceeds 1. Around every
/// vertex the matching vector-field pair is set to the unit vector pointing
/// from the vertex toward that instance's centroid (map coordinates); the
/// patch radius covers every cell whose belief exceeds 1%, and where patches
/// of two instances overlap the nearer vertex wins.
BeliefTensor encode(const std::vector<Keypoints2D>& instances, int map_width,
                    int map_height, int stride, double sigma);

struct Peak {
  Eigen::Vector2d position_px;  // input-image pixels (map position * stride)
  double confidence = 0.0;      // belief at the peak cell
};

/// Detected peaks per belief channel, sorted by confidence descending.
struct PeakSet {
  std::array<std::vector<Peak>, BeliefTensor::kBeliefChannels> channels;

  bool empty() const {
    for (const auto& c : channels) {
      if (!c.empty()) return false;
    }
    return true;
  }
};

/// Local maxima over a 3x3 neighborhood with belief >= threshold, refined to
/// sub-cell accuracy with an intensity-weighted centroid over a 5x5 window
/// (the window is re-centred on the running estimate until stationary).
PeakSet extract_peaks(const BeliefTensor& tensor, double threshold);

/// Greedy grouping of vertex peaks around centroid peaks. Every vertex peak is
/// assigned (confidence-descending, ties by angular error) to the centroid
/// whose direction best matches the vector field at the peak cell, within
/// angle_tolerance_rad; each instance vertex slot keeps its highest-confidence
/// peak. Instances with fewer than min_correspondences keypoints are dropped.
std::vector<Keypoints2D> associate_instances(const PeakSet& peaks,
                                             const BeliefTensor& tensor,
                                             double angle_tolerance_rad,
                                             int min_correspondences = 4);

/// Binary tensor interchange, little-endian:
///   bytes 0-3   magic "PBT1"
///   bytes 4-7   u32 map_width
///   bytes 8-11  u32 map_height
///   bytes 12-15 u32 channel count (25)
///   bytes 16-19 u32 stride
///   then map_width*map_height*channels float32 values, channel-major,
///   row-major inside a channel; belief channels 0-8 first, then vector pairs
///   (pair0 x, pair0 y, pair1 x, ...).
void save_belief_tensor(const BeliefTensor& tensor, const std::filesystem::path& path);
BeliefTensor load_belief_tensor(const std::filesystem::path& path);

}  // namespace palletpose
