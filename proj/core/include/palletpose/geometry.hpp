#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <numbers>
#include <optional>
#include <string>

namespace palletpose {

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Rigid transform between two named frames: maps child-frame coordinates
/// into the parent frame. Quaternion is kept unit-norm by every operation;
/// empty frame ids act as wildcards when frames are checked.
class Pose6D {
 public:
  Pose6D()
      : rotation_(Eigen::Quaterniond::Identity()),
        translation_(Eigen::Vector3d::Zero()) {}

  Pose6D(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation,
         std::string parent_frame = {}, std::string child_frame = {});

  static Pose6D identity(std::string parent_frame = {}, std::string child_frame = {}) {
    return Pose6D(Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero(),
                  std::move(parent_frame), std::move(child_frame));
  }

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  const std::string& parent_frame() const { return parent_frame_; }
  const std::string& child_frame() const { return child_frame_; }

  /// Maps a point from the child frame into the parent frame.
  Eigen::Vector3d transform(const Eigen::Vector3d& point) const {
    return rotation_ * point + translation_;
  }

 private:
  Eigen::Quaterniond rotation_;
  Eigen::Vector3d translation_;
  std::string parent_frame_;
  std::string child_frame_;
};

/// Pinhole camera: z forward, x right, y down; pixel origin at the top-left.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws Error unless fx,fy > 0 and the principal point is inside the image.
  void validate() const;

  bool contains(const Eigen::Vector2d& pixel) const {
    return pixel.x() >= 0.0 && pixel.x() < static_cast<double>(width) &&
           pixel.y() >= 0.0 && pixel.y() < static_cast<double>(height);
  }
};

/// EPAL pallet footprint (DIN EN 13698-1) plus the standard block height.
inline const Eigen::Vector3d kEuroPalletDimensions{1.200, 0.800, 0.144};

/// Axis-aligned box model in the object frame: 8 corners plus the centroid,
/// centered on the origin. Corner order is the fixed bijection
/// index = 4*[x<0] + 2*[y<0] + [z<0] over the signed half-dimensions;
/// the centroid sits at index 8. Consumers of exported annotations that
/// expect a different corner order must remap.
class CuboidModel {
 public:
  static constexpr int kCornerCount = 8;
  static constexpr int kVertexCount = 9;
  static constexpr int kCentroidIndex = 8;

  explicit CuboidModel(const Eigen::Vector3d& dimensions);

  static CuboidModel euro_pallet() { return CuboidModel(kEuroPalletDimensions); }

  const Eigen::Vector3d& dimensions() const { return dimensions_; }

  /// 8 corners followed by the centroid.
  const std::array<Eigen::Vector3d, kVertexCount>& vertices() const {
    return vertices_;
  }

 private:
  Eigen::Vector3d dimensions_;
  std::array<Eigen::Vector3d, kVertexCount> vertices_;
};

/// Up to nine 2D keypoints (8 cuboid vertices + centroid last) in image
/// pixels. A confidence is stored if and only if its point is stored.
class Keypoints2D {
 public:
  static constexpr int kCount = 9;

  void set(int index, const Eigen::Vector2d& point, double confidence);
  void clear(int index);

  bool has(int index) const { return points_[static_cast<std::size_t>(index)].has_value(); }
  const Eigen::Vector2d& point(int index) const { return *points_[static_cast<std::size_t>(index)]; }
  double confidence(int index) const { return *confidences_[static_cast<std::size_t>(index)]; }

  const std::array<std::optional<Eigen::Vector2d>, kCount>& points() const { return points_; }
  int present_count() const;

 private:
  std::array<std::optional<Eigen::Vector2d>, kCount> points_;
  std::array<std::optional<double>, kCount> confidences_;
};

/// Projects a camera-frame point; throws BehindCamera when point.z <= 0.
Eigen::Vector2d project_point(const CameraIntrinsics& intrinsics,
                              const Eigen::Vector3d& point);

struct CuboidProjection {
  Keypoints2D keypoints;       // all 9 present, confidence 1.0
  bool fully_inside = false;   // every keypoint within [0,w) x [0,h)
};

/// Projects all 9 cuboid vertices under an object-in-camera pose.
/// Throws BehindCamera if any vertex has non-positive depth.
CuboidProjection project_cuboid(const CameraIntrinsics& intrinsics,
                                const Pose6D& object_in_camera,
                                const CuboidModel& model);

/// Inverse transform; frame ids swap.
Pose6D invert_pose(const Pose6D& pose);

/// a then b: requires a.child_frame == b.parent_frame (empty = wildcard);
/// throws FrameMismatch otherwise.
Pose6D compose(const Pose6D& a, const Pose6D& b);

/// The pose composed with a 180-degree rotation about the object-frame
/// symmetry axis (the pallet's vertical axis by default). Translation in the
/// parent frame is unchanged; the result is the other, visually
/// indistinguishable pallet pose.
Pose6D yaw_flip(const Pose6D& pose,
                const Eigen::Vector3d& axis = Eigen::Vector3d::UnitZ());

/// Geodesic quaternion distance 2*acos(|<a,b>|) in radians.
double rotation_angle_between(const Eigen::Quaterniond& a,
                              const Eigen::Quaterniond& b);

struct PoseDistance {
  double position_m = 0.0;
  double rotation_rad = 0.0;
};

/// Translation distance plus the rotation distance folded over the 180-degree
/// symmetry: min over {b, yaw_flip(b)}. Throws FrameMismatch when the frame
/// pairs differ (empty ids are wildcards).
PoseDistance symmetric_pose_distance(const Pose6D& a, const Pose6D& b,
                                     const Eigen::Vector3d& axis = Eigen::Vector3d::UnitZ());

}  // namespace palletpose
