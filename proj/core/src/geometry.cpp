#include "palletpose/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "palletpose/errors.hpp"

namespace palletpose {

namespace {

bool frames_compatible(const std::string& a, const std::string& b) {
  return a.empty() || b.empty() || a == b;
}

}  // namespace

Pose6D::Pose6D(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation,
               std::string parent_frame, std::string child_frame)
    : rotation_(rotation),
      translation_(translation),
      parent_frame_(std::move(parent_frame)),
      child_frame_(std::move(child_frame)) {
  const double norm = rotation_.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error("Pose6D: quaternion norm must be positive and finite");
  }
  rotation_.coeffs() /= norm;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error("CameraIntrinsics: focal lengths must be positive");
  }
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    throw Error("CameraIntrinsics: principal point must lie inside the image");
  }
}

CuboidModel::CuboidModel(const Eigen::Vector3d& dimensions) : dimensions_(dimensions) {
  if (!(dimensions.x() > 0.0 && dimensions.y() > 0.0 && dimensions.z() > 0.0)) {
    throw Error("CuboidModel: dimensions must be positive");
  }
  const Eigen::Vector3d half = 0.5 * dimensions;
  for (int i = 0; i < kCornerCount; ++i) {
    const double sx = (i & 4) ? -1.0 : 1.0;
    const double sy = (i & 2) ? -1.0 : 1.0;
    const double sz = (i & 1) ? -1.0 : 1.0;
    vertices_[static_cast<std::size_t>(i)] =
        Eigen::Vector3d(sx * half.x(), sy * half.y(), sz * half.z());
  }
  vertices_[kCentroidIndex] = Eigen::Vector3d::Zero();
}

void Keypoints2D::set(int index, const Eigen::Vector2d& point, double confidence) {
  points_[static_cast<std::size_t>(index)] = point;
  confidences_[static_cast<std::size_t>(index)] = confidence;
}

void Keypoints2D::clear(int index) {
  points_[static_cast<std::size_t>(index)].reset();
  confidences_[static_cast<std::size_t>(index)].reset();
}

int Keypoints2D::present_count() const {
  return static_cast<int>(std::count_if(points_.begin(), points_.end(),
                                        [](const auto& p) { return p.has_value(); }));
}

Eigen::Vector2d project_point(const CameraIntrinsics& intrinsics,
                              const Eigen::Vector3d& point) {
  if (!(point.z() > 0.0)) {
    throw BehindCamera("project_point: non-positive depth");
  }
  return {intrinsics.fx * point.x() / point.z() + intrinsics.cx,
          intrinsics.fy * point.y() / point.z() + intrinsics.cy};
}

CuboidProjection project_cuboid(const CameraIntrinsics& intrinsics,
                                const Pose6D& object_in_camera,
                                const CuboidModel& model) {
  CuboidProjection out;
  out.fully_inside = true;
  for (int i = 0; i < CuboidModel::kVertexCount; ++i) {
    const Eigen::Vector3d camera_point =
        object_in_camera.transform(model.vertices()[static_cast<std::size_t>(i)]);
    const Eigen::Vector2d pixel = project_point(intrinsics, camera_point);
    out.keypoints.set(i, pixel, 1.0);
    out.fully_inside = out.fully_inside && intrinsics.contains(pixel);
  }
  return out;
}

Pose6D invert_pose(const Pose6D& pose) {
  const Eigen::Quaterniond inv_rotation = pose.rotation().conjugate();
  return Pose6D(inv_rotation, inv_rotation * (-pose.translation()),
                pose.child_frame(), pose.parent_frame());
}

Pose6D compose(const Pose6D& a, const Pose6D& b) {
  if (!frames_compatible(a.child_frame(), b.parent_frame())) {
    throw FrameMismatch("compose: child frame '" + a.child_frame() +
                        "' does not match parent frame '" + b.parent_frame() + "'");
  }
  const std::string parent = a.parent_frame().empty() ? b.parent_frame() : a.parent_frame();
  const std::string child = b.child_frame().empty() ? a.child_frame() : b.child_frame();
  return Pose6D(a.rotation() * b.rotation(),
                a.rotation() * b.translation() + a.translation(), parent, child);
}

Pose6D yaw_flip(const Pose6D& pose, const Eigen::Vector3d& axis) {
  const Eigen::Vector3d unit = axis.normalized();
  // 180 degrees about the object-frame axis: q_flip = (axis, w=0).
  const Eigen::Quaterniond flip(0.0, unit.x(), unit.y(), unit.z());
  return Pose6D(pose.rotation() * flip, pose.translation(), pose.parent_frame(),
                pose.child_frame());
}

double rotation_angle_between(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const double dot = std::clamp(std::abs(a.dot(b)), 0.0, 1.0);
  return 2.0 * std::acos(dot);
}

PoseDistance symmetric_pose_distance(const Pose6D& a, const Pose6D& b,
                                     const Eigen::Vector3d& axis) {
  if (!frames_compatible(a.parent_frame(), b.parent_frame()) ||
      !frames_compatible(a.child_frame(), b.child_frame())) {
    throw FrameMismatch("symmetric_pose_distance: poses relate different frames");
  }
  PoseDistance d;
  d.position_m = (a.translation() - b.translation()).norm();
  d.rotation_rad = std::min(rotation_angle_between(a.rotation(), b.rotation()),
                            rotation_angle_between(a.rotation(), yaw_flip(b, axis).rotation()));
  return d;
}

}  // namespace palletpose
