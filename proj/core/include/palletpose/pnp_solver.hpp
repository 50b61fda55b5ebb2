#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "palletpose/geometry.hpp"

namespace palletpose {

/// One 2D-3D match between a model point (object frame, meters) and an image
/// observation (pixels). Weights must be positive.
struct Correspondence {
  Eigen::Vector3d object_point;
  Eigen::Vector2d image_point;
  double weight = 1.0;
};

struct PnPConfig {
  int max_iterations = 100;
  double initial_damping = 1e-3;   // Levenberg-Marquardt lambda
  double step_tolerance = 1e-10;   // converged when |step| drops below
  double rmse_tolerance = 1e-9;    // or the RMSE change does (pixels)
};

struct PnPResult {
  Pose6D pose;                     // object in camera frame
  double reprojection_rmse = 0.0;  // pixels, weighted
  int iterations = 0;
  bool converged = false;
};

/// Recovers the object-in-camera pose from >= 4 correspondences.
///
/// Initialization is a direct linear transform over the available points when
/// at least six are given and the system is well conditioned; otherwise an
/// iterative scaled-orthographic refinement (POSIT-style) seeds the estimate.
/// A damped Gauss-Newton (Levenberg-Marquardt) pass on the 6-parameter pose
/// then minimizes the weighted reprojection RMSE, with rotation updates as
/// axis-angle increments composed onto the quaternion.
///
/// Throws TooFewPoints (< 4), DegenerateConfiguration (collinear object
/// points, coplanar points without an initial pose, or rank-deficient normal
/// equations), and DivergedBehindCamera (final centroid depth <= 0).
PnPResult solve_pnp(std::span<const Correspondence> correspondences,
                    const CameraIntrinsics& intrinsics,
                    const std::optional<Pose6D>& initial = std::nullopt,
                    const PnPConfig& config = {});

/// Weighted root-mean-square pixel residual of a pose; BehindCamera if any
/// object point has non-positive depth under it.
double reprojection_error(const Pose6D& pose,
                          std::span<const Correspondence> correspondences,
                          const CameraIntrinsics& intrinsics);

}  // namespace palletpose
