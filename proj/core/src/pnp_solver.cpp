#include "palletpose/pnp_solver.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "palletpose/errors.hpp"

namespace palletpose {

namespace {

using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

Eigen::Vector3d object_centroid(std::span<const Correspondence> cs) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& c : cs) sum += c.object_point;
  return sum / static_cast<double>(cs.size());
}

// Singular values of the centered object-point matrix; used to classify
// collinear (rank 1) and coplanar (rank 2) configurations.
Eigen::Vector3d point_spread(std::span<const Correspondence> cs) {
  const Eigen::Vector3d centroid = object_centroid(cs);
  Eigen::MatrixXd centered(static_cast<Eigen::Index>(cs.size()), 3);
  for (Eigen::Index i = 0; i < centered.rows(); ++i) {
    centered.row(i) = (cs[static_cast<std::size_t>(i)].object_point - centroid).transpose();
  }
  return centered.jacobiSvd().singularValues();
}

Eigen::Vector2d normalized_coords(const CameraIntrinsics& k, const Eigen::Vector2d& px) {
  return {(px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy};
}

double weighted_rmse(const Eigen::Quaterniond& q, const Eigen::Vector3d& t,
                     std::span<const Correspondence> cs, const CameraIntrinsics& k) {
  double sum_sq = 0.0;
  double sum_w = 0.0;
  for (const auto& c : cs) {
    const Eigen::Vector3d p = q * c.object_point + t;
    if (!(p.z() > 0.0)) return std::numeric_limits<double>::infinity();
    const Eigen::Vector2d proj(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
    sum_sq += c.weight * (proj - c.image_point).squaredNorm();
    sum_w += c.weight;
  }
  return std::sqrt(sum_sq / sum_w);
}

struct RigidEstimate {
  Eigen::Quaterniond rotation;
  Eigen::Vector3d translation;
};

// Direct linear transform on normalized image coordinates. Returns nothing
// when the stacked system (or the recovered 3x3 block) is too ill-conditioned
// to trust.
std::optional<RigidEstimate> solve_dlt(std::span<const Correspondence> cs,
                                       const CameraIntrinsics& k) {
  const auto n = static_cast<Eigen::Index>(cs.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = cs[static_cast<std::size_t>(i)];
    const Eigen::Vector2d m = normalized_coords(k, c.image_point);
    const Eigen::Vector3d& x = c.object_point;
    const double sw = std::sqrt(c.weight);
    a.block<1, 3>(2 * i, 0) = sw * x.transpose();
    a(2 * i, 3) = sw;
    a.block<1, 3>(2 * i, 8) = -sw * m.x() * x.transpose();
    a(2 * i, 11) = -sw * m.x();
    a.block<1, 3>(2 * i + 1, 4) = sw * x.transpose();
    a(2 * i + 1, 7) = sw;
    a.block<1, 3>(2 * i + 1, 8) = -sw * m.y() * x.transpose();
    a(2 * i + 1, 11) = -sw * m.y();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> m;
  m.row(0) = p.segment<4>(0).transpose();
  m.row(1) = p.segment<4>(4).transpose();
  m.row(2) = p.segment<4>(8).transpose();

  // Positive depth for the object centroid fixes the projective sign.
  const Eigen::Vector3d centroid = object_centroid(cs);
  if (m.row(2).head<3>().dot(centroid) + m(2, 3) < 0.0) m = -m;

  const Eigen::Matrix3d m3 = m.leftCols<3>();
  Eigen::JacobiSVD<Eigen::Matrix3d> rot_svd(m3, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = rot_svd.singularValues();
  if (!(sv(0) > 0.0) || sv(2) / sv(0) < 1e-2) {
    return std::nullopt;  // ill-conditioned; caller falls back
  }
  Eigen::Matrix3d rotation = rot_svd.matrixU() * rot_svd.matrixV().transpose();
  double scale = sv.mean();
  if (rotation.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    rotation = rot_svd.matrixU() * flip * rot_svd.matrixV().transpose();
    scale = (sv(0) + sv(1) - sv(2)) / 3.0;
  }
  if (!(scale > 0.0)) return std::nullopt;
  return RigidEstimate{Eigen::Quaterniond(rotation), m.col(3) / scale};
}

// Iterative scaled-orthographic pose refinement over normalized coordinates.
// Handles four or more non-coplanar points; used when the DLT is unavailable.
std::optional<RigidEstimate> solve_scaled_orthographic(
    std::span<const Correspondence> cs, const CameraIntrinsics& k) {
  const auto n = static_cast<Eigen::Index>(cs.size());
  const Eigen::Vector3d x0 = cs[0].object_point;
  Eigen::MatrixXd offsets(n - 1, 3);
  Eigen::VectorXd u(n - 1);
  Eigen::VectorXd v(n - 1);
  const Eigen::Vector2d m0 = normalized_coords(k, cs[0].image_point);
  for (Eigen::Index i = 1; i < n; ++i) {
    const auto& c = cs[static_cast<std::size_t>(i)];
    offsets.row(i - 1) = (c.object_point - x0).transpose();
    const Eigen::Vector2d m = normalized_coords(k, c.image_point);
    u(i - 1) = m.x();
    v(i - 1) = m.y();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(offsets,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.singularValues()(2) < 1e-9 * svd.singularValues()(0)) {
    return std::nullopt;  // coplanar around the reference point
  }
  const Eigen::MatrixXd pinv = svd.solve(Eigen::MatrixXd::Identity(n - 1, n - 1));

  Eigen::VectorXd epsilon = Eigen::VectorXd::Zero(n - 1);
  Eigen::Matrix3d rotation;
  double z0 = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd up =
        (u.array() * (1.0 + epsilon.array())).matrix() - Eigen::VectorXd::Constant(n - 1, m0.x());
    const Eigen::VectorXd vp =
        (v.array() * (1.0 + epsilon.array())).matrix() - Eigen::VectorXd::Constant(n - 1, m0.y());
    const Eigen::Vector3d i_vec = pinv * up;
    const Eigen::Vector3d j_vec = pinv * vp;
    const double scale = 0.5 * (i_vec.norm() + j_vec.norm());
    if (!(scale > 0.0) || !std::isfinite(scale)) return std::nullopt;
    const Eigen::Vector3d r1 = i_vec.normalized();
    Eigen::Vector3d r3 = r1.cross(j_vec.normalized());
    if (r3.norm() < 1e-12) return std::nullopt;
    r3.normalize();
    const Eigen::Vector3d r2 = r3.cross(r1);
    rotation.row(0) = r1.transpose();
    rotation.row(1) = r2.transpose();
    rotation.row(2) = r3.transpose();
    z0 = 1.0 / scale;

    const Eigen::VectorXd next = (offsets * r3) / z0;
    const double delta = (next - epsilon).lpNorm<Eigen::Infinity>();
    epsilon = next;
    if (delta < 1e-12) break;
  }

  const Eigen::Vector3d t = z0 * Eigen::Vector3d(m0.x(), m0.y(), 1.0) - rotation * x0;
  return RigidEstimate{Eigen::Quaterniond(rotation), t};
}

}  // namespace

double reprojection_error(const Pose6D& pose,
                          std::span<const Correspondence> correspondences,
                          const CameraIntrinsics& intrinsics) {
  if (correspondences.empty()) {
    throw TooFewPoints("reprojection_error: no correspondences");
  }
  double sum_sq = 0.0;
  double sum_w = 0.0;
  for (const auto& c : correspondences) {
    const Eigen::Vector2d proj = project_point(intrinsics, pose.transform(c.object_point));
    sum_sq += c.weight * (proj - c.image_point).squaredNorm();
    sum_w += c.weight;
  }
  return std::sqrt(sum_sq / sum_w);
}

PnPResult solve_pnp(std::span<const Correspondence> correspondences,
                    const CameraIntrinsics& intrinsics,
                    const std::optional<Pose6D>& initial, const PnPConfig& config) {
  if (correspondences.size() < 4) {
    throw TooFewPoints("solve_pnp: need at least 4 correspondences, got " +
                       std::to_string(correspondences.size()));
  }
  for (const auto& c : correspondences) {
    if (!(c.weight > 0.0)) throw Error("solve_pnp: weights must be positive");
  }

  const Eigen::Vector3d spread = point_spread(correspondences);
  if (spread(1) < 1e-9 * std::max(spread(0), 1e-300)) {
    throw DegenerateConfiguration("solve_pnp: object points are collinear");
  }

  // Initialization.
  Eigen::Quaterniond q;
  Eigen::Vector3d t;
  if (initial.has_value()) {
    q = initial->rotation();
    t = initial->translation();
  } else {
    std::optional<RigidEstimate> estimate;
    if (correspondences.size() >= 6) {
      estimate = solve_dlt(correspondences, intrinsics);
    }
    if (!estimate.has_value()) {
      estimate = solve_scaled_orthographic(correspondences, intrinsics);
    }
    if (!estimate.has_value()) {
      throw DegenerateConfiguration(
          "solve_pnp: no usable initialization (coplanar or rank-deficient points)");
    }
    q = estimate->rotation;
    t = estimate->translation;
  }

  // Levenberg-Marquardt on (rotation, translation).
  const auto n = static_cast<Eigen::Index>(correspondences.size());
  double lambda = config.initial_damping;
  double rmse = weighted_rmse(q, t, correspondences, intrinsics);
  bool converged = false;
  int iterations = 0;

  Eigen::MatrixXd jacobian(2 * n, 6);
  Eigen::VectorXd residual(2 * n);
  for (; iterations < config.max_iterations; ++iterations) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& c = correspondences[static_cast<std::size_t>(i)];
      const Eigen::Vector3d rotated = q * c.object_point;
      const Eigen::Vector3d p = rotated + t;
      const double z = p.z();
      const double sw = std::sqrt(c.weight);
      if (!(z > 0.0)) {
        // Point behind the camera mid-iteration: large synthetic residual
        // steers the step back rather than aborting the solve.
        residual(2 * i) = sw * 1e6;
        residual(2 * i + 1) = sw * 1e6;
        jacobian.row(2 * i).setZero();
        jacobian.row(2 * i + 1).setZero();
        continue;
      }
      const Eigen::Vector2d proj(intrinsics.fx * p.x() / z + intrinsics.cx,
                                 intrinsics.fy * p.y() / z + intrinsics.cy);
      residual.segment<2>(2 * i) = sw * (proj - c.image_point);

      Eigen::Matrix<double, 2, 3> d_proj;
      d_proj << intrinsics.fx / z, 0.0, -intrinsics.fx * p.x() / (z * z), 0.0,
          intrinsics.fy / z, -intrinsics.fy * p.y() / (z * z);
      Eigen::Matrix3d skew;
      skew << 0.0, -rotated.z(), rotated.y(), rotated.z(), 0.0, -rotated.x(),
          -rotated.y(), rotated.x(), 0.0;
      jacobian.block<2, 3>(2 * i, 0) = sw * d_proj * (-skew);  // axis-angle
      jacobian.block<2, 3>(2 * i, 3) = sw * d_proj;            // translation
    }

    const Matrix6d hessian = jacobian.transpose() * jacobian;
    const Vector6d gradient = jacobian.transpose() * residual;

    bool accepted = false;
    while (lambda <= 1e12) {
      Matrix6d damped = hessian;
      damped.diagonal() += lambda * hessian.diagonal().cwiseMax(1e-12);
      const Vector6d step = damped.ldlt().solve(-gradient);
      if (!step.allFinite()) {
        throw DegenerateConfiguration("solve_pnp: rank-deficient normal equations");
      }

      const Eigen::Vector3d axis_angle = step.head<3>();
      const double angle = axis_angle.norm();
      Eigen::Quaterniond dq = Eigen::Quaterniond::Identity();
      if (angle > 0.0) {
        dq = Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis_angle / angle));
      }
      const Eigen::Quaterniond q_new = (dq * q).normalized();
      const Eigen::Vector3d t_new = t + step.tail<3>();
      const double rmse_new = weighted_rmse(q_new, t_new, correspondences, intrinsics);

      if (rmse_new <= rmse) {
        const double improvement = rmse - rmse_new;
        q = q_new;
        t = t_new;
        rmse = rmse_new;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (step.norm() < config.step_tolerance || improvement < config.rmse_tolerance) {
          converged = true;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (converged || !accepted) {
      converged = converged || !accepted;  // stalled damping = local minimum
      break;
    }
  }

  const Eigen::Vector3d centroid_cam = q * object_centroid(correspondences) + t;
  if (!(centroid_cam.z() > 0.0)) {
    throw DivergedBehindCamera("solve_pnp: object centroid behind camera");
  }

  PnPResult result;
  result.pose = Pose6D(q, t, "camera", "object");
  result.reprojection_rmse = rmse;
  result.iterations = iterations;
  result.converged = converged;
  return result;
}

}  // namespace palletpose
