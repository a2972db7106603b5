#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "poserank/error.hpp"

namespace poserank {

// Object pose: two orthogonal unit plane normals (r_x, r_y) fixing the
// orientation, a translation t (meters), and full box extents s (meters,
// all positive).  For rotationally symmetric categories the symmetry axis
// is r_y by convention, everywhere in this library.
struct Pose {
  Eigen::Vector3d r_x{1.0, 0.0, 0.0};
  Eigen::Vector3d r_y{0.0, 1.0, 0.0};
  Eigen::Vector3d t{0.0, 0.0, 0.0};
  Eigen::Vector3d s{1.0, 1.0, 1.0};
};

struct CategoryInfo {
  int id = 0;
  std::string name;
  bool symmetric = false;  // rotation about r_y leaves the shape invariant
};

inline constexpr double kUnitTol = 1e-6;        // pose invariant tolerance
inline constexpr double kDegenerateTol = 1e-9;  // minimum usable normal length

// Throws ErrKind::invalid_pose unless both normals are unit length (within
// 1e-6), perpendicular (|dot| <= 1e-6), and all extents are positive.
inline void validate_pose(const Pose& p) {
  if (std::abs(p.r_x.norm() - 1.0) > kUnitTol ||
      std::abs(p.r_y.norm() - 1.0) > kUnitTol)
    throw Error(ErrKind::invalid_pose, "pose normals must be unit length");
  if (std::abs(p.r_x.dot(p.r_y)) > kUnitTol)
    throw Error(ErrKind::invalid_pose, "pose normals must be perpendicular");
  if (!(p.s.array() > 0.0).all())
    throw Error(ErrKind::invalid_pose, "pose extents must be positive");
}

namespace detail {
inline double clamped_dot(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::clamp(a.dot(b), -1.0, 1.0);
}
inline void check_unit(const Eigen::Vector3d& v, const char* what) {
  if (std::abs(v.norm() - 1.0) > kUnitTol)
    throw Error(ErrKind::invalid_pose, std::string(what) + " is not unit length");
}
}  // namespace detail

namespace detail {
// Squared Euclidean distance of 3-vectors.  noinline on purpose: a single
// machine-code instance guarantees bitwise-identical results however the
// call site would have been vectorized, which keeps the pose distances
// exactly symmetric in their arguments.
[[gnu::noinline]] inline double sq_dist3(const Eigen::Vector3d& u,
                                         const Eigen::Vector3d& v) {
  const double dx = u.x() - v.x();
  const double dy = u.y() - v.y();
  const double dz = u.z() - v.z();
  return dx * dx + dy * dy + dz * dz;
}

// 1 - cos of the angle between two unit vectors, evaluated as the half
// squared chord |u - v|^2 / 2.  Algebraically identical for unit inputs,
// but exact at u == v and free of the cancellation that 1 - dot(u, v)
// suffers for nearly parallel vectors.
inline double one_minus_cos(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
  return 0.5 * sq_dist3(u, v);
}
}  // namespace detail

// Rotation distance between two poses, built from the cosines of the angles
// between corresponding plane normals:
//   asymmetric: (1 - cos<r_x,a, r_x,b>) + (1 - cos<r_y,a, r_y,b>)
//   symmetric:  only the r_y term (r_x is arbitrary about the symmetry axis)
// Range [0, 4] asymmetric, [0, 2] symmetric.  Both poses must carry unit
// normals (ErrKind::invalid_pose otherwise).
inline double rotation_distance(const Pose& a, const Pose& b, bool symmetric) {
  detail::check_unit(a.r_y, "r_y");
  detail::check_unit(b.r_y, "r_y");
  const double dy = detail::one_minus_cos(a.r_y, b.r_y);
  if (symmetric) return dy;
  detail::check_unit(a.r_x, "r_x");
  detail::check_unit(b.r_x, "r_x");
  return detail::one_minus_cos(a.r_x, b.r_x) + dy;
}

inline double rotation_distance(const Pose& a, const Pose& b,
                                const CategoryInfo& cat) {
  return rotation_distance(a, b, cat.symmetric);
}

// Translation distance: mean squared error over the three coordinates,
// ||t_a - t_b||^2 / 3.
inline double translation_distance(const Pose& a, const Pose& b) {
  return detail::sq_dist3(a.t, b.t) / 3.0;
}

// Proper rotation matrix whose first two columns span (r_x, r_y):
// Gram-Schmidt with r_y taken as the anchor direction (the symmetry-axis
// convention), r_x re-orthogonalized against it, third column their cross
// product.  det = +1 by construction.  Throws ErrKind::degenerate_normals
// when either input is near zero length or the two are near parallel.
inline Eigen::Matrix3d rotation_from_normals(const Eigen::Vector3d& r_x,
                                             const Eigen::Vector3d& r_y) {
  const double nx = r_x.norm(), ny = r_y.norm();
  if (nx < kDegenerateTol || ny < kDegenerateTol)
    throw Error(ErrKind::degenerate_normals, "normal too short to orient");
  const Eigen::Vector3d y = r_y / ny;
  const Eigen::Vector3d x_raw = r_x - r_x.dot(y) * y;
  if (x_raw.norm() < kDegenerateTol * nx)
    throw Error(ErrKind::degenerate_normals, "normals are parallel");
  const Eigen::Vector3d x = x_raw.normalized();
  Eigen::Matrix3d m;
  m.col(0) = x;
  m.col(1) = y;
  m.col(2) = x.cross(y);
  return m;
}

inline Pose pose_from_rotation(const Eigen::Matrix3d& r,
                               const Eigen::Vector3d& t,
                               const Eigen::Vector3d& s) {
  Pose p;
  p.r_x = r.col(0);
  p.r_y = r.col(1);
  p.t = t;
  p.s = s;
  return p;
}

inline double degrees(double radians) {
  return radians * (180.0 / std::numbers::pi);
}

// Rotation error in degrees.  Asymmetric: geodesic angle between the two
// orthonormalized rotations, acos((trace(Ra Rb^T) - 1) / 2), clamped into
// [0, 180].  Symmetric: angle between the r_y axes alone.
inline double rotation_error_deg(const Pose& pred, const Pose& gt,
                                 bool symmetric) {
  if (symmetric) {
    const Eigen::Vector3d a = pred.r_y.normalized(), b = gt.r_y.normalized();
    return degrees(std::acos(detail::clamped_dot(a, b)));
  }
  const Eigen::Matrix3d ra = rotation_from_normals(pred.r_x, pred.r_y);
  const Eigen::Matrix3d rb = rotation_from_normals(gt.r_x, gt.r_y);
  const double tr = (ra * rb.transpose()).trace();
  return degrees(std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0)));
}

inline double rotation_error_deg(const Pose& pred, const Pose& gt,
                                 const CategoryInfo& cat) {
  return rotation_error_deg(pred, gt, cat.symmetric);
}

// Translation error in centimeters (poses store meters).
inline double translation_error_cm(const Pose& pred, const Pose& gt) {
  return (pred.t - gt.t).norm() * 100.0;
}

// The 8 corners of the oriented box.  Corner i carries sign bits
// (bit 2 -> x, bit 1 -> y, bit 0 -> z; 0 means -, 1 means +) applied to the
// half extents in the box frame, then rotated and translated into world
// coordinates.  The order is part of the public contract.
inline std::array<Eigen::Vector3d, 8> box_corners(const Pose& p) {
  const Eigen::Matrix3d r = rotation_from_normals(p.r_x, p.r_y);
  const Eigen::Vector3d half = 0.5 * p.s;
  std::array<Eigen::Vector3d, 8> out;
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d local(((i >> 2) & 1) ? half.x() : -half.x(),
                                ((i >> 1) & 1) ? half.y() : -half.y(),
                                (i & 1) ? half.z() : -half.z());
    out[static_cast<std::size_t>(i)] = p.t + r * local;
  }
  return out;
}

// Whether world point q lies inside (or on the boundary of) the oriented box.
inline bool point_in_box(const Eigen::Vector3d& q, const Pose& p) {
  const Eigen::Matrix3d r = rotation_from_normals(p.r_x, p.r_y);
  const Eigen::Vector3d local = r.transpose() * (q - p.t);
  return (local.array().abs() <= (0.5 * p.s).array() + 0.0).all();
}

}  // namespace poserank
