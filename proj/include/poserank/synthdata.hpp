#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poserank/error.hpp"
#include "poserank/geometry.hpp"
#include "poserank/rng.hpp"

namespace poserank {

// ---------------------------------------------------------------------------
// Shapes.  Every canonical shape fits the unit-extent box [-0.5, 0.5]^3 and
// is sampled on its surface; a record's world points are R (s .* p) + t plus
// sensor noise, so dividing inverse-transformed points by s lands back on
// the canonical surface.

enum class ShapeKind { cylinder, l_prism, notched_box };

struct CategorySpec {
  CategoryInfo info;
  ShapeKind shape = ShapeKind::cylinder;
  Eigen::Vector3d base_extents{0.2, 0.2, 0.2};  // meters at scale factor 1
};

// Three built-in categories: one rotationally symmetric (cylinder about its
// y axis; its x/z base extents are equal so symmetry survives anisotropic
// per-axis scaling by s) and two asymmetric prisms.
inline const std::vector<CategorySpec>& default_categories() {
  static const std::vector<CategorySpec> cats = {
      {{0, "cylinder", true}, ShapeKind::cylinder, {0.2, 0.3, 0.2}},
      {{1, "l_prism", false}, ShapeKind::l_prism, {0.24, 0.16, 0.3}},
      {{2, "notched_box", false}, ShapeKind::notched_box, {0.3, 0.2, 0.14}},
  };
  return cats;
}

// Projection to the id/symmetry view the ranking and evaluation code uses.
inline std::vector<CategoryInfo> category_info(
    const std::vector<CategorySpec>& specs) {
  std::vector<CategoryInfo> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(s.info);
  return out;
}

namespace detail {

// Signed distance to an axis-aligned box given by [lo, hi] (negative inside).
inline double box_sdf(const Eigen::Vector3d& p, const Eigen::Vector3d& lo,
                      const Eigen::Vector3d& hi) {
  const Eigen::Vector3d c = 0.5 * (lo + hi);
  const Eigen::Vector3d h = 0.5 * (hi - lo);
  const Eigen::Vector3d q = (p - c).cwiseAbs() - h;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside + inside;
}

// Signed distance to the canonical capped cylinder (radius 0.5 about the y
// axis, height 1).
inline double cylinder_sdf(const Eigen::Vector3d& p) {
  const double dr = std::hypot(p.x(), p.z()) - 0.5;
  const double dy = std::abs(p.y()) - 0.5;
  const double outside =
      std::hypot(std::max(dr, 0.0), std::max(dy, 0.0));
  const double inside = std::min(std::max(dr, dy), 0.0);
  return outside + inside;
}

// An axis-aligned rectangle patch of a shape's surface: one coordinate
// fixed, the other two ranging over an interval.  Shapes made of flat faces
// are sampled area-weighted over such patches.
struct SurfaceRect {
  int fixed_axis;
  double fixed_value;
  int u_axis;
  double u_lo, u_hi;
  int v_axis;
  double v_lo, v_hi;
  double area() const { return (u_hi - u_lo) * (v_hi - v_lo); }
};

// L-shaped prism: the unit box minus the open quadrant {x > 0, y > 0},
// extruded along z.  Equivalently the union of the slabs y <= 0 and x <= 0.
inline const std::vector<SurfaceRect>& l_prism_rects() {
  static const std::vector<SurfaceRect> rects = {
      {1, -0.5, 0, -0.5, 0.5, 2, -0.5, 0.5},  // bottom
      {1, 0.5, 0, -0.5, 0.0, 2, -0.5, 0.5},   // top of the upright arm
      {1, 0.0, 0, 0.0, 0.5, 2, -0.5, 0.5},    // step: inner horizontal
      {0, -0.5, 1, -0.5, 0.5, 2, -0.5, 0.5},  // left
      {0, 0.5, 1, -0.5, 0.0, 2, -0.5, 0.5},   // right of the base arm
      {0, 0.0, 1, 0.0, 0.5, 2, -0.5, 0.5},    // step: inner vertical
      // front/back L faces, each split into two rectangles
      {2, -0.5, 0, -0.5, 0.5, 1, -0.5, 0.0},
      {2, -0.5, 0, -0.5, 0.0, 1, 0.0, 0.5},
      {2, 0.5, 0, -0.5, 0.5, 1, -0.5, 0.0},
      {2, 0.5, 0, -0.5, 0.0, 1, 0.0, 0.5},
  };
  return rects;
}

// Notched box: the unit box with a rectangular bite taken out of the
// (+x, +y, +z) corner.  The notch opens through three faces and adds three
// interior walls.
inline const Eigen::Vector3d kNotchLo{0.1, 0.15, -0.05};
inline const Eigen::Vector3d kNotchHi{0.5, 0.5, 0.5};

inline const std::vector<SurfaceRect>& notched_box_rects() {
  static const std::vector<SurfaceRect> rects = {
      {0, -0.5, 1, -0.5, 0.5, 2, -0.5, 0.5},   // -x face, intact
      {1, -0.5, 0, -0.5, 0.5, 2, -0.5, 0.5},   // -y face, intact
      {2, -0.5, 0, -0.5, 0.5, 1, -0.5, 0.5},   // -z face, intact
      // +x face minus the notch opening
      {0, 0.5, 1, -0.5, 0.15, 2, -0.5, 0.5},
      {0, 0.5, 1, 0.15, 0.5, 2, -0.5, -0.05},
      // +y face minus the notch opening
      {1, 0.5, 0, -0.5, 0.1, 2, -0.5, 0.5},
      {1, 0.5, 0, 0.1, 0.5, 2, -0.5, -0.05},
      // +z face minus the notch opening
      {2, 0.5, 0, -0.5, 0.1, 1, -0.5, 0.5},
      {2, 0.5, 0, 0.1, 0.5, 1, -0.5, 0.15},
      // interior notch walls
      {0, 0.1, 1, 0.15, 0.5, 2, -0.05, 0.5},
      {1, 0.15, 0, 0.1, 0.5, 2, -0.05, 0.5},
      {2, -0.05, 0, 0.1, 0.5, 1, 0.15, 0.5},
  };
  return rects;
}

inline Eigen::Vector3d sample_rects(const std::vector<SurfaceRect>& rects,
                                    Rng& rng) {
  double total = 0.0;
  for (const auto& r : rects) total += r.area();
  double pick = rng.uniform() * total;
  const SurfaceRect* chosen = &rects.back();
  for (const auto& r : rects) {
    pick -= r.area();
    if (pick < 0.0) {
      chosen = &r;
      break;
    }
  }
  Eigen::Vector3d p;
  p[chosen->fixed_axis] = chosen->fixed_value;
  p[chosen->u_axis] = rng.uniform(chosen->u_lo, chosen->u_hi);
  p[chosen->v_axis] = rng.uniform(chosen->v_lo, chosen->v_hi);
  return p;
}

}  // namespace detail

// Uniform (area-weighted) random point on the canonical surface of a shape.
// Consumes a fixed number of draws per shape family, so streams stay aligned.
inline Eigen::Vector3d canonical_surface_point(ShapeKind shape, Rng& rng) {
  switch (shape) {
    case ShapeKind::cylinder: {
      // lateral area 2*pi*0.5*1 = pi, caps pi/4 each -> weights 2/3, 1/6, 1/6
      const double which = rng.uniform();
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double aux = rng.uniform();
      if (which < 2.0 / 3.0) {
        const double y = aux - 0.5;
        return {0.5 * std::cos(theta), y, 0.5 * std::sin(theta)};
      }
      const double r = 0.5 * std::sqrt(aux);
      const double y = (which < 5.0 / 6.0) ? 0.5 : -0.5;
      return {r * std::cos(theta), y, r * std::sin(theta)};
    }
    case ShapeKind::l_prism:
      return detail::sample_rects(detail::l_prism_rects(), rng);
    case ShapeKind::notched_box:
      return detail::sample_rects(detail::notched_box_rects(), rng);
  }
  throw Error(ErrKind::state, "unknown shape kind");
}

// Distance-like function that is zero exactly on the canonical surface and
// positive elsewhere; near the surface it equals Euclidean distance.  Used
// to verify label consistency of generated samples.
inline double canonical_surface_distance(ShapeKind shape,
                                         const Eigen::Vector3d& p) {
  const Eigen::Vector3d lo(-0.5, -0.5, -0.5), hi(0.5, 0.5, 0.5);
  switch (shape) {
    case ShapeKind::cylinder:
      return std::abs(detail::cylinder_sdf(p));
    case ShapeKind::l_prism: {
      // union of the y <= 0 slab and the x <= 0 slab
      const double a = detail::box_sdf(p, lo, {0.5, 0.0, 0.5});
      const double b = detail::box_sdf(p, lo, {0.0, 0.5, 0.5});
      return std::abs(std::min(a, b));
    }
    case ShapeKind::notched_box: {
      // box minus notch: intersection with the notch's complement
      const double a = detail::box_sdf(p, lo, hi);
      const double n = detail::box_sdf(p, detail::kNotchLo, detail::kNotchHi);
      return std::abs(std::max(a, -n));
    }
  }
  throw Error(ErrKind::state, "unknown shape kind");
}

// ---------------------------------------------------------------------------
// Generation configuration.

struct AugmentConfig {
  bool noise = true;
  double noise_mag = 0.002;  // uniform per-coordinate noise, meters
  bool scale = true;
  double scale_lo = 0.9, scale_hi = 1.1;  // global rescale about the centroid
  bool rigid = true;
  double max_rot_deg = 5.0;   // rigid rotation perturbation bound
  double max_trans = 0.02;    // rigid translation perturbation bound, meters
};

struct GenConfig {
  std::uint64_t seed = 42;
  std::vector<CategorySpec> categories = default_categories();
  int samples_per_category = 200;
  int n_points = 256;
  double t_lo = -0.3, t_hi = 0.3;          // per-axis translation interval
  double scale_lo = 0.8, scale_hi = 1.2;   // uniform scale on base extents
  double noise_sigma = 0.002;              // Gaussian sensor noise, meters
  AugmentConfig aug;
};

inline void validate(const GenConfig& cfg) {
  if (cfg.categories.empty())
    throw Error(ErrKind::config, "no categories configured");
  if (cfg.n_points < 8) throw Error(ErrKind::config, "n_points must be >= 8");
  if (cfg.noise_sigma < 0.0)
    throw Error(ErrKind::config, "noise_sigma must be >= 0");
  if (!(cfg.t_hi >= cfg.t_lo) || !(cfg.scale_hi >= cfg.scale_lo))
    throw Error(ErrKind::config, "empty sampling range");
  if (!(cfg.scale_lo > 0.0))
    throw Error(ErrKind::config, "scale range must be positive");
  if (cfg.samples_per_category < 1)
    throw Error(ErrKind::config, "samples_per_category must be >= 1");
}

// One labeled point cloud.
struct PoseSample {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;
  Pose pose;
  int category = 0;
  bool symmetric = false;
};

// Uniform rotation on SO(3) via a normalized 4-normal quaternion; draws in a
// fixed order so the stream layout is part of the format.
inline Eigen::Matrix3d sample_rotation(Rng& rng) {
  const double w = rng.normal(), x = rng.normal(), y = rng.normal(),
               z = rng.normal();
  Eigen::Quaterniond q(w, x, y, z);
  q.normalize();
  return q.toRotationMatrix();
}

// Random pose: uniform rotation, t uniform per axis in the translation
// interval, s = base extents scaled by one uniform factor.
inline Pose sample_pose(Rng& rng, const GenConfig& cfg,
                        const Eigen::Vector3d& base_extents) {
  const Eigen::Matrix3d r = sample_rotation(rng);
  Eigen::Vector3d t;
  for (int i = 0; i < 3; ++i) t[i] = rng.uniform(cfg.t_lo, cfg.t_hi);
  const double k = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const Pose p = pose_from_rotation(r, t, k * base_extents);
  validate_pose(p);
  return p;
}

// Surface sample of one category: canonical points, anisotropically scaled
// by s, rotated, translated, plus Gaussian sensor noise.  Draw order per
// point: surface draws, then 3 noise normals.
inline PoseSample generate_sample(Rng& rng, const CategorySpec& cat,
                                  const GenConfig& cfg) {
  PoseSample out;
  out.category = cat.info.id;
  out.symmetric = cat.info.symmetric;
  out.pose = sample_pose(rng, cfg, cat.base_extents);
  const Eigen::Matrix3d r = rotation_from_normals(out.pose.r_x, out.pose.r_y);
  out.points.resize(cfg.n_points, 3);
  for (int i = 0; i < cfg.n_points; ++i) {
    const Eigen::Vector3d canon = canonical_surface_point(cat.shape, rng);
    Eigen::Vector3d world =
        r * canon.cwiseProduct(out.pose.s) + out.pose.t;
    for (int a = 0; a < 3; ++a)
      world[a] += rng.normal(0.0, cfg.noise_sigma);
    out.points.row(i) = world.transpose();
  }
  return out;
}

// Whole dataset, category-major.  Each sample uses its own derived RNG
// stream keyed by (seed, category id, sample index), so any single record
// can be regenerated bitwise without replaying the rest.
inline std::vector<PoseSample> generate_dataset(const GenConfig& cfg) {
  validate(cfg);
  std::vector<PoseSample> out;
  out.reserve(cfg.categories.size() *
              static_cast<std::size_t>(cfg.samples_per_category));
  for (const auto& cat : cfg.categories) {
    for (int i = 0; i < cfg.samples_per_category; ++i) {
      Rng rng(cfg.seed, {kStreamSample,
                         static_cast<std::uint64_t>(cat.info.id),
                         static_cast<std::uint64_t>(i)});
      out.push_back(generate_sample(rng, cat, cfg));
    }
  }
  return out;
}

inline PoseSample regenerate_sample(const GenConfig& cfg, int cat_index,
                                    int sample_index) {
  validate(cfg);
  const auto& cat = cfg.categories.at(static_cast<std::size_t>(cat_index));
  Rng rng(cfg.seed, {kStreamSample, static_cast<std::uint64_t>(cat.info.id),
                     static_cast<std::uint64_t>(sample_index)});
  return generate_sample(rng, cat, cfg);
}

// ---------------------------------------------------------------------------
// Augmentation.  Applied in a fixed order: uniform point noise, then global
// rescale about the cloud centroid (labels follow exactly), then a small
// rigid perturbation applied to points and labels alike.  Disabled stages
// draw nothing.

inline PoseSample augment(const PoseSample& sample, Rng& rng,
                          const GenConfig& cfg) {
  PoseSample out = sample;
  const auto& a = cfg.aug;
  const Eigen::Index n = out.points.rows();

  if (a.noise) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c)
        out.points(i, c) += rng.uniform(-a.noise_mag, a.noise_mag);
  }

  if (a.scale) {
    const double k = rng.uniform(a.scale_lo, a.scale_hi);
    const Eigen::RowVector3d centroid = out.points.colwise().mean();
    out.points = centroid.replicate(n, 1) + k * (out.points.rowwise() - centroid);
    out.pose.t =
        centroid.transpose() + k * (out.pose.t - centroid.transpose());
    out.pose.s *= k;
  }

  if (a.rigid) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    while (axis.norm() < 1e-9)
      axis = {rng.normal(), rng.normal(), rng.normal()};
    const double angle =
        rng.uniform(-a.max_rot_deg, a.max_rot_deg) * std::numbers::pi / 180.0;
    const Eigen::Matrix3d rot =
        Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    Eigen::Vector3d shift;
    for (int c = 0; c < 3; ++c) shift[c] = rng.uniform(-a.max_trans, a.max_trans);
    out.points = (out.points * rot.transpose()).eval();
    out.points.rowwise() += shift.transpose();
    out.pose.r_x = rot * out.pose.r_x;
    out.pose.r_y = rot * out.pose.r_y;
    out.pose.t = rot * out.pose.t + shift;
  }

  return out;
}

// ---------------------------------------------------------------------------
// Dataset file IO: UTF-8 JSON Lines, schema version 1.  Numbers are written
// with 17 significant digits (doubles round-trip exactly).

namespace detail {

inline void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

inline void append_vec3(std::string& out, const Eigen::Vector3d& v) {
  out += '[';
  for (int i = 0; i < 3; ++i) {
    if (i) out += ',';
    append_number(out, v[i]);
  }
  out += ']';
}

}  // namespace detail

inline std::string serialize_sample(const PoseSample& s) {
  std::string line;
  line.reserve(static_cast<std::size_t>(80 * (s.points.rows() + 4)));
  line += "{\"v\":1,\"cat\":";
  line += std::to_string(s.category);
  line += ",\"sym\":";
  line += s.symmetric ? "true" : "false";
  line += ",\"rx\":";
  detail::append_vec3(line, s.pose.r_x);
  line += ",\"ry\":";
  detail::append_vec3(line, s.pose.r_y);
  line += ",\"t\":";
  detail::append_vec3(line, s.pose.t);
  line += ",\"s\":";
  detail::append_vec3(line, s.pose.s);
  line += ",\"pts\":[";
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    if (i) line += ',';
    line += '[';
    for (int c = 0; c < 3; ++c) {
      if (c) line += ',';
      detail::append_number(line, s.points(i, c));
    }
    line += ']';
  }
  line += "]}";
  return line;
}

inline void write_dataset(const std::vector<PoseSample>& samples,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrKind::io, "cannot open for writing: " + path);
  for (const auto& s : samples) {
    out << serialize_sample(s) << '\n';
  }
  if (!out) throw Error(ErrKind::io, "write failed: " + path);
}

namespace detail {

inline Eigen::Vector3d parse_vec3(const nlohmann::json& j, const char* field,
                                  int line_no) {
  if (!j.is_array() || j.size() != 3)
    throw Error(ErrKind::parse, std::string("line ") + std::to_string(line_no) +
                                    ": field '" + field +
                                    "' must be a 3-array");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    const auto& e = j[static_cast<std::size_t>(i)];
    if (!e.is_number())
      throw Error(ErrKind::parse, std::string("line ") +
                                      std::to_string(line_no) + ": field '" +
                                      field + "' must be numeric");
    v[i] = e.get<double>();
  }
  return v;
}

}  // namespace detail

inline PoseSample parse_sample(const std::string& line, int line_no) {
  const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw Error(ErrKind::parse,
                "line " + std::to_string(line_no) + ": malformed record");
  if (!j.contains("v") || !j["v"].is_number_integer())
    throw Error(ErrKind::parse,
                "line " + std::to_string(line_no) + ": missing version tag");
  if (j["v"].get<int>() != 1)
    throw Error(ErrKind::version,
                "line " + std::to_string(line_no) + ": unsupported version " +
                    std::to_string(j["v"].get<int>()));
  for (const char* field : {"cat", "sym", "rx", "ry", "t", "s", "pts"})
    if (!j.contains(field))
      throw Error(ErrKind::parse, "line " + std::to_string(line_no) +
                                      ": missing field '" + field + "'");
  PoseSample s;
  s.category = j["cat"].get<int>();
  s.symmetric = j["sym"].get<bool>();
  s.pose.r_x = detail::parse_vec3(j["rx"], "rx", line_no);
  s.pose.r_y = detail::parse_vec3(j["ry"], "ry", line_no);
  s.pose.t = detail::parse_vec3(j["t"], "t", line_no);
  s.pose.s = detail::parse_vec3(j["s"], "s", line_no);
  const auto& pts = j["pts"];
  if (!pts.is_array() || pts.empty())
    throw Error(ErrKind::parse, "line " + std::to_string(line_no) +
                                    ": 'pts' must be a nonempty array");
  s.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Vector3d p = detail::parse_vec3(pts[i], "pts", line_no);
    s.points.row(static_cast<Eigen::Index>(i)) = p.transpose();
  }
  if (!s.points.allFinite())
    throw Error(ErrKind::parse,
                "line " + std::to_string(line_no) + ": non-finite points");
  return s;
}

inline std::vector<PoseSample> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrKind::io, "cannot open for reading: " + path);
  std::vector<PoseSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_sample(line, line_no));
    if (out.size() > 1 && out.back().points.rows() != out.front().points.rows())
      throw Error(ErrKind::parse,
                  "line " + std::to_string(line_no) +
                      ": inconsistent point count within dataset");
  }
  return out;
}

}  // namespace poserank
