#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "poserank/diffcore.hpp"
#include "poserank/error.hpp"
#include "poserank/geometry.hpp"
#include "poserank/rng.hpp"

namespace poserank {

// Paired point-cloud encoders: a rotation branch and a translation branch,
// each a small per-point MLP trunk max-pooled into a global feature, plus
// three regression heads (rotation normals, centroid-relative translation,
// box size).  The rotation trunk consumes centroid-centered coordinates so
// its features are translation-invariant; the translation trunk sees raw
// coordinates.  All math is expressed through the autodiff tape so training,
// inference, and gradient verification share one forward definition.

struct EncoderConfig {
  int n_points = 256;
  int d = 128;                             // global feature width
  std::vector<int> trunk_hidden{64, 128};  // widths between 3 and d
  int head_hidden = 64;
};

template <class S>
struct DenseT {
  using Mat = typename Tape<S>::Mat;
  Mat w;  // in x out
  Mat b;  // 1 x out
};

// Parameter container.  Traversal order (trunk_r, trunk_t, head_rot,
// head_trans, head_size; per layer weight then bias) is the serialization
// order of the checkpoint format and of the graph's parameter node list.
template <class S>
struct ParamsT {
  static constexpr int kVersion = 1;
  EncoderConfig cfg;
  std::vector<DenseT<S>> trunk_r, trunk_t;
  std::vector<DenseT<S>> head_rot, head_trans, head_size;

  template <class F>
  void for_each_array(F&& f) {
    for (auto* stack : {&trunk_r, &trunk_t, &head_rot, &head_trans, &head_size})
      for (auto& layer : *stack) {
        f(layer.w);
        f(layer.b);
      }
  }
  template <class F>
  void for_each_array(F&& f) const {
    for (auto* stack : {&trunk_r, &trunk_t, &head_rot, &head_trans, &head_size})
      for (const auto& layer : *stack) {
        f(layer.w);
        f(layer.b);
      }
  }

  std::size_t n_scalars() const {
    std::size_t n = 0;
    for_each_array([&](const auto& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  template <class T>
  ParamsT<T> cast() const {
    ParamsT<T> out;
    out.cfg = cfg;
    auto conv = [](const std::vector<DenseT<S>>& src) {
      std::vector<DenseT<T>> dst(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i].w = src[i].w.template cast<T>();
        dst[i].b = src[i].b.template cast<T>();
      }
      return dst;
    };
    out.trunk_r = conv(trunk_r);
    out.trunk_t = conv(trunk_t);
    out.head_rot = conv(head_rot);
    out.head_trans = conv(head_trans);
    out.head_size = conv(head_size);
    return out;
  }
};

using Params = ParamsT<float>;

namespace detail {

inline std::vector<std::pair<int, int>> trunk_dims(const EncoderConfig& cfg) {
  std::vector<std::pair<int, int>> dims;
  int prev = 3;
  for (int h : cfg.trunk_hidden) {
    dims.emplace_back(prev, h);
    prev = h;
  }
  dims.emplace_back(prev, cfg.d);
  return dims;
}

template <class S>
DenseT<S> init_dense(Rng& rng, int in, int out) {
  // uniform in [-1, 1] / sqrt(fan_in); drawn in double so float and double
  // instantiations hold the same values
  DenseT<S> layer;
  layer.w.resize(in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (int r = 0; r < in; ++r)
    for (int c = 0; c < out; ++c)
      layer.w(r, c) = static_cast<S>(rng.uniform(-bound, bound));
  layer.b = DenseT<S>::Mat::Zero(1, out);
  return layer;
}

}  // namespace detail

template <class S>
ParamsT<S> init_params(std::uint64_t seed, const EncoderConfig& cfg) {
  if (cfg.n_points < 1 || cfg.d < 1 || cfg.head_hidden < 1)
    throw Error(ErrKind::config, "encoder widths must be positive");
  for (int h : cfg.trunk_hidden)
    if (h < 1) throw Error(ErrKind::config, "encoder widths must be positive");
  ParamsT<S> p;
  p.cfg = cfg;
  Rng rng(seed, {kStreamInit});
  const auto dims = detail::trunk_dims(cfg);
  for (auto [in, out] : dims)
    p.trunk_r.push_back(detail::init_dense<S>(rng, in, out));
  for (auto [in, out] : dims)
    p.trunk_t.push_back(detail::init_dense<S>(rng, in, out));
  p.head_rot.push_back(detail::init_dense<S>(rng, cfg.d, cfg.head_hidden));
  p.head_rot.push_back(detail::init_dense<S>(rng, cfg.head_hidden, 6));
  p.head_trans.push_back(detail::init_dense<S>(rng, cfg.d + 3, cfg.head_hidden));
  p.head_trans.push_back(detail::init_dense<S>(rng, cfg.head_hidden, 3));
  p.head_size.push_back(detail::init_dense<S>(rng, cfg.d, cfg.head_hidden));
  p.head_size.push_back(detail::init_dense<S>(rng, cfg.head_hidden, 3));
  return p;
}

namespace detail {

// Parameter-node handles for the three heads, in ParamsT traversal order.
struct HeadParamNodes {
  int rw1, rb1, rw2, rb2;  // rotation head
  int tw1, tb1, tw2, tb2;  // translation head
  int sw1, sb1, sw2, sb2;  // size head
};

template <class S>
HeadParamNodes push_head_params(Tape<S>& tape, const ParamsT<S>& p) {
  HeadParamNodes h;
  h.rw1 = tape.parameter(p.head_rot[0].w);
  h.rb1 = tape.parameter(p.head_rot[0].b);
  h.rw2 = tape.parameter(p.head_rot[1].w);
  h.rb2 = tape.parameter(p.head_rot[1].b);
  h.tw1 = tape.parameter(p.head_trans[0].w);
  h.tb1 = tape.parameter(p.head_trans[0].b);
  h.tw2 = tape.parameter(p.head_trans[1].w);
  h.tb2 = tape.parameter(p.head_trans[1].b);
  h.sw1 = tape.parameter(p.head_size[0].w);
  h.sb1 = tape.parameter(p.head_size[0].b);
  h.sw2 = tape.parameter(p.head_size[1].w);
  h.sb2 = tape.parameter(p.head_size[1].b);
  return h;
}

struct HeadRawNodes {
  int raw6;  // rotation head output before orthonormalization, B x 6
  int resid; // centroid-relative translation residual, B x 3
  int s;     // size after the positivity map, B x 3
};

// The single definition of the head computation: rotation f_R -> 6 raw
// numbers, translation (f_t || centroid) -> residual, size f_R -> softplus.
// Training graph, inference, and the gradient checks all route through here.
template <class S>
HeadRawNodes heads_raw(Tape<S>& tape, const HeadParamNodes& h, int f_r,
                       int trans_in) {
  HeadRawNodes out;
  out.raw6 = tape.affine(tape.relu(tape.affine(f_r, h.rw1, h.rb1)), h.rw2,
                         h.rb2);
  out.resid = tape.affine(tape.relu(tape.affine(trans_in, h.tw1, h.tb1)),
                          h.tw2, h.tb2);
  out.s = tape.softplus(tape.affine(tape.relu(tape.affine(f_r, h.sw1, h.sb1)),
                                    h.sw2, h.sb2));
  return out;
}

// In-graph row-wise normalization with an epsilon guard: v / sqrt(|v|^2+eps).
// Total (never divides by zero), so the training graph has no branches; the
// inference path handles genuinely degenerate outputs via an explicit
// fallback instead.
template <class S>
int row_normalize(Tape<S>& tape, int v, double eps = 1e-12) {
  const int ss = tape.row_sum(tape.mul(v, v));
  const int inv = tape.elem_recip(
      tape.elem_sqrt(tape.add_const(ss, static_cast<S>(eps))));
  return tape.row_scale(v, inv);
}

}  // namespace detail

// Node handles of one forward pass over a stacked batch (sample-major rows:
// sample i occupies rows [i*n_points, (i+1)*n_points)).
template <class S>
struct ModelGraph {
  int n_samples = 0;
  int n_points = 0;
  std::vector<int> params;        // parameter nodes, ParamsT traversal order
  int points = -1;                // (B*Np) x 3 input
  int centroids = -1;             // B x 3, per-sample coordinate mean
  int f_pc_r = -1, f_pc_t = -1;   // (B*Np) x D point-wise embeddings
  int f_r = -1, f_t = -1;         // B x D max-pooled global embeddings
  int rx_raw = -1, ry_raw = -1;   // B x 3 head outputs before orthonormalization
  int rx = -1, ry = -1;           // B x 3 orthonormalized plane normals
  int t = -1;                     // B x 3 predicted translation
  int s = -1;                     // B x 3 predicted size (positive)
};

// Builds the full two-branch forward pass for a stacked batch.  `points` is
// (n_samples * cfg.n_points) x 3.
template <class S>
ModelGraph<S> build_model_graph(Tape<S>& tape, const ParamsT<S>& p,
                                const typename Tape<S>::Mat& points) {
  const EncoderConfig& cfg = p.cfg;
  if (points.cols() != 3 || points.rows() == 0 ||
      points.rows() % cfg.n_points != 0)
    throw Error(ErrKind::shape, "batch points must be (B*n_points) x 3");
  if (!points.allFinite())
    throw Error(ErrKind::numeric, "non-finite input points");
  ModelGraph<S> g;
  g.n_points = cfg.n_points;
  g.n_samples = static_cast<int>(points.rows()) / cfg.n_points;

  // parameter nodes in the canonical traversal order
  std::vector<int> pnodes;
  p.for_each_array([&](const auto& m) { pnodes.push_back(tape.parameter(m)); });
  g.params = pnodes;
  std::size_t next = 0;
  auto take = [&]() { return pnodes[next++]; };
  std::vector<std::pair<int, int>> trunk_r_nodes, trunk_t_nodes;
  for (std::size_t i = 0; i < p.trunk_r.size(); ++i) {
    const int w = take();
    const int b = take();
    trunk_r_nodes.emplace_back(w, b);
  }
  for (std::size_t i = 0; i < p.trunk_t.size(); ++i) {
    const int w = take();
    const int b = take();
    trunk_t_nodes.emplace_back(w, b);
  }
  detail::HeadParamNodes hp;
  hp.rw1 = take(); hp.rb1 = take(); hp.rw2 = take(); hp.rb2 = take();
  hp.tw1 = take(); hp.tb1 = take(); hp.tw2 = take(); hp.tb2 = take();
  hp.sw1 = take(); hp.sb1 = take(); hp.sw2 = take(); hp.sb2 = take();

  g.points = tape.input(points);
  g.centroids = tape.mean_pool_points(g.points, g.n_samples);

  // rotation branch: centered coordinates -> translation-invariant features
  const int centered =
      tape.sub(g.points, tape.repeat_rows(g.centroids, g.n_points));
  int hr_x = centered;
  for (auto [w, b] : trunk_r_nodes) hr_x = tape.relu(tape.affine(hr_x, w, b));
  g.f_pc_r = hr_x;
  g.f_r = tape.max_pool_points(g.f_pc_r, g.n_samples);

  // translation branch: raw coordinates
  int ht_x = g.points;
  for (auto [w, b] : trunk_t_nodes) ht_x = tape.relu(tape.affine(ht_x, w, b));
  g.f_pc_t = ht_x;
  g.f_t = tape.max_pool_points(g.f_pc_t, g.n_samples);

  const int trans_in = tape.concat_cols(g.f_t, g.centroids);
  const detail::HeadRawNodes heads = detail::heads_raw(tape, hp, g.f_r, trans_in);

  // rotation: split the 6 raw numbers, Gram-Schmidt per row (anchor r_y,
  // orthogonalize r_x against it), epsilon-guarded in-graph
  g.rx_raw = tape.slice_cols(heads.raw6, 0, 3);
  g.ry_raw = tape.slice_cols(heads.raw6, 3, 3);
  g.ry = detail::row_normalize(tape, g.ry_raw);
  const int dot = tape.row_sum(tape.mul(g.rx_raw, g.ry));
  const int rx_orth = tape.sub(g.rx_raw, tape.row_scale(g.ry, dot));
  g.rx = detail::row_normalize(tape, rx_orth);

  // translation: centroid-relative residual added back onto the centroid
  g.t = tape.add(heads.resid, g.centroids);
  g.s = heads.s;

  return g;
}

// One sample's embeddings, evaluated eagerly.
template <class S = double>
struct EmbeddingsT {
  using Mat = typename Tape<S>::Mat;
  Mat f_pc_r, f_pc_t;                            // n_points x D
  Eigen::Matrix<S, Eigen::Dynamic, 1> f_r, f_t;  // D
};

using Embeddings = EmbeddingsT<double>;

template <class S>
EmbeddingsT<S> encode(const ParamsT<S>& params,
                      const typename Tape<S>::Mat& points) {
  if (points.rows() != params.cfg.n_points || points.cols() != 3)
    throw Error(ErrKind::shape, "encode expects n_points x 3");
  Tape<S> tape;
  const ModelGraph<S> g = build_model_graph(tape, params, points);
  tape.evaluate();
  EmbeddingsT<S> out;
  out.f_pc_r = tape.value(g.f_pc_r);
  out.f_pc_t = tape.value(g.f_pc_t);
  out.f_r = tape.value(g.f_r).row(0).transpose();
  out.f_t = tape.value(g.f_t).row(0).transpose();
  return out;
}

struct HeadDiagnostics {
  int degenerate_fallbacks = 0;
};

namespace detail {

// Orthonormal pair closest to the raw head outputs, with an explicit
// fallback for degenerate raw normals (near zero or near parallel).
inline std::pair<Eigen::Vector3d, Eigen::Vector3d> orthonormal_pair(
    const Eigen::Vector3d& rx_raw, const Eigen::Vector3d& ry_raw,
    HeadDiagnostics* diag) {
  try {
    const Eigen::Matrix3d m = rotation_from_normals(rx_raw, ry_raw);
    return {m.col(0), m.col(1)};
  } catch (const Error&) {
    if (diag) ++diag->degenerate_fallbacks;
    const Eigen::Vector3d ry_u = ry_raw.norm() > kDegenerateTol
                                     ? ry_raw.normalized()
                                     : Eigen::Vector3d::UnitY();
    // axis least aligned with ry_u, orthogonalized against it
    int k = 0;
    for (int i = 1; i < 3; ++i)
      if (std::abs(ry_u[i]) < std::abs(ry_u[k])) k = i;
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e[k] = 1.0;
    const Eigen::Vector3d rx_u = (e - e.dot(ry_u) * ry_u).normalized();
    return {rx_u, ry_u};
  }
}

}  // namespace detail

// Pose from one sample's embeddings.  The rotation head consumes the pooled
// rotation feature; the translation head consumes the pooled translation
// feature concatenated with the cloud centroid (the pooled coordinate
// summary) and predicts a centroid-relative residual; the size head maps its
// raw output through softplus, s = log(1 + exp(raw)).
template <class S>
Pose heads_forward(const ParamsT<S>& params, const EmbeddingsT<S>& emb,
                   const Eigen::Vector3d& centroid,
                   HeadDiagnostics* diag = nullptr) {
  using Mat = typename Tape<S>::Mat;
  Tape<S> tape;
  const int f_r = tape.input(Mat(emb.f_r.transpose()));
  const int f_t = tape.input(Mat(emb.f_t.transpose()));
  const int cen = tape.input(Mat(centroid.transpose().template cast<S>()));
  const detail::HeadParamNodes hp = detail::push_head_params(tape, params);
  const detail::HeadRawNodes heads =
      detail::heads_raw(tape, hp, f_r, tape.concat_cols(f_t, cen));
  tape.evaluate();

  const Eigen::Vector3d rx_raw =
      tape.value(heads.raw6).row(0).template cast<double>().head(3).transpose();
  const Eigen::Vector3d ry_raw =
      tape.value(heads.raw6).row(0).template cast<double>().tail(3).transpose();
  const auto [rx, ry] = detail::orthonormal_pair(rx_raw, ry_raw, diag);

  Pose out;
  out.r_x = rx;
  out.r_y = ry;
  out.t = centroid +
          tape.value(heads.resid).row(0).template cast<double>().transpose();
  out.s = tape.value(heads.s).row(0).template cast<double>().transpose();
  return out;
}

}  // namespace poserank
