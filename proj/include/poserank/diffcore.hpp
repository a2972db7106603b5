#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "poserank/error.hpp"
#include "poserank/rng.hpp"

namespace poserank {

// Reverse-mode autodiff over a fixed op vocabulary: exactly the operations
// the point encoders, pose heads, and ranking losses need, each with an
// individually tested backward rule.  Templated on the scalar so the same
// graph code runs in float for training and double for verification.
//
// Determinism: every reduction runs in a fixed serial order, so forward and
// backward passes are bitwise reproducible.  Conventions at kinks: relu and
// |x| use subgradient 0 at 0; sqrt routes gradient 0 where its output is 0;
// max-pool sends gradient to the first argmax row on ties.

enum class OpKind {
  input,
  parameter,
  affine,            // X*W + row-broadcast b
  relu,
  max_pool_points,   // per-group column max over consecutive row blocks
  mean_pool_points,  // per-group column mean
  repeat_rows,       // tile each row k consecutive times
  concat_cols,
  slice_cols,        // contiguous column range
  pairwise_sqdist,   // n x n matrix of squared row distances
  add,
  sub,
  mul,               // elementwise
  scale,             // * constant
  add_const,
  elem_sqrt,
  elem_abs,
  elem_exp,
  elem_log,
  elem_recip,
  softplus,
  row_sum,           // n x m -> n x 1
  row_scale,         // scale row i by s(i, 0)
  scale_by,          // scale all entries by a 1 x 1 node
  sum_all,
  mean_all,
  gather_entry,      // M(r, c) -> 1 x 1
  gather_row,        // selected columns of one row -> 1 x m
  log_sum_exp_row,   // 1 x m -> 1 x 1, max-shifted
  mean_list,         // n-ary mean of 1 x 1 nodes
  weighted_sum,      // n-ary weighted sum of 1 x 1 nodes
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::affine: return "affine";
    case OpKind::relu: return "relu";
    case OpKind::max_pool_points: return "max_pool_points";
    case OpKind::mean_pool_points: return "mean_pool_points";
    case OpKind::repeat_rows: return "repeat_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::pairwise_sqdist: return "pairwise_sqdist";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_const: return "add_const";
    case OpKind::elem_sqrt: return "elem_sqrt";
    case OpKind::elem_abs: return "elem_abs";
    case OpKind::elem_exp: return "elem_exp";
    case OpKind::elem_log: return "elem_log";
    case OpKind::elem_recip: return "elem_recip";
    case OpKind::softplus: return "softplus";
    case OpKind::row_sum: return "row_sum";
    case OpKind::row_scale: return "row_scale";
    case OpKind::scale_by: return "scale_by";
    case OpKind::sum_all: return "sum_all";
    case OpKind::mean_all: return "mean_all";
    case OpKind::gather_entry: return "gather_entry";
    case OpKind::gather_row: return "gather_row";
    case OpKind::log_sum_exp_row: return "log_sum_exp_row";
    case OpKind::mean_list: return "mean_list";
    case OpKind::weighted_sum: return "weighted_sum";
  }
  return "?";
}

struct FdReport {
  double max_rel_error = 0.0;
  int coords_checked = 0;  // 0 means the graph had no parameters to sample
  int coords_skipped = 0;  // stencil straddled a derivative discontinuity
};

namespace detail {

// out(i,j) = b(j) + sum_k x(i,k)*w(k,j), accumulated strictly in k order for
// every (i,j).  Each output entry's rounding sequence is independent of which
// row slot i occupies, so moving a row to a different position reproduces its
// outputs bitwise — the property the permutation-invariance guarantees of the
// pooled embeddings rest on.  (A blocked GEMM does not provide this: packing
// and tail kernels round interior and edge rows differently.)  Compiled as a
// single out-of-line instance so every call site runs the same code.
template <class S>
[[gnu::noinline]] void affine_rowstable(
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& x,
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& w,
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& b,
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& out) {
  const Eigen::Index kk = x.cols();
  const Eigen::Index nn = x.rows();
  // Row blocks keep the streamed slab of x cache-resident across the sweep
  // over output columns.  Blocking regroups SIMD lanes only; each (i,j)
  // entry's accumulation chain is the same regardless of block size.
  constexpr Eigen::Index kRowBlock = 128;
  for (Eigen::Index r0 = 0; r0 < nn; r0 += kRowBlock) {
    const Eigen::Index m = std::min(kRowBlock, nn - r0);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      auto seg = out.col(j).segment(r0, m);
      seg.setConstant(b(0, j));
      for (Eigen::Index k = 0; k < kk; ++k)
        seg += w(k, j) * x.col(k).segment(r0, m);
    }
  }
}

}  // namespace detail

template <class S>
class Tape {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  // ---- graph construction -------------------------------------------------

  int input(int rows, int cols) {
    return push_leaf(OpKind::input, Mat::Zero(rows, cols));
  }
  int input(const Mat& v) { return push_leaf(OpKind::input, v); }
  int parameter(const Mat& v) { return push_leaf(OpKind::parameter, v); }

  // Rebind a leaf's value (inputs and parameters only).
  void set_value(int node, const Mat& v) {
    NodeRec& n = at(node);
    if (n.op != OpKind::input && n.op != OpKind::parameter)
      throw Error(ErrKind::state, node_label(node) + ": only leaves can be rebound");
    if (v.rows() != n.val.rows() || v.cols() != n.val.cols())
      throw Error(ErrKind::shape, node_label(node) + ": rebind changes shape");
    n.val = v;
    evaluated_ = false;
  }

  int affine(int x, int w, int b) {
    const NodeRec &nx = at(x), &nw = at(w), &nb = at(b);
    if (nx.val.cols() != nw.val.rows())
      throw Error(ErrKind::shape, fresh_label() + " (affine): inner dims " +
                                      dim(x) + " * " + dim(w));
    if (nb.val.rows() != 1 || nb.val.cols() != nw.val.cols())
      throw Error(ErrKind::shape,
                  fresh_label() + " (affine): bias must be 1 x out_cols");
    NodeRec n(OpKind::affine, nx.val.rows(), nw.val.cols());
    n.a = x;
    n.b = w;
    n.c = b;
    return push(std::move(n));
  }

  int relu(int x) { return unary(OpKind::relu, x); }

  int max_pool_points(int x, int groups) {
    return pool(OpKind::max_pool_points, x, groups);
  }
  int mean_pool_points(int x, int groups) {
    return pool(OpKind::mean_pool_points, x, groups);
  }

  int repeat_rows(int x, int times) {
    const NodeRec& nx = at(x);
    if (times < 1)
      throw Error(ErrKind::shape, fresh_label() + " (repeat_rows): times < 1");
    NodeRec n(OpKind::repeat_rows, nx.val.rows() * times, nx.val.cols());
    n.a = x;
    n.i0 = times;
    return push(std::move(n));
  }

  int concat_cols(int a, int b) {
    const NodeRec &na = at(a), &nb = at(b);
    if (na.val.rows() != nb.val.rows())
      throw Error(ErrKind::shape, fresh_label() + " (concat_cols): rows " +
                                      dim(a) + " vs " + dim(b));
    NodeRec n(OpKind::concat_cols, na.val.rows(),
              na.val.cols() + nb.val.cols());
    n.a = a;
    n.b = b;
    return push(std::move(n));
  }

  int slice_cols(int a, int c0, int count) {
    const NodeRec& na = at(a);
    if (c0 < 0 || count < 1 || c0 + count > na.val.cols())
      throw Error(ErrKind::shape,
                  fresh_label() + " (slice_cols): range out of bounds");
    NodeRec n(OpKind::slice_cols, na.val.rows(), count);
    n.a = a;
    n.i0 = c0;
    n.i1 = count;
    return push(std::move(n));
  }

  int pairwise_sqdist(int f) {
    const NodeRec& nf = at(f);
    NodeRec n(OpKind::pairwise_sqdist, nf.val.rows(), nf.val.rows());
    n.a = f;
    return push(std::move(n));
  }

  int add(int a, int b) { return binary(OpKind::add, a, b); }
  int sub(int a, int b) { return binary(OpKind::sub, a, b); }
  int mul(int a, int b) { return binary(OpKind::mul, a, b); }

  int scale(int a, S c) { return unary_const(OpKind::scale, a, c); }
  int add_const(int a, S c) { return unary_const(OpKind::add_const, a, c); }

  int elem_sqrt(int a) { return unary(OpKind::elem_sqrt, a); }
  int elem_abs(int a) { return unary(OpKind::elem_abs, a); }
  int elem_exp(int a) { return unary(OpKind::elem_exp, a); }
  int elem_log(int a) { return unary(OpKind::elem_log, a); }
  int elem_recip(int a) { return unary(OpKind::elem_recip, a); }
  int softplus(int a) { return unary(OpKind::softplus, a); }

  int row_sum(int a) {
    const NodeRec& na = at(a);
    NodeRec n(OpKind::row_sum, na.val.rows(), 1);
    n.a = a;
    return push(std::move(n));
  }

  int row_scale(int a, int s) {
    const NodeRec &na = at(a), &ns = at(s);
    if (ns.val.rows() != na.val.rows() || ns.val.cols() != 1)
      throw Error(ErrKind::shape,
                  fresh_label() + " (row_scale): scale must be rows x 1");
    NodeRec n(OpKind::row_scale, na.val.rows(), na.val.cols());
    n.a = a;
    n.b = s;
    return push(std::move(n));
  }

  int scale_by(int a, int s) {
    require_scalar(s, "scale_by");
    const NodeRec& na = at(a);
    NodeRec n(OpKind::scale_by, na.val.rows(), na.val.cols());
    n.a = a;
    n.b = s;
    return push(std::move(n));
  }

  int sum_all(int a) {
    NodeRec n(OpKind::sum_all, 1, 1);
    n.a = a;
    return push(std::move(n));
  }
  int mean_all(int a) {
    NodeRec n(OpKind::mean_all, 1, 1);
    n.a = a;
    return push(std::move(n));
  }

  int gather_entry(int m, int r, int c) {
    const NodeRec& nm = at(m);
    if (r < 0 || r >= nm.val.rows() || c < 0 || c >= nm.val.cols())
      throw Error(ErrKind::shape,
                  fresh_label() + " (gather_entry): index out of range");
    NodeRec n(OpKind::gather_entry, 1, 1);
    n.a = m;
    n.i0 = r;
    n.i1 = c;
    return push(std::move(n));
  }

  int gather_row(int m, int r, std::vector<int> cols) {
    const NodeRec& nm = at(m);
    if (cols.empty())
      throw Error(ErrKind::shape, fresh_label() + " (gather_row): empty index list");
    if (r < 0 || r >= nm.val.rows())
      throw Error(ErrKind::shape, fresh_label() + " (gather_row): row out of range");
    for (int c : cols)
      if (c < 0 || c >= nm.val.cols())
        throw Error(ErrKind::shape,
                    fresh_label() + " (gather_row): column out of range");
    NodeRec n(OpKind::gather_row, 1, static_cast<int>(cols.size()));
    n.a = m;
    n.i0 = r;
    n.idx = std::move(cols);
    return push(std::move(n));
  }

  int log_sum_exp_row(int a) {
    const NodeRec& na = at(a);
    if (na.val.rows() != 1)
      throw Error(ErrKind::shape,
                  fresh_label() + " (log_sum_exp_row): input must be 1 x m");
    NodeRec n(OpKind::log_sum_exp_row, 1, 1);
    n.a = a;
    return push(std::move(n));
  }

  int mean_list(std::vector<int> xs) {
    if (xs.empty())
      throw Error(ErrKind::shape, fresh_label() + " (mean_list): empty list");
    for (int x : xs) require_scalar(x, "mean_list");
    NodeRec n(OpKind::mean_list, 1, 1);
    n.srcs = std::move(xs);
    return push(std::move(n));
  }

  int weighted_sum(std::vector<int> xs, std::vector<S> ws) {
    if (xs.empty() || xs.size() != ws.size())
      throw Error(ErrKind::shape,
                  fresh_label() + " (weighted_sum): list size mismatch");
    for (int x : xs) require_scalar(x, "weighted_sum");
    NodeRec n(OpKind::weighted_sum, 1, 1);
    n.srcs = std::move(xs);
    n.weights = std::move(ws);
    return push(std::move(n));
  }

  // ---- execution ----------------------------------------------------------

  void evaluate() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) forward(nodes_[i]);
    evaluated_ = true;
  }

  // Reverse pass seeding d(out)/d(out) = 1.  Gradient buffers are zeroed
  // first, so each call stands alone.
  void gradients(int out) {
    if (!evaluated_)
      throw Error(ErrKind::state, "gradients() called before evaluate()");
    require_scalar(out, "gradients");
    for (NodeRec& n : nodes_) n.grad.setZero(n.val.rows(), n.val.cols());
    at(out).grad(0, 0) = S(1);
    for (int i = out; i >= 0; --i) backward(nodes_[static_cast<std::size_t>(i)]);
  }

  const Mat& value(int node) const { return at(node).val; }
  const Mat& grad(int node) const { return at(node).grad; }
  std::size_t n_nodes() const { return nodes_.size(); }

  std::vector<int> parameters() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == OpKind::parameter) out.push_back(static_cast<int>(i));
    return out;
  }

  // Central-difference check of d(out)/d(parameter coordinates) on up to
  // n_coords coordinates sampled without replacement.  Relative error uses
  // denominator max(|analytic|, |numeric|, 1e-8).
  //
  // The graph is piecewise smooth (abs corners, pool switches), and a
  // central difference across such a boundary measures a mixture of two
  // slopes, not the gradient.  A boundary inside the stencil shows up as
  // the forward and backward one-sided quotients disagreeing.  Smooth
  // curvature also makes them disagree (by step * f''), so a flagged
  // coordinate is retried at half the step: disagreement that shrinks with
  // the step is curvature and the coordinate is kept (measured on a
  // quarter-step stencil, clear of the flagged region); step-independent
  // disagreement is a genuine slope jump and the coordinate is skipped,
  // counted in coords_skipped, and replaced by a further draw from the same
  // shuffled pool.  Leaves values restored and the tape re-evaluated.
  FdReport finite_diff_check(int out, int n_coords, double step,
                             std::uint64_t seed) {
    require_scalar(out, "finite_diff_check");
    struct Coord {
      int node;
      int r, c;
    };
    std::vector<Coord> all;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const NodeRec& n = nodes_[i];
      if (n.op != OpKind::parameter) continue;
      for (int r = 0; r < n.val.rows(); ++r)
        for (int c = 0; c < n.val.cols(); ++c)
          all.push_back({static_cast<int>(i), r, c});
    }
    FdReport report;
    if (all.empty()) return report;

    evaluate();
    gradients(out);
    const double f_zero = static_cast<double>(at(out).val(0, 0));
    std::vector<Mat> analytic;
    analytic.reserve(nodes_.size());
    for (const NodeRec& n : nodes_) analytic.push_back(n.grad);

    Rng rng(seed);
    const int total = static_cast<int>(all.size());
    const int want = n_coords < total ? n_coords : total;
    // full shuffle; its first `want` entries match a plain k-sample, extras
    // only replace skipped coordinates
    const std::vector<int> order =
        sample_without_replacement(rng, total, total);

    for (int pick : order) {
      if (report.coords_checked >= want) break;
      const Coord cd = all[static_cast<std::size_t>(pick)];
      NodeRec& n = at(cd.node);
      const S saved = n.val(cd.r, cd.c);
      auto probe = [&](double h, double& f_plus, double& f_minus) {
        n.val(cd.r, cd.c) = saved + static_cast<S>(h);
        evaluate();
        f_plus = static_cast<double>(at(out).val(0, 0));
        n.val(cd.r, cd.c) = saved - static_cast<S>(h);
        evaluate();
        f_minus = static_cast<double>(at(out).val(0, 0));
      };
      auto one_sided_split = [&](double fwd, double bwd, double central) {
        const double stab =
            std::max({std::abs(central), std::abs(fwd), std::abs(bwd)});
        return std::abs(fwd - bwd) > 0.25 * stab + 1e-8;
      };

      double f_plus = 0.0, f_minus = 0.0;
      probe(step, f_plus, f_minus);
      double numeric = (f_plus - f_minus) / (2.0 * step);
      const double fwd = (f_plus - f_zero) / step;
      const double bwd = (f_zero - f_minus) / step;
      bool skip = false;
      if (one_sided_split(fwd, bwd, numeric)) {
        const double d1 = std::abs(fwd - bwd);
        const double h2 = step / 2.0;
        probe(h2, f_plus, f_minus);
        const double num2 = (f_plus - f_minus) / (2.0 * h2);
        const double fwd2 = (f_plus - f_zero) / h2;
        const double bwd2 = (f_zero - f_minus) / h2;
        if (!one_sided_split(fwd2, bwd2, num2)) {
          numeric = num2;  // the boundary sat outside the finer stencil
        } else if (std::abs(fwd2 - bwd2) <= 0.6 * d1) {
          // shrinks with the step: curvature, not a jump
          const double h4 = step / 4.0;
          probe(h4, f_plus, f_minus);
          numeric = (f_plus - f_minus) / (2.0 * h4);
        } else {
          skip = true;  // step-independent: a real derivative discontinuity
        }
      }
      n.val(cd.r, cd.c) = saved;
      if (skip) {
        ++report.coords_skipped;
        continue;
      }
      const double exact = static_cast<double>(
          analytic[static_cast<std::size_t>(cd.node)](cd.r, cd.c));
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      const double rel = std::abs(exact - numeric) / denom;
      if (rel > report.max_rel_error) report.max_rel_error = rel;
      ++report.coords_checked;
    }
    evaluate();
    return report;
  }

 private:
  struct NodeRec {
    explicit NodeRec(OpKind k, Eigen::Index rows = 0, Eigen::Index cols = 0)
        : op(k), val(Mat::Zero(rows, cols)) {}
    OpKind op;
    int a = -1, b = -1, c = -1;
    S cval = S(0);
    int i0 = 0, i1 = 0;
    std::vector<int> idx;
    std::vector<int> srcs;
    std::vector<S> weights;
    std::vector<int> argmax;  // max_pool_points backward routing
    Mat val, grad;
  };

  std::vector<NodeRec> nodes_;
  bool evaluated_ = false;

  NodeRec& at(int i) { return nodes_.at(static_cast<std::size_t>(i)); }
  const NodeRec& at(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }

  std::string node_label(int i) const {
    return "node " + std::to_string(i) + " (" + op_name(at(i).op) + ")";
  }
  std::string fresh_label() const {
    return "node " + std::to_string(nodes_.size());
  }
  std::string dim(int i) const {
    return std::to_string(at(i).val.rows()) + "x" +
           std::to_string(at(i).val.cols());
  }

  void require_scalar(int i, const char* who) const {
    const NodeRec& n = at(i);
    if (n.val.rows() != 1 || n.val.cols() != 1)
      throw Error(ErrKind::shape, std::string(who) + ": " + node_label(i) +
                                      " must be 1 x 1, is " + dim(i));
  }

  int push(NodeRec&& n) {
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push_leaf(OpKind k, const Mat& v) {
    NodeRec n(k);
    n.val = v;
    return push(std::move(n));
  }

  int unary(OpKind k, int a) {
    const NodeRec& na = at(a);
    NodeRec n(k, na.val.rows(), na.val.cols());
    n.a = a;
    return push(std::move(n));
  }

  int unary_const(OpKind k, int a, S c) {
    const NodeRec& na = at(a);
    NodeRec n(k, na.val.rows(), na.val.cols());
    n.a = a;
    n.cval = c;
    return push(std::move(n));
  }

  int binary(OpKind k, int a, int b) {
    const NodeRec &na = at(a), &nb = at(b);
    if (na.val.rows() != nb.val.rows() || na.val.cols() != nb.val.cols())
      throw Error(ErrKind::shape, fresh_label() + " (" + op_name(k) +
                                      "): shapes " + dim(a) + " vs " + dim(b));
    NodeRec n(k, na.val.rows(), na.val.cols());
    n.a = a;
    n.b = b;
    return push(std::move(n));
  }

  int pool(OpKind k, int x, int groups) {
    const NodeRec& nx = at(x);
    if (groups < 1 || nx.val.rows() % groups != 0)
      throw Error(ErrKind::shape,
                  fresh_label() + std::string(" (") + op_name(k) + "): " +
                      dim(x) + " rows not divisible into " +
                      std::to_string(groups) + " groups");
    NodeRec n(k, groups, nx.val.cols());
    n.a = x;
    n.i0 = groups;
    return push(std::move(n));
  }

  void forward(NodeRec& n) {
    switch (n.op) {
      case OpKind::input:
      case OpKind::parameter:
        return;
      case OpKind::affine:
        detail::affine_rowstable(at(n.a).val, at(n.b).val, at(n.c).val, n.val);
        return;
      case OpKind::relu:
        n.val = at(n.a).val.cwiseMax(S(0));
        return;
      case OpKind::max_pool_points: {
        const Mat& x = at(n.a).val;
        const int groups = n.i0;
        const Eigen::Index per = x.rows() / groups;
        n.argmax.assign(static_cast<std::size_t>(n.val.size()), 0);
        for (int g = 0; g < groups; ++g) {
          for (Eigen::Index c = 0; c < x.cols(); ++c) {
            Eigen::Index best = g * per;
            S best_v = x(best, c);
            for (Eigen::Index r = g * per + 1; r < (g + 1) * per; ++r) {
              if (x(r, c) > best_v) {  // strict: first argmax wins ties
                best_v = x(r, c);
                best = r;
              }
            }
            n.val(g, c) = best_v;
            n.argmax[static_cast<std::size_t>(g * x.cols() + c)] =
                static_cast<int>(best);
          }
        }
        return;
      }
      case OpKind::mean_pool_points: {
        // Addends are summed in ascending value order, so each pooled entry
        // depends only on the multiset of its group's values — reordering the
        // rows of a group cannot change the result bitwise.
        const Mat& x = at(n.a).val;
        const int groups = n.i0;
        const Eigen::Index per = x.rows() / groups;
        std::vector<S> col(static_cast<std::size_t>(per));
        for (int g = 0; g < groups; ++g) {
          for (Eigen::Index c = 0; c < x.cols(); ++c) {
            for (Eigen::Index r = 0; r < per; ++r)
              col[static_cast<std::size_t>(r)] = x(g * per + r, c);
            std::sort(col.begin(), col.end());
            S acc = S(0);
            for (S v : col) acc += v;
            n.val(g, c) = acc / static_cast<S>(per);
          }
        }
        return;
      }
      case OpKind::repeat_rows: {
        const Mat& x = at(n.a).val;
        const int times = n.i0;
        for (Eigen::Index r = 0; r < x.rows(); ++r)
          for (int k = 0; k < times; ++k) n.val.row(r * times + k) = x.row(r);
        return;
      }
      case OpKind::concat_cols: {
        const Mat &a = at(n.a).val, &b = at(n.b).val;
        n.val.leftCols(a.cols()) = a;
        n.val.rightCols(b.cols()) = b;
        return;
      }
      case OpKind::slice_cols:
        n.val = at(n.a).val.middleCols(n.i0, n.i1);
        return;
      case OpKind::pairwise_sqdist: {
        const Mat& f = at(n.a).val;
        const Eigen::Index m = f.rows();
        for (Eigen::Index i = 0; i < m; ++i) {
          n.val(i, i) = S(0);
          for (Eigen::Index j = i + 1; j < m; ++j) {
            S acc = S(0);
            for (Eigen::Index k = 0; k < f.cols(); ++k) {
              const S d = f(i, k) - f(j, k);
              acc += d * d;
            }
            n.val(i, j) = acc;
            n.val(j, i) = acc;
          }
        }
        return;
      }
      case OpKind::add:
        n.val = at(n.a).val + at(n.b).val;
        return;
      case OpKind::sub:
        n.val = at(n.a).val - at(n.b).val;
        return;
      case OpKind::mul:
        n.val = at(n.a).val.cwiseProduct(at(n.b).val);
        return;
      case OpKind::scale:
        n.val = at(n.a).val * n.cval;
        return;
      case OpKind::add_const:
        n.val = at(n.a).val.array() + n.cval;
        return;
      case OpKind::elem_sqrt:
        n.val = at(n.a).val.cwiseSqrt();
        return;
      case OpKind::elem_abs:
        n.val = at(n.a).val.cwiseAbs();
        return;
      case OpKind::elem_exp:
        n.val = at(n.a).val.array().exp();
        return;
      case OpKind::elem_log:
        n.val = at(n.a).val.array().log();
        return;
      case OpKind::elem_recip:
        n.val = at(n.a).val.cwiseInverse();
        return;
      case OpKind::softplus: {
        // max(x, 0) + log1p(exp(-|x|)): stable for large |x|
        const Mat& x = at(n.a).val;
        n.val = x.unaryExpr([](S v) {
          const S big = v > S(0) ? v : S(0);
          return big + std::log1p(std::exp(-std::abs(v)));
        });
        return;
      }
      case OpKind::row_sum: {
        const Mat& x = at(n.a).val;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          S acc = S(0);
          for (Eigen::Index c = 0; c < x.cols(); ++c) acc += x(r, c);
          n.val(r, 0) = acc;
        }
        return;
      }
      case OpKind::row_scale: {
        const Mat &x = at(n.a).val, &s = at(n.b).val;
        for (Eigen::Index r = 0; r < x.rows(); ++r)
          n.val.row(r) = x.row(r) * s(r, 0);
        return;
      }
      case OpKind::scale_by:
        n.val = at(n.a).val * at(n.b).val(0, 0);
        return;
      case OpKind::sum_all: {
        const Mat& x = at(n.a).val;
        S acc = S(0);
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          for (Eigen::Index r = 0; r < x.rows(); ++r) acc += x(r, c);
        n.val(0, 0) = acc;
        return;
      }
      case OpKind::mean_all: {
        const Mat& x = at(n.a).val;
        S acc = S(0);
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          for (Eigen::Index r = 0; r < x.rows(); ++r) acc += x(r, c);
        n.val(0, 0) = acc / static_cast<S>(x.size());
        return;
      }
      case OpKind::gather_entry:
        n.val(0, 0) = at(n.a).val(n.i0, n.i1);
        return;
      case OpKind::gather_row: {
        const Mat& m = at(n.a).val;
        for (std::size_t k = 0; k < n.idx.size(); ++k)
          n.val(0, static_cast<Eigen::Index>(k)) =
              m(n.i0, n.idx[k]);
        return;
      }
      case OpKind::log_sum_exp_row: {
        const Mat& x = at(n.a).val;
        S mx = x(0, 0);
        for (Eigen::Index c = 1; c < x.cols(); ++c)
          if (x(0, c) > mx) mx = x(0, c);
        S acc = S(0);
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          acc += std::exp(x(0, c) - mx);
        n.val(0, 0) = mx + std::log(acc);
        return;
      }
      case OpKind::mean_list: {
        S acc = S(0);
        for (int s : n.srcs) acc += at(s).val(0, 0);
        n.val(0, 0) = acc / static_cast<S>(n.srcs.size());
        return;
      }
      case OpKind::weighted_sum: {
        S acc = S(0);
        for (std::size_t k = 0; k < n.srcs.size(); ++k)
          acc += n.weights[k] * at(n.srcs[k]).val(0, 0);
        n.val(0, 0) = acc;
        return;
      }
    }
  }

  void backward(NodeRec& n) {
    const Mat& g = n.grad;
    switch (n.op) {
      case OpKind::input:
      case OpKind::parameter:
        return;
      case OpKind::affine: {
        at(n.a).grad.noalias() += g * at(n.b).val.transpose();
        at(n.b).grad.noalias() += at(n.a).val.transpose() * g;
        at(n.c).grad.row(0) += g.colwise().sum();
        return;
      }
      case OpKind::relu: {
        const Mat& x = at(n.a).val;
        at(n.a).grad.array() +=
            (x.array() > S(0)).template cast<S>() * g.array();
        return;
      }
      case OpKind::max_pool_points: {
        Mat& gx = at(n.a).grad;
        const Eigen::Index cols = n.val.cols();
        for (int gi = 0; gi < n.i0; ++gi)
          for (Eigen::Index c = 0; c < cols; ++c)
            gx(n.argmax[static_cast<std::size_t>(gi * cols + c)], c) +=
                g(gi, c);
        return;
      }
      case OpKind::mean_pool_points: {
        Mat& gx = at(n.a).grad;
        const Eigen::Index per = gx.rows() / n.i0;
        for (int gi = 0; gi < n.i0; ++gi)
          gx.middleRows(gi * per, per).rowwise() +=
              g.row(gi) / static_cast<S>(per);
        return;
      }
      case OpKind::repeat_rows: {
        Mat& gx = at(n.a).grad;
        const int times = n.i0;
        for (Eigen::Index r = 0; r < gx.rows(); ++r)
          for (int k = 0; k < times; ++k) gx.row(r) += g.row(r * times + k);
        return;
      }
      case OpKind::concat_cols: {
        at(n.a).grad += g.leftCols(at(n.a).val.cols());
        at(n.b).grad += g.rightCols(at(n.b).val.cols());
        return;
      }
      case OpKind::slice_cols:
        at(n.a).grad.middleCols(n.i0, n.i1) += g;
        return;
      case OpKind::pairwise_sqdist: {
        const Mat& f = at(n.a).val;
        Mat& gf = at(n.a).grad;
        const Eigen::Index m = f.rows();
        for (Eigen::Index i = 0; i < m; ++i) {
          for (Eigen::Index j = 0; j < m; ++j) {
            const S w = g(i, j);
            if (w == S(0)) continue;
            for (Eigen::Index k = 0; k < f.cols(); ++k) {
              const S d = S(2) * w * (f(i, k) - f(j, k));
              gf(i, k) += d;
              gf(j, k) -= d;
            }
          }
        }
        return;
      }
      case OpKind::add:
        at(n.a).grad += g;
        at(n.b).grad += g;
        return;
      case OpKind::sub:
        at(n.a).grad += g;
        at(n.b).grad -= g;
        return;
      case OpKind::mul:
        at(n.a).grad += g.cwiseProduct(at(n.b).val);
        at(n.b).grad += g.cwiseProduct(at(n.a).val);
        return;
      case OpKind::scale:
        at(n.a).grad += g * n.cval;
        return;
      case OpKind::add_const:
        at(n.a).grad += g;
        return;
      case OpKind::elem_sqrt: {
        // d sqrt = 1/(2 sqrt); gradient 0 where the output is 0
        at(n.a).grad.array() +=
            (n.val.array() > S(0))
                .select(g.array() * S(0.5) / n.val.array().max(S(1e-30)),
                        Mat::Zero(g.rows(), g.cols()).array());
        return;
      }
      case OpKind::elem_abs: {
        const Mat& x = at(n.a).val;
        at(n.a).grad.array() +=
            g.array() * ((x.array() > S(0)).template cast<S>() -
                         (x.array() < S(0)).template cast<S>());
        return;
      }
      case OpKind::elem_exp:
        at(n.a).grad += g.cwiseProduct(n.val);
        return;
      case OpKind::elem_log:
        at(n.a).grad += g.cwiseQuotient(at(n.a).val);
        return;
      case OpKind::elem_recip:
        at(n.a).grad -= g.cwiseProduct(n.val.cwiseProduct(n.val));
        return;
      case OpKind::softplus: {
        const Mat& x = at(n.a).val;
        at(n.a).grad += g.cwiseProduct(x.unaryExpr(
            [](S v) { return S(1) / (S(1) + std::exp(-v)); }));
        return;
      }
      case OpKind::row_sum: {
        Mat& gx = at(n.a).grad;
        for (Eigen::Index r = 0; r < gx.rows(); ++r)
          gx.row(r).array() += g(r, 0);
        return;
      }
      case OpKind::row_scale: {
        const Mat &x = at(n.a).val, &s = at(n.b).val;
        Mat &gx = at(n.a).grad, &gs = at(n.b).grad;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          gx.row(r) += g.row(r) * s(r, 0);
          S acc = S(0);
          for (Eigen::Index c = 0; c < x.cols(); ++c)
            acc += g(r, c) * x(r, c);
          gs(r, 0) += acc;
        }
        return;
      }
      case OpKind::scale_by: {
        const S s = at(n.b).val(0, 0);
        at(n.a).grad += g * s;
        S acc = S(0);
        const Mat& x = at(n.a).val;
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          for (Eigen::Index r = 0; r < x.rows(); ++r)
            acc += g(r, c) * x(r, c);
        at(n.b).grad(0, 0) += acc;
        return;
      }
      case OpKind::sum_all:
        at(n.a).grad.array() += g(0, 0);
        return;
      case OpKind::mean_all:
        at(n.a).grad.array() += g(0, 0) / static_cast<S>(at(n.a).val.size());
        return;
      case OpKind::gather_entry:
        at(n.a).grad(n.i0, n.i1) += g(0, 0);
        return;
      case OpKind::gather_row: {
        Mat& gm = at(n.a).grad;
        for (std::size_t k = 0; k < n.idx.size(); ++k)
          gm(n.i0, n.idx[k]) += g(0, static_cast<Eigen::Index>(k));
        return;
      }
      case OpKind::log_sum_exp_row: {
        const Mat& x = at(n.a).val;
        Mat& gx = at(n.a).grad;
        const S lse = n.val(0, 0);
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          gx(0, c) += g(0, 0) * std::exp(x(0, c) - lse);
        return;
      }
      case OpKind::mean_list: {
        const S share = g(0, 0) / static_cast<S>(n.srcs.size());
        for (int s : n.srcs) at(s).grad(0, 0) += share;
        return;
      }
      case OpKind::weighted_sum: {
        for (std::size_t k = 0; k < n.srcs.size(); ++k)
          at(n.srcs[k]).grad(0, 0) += g(0, 0) * n.weights[k];
        return;
      }
    }
  }
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace poserank
