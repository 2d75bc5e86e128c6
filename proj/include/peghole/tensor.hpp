#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "peghole/errors.hpp"
#include "peghole/rng.hpp"

namespace peghole::net {

// Dense row-major tensor of doubles.  Rank is 1 or 2 in practice; a scalar
// is shape {1}.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> v);

  int numel() const {
    int n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  int rows() const;
  int cols() const;
  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const;
  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

struct Var {
  int id = -1;
};

// Reverse-mode autodiff tape.  Forward calls append operation nodes (values
// plus backward closures); backward() walks the recorded graph in reverse
// creation order, which is a valid topological order because operands must
// exist before the node that consumes them.
class Tape {
 public:
  // Leaves ------------------------------------------------------------
  Var leaf(const Tensor& t);                      // requires_grad from tensor
  Var leaf(const Tensor& t, bool requires_grad);

  // Elementwise / linear ops ------------------------------------------
  Var matmul(Var a, Var b);                       // [m,k] x [k,n]
  Var linear(Var x, Var w, Var b);                // x*w + row-broadcast b
  Var add(Var a, Var b);                          // same shape
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);                          // elementwise
  Var scale(Var a, double s);
  Var relu(Var a);
  Var sigmoid(Var a);                             // squashes into (0, 1)

  // Structure ops ------------------------------------------------------
  Var concat_cols(Var a, Var b);
  Var gather_rows(Var a, std::vector<int> index);
  // [g*k, c] -> [g, c] max over each block of k consecutive rows.
  Var group_max(Var a, int groups, int k);
  // Weighted combination of coarse rows: out[r] = sum_j w[r][j]*a[nbr[r][j]].
  Var interp_rows(Var a, std::vector<std::array<int, 3>> nbr,
                  std::vector<std::array<double, 3>> w);

  // Reductions ----------------------------------------------------------
  Var reduce_sum(Var a);
  Var reduce_mean(Var a);
  Var l2_norm(Var a);                             // sqrt(sum of squares)

  // Loss composites (targets/weights are constants, not graph nodes) ----
  // (1 / rows) * sum_i w[i] * sum_{j<3} |pred[i, 3j..3j+2] - tgt|_2
  Var loss_weighted_offsets(Var pred, const Tensor& target,
                            const Tensor& weights);
  // mean over rows of sqrt(mean_c (pred - tgt)^2): rows grouped as samples.
  Var loss_rowwise_rmse(Var pred, const Tensor& target);
  // mean over rows of (1 - cos(pred_row, tgt_row)); rows whose pred or tgt
  // norm is below 1e-9 contribute 0.
  Var loss_cosine_gap(Var pred, const Tensor& target);
  // sqrt(mean over all entries of (pred - tgt)^2), one sqrt per row-block of
  // `block` rows, averaged: used for the confidence-map loss per sample.
  Var loss_blockwise_rmse(Var pred, const Tensor& target, int block_rows);

  // Execution -----------------------------------------------------------
  void backward(Var out);  // out must be scalar; throws NonScalarOutput

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  const Tensor& grad(Var v) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  // Finite checks after every op (NaN/Inf anywhere is an error state).
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    std::function<void(Tape&, Node&)> backward;
    bool needs_grad = false;
    bool grad_ready = false;
  };

  int check(Var v) const;
  Var push(Tensor value, std::vector<int> parents,
           std::function<void(Tape&, Node&)> backward);
  void ensure_grad(int id);
  Tensor& grad_buf(int id);

  std::vector<Node> nodes_;
  bool check_finite_ = true;

  friend struct TapeOps;
};

// Adam (adaptive moment estimation with bias correction).
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  long t = 0;
};

struct StepReport {
  bool applied = true;
  std::string message;
};

// One optimizer step over a parameter list.  A non-finite gradient rejects
// the whole step (parameters, moments and step count untouched) and reports.
StepReport adam_step(const std::vector<Tensor*>& params,
                     const std::vector<const Tensor*>& grads, AdamState& state,
                     const AdamConfig& cfg);

}  // namespace peghole::net
