#include "peghole/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

namespace peghole::net {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(t.numel(), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {1};
  t.data = {v};
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  Tensor t;
  t.shape = {1, static_cast<int>(v.size())};
  t.data = std::move(v);
  return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
  if (static_cast<int>(v.size()) != rows * cols)
    throw ShapeMismatch("Tensor::matrix: data size mismatch");
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(v);
  return t;
}

int Tensor::rows() const {
  if (shape.size() != 2) throw ShapeMismatch("Tensor::rows: not 2-D");
  return shape[0];
}

int Tensor::cols() const {
  if (shape.size() != 2) throw ShapeMismatch("Tensor::cols: not 2-D");
  return shape[1];
}

double Tensor::scalar_value() const {
  if (!is_scalar()) throw ShapeMismatch("Tensor::scalar_value: not scalar");
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------

int Tape::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ShapeMismatch("Tape: variable does not belong to this tape");
  return v.id;
}

Var Tape::push(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, Node&)> backward) {
  if (check_finite_ && !value.all_finite())
    throw NonFinite("Tape: operation produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  for (int p : n.parents)
    if (nodes_[p].needs_grad) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Tensor& t) { return leaf(t, t.requires_grad); }

Var Tape::leaf(const Tensor& t, bool requires_grad) {
  if (check_finite_ && !t.all_finite())
    throw NonFinite("Tape: leaf holds a non-finite value");
  Node n;
  n.value = t;
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::ensure_grad(int id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_ready = true;
  }
}

Tensor& Tape::grad_buf(int id) {
  ensure_grad(id);
  return nodes_[id].grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  if (!n.grad_ready)
    throw ShapeMismatch("Tape::grad: no gradient recorded for this variable");
  return n.grad;
}

namespace {

void require_2d(const Tensor& t, const char* who) {
  if (t.shape.size() != 2) throw ShapeMismatch(std::string(who) + ": expected 2-D tensor");
}

}  // namespace

Var Tape::matmul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dims differ");
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  MapMat(out.data.data(), out.rows(), out.cols()).noalias() =
      CMapMat(a.data.data(), a.rows(), a.cols()) *
      CMapMat(b.data.data(), b.rows(), b.cols());
  const int ai = av.id, bi = bv.id;
  return push(std::move(out), {ai, bi}, [ai, bi](Tape& t, Node& self) {
    const Tensor& a = t.nodes_[ai].value;
    const Tensor& b = t.nodes_[bi].value;
    CMapMat g(self.grad.data.data(), self.grad.rows(), self.grad.cols());
    if (t.nodes_[ai].needs_grad) {
      Tensor& ga = t.grad_buf(ai);
      MapMat(ga.data.data(), ga.rows(), ga.cols()).noalias() +=
          g * CMapMat(b.data.data(), b.rows(), b.cols()).transpose();
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& gb = t.grad_buf(bi);
      MapMat(gb.data.data(), gb.rows(), gb.cols()).noalias() +=
          CMapMat(a.data.data(), a.rows(), a.cols()).transpose() * g;
    }
  });
}

Var Tape::linear(Var xv, Var wv, Var bv) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  const Tensor& b = value(bv);
  require_2d(x, "linear");
  require_2d(w, "linear");
  if (x.cols() != w.rows()) throw ShapeMismatch("linear: inner dims differ");
  if (b.numel() != w.cols()) throw ShapeMismatch("linear: bias width mismatch");
  Tensor out = Tensor::zeros({x.rows(), w.cols()});
  {
    MapMat o(out.data.data(), out.rows(), out.cols());
    o.noalias() = CMapMat(x.data.data(), x.rows(), x.cols()) *
                  CMapMat(w.data.data(), w.rows(), w.cols());
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), b.numel());
  }
  const int xi = xv.id, wi = wv.id, bi = bv.id;
  return push(std::move(out), {xi, wi, bi}, [xi, wi, bi](Tape& t, Node& self) {
    const Tensor& x = t.nodes_[xi].value;
    const Tensor& w = t.nodes_[wi].value;
    CMapMat g(self.grad.data.data(), self.grad.rows(), self.grad.cols());
    if (t.nodes_[xi].needs_grad) {
      Tensor& gx = t.grad_buf(xi);
      MapMat(gx.data.data(), gx.rows(), gx.cols()).noalias() +=
          g * CMapMat(w.data.data(), w.rows(), w.cols()).transpose();
    }
    if (t.nodes_[wi].needs_grad) {
      Tensor& gw = t.grad_buf(wi);
      MapMat(gw.data.data(), gw.rows(), gw.cols()).noalias() +=
          CMapMat(x.data.data(), x.rows(), x.cols()).transpose() * g;
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& gb = t.grad_buf(bi);
      Eigen::Map<Eigen::RowVectorXd>(gb.data.data(), gb.numel()) +=
          g.colwise().sum();
    }
  });
}

Var Tape::add(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (!a.same_shape(b)) throw ShapeMismatch("add: shape mismatch");
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  const int ai = av.id, bi = bv.id;
  return push(std::move(out), {ai, bi}, [ai, bi](Tape& t, Node& self) {
    for (int p : {ai, bi}) {
      if (!t.nodes_[p].needs_grad) continue;
      Tensor& gp = t.grad_buf(p);
      for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += self.grad.data[i];
    }
  });
}

Var Tape::sub(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (!a.same_shape(b)) throw ShapeMismatch("sub: shape mismatch");
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  const int ai = av.id, bi = bv.id;
  return push(std::move(out), {ai, bi}, [ai, bi](Tape& t, Node& self) {
    if (t.nodes_[ai].needs_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self.grad.data[i];
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= self.grad.data[i];
    }
  });
}

Var Tape::mul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (!a.same_shape(b)) throw ShapeMismatch("mul: shape mismatch");
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  const int ai = av.id, bi = bv.id;
  return push(std::move(out), {ai, bi}, [ai, bi](Tape& t, Node& self) {
    const Tensor& a = t.nodes_[ai].value;
    const Tensor& b = t.nodes_[bi].value;
    if (t.nodes_[ai].needs_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (size_t i = 0; i < ga.data.size(); ++i)
        ga.data[i] += self.grad.data[i] * b.data[i];
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (size_t i = 0; i < gb.data.size(); ++i)
        gb.data[i] += self.grad.data[i] * a.data[i];
    }
  });
}

Var Tape::scale(Var av, double s) {
  Tensor out = value(av);
  for (double& v : out.data) v *= s;
  const int ai = av.id;
  return push(std::move(out), {ai}, [ai, s](Tape& t, Node& self) {
    if (!t.nodes_[ai].needs_grad) return;
    Tensor& ga = t.grad_buf(ai);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += self.grad.data[i] * s;
  });
}

Var Tape::relu(Var av) {
  Tensor out = value(av);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  const int ai = av.id;
  return push(std::move(out), {ai}, [ai](Tape& t, Node& self) {
    if (!t.nodes_[ai].needs_grad) return;
    const Tensor& a = t.nodes_[ai].value;
    Tensor& ga = t.grad_buf(ai);
    for (size_t i = 0; i < ga.data.size(); ++i)
      if (a.data[i] > 0.0) ga.data[i] += self.grad.data[i];
  });
}

Var Tape::sigmoid(Var av) {
  Tensor out = value(av);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  const int ai = av.id;
  Tensor saved = out;  // y values for the backward pass
  return push(std::move(out), {ai},
              [ai, saved = std::move(saved)](Tape& t, Node& self) {
                if (!t.nodes_[ai].needs_grad) return;
                Tensor& ga = t.grad_buf(ai);
                for (size_t i = 0; i < ga.data.size(); ++i) {
                  const double y = saved.data[i];
                  ga.data[i] += self.grad.data[i] * y * (1.0 - y);
                }
              });
}

Var Tape::concat_cols(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  if (a.rows() != b.rows()) throw ShapeMismatch("concat_cols: row mismatch");
  const int r = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out = Tensor::zeros({r, ca + cb});
  for (int i = 0; i < r; ++i) {
    std::copy_n(&a.data[i * ca], ca, &out.data[i * (ca + cb)]);
    std::copy_n(&b.data[i * cb], cb, &out.data[i * (ca + cb) + ca]);
  }
  const int ai = av.id, bi = bv.id;
  return push(std::move(out), {ai, bi}, [ai, bi, r, ca, cb](Tape& t, Node& self) {
    if (t.nodes_[ai].needs_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < ca; ++j)
          ga.data[i * ca + j] += self.grad.data[i * (ca + cb) + j];
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < cb; ++j)
          gb.data[i * cb + j] += self.grad.data[i * (ca + cb) + ca + j];
    }
  });
}

Var Tape::gather_rows(Var av, std::vector<int> index) {
  const Tensor& a = value(av);
  require_2d(a, "gather_rows");
  const int c = a.cols();
  for (int i : index)
    if (i < 0 || i >= a.rows()) throw ShapeMismatch("gather_rows: index out of range");
  Tensor out = Tensor::zeros({static_cast<int>(index.size()), c});
  for (size_t r = 0; r < index.size(); ++r)
    std::copy_n(&a.data[index[r] * c], c, &out.data[r * c]);
  const int ai = av.id;
  return push(std::move(out), {ai},
              [ai, idx = std::move(index), c](Tape& t, Node& self) {
                if (!t.nodes_[ai].needs_grad) return;
                Tensor& ga = t.grad_buf(ai);
                for (size_t r = 0; r < idx.size(); ++r)
                  for (int j = 0; j < c; ++j)
                    ga.data[idx[r] * c + j] += self.grad.data[r * c + j];
              });
}

Var Tape::group_max(Var av, int groups, int k) {
  const Tensor& a = value(av);
  require_2d(a, "group_max");
  if (a.rows() != groups * k) throw ShapeMismatch("group_max: rows != groups*k");
  const int c = a.cols();
  Tensor out = Tensor::zeros({groups, c});
  std::vector<int> argmax(static_cast<size_t>(groups) * c);
  for (int g = 0; g < groups; ++g)
    for (int j = 0; j < c; ++j) {
      int best = g * k;
      double bv = a.data[best * c + j];
      for (int r = 1; r < k; ++r) {
        const double v = a.data[(g * k + r) * c + j];
        if (v > bv) {
          bv = v;
          best = g * k + r;
        }
      }
      out.data[g * c + j] = bv;
      argmax[g * c + j] = best;
    }
  const int ai = av.id;
  return push(std::move(out), {ai},
              [ai, am = std::move(argmax), c](Tape& t, Node& self) {
                if (!t.nodes_[ai].needs_grad) return;
                Tensor& ga = t.grad_buf(ai);
                for (size_t i = 0; i < am.size(); ++i)
                  ga.data[am[i] * c + (i % c)] += self.grad.data[i];
              });
}

Var Tape::interp_rows(Var av, std::vector<std::array<int, 3>> nbr,
                      std::vector<std::array<double, 3>> w) {
  const Tensor& a = value(av);
  require_2d(a, "interp_rows");
  if (nbr.size() != w.size()) throw ShapeMismatch("interp_rows: nbr/w mismatch");
  const int c = a.cols();
  Tensor out = Tensor::zeros({static_cast<int>(nbr.size()), c});
  for (size_t r = 0; r < nbr.size(); ++r)
    for (int j = 0; j < c; ++j) {
      double s = 0.0;
      for (int q = 0; q < 3; ++q) s += w[r][q] * a.data[nbr[r][q] * c + j];
      out.data[r * c + j] = s;
    }
  const int ai = av.id;
  return push(std::move(out), {ai},
              [ai, nbr = std::move(nbr), w = std::move(w), c](Tape& t, Node& self) {
                if (!t.nodes_[ai].needs_grad) return;
                Tensor& ga = t.grad_buf(ai);
                for (size_t r = 0; r < nbr.size(); ++r)
                  for (int j = 0; j < c; ++j) {
                    const double g = self.grad.data[r * c + j];
                    for (int q = 0; q < 3; ++q)
                      ga.data[nbr[r][q] * c + j] += w[r][q] * g;
                  }
              });
}

Var Tape::reduce_sum(Var av) {
  const Tensor& a = value(av);
  double s = 0.0;
  for (double v : a.data) s += v;
  const int ai = av.id;
  return push(Tensor::scalar(s), {ai}, [ai](Tape& t, Node& self) {
    if (!t.nodes_[ai].needs_grad) return;
    Tensor& ga = t.grad_buf(ai);
    const double g = self.grad.data[0];
    for (double& v : ga.data) v += g;
  });
}

Var Tape::reduce_mean(Var av) {
  const Tensor& a = value(av);
  const int n = a.numel();
  if (n == 0) throw ShapeMismatch("reduce_mean: empty tensor");
  double s = 0.0;
  for (double v : a.data) s += v;
  const int ai = av.id;
  return push(Tensor::scalar(s / n), {ai}, [ai, n](Tape& t, Node& self) {
    if (!t.nodes_[ai].needs_grad) return;
    Tensor& ga = t.grad_buf(ai);
    const double g = self.grad.data[0] / n;
    for (double& v : ga.data) v += g;
  });
}

Var Tape::l2_norm(Var av) {
  const Tensor& a = value(av);
  double s = 0.0;
  for (double v : a.data) s += v * v;
  const double norm = std::sqrt(s);
  const int ai = av.id;
  return push(Tensor::scalar(norm), {ai}, [ai, norm](Tape& t, Node& self) {
    if (!t.nodes_[ai].needs_grad) return;
    const Tensor& a = t.nodes_[ai].value;
    Tensor& ga = t.grad_buf(ai);
    const double g = self.grad.data[0] / std::max(norm, 1e-12);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g * a.data[i];
  });
}

Var Tape::loss_weighted_offsets(Var predv, const Tensor& target,
                                const Tensor& weights) {
  const Tensor& pred = value(predv);
  require_2d(pred, "loss_weighted_offsets");
  if (pred.cols() != 9) throw ShapeMismatch("loss_weighted_offsets: need 9 cols");
  if (!pred.same_shape(target))
    throw ShapeMismatch("loss_weighted_offsets: target shape mismatch");
  if (weights.numel() != pred.rows())
    throw ShapeMismatch("loss_weighted_offsets: weight count mismatch");
  const int n = pred.rows();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double rowsum = 0.0;
    for (int j = 0; j < 3; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = pred.data[i * 9 + j * 3 + c] - target.data[i * 9 + j * 3 + c];
        d2 += d * d;
      }
      rowsum += std::sqrt(d2);
    }
    loss += weights.data[i] * rowsum;
  }
  loss /= n;
  const int pi = predv.id;
  return push(Tensor::scalar(loss), {pi},
              [pi, target, weights, n](Tape& t, Node& self) {
                if (!t.nodes_[pi].needs_grad) return;
                const Tensor& pred = t.nodes_[pi].value;
                Tensor& gp = t.grad_buf(pi);
                const double g = self.grad.data[0] / n;
                for (int i = 0; i < n; ++i) {
                  const double w = weights.data[i];
                  if (w == 0.0) continue;
                  for (int j = 0; j < 3; ++j) {
                    double d[3];
                    double d2 = 0.0;
                    for (int c = 0; c < 3; ++c) {
                      d[c] = pred.data[i * 9 + j * 3 + c] -
                             target.data[i * 9 + j * 3 + c];
                      d2 += d[c] * d[c];
                    }
                    const double inv = 1.0 / std::max(std::sqrt(d2), 1e-12);
                    for (int c = 0; c < 3; ++c)
                      gp.data[i * 9 + j * 3 + c] += g * w * d[c] * inv;
                  }
                }
              });
}

Var Tape::loss_rowwise_rmse(Var predv, const Tensor& target) {
  const Tensor& pred = value(predv);
  require_2d(pred, "loss_rowwise_rmse");
  if (!pred.same_shape(target))
    throw ShapeMismatch("loss_rowwise_rmse: target shape mismatch");
  const int n = pred.rows(), c = pred.cols();
  std::vector<double> row_rmse(n);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = pred.data[i * c + j] - target.data[i * c + j];
      s += d * d;
    }
    row_rmse[i] = std::sqrt(s / c);
    loss += row_rmse[i];
  }
  loss /= n;
  const int pi = predv.id;
  return push(Tensor::scalar(loss), {pi},
              [pi, target, rr = std::move(row_rmse), n, c](Tape& t, Node& self) {
                if (!t.nodes_[pi].needs_grad) return;
                const Tensor& pred = t.nodes_[pi].value;
                Tensor& gp = t.grad_buf(pi);
                const double g = self.grad.data[0] / n;
                for (int i = 0; i < n; ++i) {
                  const double inv = 1.0 / (c * std::max(rr[i], 1e-12));
                  for (int j = 0; j < c; ++j)
                    gp.data[i * c + j] += g * inv * (pred.data[i * c + j] -
                                                     target.data[i * c + j]);
                }
              });
}

Var Tape::loss_cosine_gap(Var predv, const Tensor& target) {
  const Tensor& pred = value(predv);
  require_2d(pred, "loss_cosine_gap");
  if (!pred.same_shape(target))
    throw ShapeMismatch("loss_cosine_gap: target shape mismatch");
  const int n = pred.rows(), c = pred.cols();
  constexpr double kGuard = 1e-9;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double pp = 0.0, tt = 0.0, pt = 0.0;
    for (int j = 0; j < c; ++j) {
      pp += pred.data[i * c + j] * pred.data[i * c + j];
      tt += target.data[i * c + j] * target.data[i * c + j];
      pt += pred.data[i * c + j] * target.data[i * c + j];
    }
    const double np = std::sqrt(pp), nt = std::sqrt(tt);
    if (np < kGuard || nt < kGuard) continue;  // guarded term contributes 0
    loss += 1.0 - pt / (np * nt);
  }
  loss /= n;
  const int pi = predv.id;
  return push(Tensor::scalar(loss), {pi},
              [pi, target, n, c](Tape& t, Node& self) {
                if (!t.nodes_[pi].needs_grad) return;
                const Tensor& pred = t.nodes_[pi].value;
                Tensor& gp = t.grad_buf(pi);
                const double g = self.grad.data[0] / n;
                for (int i = 0; i < n; ++i) {
                  double pp = 0.0, tt = 0.0, pt = 0.0;
                  for (int j = 0; j < c; ++j) {
                    pp += pred.data[i * c + j] * pred.data[i * c + j];
                    tt += target.data[i * c + j] * target.data[i * c + j];
                    pt += pred.data[i * c + j] * target.data[i * c + j];
                  }
                  const double np = std::sqrt(pp), nt = std::sqrt(tt);
                  if (np < kGuard || nt < kGuard) continue;
                  // d/dp [1 - p.t/(|p||t|)] = -t/(|p||t|) + (p.t) p/(|p|^3 |t|)
                  for (int j = 0; j < c; ++j) {
                    const double p = pred.data[i * c + j];
                    const double tv = target.data[i * c + j];
                    gp.data[i * c + j] +=
                        g * (-tv / (np * nt) + pt * p / (np * np * np * nt));
                  }
                }
              });
}

Var Tape::loss_blockwise_rmse(Var predv, const Tensor& target, int block_rows) {
  const Tensor& pred = value(predv);
  require_2d(pred, "loss_blockwise_rmse");
  if (!pred.same_shape(target))
    throw ShapeMismatch("loss_blockwise_rmse: target shape mismatch");
  if (block_rows < 1 || pred.rows() % block_rows != 0)
    throw ShapeMismatch("loss_blockwise_rmse: rows not divisible by block");
  const int blocks = pred.rows() / block_rows;
  const int per_block = block_rows * pred.cols();
  std::vector<double> block_rmse(blocks);
  double loss = 0.0;
  for (int b = 0; b < blocks; ++b) {
    double s = 0.0;
    for (int k = 0; k < per_block; ++k) {
      const double d = pred.data[b * per_block + k] - target.data[b * per_block + k];
      s += d * d;
    }
    block_rmse[b] = std::sqrt(s / per_block);
    loss += block_rmse[b];
  }
  loss /= blocks;
  const int pi = predv.id;
  return push(Tensor::scalar(loss), {pi},
              [pi, target, br = std::move(block_rmse), blocks,
               per_block](Tape& t, Node& self) {
                if (!t.nodes_[pi].needs_grad) return;
                const Tensor& pred = t.nodes_[pi].value;
                Tensor& gp = t.grad_buf(pi);
                const double g = self.grad.data[0] / blocks;
                for (int b = 0; b < blocks; ++b) {
                  const double inv = 1.0 / (per_block * std::max(br[b], 1e-12));
                  for (int k = 0; k < per_block; ++k)
                    gp.data[b * per_block + k] +=
                        g * inv * (pred.data[b * per_block + k] -
                                   target.data[b * per_block + k]);
                }
              });
}

void Tape::backward(Var out) {
  const int oi = check(out);
  if (!nodes_[oi].value.is_scalar())
    throw NonScalarOutput("backward: output must be a scalar");
  ensure_grad(oi);
  nodes_[oi].grad.data[0] = 1.0;
  for (int i = oi; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.grad_ready || !n.backward) continue;
    n.backward(*this, n);
  }
  if (check_finite_) {
    for (const Node& n : nodes_)
      if (n.grad_ready && !n.grad.all_finite())
        throw NonFinite("backward: non-finite gradient");
  }
}

StepReport adam_step(const std::vector<Tensor*>& params,
                     const std::vector<const Tensor*>& grads, AdamState& state,
                     const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw ShapeMismatch("adam_step: param/grad count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape));
      state.v.push_back(Tensor::zeros(p->shape));
    }
  }
  if (state.m.size() != params.size())
    throw ShapeMismatch("adam_step: state size mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]))
      throw ShapeMismatch("adam_step: grad shape mismatch");
    if (!grads[i]->all_finite())
      return {false, "non-finite gradient: step rejected"};
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g.data[k];
      v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g.data[k] * g.data[k];
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      p.data[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  return {true, ""};
}

}  // namespace peghole::net
