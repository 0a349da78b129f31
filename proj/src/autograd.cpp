#include "mvmae/autograd.hpp"

#include "mvmae/errors.hpp"

#include <cmath>
#include <numbers>

namespace mvmae::ag {

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, record_, &p, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  const bool keep = record_ && requires_grad;
  nodes_.push_back(Node{std::move(value), {}, keep, nullptr, keep ? std::move(backward) : nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  if (!record_) throw InternalError("backward() on a non-recording tape");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  int top = -1;
  for (const auto& [v, g] : seeds) {
    if (g.rows() != value(v).rows() || g.cols() != value(v).cols()) {
      throw InternalError("backward seed shape mismatch");
    }
    accumulate(v, g);
    top = std::max(top, v.id);
  }
  for (int i = top; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) {
        n.param->grad = n.grad;
      } else {
        n.param->grad += n.grad;
      }
    }
  }
}

void Tape::backward(Var scalar) {
  const std::pair<Var, Matrix> seed{scalar, Matrix::Ones(1, 1)};
  backward(std::span(&seed, 1));
}

Var add(Tape& t, Var a, Var b) {
  return t.push(t.value(a) + t.value(b), t.requires_grad(a) || t.requires_grad(b),
                [a, b](Tape& tp, const Matrix& g) {
                  tp.accumulate(a, g);
                  tp.accumulate(b, g);
                });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, t.requires_grad(a),
                [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

Var matmul(Tape& t, Var a, Var b) {
  return t.push(t.value(a) * t.value(b), t.requires_grad(a) || t.requires_grad(b),
                [a, b](Tape& tp, const Matrix& g) {
                  if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
                  if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
                });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  Matrix out = t.value(x) * t.value(w);
  out.rowwise() += t.value(b).row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  return t.push(std::move(out), rg, [x, w, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(w).transpose());
    if (tp.requires_grad(w)) tp.accumulate(w, tp.value(x).transpose() * g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = t.value(x);
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  Matrix xhat(n, d);
  Vector inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat.array().rowwise() * t.value(gamma).row(0).array();
  out.rowwise() += t.value(beta).row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  return t.push(std::move(out), rg,
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& tp, const Matrix& g) {
                  if (tp.requires_grad(gamma)) {
                    tp.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                  }
                  if (tp.requires_grad(beta)) tp.accumulate(beta, g.colwise().sum());
                  if (!tp.requires_grad(x)) return;
                  const Matrix dxhat = g.array().rowwise() * tp.value(gamma).row(0).array();
                  Matrix dx(g.rows(), g.cols());
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                    dx.row(r) =
                        (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                  }
                  tp.accumulate(x, dx);
                });
}

Var gelu(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = xv.unaryExpr([inv_sqrt2](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  return t.push(std::move(out), t.requires_grad(x), [x, inv_sqrt2](Tape& tp, const Matrix& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const Matrix d = tp.value(x).unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    tp.accumulate(x, g.cwiseProduct(d));
  });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const Eigen::Index n = qv.rows();
  const Eigen::Index d = qv.cols();
  if (heads <= 0 || d % heads != 0) throw InternalError("attention: width not divisible by heads");
  const Eigen::Index hd = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(n, d);
  for (int h = 0; h < heads; ++h) {
    Matrix s = (qv.middleCols(h * hd, hd) * kv.middleCols(h * hd, hd).transpose()) * sc;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
    out.middleCols(h * hd, hd) = s * vv.middleCols(h * hd, hd);
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.push(std::move(out), rg,
                [q, k, v, heads, hd, sc, probs = std::move(probs)](Tape& tp, const Matrix& g) {
                  const Matrix& qv = tp.value(q);
                  const Matrix& kv = tp.value(k);
                  const Matrix& vv = tp.value(v);
                  Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
                  Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
                  Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
                  for (int h = 0; h < heads; ++h) {
                    const Matrix& p = probs[static_cast<std::size_t>(h)];
                    const auto gh = g.middleCols(h * hd, hd);
                    dv.middleCols(h * hd, hd) = p.transpose() * gh;
                    const Matrix dp = gh * vv.middleCols(h * hd, hd).transpose();
                    Matrix ds = p.cwiseProduct(dp);
                    const Vector rowdot = ds.rowwise().sum();
                    ds -= p.cwiseProduct(rowdot.replicate(1, p.cols()));
                    dq.middleCols(h * hd, hd) = (ds * kv.middleCols(h * hd, hd)) * sc;
                    dk.middleCols(h * hd, hd) = (ds.transpose() * qv.middleCols(h * hd, hd)) * sc;
                  }
                  tp.accumulate(q, dq);
                  tp.accumulate(k, dk);
                  tp.accumulate(v, dv);
                });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts.front()).cols();
  bool rg = false;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw InternalError("concat_rows: column mismatch");
    rows += t.value(p).rows();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [ps = std::move(ps)](Tape& tp, const Matrix& g) {
    Eigen::Index at = 0;
    for (Var p : ps) {
      const Eigen::Index r = tp.value(p).rows();
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleRows(at, r));
      at += r;
    }
  });
}

Var gather_rows(Tape& t, Var x, std::span<const int> rows) {
  const Matrix& xv = t.value(x);
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) throw InternalError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return t.push(std::move(out), t.requires_grad(x), [x, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(tp.value(x).rows(), tp.value(x).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(x, dx);
  });
}

Var slice_cols(Tape& t, Var x, int start, int count) {
  return t.push(t.value(x).middleCols(start, count), t.requires_grad(x),
                [x, start, count](Tape& tp, const Matrix& g) {
                  Matrix dx = Matrix::Zero(tp.value(x).rows(), tp.value(x).cols());
                  dx.middleCols(start, count) = g;
                  tp.accumulate(x, dx);
                });
}

}  // namespace mvmae::ag
