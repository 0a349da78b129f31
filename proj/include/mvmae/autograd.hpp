#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records one forward computation. Every op appends a node holding
// its value and, when recording, a closure that pushes the node's gradient
// into its inputs. Parameters live outside the tape; their gradients are
// accumulated into Parameter::grad when backward() reaches their leaf.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace mvmae::ag {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Handle to a node of a Tape. Only meaningful for the tape that created it.
struct Var {
  int id = -1;
};

class Tape {
 public:
  /// With `record == false` no backward closures are stored (inference).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Matrix value);
  /// Differentiable input whose gradient can be read back with grad().
  Var leaf(Matrix value);
  Var param(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward pass; zeros if the node was not reached.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(objective)/d(node) for each (node, seed) pair and sweeps the
  /// tape in reverse. Parameter gradients are added to Parameter::grad.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);
  /// Scalar convenience: seeds a 1x1 node with 1.
  void backward(Var scalar);

  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;
  /// Appends an op result. `backward` is dropped unless recording and at
  /// least one input requires a gradient (`requires_grad`).
  Var push(Matrix value, bool requires_grad, Backward backward);
  /// Adds `g` into the gradient buffer of `v` if it requires a gradient.
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  bool record_;
  std::vector<Node> nodes_;
};

// Ops. Shapes follow the "rows are tokens" convention.
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var matmul(Tape& t, Var a, Var b);
/// x * w + b, with b a 1 x out row broadcast over rows.
Var linear(Tape& t, Var x, Var w, Var b);
/// Row-wise layer normalization with affine gamma/beta (1 x d each).
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-6);
/// Exact (erf) GELU.
Var gelu(Tape& t, Var x);
/// Multi-head scaled dot-product attention. q, k, v are n x d with heads
/// laid out as contiguous column blocks of width d / heads.
Var attention(Tape& t, Var q, Var k, Var v, int heads);
Var concat_rows(Tape& t, std::span<const Var> parts);
/// Row gather; repeated indices are allowed and their gradients summed.
Var gather_rows(Tape& t, Var x, std::span<const int> rows);
Var slice_cols(Tape& t, Var x, int start, int count);

}  // namespace mvmae::ag
