#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "notecode/common.hpp"

namespace notecode::ad {

using Matrix = Eigen::MatrixXd;
using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended during the forward pass; backward()
// walks them once in reverse. Values are double precision throughout.
class Tape {
 public:
  Var leaf(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  const Matrix& val(Var v) const;
  // Zero matrix until backward() has run.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const;

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  // x (R x C) plus a 1 x C row repeated over every row.
  Var add_row_broadcast(Var x, Var row);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var tanh_fn(Var a);
  // Row softmax restricted to `allowed` entries; disallowed entries are
  // exactly zero in the output. A row with no allowed entries stays all-zero.
  Var softmax_rows(Var a, const BoolMask* allowed = nullptr);
  // Per-row layer norm with learned gain/bias (both 1 x C).
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
  Var gather_rows(Var a, std::vector<int> rows);
  Var vconcat(const std::vector<Var>& parts);
  Var hconcat(const std::vector<Var>& parts);
  Var cols(Var a, int first, int count);
  Var sum(Var a);  // 1 x 1
  // Inverted dropout; identity when !training or rate == 0.
  Var dropout(Var a, double rate, bool training, SplitMix64& rng);
  // Scalar node with a precomputed gradient wrt `input`; used by losses whose
  // value and gradient are computed eagerly.
  Var scalar_with_grad(Var input, double value, Matrix grad_wrt_input);

  void backward(Var scalar_output);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape&)> backprop;
  };

  Matrix& grad_ref(int id);
  void accumulate(int id, const Matrix& g);
  int push(Matrix value, bool requires_grad, std::function<void(Tape&)> fn);

  std::vector<Node> nodes_;
  friend class GradCapture;
};

}  // namespace notecode::ad
