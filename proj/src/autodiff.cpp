#include "notecode/autodiff.hpp"

#include <cmath>
#include <utility>

namespace notecode::ad {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

int Tape::push(Matrix value, bool requires_grad,
               std::function<void(Tape&)> fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(fn);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  return Var{push(std::move(value), requires_grad, nullptr)};
}

const Matrix& Tape::val(Var v) const { return nodes_.at(v.id).value; }

const Matrix& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.grad_alloc) {
    static const Matrix empty;
    if (n.grad.size() == 0 && n.value.size() != 0) {
      // Grad never touched: report zeros of the right shape lazily.
      const_cast<Node&>(n).grad = Matrix::Zero(n.value.rows(), n.value.cols());
      const_cast<Node&>(n).grad_alloc = true;
    } else if (n.value.size() == 0) {
      return empty;
    }
  }
  return n.grad;
}

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  if (!nodes_[id].requires_grad) return;
  grad_ref(id) += g;
}

Var Tape::add(Var a, Var b) {
  check_same_shape(val(a), val(b), "add");
  Matrix out = val(a) + val(b);
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  };
  return Var{id};
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(val(a), val(b), "sub");
  Matrix out = val(a) - val(b);
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    t.accumulate(a.id, g);
    if (t.nodes_[b.id].requires_grad) t.grad_ref(b.id) -= g;
  };
  return Var{id};
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(val(a), val(b), "mul");
  Matrix out = val(a).cwiseProduct(val(b));
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    if (t.nodes_[a.id].requires_grad)
      t.grad_ref(a.id) += g.cwiseProduct(t.val(b));
    if (t.nodes_[b.id].requires_grad)
      t.grad_ref(b.id) += g.cwiseProduct(t.val(a));
  };
  return Var{id};
}

Var Tape::scale(Var a, double c) {
  Matrix out = val(a) * c;
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, c, id](Tape& t) {
    if (t.nodes_[a.id].requires_grad)
      t.grad_ref(a.id) += t.grad_ref(id) * c;
  };
  return Var{id};
}

Var Tape::matmul(Var a, Var b) {
  if (val(a).cols() != val(b).rows()) throw ShapeError("matmul: inner dims");
  Matrix out = val(a) * val(b);
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    if (t.nodes_[a.id].requires_grad)
      t.grad_ref(a.id) += g * t.val(b).transpose();
    if (t.nodes_[b.id].requires_grad)
      t.grad_ref(b.id) += t.val(a).transpose() * g;
  };
  return Var{id};
}

Var Tape::matmul_nt(Var a, Var b) {
  if (val(a).cols() != val(b).cols())
    throw ShapeError("matmul_nt: inner dims");
  Matrix out = val(a) * val(b).transpose();
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    if (t.nodes_[a.id].requires_grad) t.grad_ref(a.id) += g * t.val(b);
    if (t.nodes_[b.id].requires_grad)
      t.grad_ref(b.id) += g.transpose() * t.val(a);
  };
  return Var{id};
}

Var Tape::add_row_broadcast(Var x, Var row) {
  if (val(row).rows() != 1 || val(row).cols() != val(x).cols())
    throw ShapeError("add_row_broadcast: row must be 1 x cols(x)");
  Matrix out = val(x).rowwise() + val(row).row(0);
  bool rg = requires_grad(x) || requires_grad(row);
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [x, row, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    t.accumulate(x.id, g);
    if (t.nodes_[row.id].requires_grad)
      t.grad_ref(row.id) += g.colwise().sum();
  };
  return Var{id};
}

Var Tape::relu(Var a) {
  Matrix out = val(a).cwiseMax(0.0);
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, id](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    const Matrix& g = t.grad_ref(id);
    const Matrix& x = t.val(a);
    t.grad_ref(a.id).array() += g.array() * (x.array() > 0.0).cast<double>();
  };
  return Var{id};
}

Var Tape::sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, id](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    const Matrix& g = t.grad_ref(id);
    const Matrix& y = t.nodes_[id].value;
    t.grad_ref(a.id).array() +=
        g.array() * y.array() * (1.0 - y.array());
  };
  return Var{id};
}

Var Tape::tanh_fn(Var a) {
  Matrix out = val(a).array().tanh().matrix();
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, id](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    const Matrix& g = t.grad_ref(id);
    const Matrix& y = t.nodes_[id].value;
    t.grad_ref(a.id).array() += g.array() * (1.0 - y.array().square());
  };
  return Var{id};
}

Var Tape::softmax_rows(Var a, const BoolMask* allowed) {
  const Matrix& x = val(a);
  if (allowed &&
      (allowed->rows() != x.rows() || allowed->cols() != x.cols()))
    throw ShapeError("softmax_rows: mask shape mismatch");
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (allowed && !(*allowed)(r, c)) continue;
      any = true;
      mx = std::max(mx, x(r, c));
    }
    if (!any) continue;  // row stays exactly zero
    double s = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (allowed && !(*allowed)(r, c)) continue;
      double e = std::exp(x(r, c) - mx);
      out(r, c) = e;
      s += e;
    }
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) /= s;
  }
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, id](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    const Matrix& g = t.grad_ref(id);
    const Matrix& y = t.nodes_[id].value;
    // dx = y .* (g - rowsum(g .* y)); zero rows and masked entries
    // contribute nothing because y is zero there.
    Eigen::VectorXd dot = (g.cwiseProduct(y)).rowwise().sum();
    t.grad_ref(a.id) +=
        y.cwiseProduct(g - dot.replicate(1, y.cols()));
  };
  return Var{id};
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = val(x);
  if (val(gain).rows() != 1 || val(gain).cols() != xv.cols() ||
      val(bias).rows() != 1 || val(bias).cols() != xv.cols())
    throw ShapeError("layer_norm_rows: gain/bias must be 1 x cols(x)");
  Eigen::Index C = xv.cols();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Matrix centered = xv - mu.replicate(1, C);
  Eigen::VectorXd var =
      centered.array().square().matrix().rowwise().mean();
  Eigen::VectorXd inv_sigma = (var.array() + eps).sqrt().inverse();
  Matrix xhat = centered.array().colwise() * inv_sigma.array();
  Matrix out = (xhat.array().rowwise() * val(gain).row(0).array())
                   .rowwise() +
               val(bias).row(0).array();
  bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  int id = push(out.matrix(), rg, nullptr);
  // Cache what backward needs by value.
  nodes_[id].backprop = [x, gain, bias, id, xhat, inv_sigma](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    Eigen::Index C = xhat.cols();
    if (t.nodes_[gain.id].requires_grad)
      t.grad_ref(gain.id) += (g.cwiseProduct(xhat)).colwise().sum();
    if (t.nodes_[bias.id].requires_grad)
      t.grad_ref(bias.id) += g.colwise().sum();
    if (t.nodes_[x.id].requires_grad) {
      Matrix gy = g.array().rowwise() * t.val(gain).row(0).array();
      Eigen::VectorXd mean_gy = gy.rowwise().mean();
      Eigen::VectorXd mean_gy_xhat =
          (gy.cwiseProduct(xhat)).rowwise().mean();
      Matrix dx = gy - mean_gy.replicate(1, C) -
                  xhat.cwiseProduct(mean_gy_xhat.replicate(1, C));
      dx = dx.array().colwise() * inv_sigma.array();
      t.grad_ref(x.id) += dx;
    }
  };
  return Var{id};
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  const Matrix& x = val(a);
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows())
      throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, id, rows = std::move(rows)](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    const Matrix& g = t.grad_ref(id);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < rows.size(); ++i)
      ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  };
  return Var{id};
}

Var Tape::vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vconcat: empty input");
  Eigen::Index cols = val(parts[0]).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    if (val(p).cols() != cols) throw ShapeError("vconcat: column mismatch");
    rows += val(p).rows();
    rg = rg || requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, val(p).rows()) = val(p);
    at += val(p).rows();
  }
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [parts, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    Eigen::Index at = 0;
    for (Var p : parts) {
      Eigen::Index r = t.val(p).rows();
      if (t.nodes_[p.id].requires_grad)
        t.grad_ref(p.id) += g.middleRows(at, r);
      at += r;
    }
  };
  return Var{id};
}

Var Tape::hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hconcat: empty input");
  Eigen::Index rows = val(parts[0]).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (val(p).rows() != rows) throw ShapeError("hconcat: row mismatch");
    cols += val(p).cols();
    rg = rg || requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, val(p).cols()) = val(p);
    at += val(p).cols();
  }
  int id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [parts, id](Tape& t) {
    const Matrix& g = t.grad_ref(id);
    Eigen::Index at = 0;
    for (Var p : parts) {
      Eigen::Index c = t.val(p).cols();
      if (t.nodes_[p.id].requires_grad)
        t.grad_ref(p.id) += g.middleCols(at, c);
      at += c;
    }
  };
  return Var{id};
}

Var Tape::cols(Var a, int first, int count) {
  const Matrix& x = val(a);
  if (first < 0 || count < 0 || first + count > x.cols())
    throw ShapeError("cols: slice out of range");
  Matrix out = x.middleCols(first, count);
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, first, count, id](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    t.grad_ref(a.id).middleCols(first, count) += t.grad_ref(id);
  };
  return Var{id};
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = val(a).sum();
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, id](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    t.grad_ref(a.id).array() += t.grad_ref(id)(0, 0);
  };
  return Var{id};
}

Var Tape::dropout(Var a, double rate, bool training, SplitMix64& rng) {
  if (!training || rate == 0.0) return a;
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate in [0,1)");
  const Matrix& x = val(a);
  Matrix mask(x.rows(), x.cols());
  double keep = 1.0 - rate;
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      mask(r, c) = rng.next_unit() < keep ? 1.0 / keep : 0.0;
  Matrix out = x.cwiseProduct(mask);
  int id = push(std::move(out), requires_grad(a), nullptr);
  nodes_[id].backprop = [a, id, mask = std::move(mask)](Tape& t) {
    if (!t.nodes_[a.id].requires_grad) return;
    t.grad_ref(a.id) += t.grad_ref(id).cwiseProduct(mask);
  };
  return Var{id};
}

Var Tape::scalar_with_grad(Var input, double value, Matrix grad_wrt_input) {
  check_same_shape(val(input), grad_wrt_input, "scalar_with_grad");
  Matrix out(1, 1);
  out(0, 0) = value;
  int id = push(std::move(out), requires_grad(input), nullptr);
  nodes_[id].backprop = [input, id, g = std::move(grad_wrt_input)](Tape& t) {
    if (!t.nodes_[input.id].requires_grad) return;
    t.grad_ref(input.id) += t.grad_ref(id)(0, 0) * g;
  };
  return Var{id};
}

void Tape::backward(Var scalar_output) {
  const Matrix& v = val(scalar_output);
  if (v.rows() != 1 || v.cols() != 1)
    throw ShapeError("backward: output must be 1x1");
  grad_ref(scalar_output.id)(0, 0) = 1.0;
  for (int i = scalar_output.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backprop || !n.grad_alloc) continue;
    n.backprop(*this);
  }
}

}  // namespace notecode::ad
