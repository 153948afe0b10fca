#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "notecode/nn.hpp"

using namespace notecode;
using ad::BoolMask;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix rmat(int rows, int cols, SplitMix64& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = scale * (2.0 * rng.next_unit() - 1.0);
  return m;
}

// Finite-difference check over every parameter of a store-driven graph.
void check_param_gradients(
    const nn::ParamStore& store, const Matrix& x,
    const std::function<Var(Tape&, nn::Binding&, Var)>& build,
    double tol = 2e-5) {
  Tape tape;
  nn::Binding bind(tape, store);
  Var out = build(tape, bind, tape.constant(x));
  Var loss = tape.sum(tape.mul(out, out));  // sum of squares
  tape.backward(loss);
  auto grads = bind.grads();

  auto eval = [&](const nn::ParamStore& s) {
    Tape t;
    nn::Binding b(t, s, false);
    Var o = build(t, b, t.constant(x));
    return t.val(t.sum(t.mul(o, o)))(0, 0);
  };

  const double h = 1e-5;
  nn::ParamStore probe;
  for (const auto& [name, m] : store.entries()) probe.insert(name, m);
  for (const auto& [name, m] : store.entries()) {
    REQUIRE(grads.count(name) == 1);
    Matrix& target = probe.at(name);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        double saved = target(i, j);
        target(i, j) = saved + h;
        double up = eval(probe);
        target(i, j) = saved - h;
        double down = eval(probe);
        target(i, j) = saved;
        double fd = (up - down) / (2.0 * h);
        double an = grads[name](i, j);
        double denom = std::max({std::abs(fd), std::abs(an), 1.0});
        CHECK(std::abs(fd - an) / denom < tol);
      }
  }
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("ParamStore basics") {
  nn::ParamStore s;
  s.insert("a", Matrix::Zero(2, 3));
  s.insert("b", Matrix::Ones(1, 4));
  CHECK(s.contains("a"));
  CHECK_FALSE(s.contains("c"));
  CHECK(s.scalar_count() == 10);
  CHECK_THROWS_AS(s.insert("a", Matrix::Zero(1, 1)), ConfigError);
  CHECK_THROWS_AS(s.at("missing"), LookupError);
}

TEST_CASE("Binding reuses one Var per name and reports grads") {
  nn::ParamStore s;
  SplitMix64 rng(1);
  s.insert("w", rmat(3, 3, rng));
  Tape t;
  nn::Binding b(t, s);
  Var w1 = b("w");
  Var w2 = b("w");
  CHECK(w1.id == w2.id);
  Var loss = t.sum(b("w"));
  t.backward(loss);
  auto g = b.grads();
  REQUIRE(g.count("w") == 1);
  CHECK((g["w"] - Matrix::Ones(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("uniform_init bounds follow fan-in") {
  SplitMix64 rng(2);
  Matrix m = nn::uniform_init(50, 40, 100, rng);
  double bound = 1.0 / std::sqrt(100.0);
  CHECK(m.maxCoeff() <= bound);
  CHECK(m.minCoeff() >= -bound);
  CHECK(m.cwiseAbs().maxCoeff() > 0.25 * bound);  // not all tiny
}

TEST_CASE("linear layers compute xW + b") {
  nn::ParamStore s;
  SplitMix64 rng(3);
  nn::init_linear(s, "fc", 4, 2, rng);
  Matrix x = rmat(3, 4, rng);
  Tape t;
  nn::Binding b(t, s);
  Var y = nn::linear(t, b, "fc", t.constant(x));
  Matrix expect = x * s.at("fc.W");
  expect.rowwise() += s.at("fc.b").row(0);
  CHECK((t.val(y) - expect).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((s.at("fc.b") - Matrix::Zero(1, 2)).cwiseAbs().maxCoeff() == 0.0);

  nn::ParamStore s2;
  nn::init_linear(s2, "proj", 4, 2, rng, /*bias=*/false);
  CHECK_FALSE(s2.contains("proj.b"));
  Tape t2;
  nn::Binding b2(t2, s2);
  Var y2 = nn::linear_no_bias(t2, b2, "proj", t2.constant(x));
  CHECK((t2.val(y2) - x * s2.at("proj.W")).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("feed_forward gradient check") {
  nn::ParamStore s;
  SplitMix64 rng(4);
  nn::init_linear(s, "ffn.ffn1", 5, 8, rng);
  nn::init_linear(s, "ffn.ffn2", 8, 5, rng);
  Matrix x = rmat(3, 5, rng);
  check_param_gradients(s, x, [](Tape& t, nn::Binding& b, Var x_) {
    return nn::feed_forward(t, b, "ffn", x_);
  });
}

TEST_CASE("layer_norm gradient check") {
  nn::ParamStore s;
  SplitMix64 rng(5);
  nn::init_layer_norm(s, "norm", 6);
  CHECK((s.at("norm.gain") - Matrix::Ones(1, 6)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((s.at("norm.bias") - Matrix::Zero(1, 6)).cwiseAbs().maxCoeff() == 0.0);
  // Move gain/bias off the init point so the check is not at a special value.
  s.at("norm.gain") = rmat(1, 6, rng).array().abs().matrix() + Matrix::Constant(1, 6, 0.5);
  s.at("norm.bias") = rmat(1, 6, rng);
  Matrix x = rmat(4, 6, rng, 2.0);
  check_param_gradients(s, x, [](Tape& t, nn::Binding& b, Var x_) {
    return nn::layer_norm(t, b, "norm", x_);
  });
}

TEST_CASE("multi_head_attention shapes and gradient") {
  nn::ParamStore s;
  SplitMix64 rng(6);
  nn::init_attention(s, "attn", 8, rng);
  Matrix x = rmat(5, 8, rng);
  Tape t;
  nn::Binding b(t, s);
  Var y = nn::multi_head_attention(t, b, "attn", t.constant(x), t.constant(x),
                                   2, nullptr);
  CHECK(t.val(y).rows() == 5);
  CHECK(t.val(y).cols() == 8);
  check_param_gradients(s, x, [](Tape& tt, nn::Binding& bb, Var x_) {
    return nn::multi_head_attention(tt, bb, "attn", x_, x_, 2, nullptr);
  });
}

TEST_CASE("attention head count must divide width") {
  nn::ParamStore s;
  SplitMix64 rng(7);
  nn::init_attention(s, "attn", 8, rng);
  Matrix x = rmat(4, 8, rng);
  Tape t;
  nn::Binding b(t, s);
  CHECK_THROWS_AS(nn::multi_head_attention(t, b, "attn", t.constant(x),
                                           t.constant(x), 3, nullptr),
                  ConfigError);
}

TEST_CASE("causal attention output is bitwise-independent of later rows") {
  nn::ParamStore s;
  SplitMix64 rng(8);
  nn::init_attention(s, "attn", 8, rng);
  Matrix x = rmat(6, 8, rng);
  BoolMask mask = nn::causal_mask(6);

  auto run = [&](const Matrix& input) {
    Tape t;
    nn::Binding b(t, s, false);
    Var y = nn::multi_head_attention(t, b, "attn", t.constant(input),
                                     t.constant(input), 2, &mask);
    return Matrix(t.val(y));
  };
  Matrix base = run(x);
  Matrix perturbed_in = x;
  perturbed_in.row(4).array() += 17.0;  // rows 0..3 must not budge
  Matrix perturbed = run(perturbed_in);
  for (int r = 0; r < 4; ++r)
    CHECK((base.row(r) - perturbed.row(r)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((base.row(4) - perturbed.row(4)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("encoder_layer gradient check") {
  nn::ParamStore s;
  SplitMix64 rng(9);
  nn::init_encoder_layer(s, "enc", 6, 12, rng);
  Matrix x = rmat(4, 6, rng);
  BoolMask mask = nn::causal_mask(4);
  check_param_gradients(
      s, x,
      [&](Tape& t, nn::Binding& b, Var x_) {
        return nn::encoder_layer(t, b, "enc", x_, 2, &mask);
      },
      5e-5);
}

TEST_CASE("decoder_layer gradient check and causality") {
  nn::ParamStore s;
  SplitMix64 rng(10);
  nn::init_decoder_layer(s, "dec", 6, 12, rng);
  Matrix target = rmat(4, 6, rng);
  Matrix memory = rmat(4, 6, rng);
  BoolMask self_mask = nn::causal_mask(4);
  BoolMask cross_mask = nn::causal_mask(4, 4);

  check_param_gradients(
      s, target,
      [&](Tape& t, nn::Binding& b, Var tgt) {
        return nn::decoder_layer(t, b, "dec", tgt, t.constant(memory), 2,
                                 &self_mask, &cross_mask);
      },
      5e-5);

  auto run = [&](const Matrix& tgt, const Matrix& mem) {
    Tape t;
    nn::Binding b(t, s, false);
    Var y = nn::decoder_layer(t, b, "dec", t.constant(tgt), t.constant(mem),
                              2, &self_mask, &cross_mask);
    return Matrix(t.val(y));
  };
  Matrix base = run(target, memory);
  Matrix mem2 = memory;
  mem2.row(3).array() += 5.0;  // only position 3 may change
  Matrix out2 = run(target, mem2);
  for (int r = 0; r < 3; ++r)
    CHECK((base.row(r) - out2.row(r)).cwiseAbs().maxCoeff() == 0.0);
  Matrix tgt2 = target;
  tgt2.row(2).array() -= 3.0;  // positions 0,1 may not change
  Matrix out3 = run(tgt2, memory);
  for (int r = 0; r < 2; ++r)
    CHECK((base.row(r) - out3.row(r)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sinusoidal_positions structure") {
  Matrix pe = nn::sinusoidal_positions(10, 8);
  CHECK(pe.rows() == 10);
  CHECK(pe.cols() == 8);
  // Position 0: sin(0)=0 on even columns, cos(0)=1 on odd columns.
  for (int c = 0; c < 8; c += 2) CHECK(pe(0, c) == 0.0);
  for (int c = 1; c < 8; c += 2) CHECK(pe(0, c) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe(1, 1) == doctest::Approx(std::cos(1.0)));
  // Wavelength grows along the feature axis.
  CHECK(pe(1, 6) == doctest::Approx(std::sin(1.0 / std::pow(10000.0, 6.0 / 8.0))));
  CHECK(pe.array().abs().maxCoeff() <= 1.0);
}

TEST_CASE("causal_mask shape and content") {
  BoolMask m = nn::causal_mask(3);
  REQUIRE(m.rows() == 3);
  REQUIRE(m.cols() == 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(m(r, c) == (c <= r));
  BoolMask rect = nn::causal_mask(2, 5);
  CHECK(rect.rows() == 2);
  CHECK(rect.cols() == 5);
  CHECK(rect(1, 1));
  CHECK_FALSE(rect(1, 2));
}

}  // TEST_SUITE
