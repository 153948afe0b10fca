#pragma once

#include <map>
#include <string>

#include "notecode/autodiff.hpp"

namespace notecode::nn {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// Named parameter store. std::map keeps iteration order stable, which the
// checkpoint format and averaging rely on.
class ParamStore {
 public:
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  void insert(const std::string& name, Matrix value);
  const std::map<std::string, Matrix>& entries() const { return params_; }
  std::map<std::string, Matrix>& entries() { return params_; }
  std::size_t scalar_count() const;

 private:
  std::map<std::string, Matrix> params_;
};

// Binds store parameters onto a tape on demand; after backward, gradients can
// be read back per name.
class Binding {
 public:
  Binding(Tape& tape, const ParamStore& store, bool requires_grad = true)
      : tape_(tape), store_(store), requires_grad_(requires_grad) {}

  Var operator()(const std::string& name);
  const std::map<std::string, Var>& bound() const { return bound_; }
  // Gradient of each bound parameter after tape.backward().
  std::map<std::string, Matrix> grads() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool requires_grad_;
  std::map<std::string, Var> bound_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, int fan_in,
                    SplitMix64& rng);

// Parameter registration. Forward functions look parameters up by the same
// names, so init and forward must use matching prefixes.
void init_linear(ParamStore& store, const std::string& prefix, int in,
                 int out, SplitMix64& rng, bool bias = true);
void init_layer_norm(ParamStore& store, const std::string& prefix, int dim);
void init_attention(ParamStore& store, const std::string& prefix, int dim,
                    SplitMix64& rng);
void init_encoder_layer(ParamStore& store, const std::string& prefix, int dim,
                        int ffn_dim, SplitMix64& rng);
void init_decoder_layer(ParamStore& store, const std::string& prefix, int dim,
                        int ffn_dim, SplitMix64& rng);

Var linear(Tape& t, Binding& p, const std::string& prefix, Var x);
Var linear_no_bias(Tape& t, Binding& p, const std::string& prefix, Var x);
Var layer_norm(Tape& t, Binding& p, const std::string& prefix, Var x);
// Post-norm residual feed-forward: relu(xW1+b1)W2+b2.
Var feed_forward(Tape& t, Binding& p, const std::string& prefix, Var x);

// Multi-head attention. `allowed` restricts which source positions each
// query may attend to; pass nullptr for full attention. Disallowed positions
// receive exactly zero weight.
Var multi_head_attention(Tape& t, Binding& p, const std::string& prefix,
                         Var queries, Var keys_values, int heads,
                         const ad::BoolMask* allowed);

// Post-norm transformer encoder layer (self-attention + FFN).
Var encoder_layer(Tape& t, Binding& p, const std::string& prefix, Var x,
                  int heads, const ad::BoolMask* self_mask);
// Post-norm transformer decoder layer (self-attention, cross-attention, FFN).
Var decoder_layer(Tape& t, Binding& p, const std::string& prefix, Var target,
                  Var memory, int heads, const ad::BoolMask* self_mask,
                  const ad::BoolMask* cross_mask);

// Fixed sinusoidal position encoding, length x dim.
Matrix sinusoidal_positions(int length, int dim);
// Lower-triangular (inclusive) mask: query row r may see columns 0..r.
// cols defaults to rows (square self-attention mask).
ad::BoolMask causal_mask(int rows, int cols = -1);

}  // namespace notecode::nn
