#include "notecode/nn.hpp"

#include <cmath>

namespace notecode::nn {

Matrix& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("unknown parameter: " + name);
  return it->second;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("unknown parameter: " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return params_.count(name) > 0;
}

void ParamStore::insert(const std::string& name, Matrix value) {
  if (!params_.emplace(name, std::move(value)).second)
    throw ConfigError("duplicate parameter: " + name);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : params_) n += static_cast<std::size_t>(m.size());
  return n;
}

Var Binding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(store_.at(name), requires_grad_);
  bound_.emplace(name, v);
  return v;
}

std::map<std::string, Matrix> Binding::grads() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, var] : bound_) out.emplace(name, tape_.grad(var));
  return out;
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, int fan_in,
                    SplitMix64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = (rng.next_unit() * 2.0 - 1.0) * bound;
  return m;
}

void init_linear(ParamStore& store, const std::string& prefix, int in, int out,
                 SplitMix64& rng, bool bias) {
  store.insert(prefix + ".W", uniform_init(in, out, in, rng));
  if (bias) store.insert(prefix + ".b", Matrix::Zero(1, out));
}

void init_layer_norm(ParamStore& store, const std::string& prefix, int dim) {
  store.insert(prefix + ".gain", Matrix::Ones(1, dim));
  store.insert(prefix + ".bias", Matrix::Zero(1, dim));
}

void init_attention(ParamStore& store, const std::string& prefix, int dim,
                    SplitMix64& rng) {
  for (const char* w : {".Wq", ".Wk", ".Wv", ".Wo"})
    store.insert(prefix + w, uniform_init(dim, dim, dim, rng));
  store.insert(prefix + ".bo", Matrix::Zero(1, dim));
}

void init_encoder_layer(ParamStore& store, const std::string& prefix, int dim,
                        int ffn_dim, SplitMix64& rng) {
  init_attention(store, prefix + ".self", dim, rng);
  init_layer_norm(store, prefix + ".norm1", dim);
  init_linear(store, prefix + ".ffn1", dim, ffn_dim, rng);
  init_linear(store, prefix + ".ffn2", ffn_dim, dim, rng);
  init_layer_norm(store, prefix + ".norm2", dim);
}

void init_decoder_layer(ParamStore& store, const std::string& prefix, int dim,
                        int ffn_dim, SplitMix64& rng) {
  init_attention(store, prefix + ".self", dim, rng);
  init_layer_norm(store, prefix + ".norm1", dim);
  init_attention(store, prefix + ".cross", dim, rng);
  init_layer_norm(store, prefix + ".norm2", dim);
  init_linear(store, prefix + ".ffn1", dim, ffn_dim, rng);
  init_linear(store, prefix + ".ffn2", ffn_dim, dim, rng);
  init_layer_norm(store, prefix + ".norm3", dim);
}

Var linear(Tape& t, Binding& p, const std::string& prefix, Var x) {
  return t.add_row_broadcast(t.matmul(x, p(prefix + ".W")), p(prefix + ".b"));
}

Var linear_no_bias(Tape& t, Binding& p, const std::string& prefix, Var x) {
  return t.matmul(x, p(prefix + ".W"));
}

Var layer_norm(Tape& t, Binding& p, const std::string& prefix, Var x) {
  return t.layer_norm_rows(x, p(prefix + ".gain"), p(prefix + ".bias"));
}

Var feed_forward(Tape& t, Binding& p, const std::string& prefix, Var x) {
  Var h = t.relu(linear(t, p, prefix + ".ffn1", x));
  return linear(t, p, prefix + ".ffn2", h);
}

Var multi_head_attention(Tape& t, Binding& p, const std::string& prefix,
                         Var queries, Var keys_values, int heads,
                         const ad::BoolMask* allowed) {
  int dim = static_cast<int>(t.val(queries).cols());
  if (heads <= 0 || dim % heads != 0)
    throw ConfigError("attention heads must divide the model width");
  int dk = dim / heads;
  Var q = t.matmul(queries, p(prefix + ".Wq"));
  Var k = t.matmul(keys_values, p(prefix + ".Wk"));
  Var v = t.matmul(keys_values, p(prefix + ".Wv"));
  double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = t.cols(q, h * dk, dk);
    Var kh = t.cols(k, h * dk, dk);
    Var vh = t.cols(v, h * dk, dk);
    Var scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dk);
    Var weights = t.softmax_rows(scores, allowed);
    head_outputs.push_back(t.matmul(weights, vh));
  }
  Var merged = heads == 1 ? head_outputs[0] : t.hconcat(head_outputs);
  return t.add_row_broadcast(t.matmul(merged, p(prefix + ".Wo")),
                             p(prefix + ".bo"));
}

Var encoder_layer(Tape& t, Binding& p, const std::string& prefix, Var x,
                  int heads, const ad::BoolMask* self_mask) {
  Var attn = multi_head_attention(t, p, prefix + ".self", x, x, heads,
                                  self_mask);
  Var h1 = layer_norm(t, p, prefix + ".norm1", t.add(x, attn));
  Var ff = feed_forward(t, p, prefix, h1);
  return layer_norm(t, p, prefix + ".norm2", t.add(h1, ff));
}

Var decoder_layer(Tape& t, Binding& p, const std::string& prefix, Var target,
                  Var memory, int heads, const ad::BoolMask* self_mask,
                  const ad::BoolMask* cross_mask) {
  Var self = multi_head_attention(t, p, prefix + ".self", target, target,
                                  heads, self_mask);
  Var h1 = layer_norm(t, p, prefix + ".norm1", t.add(target, self));
  Var cross = multi_head_attention(t, p, prefix + ".cross", h1, memory, heads,
                                   cross_mask);
  Var h2 = layer_norm(t, p, prefix + ".norm2", t.add(h1, cross));
  Var ff = feed_forward(t, p, prefix, h2);
  return layer_norm(t, p, prefix + ".norm3", t.add(h2, ff));
}

Matrix sinusoidal_positions(int length, int dim) {
  Matrix pe = Matrix::Zero(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      double rate = std::pow(10000.0, -static_cast<double>(i) / dim);
      pe(pos, i) = std::sin(pos * rate);
      if (i + 1 < dim) pe(pos, i + 1) = std::cos(pos * rate);
    }
  }
  return pe;
}

ad::BoolMask causal_mask(int rows, int cols) {
  if (cols < 0) cols = rows;
  ad::BoolMask m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = c <= r;
  return m;
}

}  // namespace notecode::nn
