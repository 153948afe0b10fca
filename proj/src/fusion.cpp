#include "notecode/fusion.hpp"

#include <cmath>

namespace notecode::fusion {

namespace {

Vector vconcat(std::initializer_list<const Vector*> parts) {
  Eigen::Index total = 0;
  for (const Vector* p : parts) total += p->size();
  Vector out(total);
  Eigen::Index at = 0;
  for (const Vector* p : parts) {
    out.segment(at, p->size()) = *p;
    at += p->size();
  }
  return out;
}

Vector softmax(const Vector& x) {
  if (x.size() == 0) return x;
  double mx = x.maxCoeff();
  Vector e = (x.array() - mx).exp();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

Matrix layer_norm_rows(const Matrix& x, const Vector& gain,
                       const Vector& bias, double eps = 1e-5) {
  if (gain.size() != x.cols() || bias.size() != x.cols())
    throw ShapeError("layer norm gain/bias width mismatch");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    out.row(r) = (((x.row(r).array() - mu) * inv) *
                      gain.transpose().array() +
                  bias.transpose().array())
                     .matrix();
  }
  return out;
}

}  // namespace

Vector apply_activation(const Vector& x, Activation act) {
  switch (act) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return x.cwiseMax(0.0);
    case Activation::sigmoid:
      return (1.0 / (1.0 + (-x.array()).exp())).matrix();
    case Activation::tanh:
      return x.array().tanh().matrix();
  }
  throw ConfigError("bad activation");
}

Matrix apply_activation(const Matrix& x, Activation act) {
  switch (act) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return x.cwiseMax(0.0);
    case Activation::sigmoid:
      return (1.0 / (1.0 + (-x.array()).exp())).matrix();
    case Activation::tanh:
      return x.array().tanh().matrix();
  }
  throw ConfigError("bad activation");
}

Vector FeedForward::operator()(const Vector& x) const {
  if (W.cols() != x.size())
    throw ShapeError("feed-forward input width mismatch");
  if (b.size() != W.rows())
    throw ShapeError("feed-forward bias width mismatch");
  Vector pre = W * x + b;
  return apply_activation(pre, activation);
}

Vector Mlp::operator()(const Vector& x) const {
  if (layers.empty()) throw ConfigError("MLP needs at least one layer");
  Vector h = x;
  for (const auto& layer : layers) h = layer(h);
  return h;
}

Vector fuse_gbert(const Vector& mean_diag_hist, const Vector& mean_med_hist,
                  const Vector& v_d_t, const Vector& r_prime,
                  const Matrix& w1, const Vector& b) {
  Vector cat = vconcat({&mean_diag_hist, &mean_med_hist, &v_d_t, &r_prime});
  if (w1.cols() != cat.size())
    throw ShapeError("fuse_gbert: W1 width != concatenated input");
  if (b.size() != w1.rows()) throw ShapeError("fuse_gbert: bias mismatch");
  Vector pre = w1 * cat + b;
  return apply_activation(pre, Activation::sigmoid);
}

GamenetResult fuse_gamenet(const Vector& h_d, const Vector& h_p,
                           const Vector& r_prime, const GamenetParams& params,
                           const Vector& o_d, const Vector& o_p) {
  GamenetResult out;
  out.query = params.query(vconcat({&h_d, &h_p, &r_prime}));
  Vector cat = vconcat({&out.query, &o_d, &o_p});
  if (params.output_w.cols() != cat.size())
    throw ShapeError("fuse_gamenet: output weights width mismatch");
  if (params.output_b.size() != params.output_w.rows())
    throw ShapeError("fuse_gamenet: output bias mismatch");
  Vector pre = params.output_w * cat + params.output_b;
  out.probabilities = apply_activation(pre, Activation::sigmoid);
  return out;
}

Vector fuse_safedrug(const Vector& d_h, const Vector& p_h,
                     const Vector& r_prime, const FeedForward& nn1) {
  return nn1(vconcat({&d_h, &p_h, &r_prime}));
}

Matrix attend(const Matrix& queries, const Matrix& memory,
              const AttentionParams& params) {
  Eigen::Index d = queries.cols();
  if (memory.cols() != d)
    throw ShapeError("attend: query/memory width mismatch");
  auto square = [&](const Matrix& w, const char* name) {
    if (w.rows() != d || w.cols() != d)
      throw ShapeError(std::string("attend: ") + name + " must be d x d");
  };
  square(params.wq, "Wq");
  square(params.wk, "Wk");
  square(params.wv, "Wv");
  square(params.wo, "Wo");
  if (params.bo.size() != d) throw ShapeError("attend: bo width mismatch");
  if (params.heads < 1 || d % params.heads != 0)
    throw ConfigError("attend: heads must divide the width");
  Eigen::Index dk = d / params.heads;
  Matrix q = queries * params.wq;
  Matrix k = memory * params.wk;
  Matrix v = memory * params.wv;
  Matrix merged(queries.rows(), d);
  double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int h = 0; h < params.heads; ++h) {
    Matrix qh = q.middleCols(h * dk, dk);
    Matrix kh = k.middleCols(h * dk, dk);
    Matrix vh = v.middleCols(h * dk, dk);
    Matrix weights = softmax_rows(qh * kh.transpose() * inv);
    merged.middleCols(h * dk, dk) = weights * vh;
  }
  return (merged * params.wo).rowwise() + params.bo.transpose();
}

CognetResult fuse_cognet(const Matrix& m_hat, const Matrix& d_enc,
                         const Matrix& p_enc, const Matrix& r_prime_seq,
                         const CognetParams& params) {
  Matrix sum = m_hat;
  sum += attend(m_hat, d_enc, params.diag_attn);
  sum += attend(m_hat, p_enc, params.proc_attn);
  sum += attend(m_hat, r_prime_seq, params.text_attn);
  CognetResult out;
  out.conditioned = layer_norm_rows(sum, params.norm_gain, params.norm_bias);
  if (params.head_w.rows() != out.conditioned.cols())
    throw ShapeError("fuse_cognet: head width mismatch");
  if (params.head_b.size() != params.head_w.cols())
    throw ShapeError("fuse_cognet: head bias mismatch");
  Matrix logits = (out.conditioned * params.head_w).rowwise() +
                  params.head_b.transpose();
  out.token_probs = softmax_rows(logits);
  return out;
}

namespace {

// Scalar text summary of one visit: softmax(tanh(r') .* r') dotted with r'.
double text_visit_summary(const Vector& r) {
  if (r.size() == 0) throw ShapeError("empty text representation");
  Vector weights = softmax((r.array().tanh() * r.array()).matrix());
  return weights.dot(r);
}

}  // namespace

CognetVisitScores cognet_visit_scores(const Matrix& r_prime_seq,
                                      const Matrix& r_prime_t,
                                      const Vector& v_d_seq,
                                      const Vector& v_p_seq, double v_t_d,
                                      double v_t_p, double s,
                                      bool include_text_term) {
  if (s <= 0.0) throw ConfigError("scaling constant s must be positive");
  Eigen::Index j = r_prime_seq.rows();
  if (v_d_seq.size() != j || v_p_seq.size() != j)
    throw ShapeError("visit score inputs disagree on past-visit count");
  if (r_prime_t.rows() != 1 || r_prime_t.cols() != r_prime_seq.cols())
    throw ShapeError("current text representation must be 1 x d");
  CognetVisitScores out;
  out.v_r.resize(j);
  for (Eigen::Index i = 0; i < j; ++i)
    out.v_r[i] = text_visit_summary(r_prime_seq.row(i).transpose());
  out.v_t_r = text_visit_summary(r_prime_t.row(0).transpose());
  Vector raw(j);
  double inv = 1.0 / std::sqrt(s);
  for (Eigen::Index i = 0; i < j; ++i) {
    double score = v_d_seq[i] * v_t_d + v_p_seq[i] * v_t_p;
    if (include_text_term) score += out.v_r[i] * out.v_t_r;
    raw[i] = score * inv;
  }
  out.scores = softmax(raw);
  return out;
}

Vector fuse_shape(const Vector& v_d, const Vector& v_p,
                  const Vector& v_m_prev, const Vector& r_prime) {
  return vconcat({&v_d, &v_p, &v_m_prev, &r_prime});
}

Vector fuse_stratmed(const Vector& e_d, const Vector& e_p,
                     const Vector& e_m_prev, const Vector& r_prime,
                     const Mlp& mlp, StratmedStage stage) {
  (void)stage;  // both stages share the concat-then-MLP shape
  return mlp(vconcat({&e_d, &e_p, &e_m_prev, &r_prime}));
}

std::vector<int> stratmed_select(const Vector& e_h, double delta) {
  std::vector<int> out(static_cast<std::size_t>(e_h.size()));
  for (Eigen::Index i = 0; i < e_h.size(); ++i)
    out[static_cast<std::size_t>(i)] = e_h[i] >= delta ? 1 : 0;
  return out;
}

}  // namespace notecode::fusion
