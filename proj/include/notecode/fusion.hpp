#pragma once

#include <Eigen/Dense>
#include <vector>

#include "notecode/common.hpp"

namespace notecode::fusion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { identity, relu, sigmoid, tanh };
Vector apply_activation(const Vector& x, Activation act);
Matrix apply_activation(const Matrix& x, Activation act);

// act(W x + b) over column vectors.
struct FeedForward {
  Matrix W;
  Vector b;
  Activation activation = Activation::relu;
  Vector operator()(const Vector& x) const;
};

// Stacked feed-forward layers.
struct Mlp {
  std::vector<FeedForward> layers;
  Vector operator()(const Vector& x) const;
};

// sigmoid(W1 concat(mean_diag_hist, mean_med_hist, v_d_t, r_prime) + b).
// History means are the caller's padding vectors on the first visit.
Vector fuse_gbert(const Vector& mean_diag_hist, const Vector& mean_med_hist,
                  const Vector& v_d_t, const Vector& r_prime,
                  const Matrix& w1, const Vector& b);

struct GamenetParams {
  FeedForward query;   // f in q = f([h_d, h_p, r'])
  Matrix output_w;     // over concat(q, o_d, o_p)
  Vector output_b;
};

struct GamenetResult {
  Vector query;
  Vector probabilities;
};

GamenetResult fuse_gamenet(const Vector& h_d, const Vector& h_p,
                           const Vector& r_prime, const GamenetParams& params,
                           const Vector& o_d, const Vector& o_p);

// Patient representation NN1(concat(d_h, p_h, r_prime)); the text term is
// part of the concatenation.
Vector fuse_safedrug(const Vector& d_h, const Vector& p_h,
                     const Vector& r_prime, const FeedForward& nn1);

struct AttentionParams {
  Matrix wq, wk, wv, wo;  // d x d each
  Vector bo;
  int heads = 1;
};

// Rows are positions. Plain scaled-dot-product attention of `queries`
// against `memory`.
Matrix attend(const Matrix& queries, const Matrix& memory,
              const AttentionParams& params);

struct CognetParams {
  AttentionParams diag_attn;
  AttentionParams proc_attn;
  AttentionParams text_attn;
  Vector norm_gain;  // layer norm over the model width
  Vector norm_bias;
  Matrix head_w;     // token head, d x vocab
  Vector head_b;
};

struct CognetResult {
  Matrix conditioned;  // LayerNorm(M + MH(M,D,D) + MH(M,P,P) + MH(M,r',r'))
  Matrix token_probs;  // row-softmax(conditioned W_g + b_g)
};

CognetResult fuse_cognet(const Matrix& m_hat, const Matrix& d_enc,
                         const Matrix& p_enc, const Matrix& r_prime_seq,
                         const CognetParams& params);

struct CognetVisitScores {
  Vector scores;        // softmax over past visits
  Vector v_r;           // per-visit text summaries, softmax(tanh(r).r) . r
  double v_t_r = 0.0;   // current-visit text summary
};

// Per-visit selection scores. The printed score uses only the diagnosis and
// procedure terms; include_text_term additionally adds v_j^r * v_t^r before
// the softmax.
CognetVisitScores cognet_visit_scores(const Matrix& r_prime_seq,
                                      const Matrix& r_prime_t,
                                      const Vector& v_d_seq,
                                      const Vector& v_p_seq, double v_t_d,
                                      double v_t_p, double s,
                                      bool include_text_term = false);

// Ordered concatenation [V_d, V_p, V_m_prev, r_prime].
Vector fuse_shape(const Vector& v_d, const Vector& v_p,
                  const Vector& v_m_prev, const Vector& r_prime);

enum class StratmedStage { pretrain, train };

// Both stages concatenate four components with r_prime last and pass the
// result through the MLP; the stage names which inputs the caller supplies
// (per-visit embeddings vs RNN summaries).
Vector fuse_stratmed(const Vector& e_d, const Vector& e_p,
                     const Vector& e_m_prev, const Vector& r_prime,
                     const Mlp& mlp, StratmedStage stage);

// Inclusive threshold rule: selected_i = 1 iff e_h[i] >= delta.
std::vector<int> stratmed_select(const Vector& e_h, double delta);

}  // namespace notecode::fusion
