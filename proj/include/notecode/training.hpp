#pragma once

#include <functional>
#include <vector>

#include "notecode/recommender.hpp"

namespace notecode::train {

using ad::Matrix;

struct LossConfig {
  double alpha = 0.95;  // weight on the binary cross-entropy term
  void validate() const;
};

struct OptimizerConfig {
  double learning_rate = 0.003;
  int epochs = 100;
  int batch_size = 256;         // patients per step
  double warmup_fraction = 0.1;  // of total steps, linear ramp
  double min_learning_rate = 0.0;
  std::uint64_t seed = 42;
  int keep_top_k = 5;
  void validate() const;
};

// Sum over visits of the label-summed BCE. Probabilities are clamped to
// [eps, 1-eps] inside the logs, eps = 1e-7.
double bce_loss(const Matrix& probabilities, const Matrix& targets);
Matrix bce_loss_grad(const Matrix& probabilities, const Matrix& targets);

// Sum over visits of sum_{i not in Y} sum_{j in Y} max(0, 1 - (p_j - p_i))
// divided by the label count.
double multilabel_margin_loss(const Matrix& probabilities,
                              const Matrix& targets);
Matrix multilabel_margin_loss_grad(const Matrix& probabilities,
                                   const Matrix& targets);

double combined_loss(const Matrix& probabilities, const Matrix& targets,
                     double alpha);
Matrix combined_loss_grad(const Matrix& probabilities, const Matrix& targets,
                          double alpha);

// Linear warmup to the base rate, then cosine decay to min_learning_rate.
double scheduled_learning_rate(int step, int total_steps,
                               const OptimizerConfig& config);

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(nn::ParamStore& params,
            const std::map<std::string, Matrix>& grads, double lr);
  int steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> state_;  // m, v
};

struct Checkpoint {
  nn::ParamStore params;
  int epoch = 0;
  double val_jaccard = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_jaccard = 0.0;
  double learning_rate = 0.0;
};

struct TrainingData {
  model::CorpusInputs inputs;
  model::PhaseAttention train_attention;
  model::PhaseAttention validation_attention;
  // Visit row lists per patient. Training rows must come from patients with
  // at least two visits; validation has no such restriction.
  std::vector<std::vector<int>> train_patients;
  std::vector<std::vector<int>> validation_patients;
};

struct TrainResult {
  std::vector<Checkpoint> top_checkpoints;  // best-first
  std::vector<EpochStats> history;
};

// Full training run; updates the model parameters in place and keeps the
// keep_top_k best checkpoints by validation Jaccard (ties prefer the later
// epoch). Throws TrainingError when the loss stops being finite.
TrainResult train(model::Recommender& model, const TrainingData& data,
                  const OptimizerConfig& optimizer, const LossConfig& loss);

// Element-wise mean of the k best checkpoints (all of them if fewer).
nn::ParamStore average_top_checkpoints(const std::vector<Checkpoint>& all,
                                       int k = 5);

struct GradientCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int coords_checked = 0;
};

// Central-difference check of an analytic gradient at `point`. Checks every
// coordinate unless max_coords caps it (sampled with rng).
GradientCheckReport gradient_check(
    const std::function<double(const Matrix&)>& f, const Matrix& point,
    const Matrix& analytic_grad, double h = 1e-4, int max_coords = -1,
    SplitMix64* rng = nullptr);

}  // namespace notecode::train
