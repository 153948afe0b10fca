#include "notecode/training.hpp"

#include <algorithm>
#include <cmath>

#include "notecode/metrics.hpp"

namespace notecode::train {

namespace {
constexpr double kLogEps = 1e-7;

void check_prob_shapes(const Matrix& p, const Matrix& y) {
  if (p.rows() != y.rows() || p.cols() != y.cols())
    throw ShapeError("probabilities and targets must share a shape");
  if (p.rows() == 0 || p.cols() == 0)
    throw ShapeError("loss inputs must be non-empty");
}
}  // namespace

void LossConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0)
    throw ConfigError("loss alpha must be in [0, 1]");
}

void OptimizerConfig::validate() const {
  // A zero rate is a legal no-op run (useful for dry runs and tests).
  if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw ConfigError("warmup fraction must be in [0, 1)");
  if (min_learning_rate < 0.0 || min_learning_rate > learning_rate)
    throw ConfigError("min learning rate must be in [0, learning_rate]");
  if (keep_top_k < 1) throw ConfigError("keep_top_k must be >= 1");
}

double bce_loss(const Matrix& probabilities, const Matrix& targets) {
  check_prob_shapes(probabilities, targets);
  auto p = probabilities.array().min(1.0 - kLogEps).max(kLogEps);
  auto y = targets.array();
  return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).sum();
}

Matrix bce_loss_grad(const Matrix& probabilities, const Matrix& targets) {
  check_prob_shapes(probabilities, targets);
  auto p = probabilities.array().min(1.0 - kLogEps).max(kLogEps);
  auto y = targets.array();
  return (-(y / p) + (1.0 - y) / (1.0 - p)).matrix();
}

double multilabel_margin_loss(const Matrix& probabilities,
                              const Matrix& targets) {
  check_prob_shapes(probabilities, targets);
  double c = static_cast<double>(probabilities.cols());
  double total = 0.0;
  for (Eigen::Index t = 0; t < probabilities.rows(); ++t) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < probabilities.cols(); ++j) {
      if (targets(t, j) <= 0.5) continue;
      for (Eigen::Index i = 0; i < probabilities.cols(); ++i) {
        if (targets(t, i) > 0.5) continue;
        double m = 1.0 - (probabilities(t, j) - probabilities(t, i));
        if (m > 0.0) row += m;
      }
    }
    total += row / c;
  }
  return total;
}

Matrix multilabel_margin_loss_grad(const Matrix& probabilities,
                                   const Matrix& targets) {
  check_prob_shapes(probabilities, targets);
  double c = static_cast<double>(probabilities.cols());
  double scale = 1.0 / c;
  Matrix g = Matrix::Zero(probabilities.rows(), probabilities.cols());
  for (Eigen::Index t = 0; t < probabilities.rows(); ++t) {
    for (Eigen::Index j = 0; j < probabilities.cols(); ++j) {
      if (targets(t, j) <= 0.5) continue;
      for (Eigen::Index i = 0; i < probabilities.cols(); ++i) {
        if (targets(t, i) > 0.5) continue;
        double m = 1.0 - (probabilities(t, j) - probabilities(t, i));
        if (m > 0.0) {
          g(t, j) -= scale;
          g(t, i) += scale;
        }
      }
    }
  }
  return g;
}

double combined_loss(const Matrix& probabilities, const Matrix& targets,
                     double alpha) {
  return alpha * bce_loss(probabilities, targets) +
         (1.0 - alpha) * multilabel_margin_loss(probabilities, targets);
}

Matrix combined_loss_grad(const Matrix& probabilities, const Matrix& targets,
                          double alpha) {
  return alpha * bce_loss_grad(probabilities, targets) +
         (1.0 - alpha) * multilabel_margin_loss_grad(probabilities, targets);
}

double scheduled_learning_rate(int step, int total_steps,
                               const OptimizerConfig& config) {
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (step < 0 || step >= total_steps)
    throw ConfigError("step outside schedule");
  int warmup = static_cast<int>(
      std::floor(config.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup)
    return config.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  int decay_steps = total_steps - warmup;
  double progress =
      decay_steps <= 1
          ? 0.0
          : static_cast<double>(step - warmup) /
                static_cast<double>(decay_steps - 1);
  return config.min_learning_rate +
         (config.learning_rate - config.min_learning_rate) * 0.5 *
             (1.0 + std::cos(progress * M_PI));
}

void AdamOptimizer::step(nn::ParamStore& params,
                         const std::map<std::string, Matrix>& grads,
                         double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw ShapeError("gradient shape mismatch for " + name);
    auto it = state_.find(name);
    if (it == state_.end()) {
      it = state_
               .emplace(name, std::make_pair(Matrix::Zero(g.rows(), g.cols()),
                                             Matrix::Zero(g.rows(), g.cols())))
               .first;
    }
    Matrix& m = it->second.first;
    Matrix& v = it->second.second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix mhat = m / bc1;
    Matrix vhat = v / bc2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

namespace {

metrics::VisitSets truth_sets(const model::CorpusInputs& inputs,
                              const std::vector<std::vector<int>>& patients) {
  metrics::VisitSets out;
  for (const auto& rows : patients)
    for (int r : rows) {
      std::vector<int> meds;
      for (Eigen::Index c = 0; c < inputs.med_mh.cols(); ++c)
        if (inputs.med_mh(r, c) > 0.5) meds.push_back(static_cast<int>(c));
      out.push_back(std::move(meds));
    }
  return out;
}

double validation_jaccard(const model::Recommender& model,
                          const TrainingData& data) {
  if (data.validation_patients.empty()) return 0.0;
  std::vector<Matrix> probs = model.predict_many(
      data.inputs, data.validation_attention, data.validation_patients);
  metrics::VisitSets predicted = metrics::threshold_predictions(probs, 0.5);
  metrics::VisitSets truth = truth_sets(data.inputs, data.validation_patients);
  return metrics::jaccard_metric(truth, predicted);
}

}  // namespace

TrainResult train(model::Recommender& model, const TrainingData& data,
                  const OptimizerConfig& optimizer, const LossConfig& loss) {
  optimizer.validate();
  loss.validate();
  if (data.train_patients.empty())
    throw ConfigError("no training patients (need >= 2 visits each)");
  for (const auto& rows : data.train_patients)
    if (rows.size() < 2)
      throw ConfigError("training patients must have at least two visits");

  int n_train = static_cast<int>(data.train_patients.size());
  int steps_per_epoch = (n_train + optimizer.batch_size - 1) /
                        optimizer.batch_size;
  int total_steps = steps_per_epoch * optimizer.epochs;
  SplitMix64 shuffle_rng(optimizer.seed);
  SplitMix64 dropout_rng(optimizer.seed ^ fnv1a64("dropout"));
  AdamOptimizer adam;
  TrainResult result;

  std::vector<int> order(static_cast<std::size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

  int global_step = 0;
  for (int epoch = 0; epoch < optimizer.epochs; ++epoch) {
    shuffle_inplace(order, shuffle_rng);
    double epoch_loss_sum = 0.0;
    long long epoch_visits = 0;
    double last_lr = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      int begin = step * optimizer.batch_size;
      int end = std::min(n_train, begin + optimizer.batch_size);
      double lr = scheduled_learning_rate(global_step, total_steps, optimizer);
      last_lr = lr;
      ++global_step;

      ad::Tape tape;
      nn::Binding bind(tape, model.params());
      model::CorpusVars corpus = model.corpus_forward(
          tape, bind, data.inputs, data.train_attention, true, &dropout_rng);
      std::vector<ad::Var> patient_losses;
      long long batch_visits = 0;
      for (int b = begin; b < end; ++b) {
        const auto& rows =
            data.train_patients[static_cast<std::size_t>(order[b])];
        model::ForwardVars fwd = model.patient_forward(tape, bind, corpus,
                                                       rows);
        const Matrix& probs = tape.val(fwd.probabilities);
        Matrix targets(static_cast<Eigen::Index>(rows.size()),
                       data.inputs.med_mh.cols());
        for (std::size_t t = 0; t < rows.size(); ++t)
          targets.row(static_cast<Eigen::Index>(t)) =
              data.inputs.med_mh.row(rows[t]);
        // The loss is a sum over the patient's visits, so dividing the batch
        // total by its visit count weighs every visit equally.
        double value = combined_loss(probs, targets, loss.alpha);
        Matrix grad = combined_loss_grad(probs, targets, loss.alpha);
        patient_losses.push_back(
            tape.scalar_with_grad(fwd.probabilities, value, std::move(grad)));
        batch_visits += static_cast<long long>(rows.size());
      }
      ad::Var total = patient_losses[0];
      for (std::size_t i = 1; i < patient_losses.size(); ++i)
        total = tape.add(total, patient_losses[i]);
      total = tape.scale(total, 1.0 / static_cast<double>(batch_visits));
      double batch_loss = tape.val(total)(0, 0);
      if (!std::isfinite(batch_loss))
        throw TrainingError("training diverged at epoch " +
                            std::to_string(epoch) + " step " +
                            std::to_string(step) + ": loss=" +
                            std::to_string(batch_loss));
      tape.backward(total);
      adam.step(model.params(), bind.grads(), lr);
      epoch_loss_sum += batch_loss * static_cast<double>(batch_visits);
      epoch_visits += batch_visits;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss_sum / static_cast<double>(epoch_visits);
    stats.val_jaccard = validation_jaccard(model, data);
    stats.learning_rate = last_lr;
    result.history.push_back(stats);

    Checkpoint ckpt;
    ckpt.params = model.params();
    ckpt.epoch = epoch;
    ckpt.val_jaccard = stats.val_jaccard;
    result.top_checkpoints.push_back(std::move(ckpt));
    std::stable_sort(result.top_checkpoints.begin(),
                     result.top_checkpoints.end(),
                     [](const Checkpoint& a, const Checkpoint& b) {
                       if (a.val_jaccard != b.val_jaccard)
                         return a.val_jaccard > b.val_jaccard;
                       return a.epoch > b.epoch;
                     });
    if (static_cast<int>(result.top_checkpoints.size()) >
        optimizer.keep_top_k)
      result.top_checkpoints.resize(
          static_cast<std::size_t>(optimizer.keep_top_k));
  }
  return result;
}

nn::ParamStore average_top_checkpoints(const std::vector<Checkpoint>& all,
                                       int k) {
  if (all.empty()) throw ConfigError("no checkpoints to average");
  if (k < 1) throw ConfigError("k must be >= 1");
  std::vector<const Checkpoint*> ranked;
  ranked.reserve(all.size());
  for (const auto& c : all) ranked.push_back(&c);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Checkpoint* a, const Checkpoint* b) {
                     if (a->val_jaccard != b->val_jaccard)
                       return a->val_jaccard > b->val_jaccard;
                     return a->epoch > b->epoch;
                   });
  std::size_t use = std::min<std::size_t>(ranked.size(),
                                          static_cast<std::size_t>(k));
  nn::ParamStore out = ranked[0]->params;
  for (std::size_t i = 1; i < use; ++i) {
    for (auto& [name, value] : out.entries()) {
      const Matrix& other = ranked[i]->params.at(name);
      if (other.rows() != value.rows() || other.cols() != value.cols())
        throw ShapeError("checkpoint shapes disagree for " + name);
      value += other;
    }
  }
  for (auto& [name, value] : out.entries())
    value /= static_cast<double>(use);
  return out;
}

GradientCheckReport gradient_check(
    const std::function<double(const Matrix&)>& f, const Matrix& point,
    const Matrix& analytic_grad, double h, int max_coords, SplitMix64* rng) {
  if (point.rows() != analytic_grad.rows() ||
      point.cols() != analytic_grad.cols())
    throw ShapeError("gradient shape must match the point");
  if (h <= 0.0) throw ConfigError("step size must be positive");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> coords;
  for (Eigen::Index r = 0; r < point.rows(); ++r)
    for (Eigen::Index c = 0; c < point.cols(); ++c) coords.emplace_back(r, c);
  if (max_coords > 0 &&
      static_cast<std::size_t>(max_coords) < coords.size()) {
    if (!rng) throw ConfigError("sampled gradient check needs an rng");
    shuffle_inplace(coords, *rng);
    coords.resize(static_cast<std::size_t>(max_coords));
  }
  GradientCheckReport report;
  Matrix x = point;
  for (auto [r, c] : coords) {
    double saved = x(r, c);
    x(r, c) = saved + h;
    double up = f(x);
    x(r, c) = saved - h;
    double down = f(x);
    x(r, c) = saved;
    double fd = (up - down) / (2.0 * h);
    double an = analytic_grad(r, c);
    double abs_err = std::abs(fd - an);
    double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    double rel = abs_err < 1e-10 ? 0.0 : abs_err / denom;
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.coords_checked;
  }
  return report;
}

}  // namespace notecode::train
