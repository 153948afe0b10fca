#include "notecode/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace notecode::metrics {

namespace {

int intersection_size(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t i = 0, j = 0;
  int inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  return inter;
}

void check_lengths(const VisitSets& truth, const VisitSets& predicted) {
  if (truth.size() != predicted.size())
    throw ShapeError("truth and prediction visit counts differ");
}

}  // namespace

double jaccard_metric(const VisitSets& truth, const VisitSets& predicted) {
  check_lengths(truth, predicted);
  if (truth.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    int inter = intersection_size(truth[t], predicted[t]);
    std::size_t uni = truth[t].size() + predicted[t].size() -
                      static_cast<std::size_t>(inter);
    sum += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  }
  return sum / static_cast<double>(truth.size());
}

Prf macro_prf(const VisitSets& truth, const VisitSets& predicted) {
  check_lengths(truth, predicted);
  Prf out;
  if (truth.empty()) return out;
  double ps = 0.0, rs = 0.0, fs = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    int inter = intersection_size(truth[t], predicted[t]);
    double p = predicted[t].empty()
                   ? 0.0
                   : static_cast<double>(inter) / predicted[t].size();
    double r = truth[t].empty()
                   ? 0.0
                   : static_cast<double>(inter) / truth[t].size();
    double f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    ps += p;
    rs += r;
    fs += f;
  }
  double n = static_cast<double>(truth.size());
  out.precision = ps / n;
  out.recall = rs / n;
  out.f1 = fs / n;
  return out;
}

double pr_auc(const Matrix& scores, const Matrix& targets,
              int* skipped_visits) {
  if (scores.rows() != targets.rows() || scores.cols() != targets.cols())
    throw ShapeError("scores and targets must share a shape");
  int skipped = 0;
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index t = 0; t < scores.rows(); ++t) {
    int positives = 0;
    for (Eigen::Index c = 0; c < targets.cols(); ++c)
      if (targets(t, c) > 0.5) ++positives;
    if (positives == 0) {
      ++skipped;
      continue;
    }
    // Distinct thresholds in descending score order.
    std::vector<double> distinct;
    {
      std::set<double, std::greater<double>> uniq;
      for (Eigen::Index c = 0; c < scores.cols(); ++c)
        uniq.insert(scores(t, c));
      distinct.assign(uniq.begin(), uniq.end());
    }
    double auc = 0.0;
    double prev_recall = 0.0;
    for (double threshold : distinct) {
      int tp = 0, predicted = 0;
      for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        if (scores(t, c) >= threshold) {
          ++predicted;
          if (targets(t, c) > 0.5) ++tp;
        }
      }
      double precision = static_cast<double>(tp) / predicted;
      double recall = static_cast<double>(tp) / positives;
      auc += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
    sum += auc;
    ++used;
  }
  if (skipped_visits) *skipped_visits = skipped;
  return used > 0 ? sum / used : 0.0;
}

double ddi_rate(const VisitSets& predicted, const graph::DDIMatrix& ddi) {
  long long pairs = 0, interacting = 0;
  for (const auto& meds : predicted) {
    for (std::size_t i = 0; i < meds.size(); ++i)
      for (std::size_t j = i + 1; j < meds.size(); ++j) {
        ++pairs;
        if (ddi.at(meds[i], meds[j])) ++interacting;
      }
  }
  return pairs > 0 ? static_cast<double>(interacting) / pairs : 0.0;
}

double avg_med_count(const VisitSets& predicted) {
  if (predicted.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& meds : predicted) sum += static_cast<double>(meds.size());
  return sum / static_cast<double>(predicted.size());
}

VisitSets threshold_predictions(const std::vector<Matrix>& probabilities,
                                double threshold) {
  VisitSets out;
  for (const auto& m : probabilities)
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      std::vector<int> meds;
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        if (m(t, c) >= threshold) meds.push_back(static_cast<int>(c));
      out.push_back(std::move(meds));
    }
  return out;
}

MetricsReport evaluate(const model::Recommender& model,
                       const model::CorpusInputs& inputs,
                       const model::PhaseAttention& attention,
                       const std::vector<std::vector<int>>& patients,
                       const graph::DDIMatrix& ddi, double threshold) {
  std::vector<Matrix> probs = model.predict_many(inputs, attention, patients);
  VisitSets predicted = threshold_predictions(probs, threshold);
  VisitSets truth;
  Eigen::Index total_visits = 0;
  for (const auto& rows : patients) total_visits += rows.size();
  Matrix scores(total_visits, inputs.med_mh.cols());
  Matrix targets(total_visits, inputs.med_mh.cols());
  Eigen::Index at = 0;
  for (std::size_t p = 0; p < patients.size(); ++p) {
    for (std::size_t t = 0; t < patients[p].size(); ++t) {
      scores.row(at) = probs[p].row(static_cast<Eigen::Index>(t));
      targets.row(at) = inputs.med_mh.row(patients[p][t]);
      std::vector<int> meds;
      for (Eigen::Index c = 0; c < targets.cols(); ++c)
        if (targets(at, c) > 0.5) meds.push_back(static_cast<int>(c));
      truth.push_back(std::move(meds));
      ++at;
    }
  }
  MetricsReport report;
  report.visit_count = static_cast<int>(total_visits);
  report.jaccard = jaccard_metric(truth, predicted);
  Prf prf = macro_prf(truth, predicted);
  report.precision = prf.precision;
  report.recall = prf.recall;
  report.f1 = prf.f1;
  report.prauc = pr_auc(scores, targets);
  report.ddi_rate = ddi.size() > 0 ? ddi_rate(predicted, ddi) : 0.0;
  report.avg_med_count = avg_med_count(predicted);
  return report;
}

}  // namespace notecode::metrics
