#pragma once

#include <vector>

#include "notecode/recommender.hpp"
#include "notecode/visit_graph.hpp"

namespace notecode::metrics {

using model::Matrix;
// Sorted unique medication indices, one entry per visit.
using VisitSets = std::vector<std::vector<int>>;

struct MetricsReport {
  double jaccard = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double prauc = 0.0;
  double ddi_rate = 0.0;
  double avg_med_count = 0.0;
  int visit_count = 0;
};

// Mean per-visit Jaccard; a visit where both sets are empty scores 1.
double jaccard_metric(const VisitSets& truth, const VisitSets& predicted);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Per-visit precision/recall/F1 averaged over visits. An empty prediction
// has precision 0, an empty truth set has recall 0, and F1 is 0 whenever
// P + R is 0.
Prf macro_prf(const VisitSets& truth, const VisitSets& predicted);

// Step-summed PR curve per visit, thresholds at the distinct scores in
// descending order, averaged over visits that have at least one positive
// label. Visits without positives are skipped; *skipped_visits reports how
// many when non-null.
double pr_auc(const Matrix& scores, const Matrix& targets,
              int* skipped_visits = nullptr);

// Interacting predicted pairs over all predicted pairs, pooled across
// visits; 0 when no visit predicts two medications.
double ddi_rate(const VisitSets& predicted, const graph::DDIMatrix& ddi);

double avg_med_count(const VisitSets& predicted);

VisitSets threshold_predictions(const std::vector<Matrix>& probabilities,
                                double threshold);

// Runs the model over the given patients and scores the predictions.
MetricsReport evaluate(const model::Recommender& model,
                       const model::CorpusInputs& inputs,
                       const model::PhaseAttention& attention,
                       const std::vector<std::vector<int>>& patients,
                       const graph::DDIMatrix& ddi, double threshold = 0.5);

}  // namespace notecode::metrics
