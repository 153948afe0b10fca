#pragma once

#include <vector>

#include "notecode/emr_data.hpp"
#include "notecode/recommender.hpp"
#include "notecode/text_repr.hpp"
#include "notecode/visit_graph.hpp"

namespace notecode::pipeline {

// Row index lists per patient, grouped by split phase. Training lists keep
// only patients with at least two visits; validation and test keep everyone.
struct PhasePatients {
  std::vector<std::vector<int>> train;
  std::vector<std::vector<int>> validation;
  std::vector<std::vector<int>> test;
};

PhasePatients group_patients(const emr::Dataset& dataset,
                             const emr::DatasetSplit& split);

// Full visit graphs per code type. The medication graph is built only when
// requested (it matters only when the history passes through the graph).
struct GraphBundle {
  graph::AdjacencyMatrix diag;
  graph::AdjacencyMatrix proc;
  graph::AdjacencyMatrix med;
};

GraphBundle build_graphs(const emr::Dataset& dataset,
                         const emr::Vocabularies& vocabs,
                         const graph::GraphConfig& config, bool with_med);

model::PhaseAttention phase_attention(const GraphBundle& graphs,
                                      const std::vector<emr::Phase>& phases,
                                      emr::Phase phase, bool with_med);

// In-memory extraction: one row per visit in corpus order, computed exactly
// like the on-disk path but without float32 quantization. Visits without a
// note (or whose retained sections are empty) get exact zero rows.
model::Matrix extract_text_matrix(const emr::Dataset& dataset,
                                  const emr::CorpusIndex& index,
                                  const text::HiddenStateProvider& provider,
                                  const text::ExtractionConfig& config);

}  // namespace notecode::pipeline
