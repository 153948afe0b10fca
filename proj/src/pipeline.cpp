#include "notecode/pipeline.hpp"

#include "notecode/notes_pipeline.hpp"

namespace notecode::pipeline {

PhasePatients group_patients(const emr::Dataset& dataset,
                             const emr::DatasetSplit& split) {
  PhasePatients out;
  int row = 0;
  for (const auto& p : dataset.patients) {
    std::vector<int> rows(p.visits.size());
    for (std::size_t i = 0; i < p.visits.size(); ++i) rows[i] = row++;
    switch (split.phase_of(p.patient_id)) {
      case emr::Phase::train:
        if (rows.size() >= 2) out.train.push_back(std::move(rows));
        break;
      case emr::Phase::validation:
        out.validation.push_back(std::move(rows));
        break;
      case emr::Phase::test:
        out.test.push_back(std::move(rows));
        break;
    }
  }
  return out;
}

GraphBundle build_graphs(const emr::Dataset& dataset,
                         const emr::Vocabularies& vocabs,
                         const graph::GraphConfig& config, bool with_med) {
  GraphBundle b;
  b.diag = graph::build_visit_graph(
      graph::graph_visits(dataset, vocabs.diagnosis, emr::CodeType::diagnosis),
      config);
  b.proc = graph::build_visit_graph(
      graph::graph_visits(dataset, vocabs.procedure, emr::CodeType::procedure),
      config);
  if (with_med)
    b.med = graph::build_visit_graph(
        graph::graph_visits(dataset, vocabs.medication,
                            emr::CodeType::medication),
        config);
  return b;
}

model::PhaseAttention phase_attention(const GraphBundle& graphs,
                                      const std::vector<emr::Phase>& phases,
                                      emr::Phase phase, bool with_med) {
  model::PhaseAttention att;
  att.diag = graph::attention_matrix(
      graph::filter_adjacency(graphs.diag, phases, phase));
  att.proc = graph::attention_matrix(
      graph::filter_adjacency(graphs.proc, phases, phase));
  if (with_med)
    att.med = graph::attention_matrix(
        graph::filter_adjacency(graphs.med, phases, phase));
  return att;
}

model::Matrix extract_text_matrix(const emr::Dataset& dataset,
                                  const emr::CorpusIndex& index,
                                  const text::HiddenStateProvider& provider,
                                  const text::ExtractionConfig& config) {
  model::Matrix reps = model::Matrix::Zero(
      static_cast<Eigen::Index>(index.visits.size()), provider.hidden_dim());
  int row = 0;
  for (const auto& p : dataset.patients)
    for (const auto& v : p.visits) {
      if (v.note) {
        auto chunks = notes::chunk_note(*v.note, config.chunking);
        if (!chunks.empty()) {
          std::vector<text::Matrix> states;
          states.reserve(chunks.size());
          for (const auto& c : chunks)
            states.push_back(
                text::extract_chunk_states(provider, c, config.layer));
          reps.row(row) =
              text::assemble_visit_representation(states).transpose();
        }
      }
      ++row;
    }
  return reps;
}

}  // namespace notecode::pipeline
