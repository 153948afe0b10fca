#pragma once

#include <string>

#include "json.hpp"
#include "notecode/emr_data.hpp"
#include "notecode/metrics.hpp"
#include "notecode/recommender.hpp"
#include "notecode/training.hpp"
#include "notecode/visit_graph.hpp"

namespace notecode::artifacts {

nlohmann::json model_config_to_json(const model::ModelConfig& config);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

// Checkpoint file: 8-byte magic, little-endian u32 header length, JSON
// header {config, epoch, val_jaccard, tensors}, then raw float32 data in
// header order. Values are stored as float32 regardless of compute
// precision.
void save_checkpoint(const std::string& path, const nn::ParamStore& params,
                     const model::ModelConfig& config, int epoch,
                     double val_jaccard);

struct LoadedCheckpoint {
  nn::ParamStore params;
  model::ModelConfig config;
  int epoch = 0;
  double val_jaccard = 0.0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

void save_split(const std::string& path, const emr::DatasetSplit& split);
emr::DatasetSplit load_split(const std::string& path);

// One JSON object per node: {"node": id, "edges": [{"src": id, "w": x}]}.
void export_graph(const std::string& path, const graph::AdjacencyMatrix& adj,
                  const emr::CorpusIndex& index);

nlohmann::json metrics_to_json(const metrics::MetricsReport& report);
metrics::MetricsReport metrics_from_json(const nlohmann::json& j);

// JSONL, one line per epoch: {"epoch", "train_loss", "val_jaccard", "lr"}.
void save_train_report(const std::string& path,
                       const std::vector<train::EpochStats>& history);

nlohmann::json stats_to_json(const emr::DatasetStats& stats);

}  // namespace notecode::artifacts
