#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "notecode/emr_data.hpp"

namespace notecode::graph {

using Matrix = Eigen::MatrixXd;

double jaccard(const std::vector<std::string>& a,
               const std::vector<std::string>& b);  // sorted unique inputs
double jaccard(const std::vector<int>& a, const std::vector<int>& b);

struct GraphConfig {
  int k_neighbors = 10;
  bool include_self_loop = true;
};

// Node payload for graph construction: sorted unique code indices for one
// code type plus the admission time.
struct GraphVisit {
  std::string visit_id;
  std::int64_t admission_time = 0;
  std::vector<int> codes;
};

std::vector<GraphVisit> graph_visits(const emr::Dataset& dataset,
                                     const emr::CodeVocabulary& vocab,
                                     emr::CodeType type);

struct Edge {
  int src = 0;
  double weight = 0.0;
};

// Directed visit graph. in_edges[t] lists sources j with admission_time(j)
// <= admission_time(t), sorted by src index.
struct AdjacencyMatrix {
  int nodes = 0;
  std::vector<std::vector<Edge>> in_edges;
  std::vector<emr::VisitEdge> edge_list() const;
};

// For every visit, candidate sources are all visits (any patient) admitted no
// later than it, excluding itself. The k highest-Jaccard candidates become
// in-edges weighted by Jaccard; score ties prefer the later-admitted
// candidate, then the lexicographically smaller visit_id. A self-loop of
// weight 1 is added when configured.
AdjacencyMatrix build_visit_graph(const std::vector<GraphVisit>& visits,
                                  const GraphConfig& config);

// Keeps only edges allowed in the given phase (per split_edges rules);
// self-loops always survive.
AdjacencyMatrix filter_adjacency(const AdjacencyMatrix& full,
                                 const std::vector<emr::Phase>& visit_phase,
                                 emr::Phase phase);

// Softmax over the in-edge weights of one node; same order as in_edges[node].
std::vector<double> attention_weights(const AdjacencyMatrix& adj, int node);

// Dense row-stochastic attention matrix; rows without in-edges stay zero.
Matrix attention_matrix(const AdjacencyMatrix& adj);

enum class Activation { identity, relu, sigmoid, tanh };

// One-layer weighted GCN: sigma(sum_j alpha_tj e_j W + b). Dropout applies
// to the aggregated input only when training.
Matrix gcn_forward(const Matrix& embeddings, const AdjacencyMatrix& adj,
                   const Matrix& weight, const Eigen::RowVectorXd& bias,
                   Activation activation, bool training = false,
                   double dropout = 0.0, SplitMix64* rng = nullptr);

// Symmetric drug-drug interaction lookup over medication vocabulary indices.
class DDIMatrix {
 public:
  DDIMatrix() = default;
  explicit DDIMatrix(int n) : n_(n), bits_(static_cast<std::size_t>(n) * n, 0) {}
  int size() const { return n_; }
  bool at(int a, int b) const;
  void set(int a, int b);
  int pair_count() const;

 private:
  int n_ = 0;
  std::vector<std::uint8_t> bits_;
};

// ddi.csv with header "med_a,med_b"; unknown codes are skipped (the file may
// cover a wider formulary than the dataset).
DDIMatrix build_ddi_matrix(const std::string& csv_path,
                           const emr::CodeVocabulary& med_vocab);
DDIMatrix build_ddi_matrix(
    const std::vector<std::pair<std::string, std::string>>& pairs,
    const emr::CodeVocabulary& med_vocab);

}  // namespace notecode::graph
