#include "notecode/visit_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace notecode::graph {

namespace {

template <typename T>
double jaccard_sorted(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t i = 0, j = 0, inter = 0;
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
  std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double jaccard(const std::vector<std::string>& a,
               const std::vector<std::string>& b) {
  return jaccard_sorted(a, b);
}

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  return jaccard_sorted(a, b);
}

std::vector<GraphVisit> graph_visits(const emr::Dataset& dataset,
                                     const emr::CodeVocabulary& vocab,
                                     emr::CodeType type) {
  std::vector<GraphVisit> out;
  for (const auto& p : dataset.patients) {
    for (const auto& v : p.visits) {
      GraphVisit g;
      g.visit_id = v.visit_id;
      g.admission_time = v.admission_time;
      for (const auto& code : v.codes(type))
        g.codes.push_back(vocab.index_of(code));
      std::sort(g.codes.begin(), g.codes.end());
      out.push_back(std::move(g));
    }
  }
  return out;
}

std::vector<emr::VisitEdge> AdjacencyMatrix::edge_list() const {
  std::vector<emr::VisitEdge> out;
  for (int t = 0; t < nodes; ++t)
    for (const Edge& e : in_edges[static_cast<std::size_t>(t)])
      if (e.src != t) out.push_back({e.src, t, e.weight});
  return out;
}

AdjacencyMatrix build_visit_graph(const std::vector<GraphVisit>& visits,
                                  const GraphConfig& config) {
  if (config.k_neighbors < 0)
    throw ConfigError("k_neighbors must be non-negative");
  int n = static_cast<int>(visits.size());
  AdjacencyMatrix adj;
  adj.nodes = n;
  adj.in_edges.resize(static_cast<std::size_t>(n));

  struct Candidate {
    int src;
    double score;
  };
  for (int t = 0; t < n; ++t) {
    std::vector<Candidate> candidates;
    for (int j = 0; j < n; ++j) {
      if (j == t) continue;
      if (visits[static_cast<std::size_t>(j)].admission_time >
          visits[static_cast<std::size_t>(t)].admission_time)
        continue;
      candidates.push_back(
          {j, jaccard(visits[static_cast<std::size_t>(j)].codes,
                      visits[static_cast<std::size_t>(t)].codes)});
    }
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& va = visits[static_cast<std::size_t>(a.src)];
      const auto& vb = visits[static_cast<std::size_t>(b.src)];
      if (va.admission_time != vb.admission_time)
        return va.admission_time > vb.admission_time;
      return va.visit_id < vb.visit_id;
    };
    std::size_t keep = std::min<std::size_t>(
        candidates.size(), static_cast<std::size_t>(config.k_neighbors));
    std::partial_sort(candidates.begin(), candidates.begin() + keep,
                      candidates.end(), better);
    candidates.resize(keep);
    auto& edges = adj.in_edges[static_cast<std::size_t>(t)];
    for (const auto& c : candidates) edges.push_back({c.src, c.score});
    if (config.include_self_loop) edges.push_back({t, 1.0});
    std::sort(edges.begin(), edges.end(),
              [](const Edge& a, const Edge& b) { return a.src < b.src; });
  }
  return adj;
}

AdjacencyMatrix filter_adjacency(const AdjacencyMatrix& full,
                                 const std::vector<emr::Phase>& visit_phase,
                                 emr::Phase phase) {
  if (static_cast<int>(visit_phase.size()) != full.nodes)
    throw ShapeError("visit phase vector does not match graph size");
  auto allowed = [&](emr::Phase a, emr::Phase b) {
    if (a == emr::Phase::train && b == emr::Phase::train) return true;
    if (phase == emr::Phase::validation)
      return a == emr::Phase::validation && b == emr::Phase::validation;
    if (phase == emr::Phase::test)
      return a == emr::Phase::test && b == emr::Phase::test;
    return false;
  };
  AdjacencyMatrix out;
  out.nodes = full.nodes;
  out.in_edges.resize(full.in_edges.size());
  for (int t = 0; t < full.nodes; ++t) {
    for (const Edge& e : full.in_edges[static_cast<std::size_t>(t)]) {
      if (e.src == t ||
          allowed(visit_phase[static_cast<std::size_t>(e.src)],
                  visit_phase[static_cast<std::size_t>(t)]))
        out.in_edges[static_cast<std::size_t>(t)].push_back(e);
    }
  }
  return out;
}

std::vector<double> attention_weights(const AdjacencyMatrix& adj, int node) {
  if (node < 0 || node >= adj.nodes)
    throw LookupError("attention_weights: node out of range");
  const auto& edges = adj.in_edges[static_cast<std::size_t>(node)];
  std::vector<double> out(edges.size());
  if (edges.empty()) return out;
  double mx = edges[0].weight;
  for (const Edge& e : edges) mx = std::max(mx, e.weight);
  double sum = 0.0;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    out[i] = std::exp(edges[i].weight - mx);
    sum += out[i];
  }
  for (double& w : out) w /= sum;
  return out;
}

Matrix attention_matrix(const AdjacencyMatrix& adj) {
  Matrix out = Matrix::Zero(adj.nodes, adj.nodes);
  for (int t = 0; t < adj.nodes; ++t) {
    std::vector<double> w = attention_weights(adj, t);
    const auto& edges = adj.in_edges[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < edges.size(); ++i)
      out(t, edges[i].src) = w[i];
  }
  return out;
}

Matrix gcn_forward(const Matrix& embeddings, const AdjacencyMatrix& adj,
                   const Matrix& weight, const Eigen::RowVectorXd& bias,
                   Activation activation, bool training, double dropout,
                   SplitMix64* rng) {
  if (embeddings.rows() != adj.nodes)
    throw ShapeError("gcn_forward: embedding rows != graph nodes");
  if (weight.rows() != embeddings.cols())
    throw ShapeError("gcn_forward: weight rows != embedding width");
  if (bias.cols() != weight.cols())
    throw ShapeError("gcn_forward: bias width != weight cols");
  Matrix agg = attention_matrix(adj) * embeddings;
  if (training && dropout > 0.0) {
    if (!rng) throw ConfigError("gcn_forward: dropout needs an rng");
    if (dropout >= 1.0) throw ConfigError("dropout rate must be < 1");
    double keep = 1.0 - dropout;
    for (Eigen::Index r = 0; r < agg.rows(); ++r)
      for (Eigen::Index c = 0; c < agg.cols(); ++c)
        agg(r, c) = rng->next_unit() < keep ? agg(r, c) / keep : 0.0;
  }
  Matrix z = (agg * weight).rowwise() + bias;
  switch (activation) {
    case Activation::identity:
      return z;
    case Activation::relu:
      return z.cwiseMax(0.0);
    case Activation::sigmoid:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    case Activation::tanh:
      return z.array().tanh().matrix();
  }
  throw ConfigError("bad activation");
}

bool DDIMatrix::at(int a, int b) const {
  if (a < 0 || b < 0 || a >= n_ || b >= n_)
    throw LookupError("ddi index out of range");
  return bits_[static_cast<std::size_t>(a) * n_ + b] != 0;
}

void DDIMatrix::set(int a, int b) {
  if (a < 0 || b < 0 || a >= n_ || b >= n_)
    throw LookupError("ddi index out of range");
  bits_[static_cast<std::size_t>(a) * n_ + b] = 1;
  bits_[static_cast<std::size_t>(b) * n_ + a] = 1;
}

int DDIMatrix::pair_count() const {
  int count = 0;
  for (int a = 0; a < n_; ++a)
    for (int b = a + 1; b < n_; ++b)
      if (bits_[static_cast<std::size_t>(a) * n_ + b]) ++count;
  return count;
}

DDIMatrix build_ddi_matrix(
    const std::vector<std::pair<std::string, std::string>>& pairs,
    const emr::CodeVocabulary& med_vocab) {
  DDIMatrix m(med_vocab.size());
  for (const auto& [a, b] : pairs) {
    if (!med_vocab.contains(a) || !med_vocab.contains(b)) continue;
    if (a == b) continue;
    m.set(med_vocab.index_of(a), med_vocab.index_of(b));
  }
  return m;
}

DDIMatrix build_ddi_matrix(const std::string& csv_path,
                           const emr::CodeVocabulary& med_vocab) {
  std::ifstream in(csv_path);
  if (!in) throw ParseError("cannot open ddi file: " + csv_path);
  std::string line;
  int line_no = 0;
  std::vector<std::pair<std::string, std::string>> pairs;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
      line.pop_back();
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError("ddi line " + std::to_string(line_no) +
                       ": expected two comma-separated fields");
    std::string a = normalize_whitespace(line.substr(0, comma));
    std::string b = normalize_whitespace(line.substr(comma + 1));
    if (line_no == 1) {
      if (a != "med_a" || b != "med_b")
        throw ParseError("ddi file must start with header med_a,med_b");
      continue;
    }
    if (a.empty() || b.empty())
      throw ParseError("ddi line " + std::to_string(line_no) +
                       ": empty code");
    pairs.emplace_back(std::move(a), std::move(b));
  }
  return build_ddi_matrix(pairs, med_vocab);
}

}  // namespace notecode::graph
