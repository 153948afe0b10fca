// Acceptance gate: eleven end-to-end checks covering metrics, gradients,
// graph construction, text representations, causality, trainability, the
// text-signal advantage, split integrity, checkpoint averaging, fusion
// adapters, and CLI determinism. Each check prints exactly one line:
//   [PASS] <id>: <name>    or    [FAIL] <id>: <name> (<detail>)
//
// Usage: notecode_acceptance [--cli PATH] [ids...]
// With no ids, every check runs. Check 11 needs --cli (the pipeline binary).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "notecode/artifacts.hpp"
#include "notecode/emr_data.hpp"
#include "notecode/fusion.hpp"
#include "notecode/metrics.hpp"
#include "notecode/notes_pipeline.hpp"
#include "notecode/pipeline.hpp"
#include "notecode/recommender.hpp"
#include "notecode/text_repr.hpp"
#include "notecode/training.hpp"
#include "notecode/visit_graph.hpp"

namespace fs = std::filesystem;
using namespace notecode;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace {

// ---------------------------------------------------------------------------
// Harness.

struct Context {
  std::string cli_path;
  fs::path scratch;
  std::string detail;  // set by a failing check
};

bool expect(Context& ctx, bool ok, const std::string& what) {
  if (!ok && ctx.detail.empty()) ctx.detail = what;
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 1: the five evaluation metrics against brute-force oracles.
// Set metrics must match exactly; PR-AUC within 1e-9.

namespace oracle {

double set_jaccard(const std::set<int>& t, const std::set<int>& p) {
  if (t.empty() && p.empty()) return 1.0;
  int inter = 0;
  for (int x : p) inter += t.count(x) ? 1 : 0;
  int uni = static_cast<int>(t.size() + p.size()) - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

double mean_jaccard(const metrics::VisitSets& truth,
                    const metrics::VisitSets& pred) {
  double s = 0.0;
  for (std::size_t v = 0; v < truth.size(); ++v)
    s += set_jaccard({truth[v].begin(), truth[v].end()},
                     {pred[v].begin(), pred[v].end()});
  return truth.empty() ? 0.0 : s / static_cast<double>(truth.size());
}

metrics::Prf mean_prf(const metrics::VisitSets& truth,
                      const metrics::VisitSets& pred) {
  metrics::Prf out;
  for (std::size_t v = 0; v < truth.size(); ++v) {
    std::set<int> t(truth[v].begin(), truth[v].end());
    int inter = 0;
    for (int x : pred[v]) inter += t.count(x) ? 1 : 0;
    double p = pred[v].empty()
                   ? 0.0
                   : static_cast<double>(inter) / pred[v].size();
    double r = truth[v].empty()
                   ? 0.0
                   : static_cast<double>(inter) / truth[v].size();
    double f = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    out.precision += p;
    out.recall += r;
    out.f1 += f;
  }
  double n = static_cast<double>(truth.size());
  if (n > 0) {
    out.precision /= n;
    out.recall /= n;
    out.f1 /= n;
  }
  return out;
}

// Per-visit PR curve: walk the distinct scores downward, re-counting the
// prediction set at every threshold from scratch.
double visit_pr_auc(const Eigen::RowVectorXd& scores,
                    const Eigen::RowVectorXd& labels) {
  std::vector<double> cuts(scores.begin(), scores.end());
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double positives = labels.sum();
  double auc = 0.0, prev_recall = 0.0;
  for (double cut : cuts) {
    int predicted = 0, hit = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i)
      if (scores[i] >= cut) {
        ++predicted;
        if (labels[i] > 0.5) ++hit;
      }
    double precision = predicted == 0 ? 0.0 : static_cast<double>(hit) /
                                                   predicted;
    double recall = hit / positives;
    auc += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return auc;
}

double mean_pr_auc(const Matrix& scores, const Matrix& labels, int* skipped) {
  double total = 0.0;
  int used = 0, skip = 0;
  for (Eigen::Index v = 0; v < scores.rows(); ++v) {
    if (labels.row(v).sum() < 0.5) {
      ++skip;
      continue;
    }
    total += visit_pr_auc(scores.row(v), labels.row(v));
    ++used;
  }
  if (skipped) *skipped = skip;
  return used == 0 ? 0.0 : total / used;
}

double pooled_ddi(const metrics::VisitSets& pred, const graph::DDIMatrix& m) {
  long long num = 0, den = 0;
  for (const auto& visit : pred)
    for (std::size_t i = 0; i < visit.size(); ++i)
      for (std::size_t j = i + 1; j < visit.size(); ++j) {
        ++den;
        num += m.at(visit[i], visit[j]) ? 1 : 0;
      }
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double mean_count(const metrics::VisitSets& pred) {
  if (pred.empty()) return 0.0;
  double s = 0.0;
  for (const auto& v : pred) s += static_cast<double>(v.size());
  return s / static_cast<double>(pred.size());
}

}  // namespace oracle

std::vector<int> random_set(SplitMix64& rng, int universe) {
  std::vector<int> out;
  for (int i = 0; i < universe; ++i)
    if (rng.next_unit() < 0.35) out.push_back(i);
  return out;
}

bool criterion_metrics(Context& ctx) {
  constexpr int kInstances = 1000;
  constexpr double kPrAucTol = 1e-9;
  SplitMix64 rng(0xACC1);
  for (int trial = 0; trial < kInstances; ++trial) {
    int drugs = 1 + static_cast<int>(rng.next_below(20));
    int visits = 1 + static_cast<int>(rng.next_below(8));
    metrics::VisitSets truth, pred;
    Matrix scores(visits, drugs), labels(visits, drugs);
    for (int v = 0; v < visits; ++v) {
      truth.push_back(random_set(rng, drugs));
      pred.push_back(random_set(rng, drugs));
      for (int d = 0; d < drugs; ++d) {
        // Quantized scores force threshold ties.
        scores(v, d) = rng.next_unit() < 0.5
                           ? std::floor(rng.next_unit() * 4.0) / 4.0
                           : rng.next_unit();
        labels(v, d) = rng.next_unit() < 0.4 ? 1.0 : 0.0;
      }
    }
    graph::DDIMatrix ddi(drugs);
    for (int a = 0; a < drugs; ++a)
      for (int b = a + 1; b < drugs; ++b)
        if (rng.next_unit() < 0.2) ddi.set(a, b);

    if (!expect(ctx,
                metrics::jaccard_metric(truth, pred) ==
                    oracle::mean_jaccard(truth, pred),
                "jaccard mismatch at trial " + std::to_string(trial)))
      return false;
    metrics::Prf got = metrics::macro_prf(truth, pred);
    metrics::Prf want = oracle::mean_prf(truth, pred);
    if (!expect(ctx,
                got.precision == want.precision && got.recall == want.recall &&
                    got.f1 == want.f1,
                "precision/recall/f1 mismatch at trial " +
                    std::to_string(trial)))
      return false;
    int got_skip = 0, want_skip = 0;
    double got_auc = metrics::pr_auc(scores, labels, &got_skip);
    double want_auc = oracle::mean_pr_auc(scores, labels, &want_skip);
    if (!expect(ctx,
                got_skip == want_skip &&
                    std::abs(got_auc - want_auc) <= kPrAucTol,
                "pr-auc mismatch at trial " + std::to_string(trial) + " (" +
                    std::to_string(std::abs(got_auc - want_auc)) + ")"))
      return false;
    if (!expect(ctx,
                metrics::ddi_rate(pred, ddi) == oracle::pooled_ddi(pred, ddi),
                "ddi mismatch at trial " + std::to_string(trial)))
      return false;
    if (!expect(ctx,
                metrics::avg_med_count(pred) == oracle::mean_count(pred),
                "avg-count mismatch at trial " + std::to_string(trial)))
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic loss gradients against central finite differences.

bool criterion_gradients(Context& ctx) {
  constexpr int kPoints = 100;
  constexpr double kRelTol = 1e-3;
  SplitMix64 rng(0xACC2);
  for (int trial = 0; trial < kPoints; ++trial) {
    int visits = 1 + static_cast<int>(rng.next_below(6));
    int drugs = 2 + static_cast<int>(rng.next_below(11));
    Matrix probs(visits, drugs), targets(visits, drugs);
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      // Probabilities in [0.05, 0.95]: away from the BCE clamp, and the
      // margin hinge cannot reach its kink since p_j - p_i <= 0.9 < 1.
      probs.data()[i] = 0.05 + 0.9 * rng.next_unit();
      targets.data()[i] = rng.next_unit() < 0.4 ? 1.0 : 0.0;
    }
    struct Case {
      const char* name;
      std::function<double(const Matrix&)> f;
      Matrix grad;
    };
    std::vector<Case> cases;
    cases.push_back({"bce",
                     [&](const Matrix& p) { return train::bce_loss(p, targets); },
                     train::bce_loss_grad(probs, targets)});
    cases.push_back({"margin",
                     [&](const Matrix& p) {
                       return train::multilabel_margin_loss(p, targets);
                     },
                     train::multilabel_margin_loss_grad(probs, targets)});
    cases.push_back({"combined",
                     [&](const Matrix& p) {
                       return train::combined_loss(p, targets, 0.95);
                     },
                     train::combined_loss_grad(probs, targets, 0.95)});
    for (auto& c : cases) {
      train::GradientCheckReport rep =
          train::gradient_check(c.f, probs, c.grad, 1e-5);
      if (!expect(ctx, rep.max_rel_error <= kRelTol,
                  std::string(c.name) + " gradient rel error " +
                      std::to_string(rep.max_rel_error) + " at trial " +
                      std::to_string(trial)))
        return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 3: graph construction against the exhaustive oracle.

double oracle_jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  int inter = 0;
  for (int x : sa) inter += sb.count(x) ? 1 : 0;
  int uni = static_cast<int>(sa.size() + sb.size()) - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

graph::AdjacencyMatrix oracle_graph(const std::vector<graph::GraphVisit>& vs,
                                    const graph::GraphConfig& config) {
  int n = static_cast<int>(vs.size());
  graph::AdjacencyMatrix adj;
  adj.nodes = n;
  adj.in_edges.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    std::vector<std::pair<double, int>> scored;
    for (int j = 0; j < n; ++j)
      if (j != t && vs[j].admission_time <= vs[t].admission_time)
        scored.push_back({oracle_jaccard(vs[j].codes, vs[t].codes), j});
    std::stable_sort(scored.begin(), scored.end(), [&](auto a, auto b) {
      if (a.first != b.first) return a.first > b.first;
      if (vs[a.second].admission_time != vs[b.second].admission_time)
        return vs[a.second].admission_time > vs[b.second].admission_time;
      return vs[a.second].visit_id < vs[b.second].visit_id;
    });
    if (static_cast<int>(scored.size()) > config.k_neighbors)
      scored.resize(static_cast<std::size_t>(config.k_neighbors));
    auto& edges = adj.in_edges[static_cast<std::size_t>(t)];
    for (auto& [w, j] : scored) edges.push_back({j, w});
    if (config.include_self_loop) edges.push_back({t, 1.0});
    std::sort(edges.begin(), edges.end(),
              [](const graph::Edge& a, const graph::Edge& b) {
                return a.src < b.src;
              });
  }
  return adj;
}

bool criterion_graph(Context& ctx) {
  constexpr int kCorpora = 200;
  constexpr double kRowSumTol = 1e-6;
  SplitMix64 rng(0xACC3);
  for (int trial = 0; trial < kCorpora; ++trial) {
    int n = 1 + static_cast<int>(rng.next_below(20));
    std::vector<graph::GraphVisit> vs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      vs[static_cast<std::size_t>(i)].visit_id =
          "v" + std::to_string(rng.next_below(1000)) + "-" +
          std::to_string(i);
      // Coarse grid so equal admission times occur.
      vs[static_cast<std::size_t>(i)].admission_time =
          static_cast<std::int64_t>(rng.next_below(8)) * 86400;
      std::vector<int> codes;
      for (int c = 0; c < 8; ++c)
        if (rng.next_unit() < 0.4) codes.push_back(c);
      vs[static_cast<std::size_t>(i)].codes = std::move(codes);
    }
    graph::GraphConfig config;
    config.k_neighbors = 1 + static_cast<int>(rng.next_below(12));
    config.include_self_loop = rng.next_unit() < 0.8;

    graph::AdjacencyMatrix got = graph::build_visit_graph(vs, config);
    graph::AdjacencyMatrix want = oracle_graph(vs, config);
    if (!expect(ctx, got.nodes == want.nodes,
                "node count mismatch at trial " + std::to_string(trial)))
      return false;
    for (int t = 0; t < n; ++t) {
      const auto& ge = got.in_edges[static_cast<std::size_t>(t)];
      const auto& we = want.in_edges[static_cast<std::size_t>(t)];
      bool same = ge.size() == we.size();
      for (std::size_t k = 0; same && k < ge.size(); ++k)
        same = ge[k].src == we[k].src && ge[k].weight == we[k].weight;
      if (!expect(ctx, same,
                  "edge set mismatch at trial " + std::to_string(trial) +
                      " node " + std::to_string(t)))
        return false;
      for (const auto& e : ge)
        if (!expect(ctx,
                    vs[static_cast<std::size_t>(e.src)].admission_time <=
                        vs[static_cast<std::size_t>(t)].admission_time,
                    "causality violated at trial " + std::to_string(trial)))
          return false;
    }
    Matrix att = graph::attention_matrix(got);
    for (int t = 0; t < n; ++t) {
      if (got.in_edges[static_cast<std::size_t>(t)].empty()) continue;
      if (!expect(ctx, std::abs(att.row(t).sum() - 1.0) <= kRowSumTol,
                  "attention row sum off at trial " + std::to_string(trial)))
        return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 4: chunk-concatenate-average equals the whole-text average under
// the stub provider, exactly; note-less visits produce exact zero vectors.

bool criterion_text_repr(Context& ctx) {
  constexpr int kTexts = 100;
  SplitMix64 rng(0xACC4);
  auto provider = text::stub_provider(99, 16, 4096, 4.0);
  notes::ChunkingConfig chunking;
  chunking.token_budget = 12;  // forces several chunks per text

  for (int trial = 0; trial < kTexts; ++trial) {
    // Random words, occasional MED tokens, newlines and messy spacing.
    std::ostringstream text;
    int words = 1 + static_cast<int>(rng.next_below(120));
    for (int w = 0; w < words; ++w) {
      if (w > 0) text << (rng.next_unit() < 0.1 ? "\n" : " ");
      if (rng.next_unit() < 0.15)
        text << "MED" << rng.next_below(32);
      else
        text << "w" << rng.next_below(500);
      if (rng.next_unit() < 0.2) text << ".";
    }
    auto chunks = notes::chunk_note(text.str(), chunking);
    if (chunks.empty()) continue;

    std::vector<text::Matrix> states;
    std::vector<std::string> all_tokens;
    for (const auto& c : chunks) {
      states.push_back(text::extract_chunk_states(*provider, c, 3));
      auto toks = provider->tokenize(c.text);
      all_tokens.insert(all_tokens.end(), toks.begin(), toks.end());
    }
    Vector assembled = text::assemble_visit_representation(states);
    Matrix whole = provider->hidden_states(all_tokens, 3);
    Vector direct = whole.colwise().mean().transpose();
    if (!expect(ctx, (assembled.array() == direct.array()).all(),
                "chunked average differs from whole-text average at trial " +
                    std::to_string(trial)))
      return false;
  }

  // Missing notes land as exact zero rows via the extraction pipeline.
  emr::SynthConfig synth;
  synth.patients = 8;
  synth.note_probability = 0.5;
  emr::Dataset dataset = emr::generate_synthetic(synth, 5);
  emr::CorpusIndex index = emr::build_corpus_index(dataset);
  text::ExtractionConfig extraction;
  extraction.layer = 3;
  extraction.chunking = chunking;
  Matrix reps =
      pipeline::extract_text_matrix(dataset, index, *provider, extraction);
  int row = 0;
  bool saw_missing = false;
  for (const auto& p : dataset.patients)
    for (const auto& v : p.visits) {
      if (!v.note) {
        saw_missing = true;
        if (!expect(ctx, (reps.row(row).array() == 0.0).all(),
                    "note-less visit " + v.visit_id + " has a nonzero row"))
          return false;
      }
      ++row;
    }
  return expect(ctx, saw_missing, "fixture produced no note-less visits");
}

// ---------------------------------------------------------------------------
// Criterion 5: future-input perturbations cannot reach earlier visits.

bool bitwise_rows_equal(const Matrix& a, const Matrix& b, int upto_row) {
  for (int r = 0; r <= upto_row; ++r)
    if (!((a.row(r).array() == b.row(r).array()).all())) return false;
  return true;
}

bool criterion_causality(Context& ctx) {
  SplitMix64 rng(0xACC5);
  emr::SynthConfig synth;
  synth.patients = 8;
  synth.min_visits = 3;
  synth.max_visits = 5;
  emr::Dataset dataset = emr::generate_synthetic(synth, 11);
  emr::PreprocessResult pre = emr::build_vocabularies(std::move(dataset));
  emr::CorpusIndex index = emr::build_corpus_index(pre.dataset);

  const int text_dim = 12;
  Matrix text(static_cast<Eigen::Index>(index.visits.size()), text_dim);
  for (Eigen::Index i = 0; i < text.size(); ++i)
    text.data()[i] = 2.0 * rng.next_unit() - 1.0;
  model::CorpusInputs inputs =
      model::build_corpus_inputs(pre.dataset, pre.vocabularies, text);

  graph::GraphConfig gc;
  pipeline::GraphBundle graphs =
      pipeline::build_graphs(pre.dataset, pre.vocabularies, gc, true);
  std::vector<emr::Phase> phases(index.visits.size(), emr::Phase::train);
  model::PhaseAttention attention =
      pipeline::phase_attention(graphs, phases, emr::Phase::train, true);

  for (model::Mode mode : {model::Mode::codes_only, model::Mode::text_only,
                           model::Mode::combined}) {
    model::ModelConfig mc;
    mc.embed_dim = 8;
    mc.text_dim = text_dim;
    mc.attention_heads = 2;
    mc.ffn_mult = 2;
    mc.mode = mode;
    // Combined mode also routes the medication history through its graph.
    mc.med_history_through_graph = mode == model::Mode::combined;
    mc.init_seed = rng.next();  // random weights
    mc.diagnosis_vocab = pre.vocabularies.diagnosis.size();
    mc.procedure_vocab = pre.vocabularies.procedure.size();
    mc.medication_vocab = pre.vocabularies.medication.size();
    model::Recommender model(mc);

    int row0 = 0;
    for (const auto& patient : pre.dataset.patients) {
      int T = static_cast<int>(patient.visits.size());
      std::vector<int> rows(static_cast<std::size_t>(T));
      for (int i = 0; i < T; ++i) rows[static_cast<std::size_t>(i)] = row0 + i;
      Matrix base = model.predict(inputs, attention, rows);

      for (int t = 0; t + 1 < T; ++t) {
        int future = row0 + t + 1;
        // Encoder-side inputs: codes and text of visit t+1.
        model::CorpusInputs enc = inputs;
        enc.diag_mh.row(future).setOnes();
        enc.proc_mh.row(future).setOnes();
        enc.text.row(future).array() += 3.5;
        Matrix enc_out = model.predict(enc, attention, rows);
        if (!expect(ctx, bitwise_rows_equal(base, enc_out, t),
                    "encoder-side perturbation leaked backwards (mode " +
                        std::string(model::mode_name(mode)) + ")"))
          return false;
        // Decoder-side input: the medication history of visit t+1.
        model::CorpusInputs dec = inputs;
        dec.med_mh.row(future).setOnes();
        Matrix dec_out = model.predict(dec, attention, rows);
        if (!expect(ctx, bitwise_rows_equal(base, dec_out, t),
                    "decoder-side perturbation leaked backwards (mode " +
                        std::string(model::mode_name(mode)) + ")"))
          return false;
        // Full forward: every input of visit t+1 at once.
        model::CorpusInputs all = enc;
        all.med_mh.row(future).setOnes();
        Matrix all_out = model.predict(all, attention, rows);
        if (!expect(ctx, bitwise_rows_equal(base, all_out, t),
                    "full-forward perturbation leaked backwards (mode " +
                        std::string(model::mode_name(mode)) + ")"))
          return false;
      }
      row0 += T;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Shared experiment plumbing for criteria 6, 7 and 9.

struct Corpus {
  emr::Dataset dataset;
  emr::Vocabularies vocabs;
  emr::DatasetSplit split;
  emr::CorpusIndex index;
  std::vector<emr::Phase> phases;
  model::CorpusInputs inputs;
  model::PhaseAttention train_att, val_att, test_att;
  pipeline::PhasePatients groups;
  int text_dim = 0;
};

Corpus make_corpus(const emr::SynthConfig& synth, std::uint64_t seed,
                   int stub_dim, double signal_scale) {
  Corpus c;
  emr::Dataset raw = emr::generate_synthetic(synth, seed);
  emr::PreprocessResult pre = emr::build_vocabularies(std::move(raw));
  pre = emr::filter_consistent_codes(std::move(pre.dataset));
  c.dataset = std::move(pre.dataset);
  c.vocabs = std::move(pre.vocabularies);
  c.split = emr::split_dataset(c.dataset, seed);
  c.index = emr::build_corpus_index(c.dataset);
  c.phases = emr::visit_phases(c.dataset, c.split);
  c.text_dim = stub_dim;

  auto provider = text::stub_provider(seed, stub_dim, 4096, signal_scale);
  text::ExtractionConfig extraction;
  extraction.layer = 3;
  Matrix text =
      pipeline::extract_text_matrix(c.dataset, c.index, *provider, extraction);
  c.inputs = model::build_corpus_inputs(c.dataset, c.vocabs, text);

  graph::GraphConfig gc;
  pipeline::GraphBundle graphs =
      pipeline::build_graphs(c.dataset, c.vocabs, gc, false);
  c.train_att =
      pipeline::phase_attention(graphs, c.phases, emr::Phase::train, false);
  c.val_att = pipeline::phase_attention(graphs, c.phases,
                                        emr::Phase::validation, false);
  c.test_att =
      pipeline::phase_attention(graphs, c.phases, emr::Phase::test, false);
  c.groups = pipeline::group_patients(c.dataset, c.split);
  return c;
}

model::ModelConfig desk_model(const Corpus& c, model::Mode mode,
                              std::uint64_t init_seed) {
  model::ModelConfig mc;
  mc.embed_dim = 32;
  mc.text_dim = c.text_dim;
  mc.attention_heads = 4;
  mc.ffn_mult = 2;
  mc.gcn_dropout = 0.0;
  mc.mode = mode;
  mc.init_seed = init_seed;
  mc.diagnosis_vocab = c.vocabs.diagnosis.size();
  mc.procedure_vocab = c.vocabs.procedure.size();
  mc.medication_vocab = c.vocabs.medication.size();
  return mc;
}

double jaccard_of(const model::Recommender& model, const Corpus& c,
                  const model::PhaseAttention& att,
                  const std::vector<std::vector<int>>& patients) {
  graph::DDIMatrix ddi(c.vocabs.medication.size());
  return metrics::evaluate(model, c.inputs, att, patients, ddi).jaccard;
}

train::TrainResult run_training(model::Recommender& model, const Corpus& c,
                                int epochs, double lr, int batch,
                                std::uint64_t seed) {
  train::TrainingData data;
  data.inputs = c.inputs;
  data.train_attention = c.train_att;
  data.validation_attention = c.val_att;
  data.train_patients = c.groups.train;
  data.validation_patients = c.groups.validation;
  train::OptimizerConfig opt;
  opt.learning_rate = lr;
  opt.epochs = epochs;
  opt.batch_size = batch;
  opt.warmup_fraction = 0.05;
  opt.min_learning_rate = lr;  // constant rate after warmup
  opt.seed = seed;
  opt.keep_top_k = 5;
  train::LossConfig loss;
  return train::train(model, data, opt, loss);
}

// ---------------------------------------------------------------------------
// Criterion 6: mode C overfits a code-determined corpus.

bool criterion_overfit(Context& ctx) {
  constexpr double kTarget = 0.95;
  emr::SynthConfig synth;
  synth.patients = 50;
  // Medications are a pure function of the diagnoses: no note-only extras.
  synth.extra_medications_min = 0;
  synth.extra_medications_max = 0;
  synth.note_probability = 0.0;
  Corpus c = make_corpus(synth, 2024, 16, 4.0);

  model::Recommender model(desk_model(c, model::Mode::codes_only, 7));
  train::TrainResult result = run_training(model, c, 100, 0.005, 4, 7);
  if (std::getenv("NOTECODE_ACCEPT_VERBOSE"))
    for (const auto& e : result.history)
      std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val "
                << e.val_jaccard << " lr " << e.learning_rate << "\n";
  double train_jaccard = jaccard_of(model, c, c.train_att, c.groups.train);
  return expect(ctx, train_jaccard >= kTarget,
                "train jaccard " + std::to_string(train_jaccard) + " < " +
                    std::to_string(kTarget));
}

// ---------------------------------------------------------------------------
// Criterion 7: text carries the planted signal — combined beats codes-only.

bool criterion_directional(Context& ctx) {
  constexpr double kCombinedMargin = 0.05;
  constexpr double kTextBand = 0.10;
  const std::uint64_t seeds[3] = {101, 202, 303};
  double sum_c = 0.0, sum_t = 0.0, sum_ct = 0.0;

  for (std::uint64_t seed : seeds) {
    emr::SynthConfig synth;
    synth.patients = 120;
    synth.min_visits = 2;
    synth.max_visits = 4;
    Corpus c = make_corpus(synth, seed, 32, 20.0);
    for (model::Mode mode : {model::Mode::codes_only, model::Mode::text_only,
                             model::Mode::combined}) {
      model::Recommender model(desk_model(c, mode, seed * 13 + 1));
      train::TrainResult result = run_training(model, c, 150, 0.005, 4, seed);
      if (!result.top_checkpoints.empty())
        model.params() = result.top_checkpoints.front().params;
      double j = jaccard_of(model, c, c.test_att, c.groups.test);
      if (mode == model::Mode::codes_only) sum_c += j;
      if (mode == model::Mode::text_only) sum_t += j;
      if (mode == model::Mode::combined) sum_ct += j;
    }
  }
  double jc = sum_c / 3.0, jt = sum_t / 3.0, jct = sum_ct / 3.0;
  std::ostringstream detail;
  detail << "mean test jaccard C=" << jc << " T=" << jt << " C+T=" << jct;
  bool ok = jct >= jc + kCombinedMargin && std::abs(jt - jc) <= kTextBand;
  if (!ok) ctx.detail = detail.str();
  std::cout << "       (" << detail.str() << ")\n";
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 8: split ratios and edge-placement rules.

bool criterion_split(Context& ctx) {
  constexpr int kTrials = 100;
  SplitMix64 rng(0xACC8);
  for (int trial = 0; trial < kTrials; ++trial) {
    int n = 6 + static_cast<int>(rng.next_below(60));
    emr::SynthConfig synth;
    synth.patients = n;
    synth.note_probability = 0.0;
    emr::Dataset dataset = emr::generate_synthetic(synth, rng.next());
    emr::DatasetSplit split = emr::split_dataset(dataset, rng.next());

    double train_q = n * 4.0 / 6.0, vq = n / 6.0;
    if (!expect(ctx,
                std::abs(static_cast<double>(split.train.size()) - train_q) <=
                        1.0 &&
                    std::abs(static_cast<double>(split.validation.size()) -
                             vq) <= 1.0 &&
                    std::abs(static_cast<double>(split.test.size()) - vq) <=
                        1.0 &&
                    split.train.size() + split.validation.size() +
                            split.test.size() ==
                        static_cast<std::size_t>(n),
                "split ratio off at trial " + std::to_string(trial)))
      return false;

    // Random directed edges over the visit universe.
    std::vector<emr::Phase> phases = emr::visit_phases(dataset, split);
    int visits = dataset.total_visits();
    std::vector<emr::VisitEdge> edges;
    for (int e = 0; e < 3 * visits; ++e) {
      int a = static_cast<int>(rng.next_below(
          static_cast<std::uint64_t>(visits)));
      int b = static_cast<int>(rng.next_below(
          static_cast<std::uint64_t>(visits)));
      edges.push_back({a, b, rng.next_unit()});
    }
    emr::SplitEdgeLists lists = emr::split_edges(edges, phases);

    auto phase_of = [&](int v) { return phases[static_cast<std::size_t>(v)]; };
    auto count_if_rule = [&](const std::vector<emr::VisitEdge>& got,
                             emr::Phase own) {
      // Expected: train edges plus own-partition edges, in input order.
      std::vector<emr::VisitEdge> want;
      for (const auto& e : edges) {
        bool both_train = phase_of(e.src) == emr::Phase::train &&
                          phase_of(e.dst) == emr::Phase::train;
        bool both_own = phase_of(e.src) == own && phase_of(e.dst) == own;
        if (both_train || (own != emr::Phase::train && both_own))
          want.push_back(e);
      }
      if (got.size() != want.size()) return false;
      for (std::size_t i = 0; i < got.size(); ++i)
        if (got[i].src != want[i].src || got[i].dst != want[i].dst ||
            got[i].weight != want[i].weight)
          return false;
      return true;
    };
    // Rules 1-3: exact membership for each partition's list.
    if (!expect(ctx, count_if_rule(lists.train, emr::Phase::train),
                "train edge rule broken at trial " + std::to_string(trial)))
      return false;
    if (!expect(ctx, count_if_rule(lists.validation, emr::Phase::validation),
                "validation edge rule broken at trial " +
                    std::to_string(trial)))
      return false;
    if (!expect(ctx, count_if_rule(lists.test, emr::Phase::test),
                "test edge rule broken at trial " + std::to_string(trial)))
      return false;
    // Rule 4: no cross-partition edge anywhere.
    for (const auto* list : {&lists.train, &lists.validation, &lists.test})
      for (const auto& e : *list)
        if (!expect(ctx, phase_of(e.src) == phase_of(e.dst),
                    "cross-partition edge survived at trial " +
                        std::to_string(trial)))
          return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 9: checkpoint averaging, exact mean and validation quality.

bool criterion_checkpoint_averaging(Context& ctx) {
  // Exact elementwise mean on a three-checkpoint fixture. Values are small
  // integers so the mean is exact in floating point.
  std::vector<train::Checkpoint> fixture(3);
  double bases[3] = {1.0, 2.0, 6.0};
  for (int i = 0; i < 3; ++i) {
    fixture[static_cast<std::size_t>(i)].epoch = i;
    fixture[static_cast<std::size_t>(i)].val_jaccard = 0.5;
    Matrix w(2, 3);
    for (Eigen::Index k = 0; k < w.size(); ++k)
      w.data()[k] = bases[i] * static_cast<double>(k + 1);
    fixture[static_cast<std::size_t>(i)].params.insert("w", w);
    fixture[static_cast<std::size_t>(i)].params.insert(
        "b", Matrix::Constant(1, 2, bases[i]));
  }
  nn::ParamStore averaged = train::average_top_checkpoints(fixture, 5);
  Matrix want_w(2, 3);
  for (Eigen::Index k = 0; k < want_w.size(); ++k)
    want_w.data()[k] = 3.0 * static_cast<double>(k + 1);  // mean(1,2,6) = 3
  if (!expect(ctx,
              (averaged.at("w").array() == want_w.array()).all() &&
                  (averaged.at("b").array() == 3.0).all(),
              "averaged parameters differ from the hand-computed mean"))
    return false;

  // The averaged model scores close to the best single checkpoint.
  emr::SynthConfig synth;
  synth.patients = 120;
  synth.extra_medications_min = 0;
  synth.extra_medications_max = 0;
  synth.note_probability = 0.0;
  Corpus c = make_corpus(synth, 424, 16, 4.0);
  model::Recommender model(desk_model(c, model::Mode::codes_only, 3));
  train::TrainResult result = run_training(model, c, 60, 0.005, 4, 3);
  if (!expect(ctx, !result.top_checkpoints.empty(), "no checkpoints kept"))
    return false;

  model::Recommender best_model(model.config());
  best_model.params() = result.top_checkpoints.front().params;
  double best = jaccard_of(best_model, c, c.val_att, c.groups.validation);

  model::Recommender avg_model(model.config());
  avg_model.params() = train::average_top_checkpoints(result.top_checkpoints, 5);
  double avg = jaccard_of(avg_model, c, c.val_att, c.groups.validation);

  std::ostringstream detail;
  detail << "best " << best << " vs averaged " << avg;
  std::cout << "       (" << detail.str() << ")\n";
  return expect(ctx, std::abs(best - avg) <= 0.05, detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 10: fusion adapter properties.

bool criterion_fusion(Context& ctx) {
  using fusion::Activation;
  using fusion::FeedForward;
  SplitMix64 rng(0xACCA);
  auto rvec = [&rng](Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = 2.0 * rng.next_unit() - 1.0;
    return v;
  };
  auto rmat = [&rng](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = 2.0 * rng.next_unit() - 1.0;
    return m;
  };

  // Shapes, determinism, and text sensitivity for the vector-level adapters.
  Vector dh = rvec(3), mh = rvec(3), vd = rvec(3), rp = rvec(4);
  Matrix w1 = rmat(5, 13);
  Vector b = rvec(5);
  Vector g1 = fusion::fuse_gbert(dh, mh, vd, rp, w1, b);
  Vector g2 = fusion::fuse_gbert(dh, mh, vd, rp, w1, b);
  Vector g3 = fusion::fuse_gbert(dh, mh, vd, (rp.array() + 1.0).matrix(), w1, b);
  if (!expect(ctx,
              g1.size() == 5 && (g1.array() == g2.array()).all() &&
                  (g1.array() > 0.0).all() && (g1.array() < 1.0).all() &&
                  (g1 - g3).cwiseAbs().maxCoeff() > 0.0,
              "gbert adapter shape/determinism/sensitivity"))
    return false;

  fusion::GamenetParams gp;
  gp.query = {Matrix::Identity(10, 10), Vector::Zero(10),
              Activation::identity};
  gp.output_w = rmat(4, 16);
  gp.output_b = rvec(4);
  Vector od = rvec(3), op = rvec(3);
  auto ga = fusion::fuse_gamenet(dh, mh, rp, gp, od, op);
  auto gb = fusion::fuse_gamenet(dh, mh, rp, gp, od, op);
  auto gc2 = fusion::fuse_gamenet(dh, mh, (rp.array() * 2.0 + 1.0).matrix(),
                                  gp, od, op);
  bool gamenet_ok =
      ga.query.size() == 10 && ga.probabilities.size() == 4 &&
      (ga.query.segment(0, 3) - dh).cwiseAbs().maxCoeff() == 0.0 &&
      (ga.query.segment(6, 4) - rp).cwiseAbs().maxCoeff() == 0.0 &&
      (ga.probabilities - gb.probabilities).cwiseAbs().maxCoeff() == 0.0 &&
      (ga.probabilities - gc2.probabilities).cwiseAbs().maxCoeff() > 0.0;
  if (!expect(ctx, gamenet_ok, "gamenet adapter query/round-trip/sensitivity"))
    return false;

  FeedForward nn1{Matrix::Identity(10, 10), Vector::Zero(10),
                  Activation::identity};
  Vector sd = fusion::fuse_safedrug(dh, mh, rp, nn1);
  bool safedrug_ok =
      sd.size() == 10 && (sd.segment(0, 3) - dh).cwiseAbs().maxCoeff() == 0.0 &&
      (sd.segment(3, 3) - mh).cwiseAbs().maxCoeff() == 0.0 &&
      (sd.segment(6, 4) - rp).cwiseAbs().maxCoeff() == 0.0;
  if (!expect(ctx, safedrug_ok, "safedrug concatenation round-trip"))
    return false;

  // Attention softmax rows and the conditioned decoder states.
  int d = 4, t = 3;
  fusion::CognetParams cp;
  auto attn = [&]() {
    fusion::AttentionParams a;
    a.wq = rmat(d, d);
    a.wk = rmat(d, d);
    a.wv = rmat(d, d);
    a.wo = rmat(d, d);
    a.bo = Vector::Zero(d);
    a.heads = 2;
    return a;
  };
  cp.diag_attn = attn();
  cp.proc_attn = attn();
  cp.text_attn = attn();
  cp.norm_gain = Vector::Ones(d);
  cp.norm_bias = Vector::Zero(d);
  cp.head_w = rmat(d, 6);
  cp.head_b = rvec(6);
  Matrix m_hat = rmat(t, d), denc = rmat(t, d), penc = rmat(t, d),
         rseq = rmat(t, d);
  auto co1 = fusion::fuse_cognet(m_hat, denc, penc, rseq, cp);
  auto co2 = fusion::fuse_cognet(m_hat, denc, penc, rseq, cp);
  auto co3 = fusion::fuse_cognet(m_hat, denc, penc,
                                 (rseq.array() + 0.7).matrix(), cp);
  bool cognet_ok = co1.conditioned.rows() == t && co1.token_probs.cols() == 6 &&
                   (co1.conditioned - co2.conditioned).cwiseAbs().maxCoeff() ==
                       0.0 &&
                   (co1.conditioned - co3.conditioned).cwiseAbs().maxCoeff() >
                       0.0;
  for (int r = 0; r < t; ++r) {
    cognet_ok = cognet_ok &&
                std::abs(co1.token_probs.row(r).sum() - 1.0) <= 1e-6 &&
                co1.token_probs.row(r).minCoeff() >= 0.0;
  }
  if (!expect(ctx, cognet_ok, "cognet conditioning/token softmax"))
    return false;

  Matrix rss = rmat(4, 3), rt = rmat(1, 3);
  Vector vds = rvec(4), vps = rvec(4);
  auto cs_base = fusion::cognet_visit_scores(rss, rt, vds, vps, 0.4, 0.6, 2.0);
  auto cs_text =
      fusion::cognet_visit_scores(rss, rt, vds, vps, 0.4, 0.6, 2.0, true);
  bool scores_ok = std::abs(cs_base.scores.sum() - 1.0) <= 1e-6 &&
                   cs_base.scores.minCoeff() >= 0.0 &&
                   (cs_base.scores - cs_text.scores).cwiseAbs().maxCoeff() >
                       0.0;
  if (!expect(ctx, scores_ok, "visit score softmax/text-term sensitivity"))
    return false;

  Vector vm = rvec(2);
  Vector shape = fusion::fuse_shape(dh, mh, vm, rp);
  bool shape_ok = shape.size() == 12 &&
                  (shape.segment(0, 3) - dh).cwiseAbs().maxCoeff() == 0.0 &&
                  (shape.segment(3, 3) - mh).cwiseAbs().maxCoeff() == 0.0 &&
                  (shape.segment(6, 2) - vm).cwiseAbs().maxCoeff() == 0.0 &&
                  (shape.segment(8, 4) - rp).cwiseAbs().maxCoeff() == 0.0;
  if (!expect(ctx, shape_ok, "shape concatenation round-trip")) return false;

  fusion::Mlp identity;
  identity.layers = {FeedForward{Matrix::Identity(12, 12), Vector::Zero(12),
                                 Activation::identity}};
  Vector strat = fusion::fuse_stratmed(dh, mh, vm, rp, identity,
                                       fusion::StratmedStage::train);
  if (!expect(ctx,
              (strat - shape).cwiseAbs().maxCoeff() == 0.0,
              "stratmed identity MLP differs from plain concatenation"))
    return false;

  // Threshold rule boundary cases: inclusive cut, all-below, exact hits.
  Vector eh(4);
  eh << 0.9, 0.5, 0.5 - 1e-12, 0.1;
  bool select_ok =
      fusion::stratmed_select(eh, 0.5) == std::vector<int>{1, 1, 0, 0} &&
      fusion::stratmed_select(eh, 0.95) == std::vector<int>{0, 0, 0, 0} &&
      fusion::stratmed_select(eh, 0.1) == std::vector<int>{1, 1, 1, 1} &&
      fusion::stratmed_select(eh, 0.9) == std::vector<int>{1, 0, 0, 0};
  return expect(ctx, select_ok, "stratmed threshold boundary cases");
}

// ---------------------------------------------------------------------------
// Criterion 11: CLI end-to-end determinism.

bool run_cli(const Context& ctx, const std::string& args) {
  std::string cmd = ctx.cli_path + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

bool criterion_cli_determinism(Context& ctx) {
  if (ctx.cli_path.empty())
    return expect(ctx, false, "pass --cli <path to the pipeline binary>");
  fs::path dir = ctx.scratch / "determinism";
  std::string out = (dir / "run").string();
  std::string common = " --out " + out + " --seed 31";

  auto one_run = [&](const fs::path& keep) -> bool {
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir);
    bool ok = run_cli(ctx, "synth --patients 18" + common) &&
              run_cli(ctx, "preprocess" + common) &&
              run_cli(ctx, "extract" + common) &&
              run_cli(ctx, "build-graph" + common) &&
              run_cli(ctx, "train --mode C+T --epochs 3" + common) &&
              run_cli(ctx, "evaluate --mode C+T" + common);
    if (!ok) return false;
    fs::copy_file(fs::path(out) / "eval" / "ct.json", keep,
                  fs::copy_options::overwrite_existing);
    return true;
  };

  fs::create_directories(ctx.scratch);
  fs::path first = ctx.scratch / "eval_first.json";
  fs::path second = ctx.scratch / "eval_second.json";
  if (!expect(ctx, one_run(first), "first pipeline run failed")) return false;
  if (!expect(ctx, one_run(second), "second pipeline run failed"))
    return false;
  std::string a = read_text_file(first.string());
  std::string b = read_text_file(second.string());
  if (!expect(ctx, !a.empty() && a == b,
              "evaluation reports differ between runs"))
    return false;
  std::error_code ec;
  fs::remove_all(dir, ec);
  return true;
}

// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  const char* name;
  bool (*run)(Context&);
};

const Criterion kCriteria[] = {
    {1, "evaluation metrics match brute-force oracles", criterion_metrics},
    {2, "loss gradients match central finite differences",
     criterion_gradients},
    {3, "visit graph matches the exhaustive oracle", criterion_graph},
    {4, "chunked text averaging is exact; missing notes are zero",
     criterion_text_repr},
    {5, "future-visit perturbations never reach earlier outputs",
     criterion_causality},
    {6, "codes-only training overfits a code-determined corpus",
     criterion_overfit},
    {7, "text signal lifts combined-mode test jaccard",
     criterion_directional},
    {8, "4:1:1 split ratios and edge-placement rules hold", criterion_split},
    {9, "checkpoint averaging is exact and holds validation quality",
     criterion_checkpoint_averaging},
    {10, "fusion adapters satisfy their contracts", criterion_fusion},
    {11, "CLI pipeline is bitwise deterministic", criterion_cli_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.scratch = fs::temp_directory_path() / "notecode_acceptance";
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) {
      ctx.cli_path = argv[++i];
    } else if (arg == "all") {
      selected.clear();
    } else {
      try {
        selected.push_back(std::stoi(arg));
      } catch (const std::exception&) {
        std::cerr << "unknown argument: " << arg << "\n";
        return 1;
      }
    }
  }

  int failures = 0;
  for (const Criterion& c : kCriteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), c.id) == selected.end())
      continue;
    ctx.detail.clear();
    auto start = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = c.run(ctx);
    } catch (const std::exception& e) {
      ctx.detail = std::string("exception: ") + e.what();
    }
    auto secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - start)
                    .count();
    char line[512];
    if (ok) {
      std::snprintf(line, sizeof line, "[PASS] %d: %s (%.1fs)", c.id, c.name,
                    secs);
    } else {
      std::snprintf(line, sizeof line, "[FAIL] %d: %s (%s)", c.id, c.name,
                    ctx.detail.empty() ? "no detail" : ctx.detail.c_str());
      ++failures;
    }
    std::cout << line << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
