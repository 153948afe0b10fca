#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "notecode/emr_data.hpp"
#include "notecode/nn.hpp"
#include "notecode/visit_graph.hpp"

namespace notecode::model {

using ad::Matrix;

enum class Mode { codes_only, text_only, combined };
const char* mode_name(Mode mode);
Mode mode_from_string(const std::string& name);

struct ModelConfig {
  int embed_dim = 128;  // width of the code path and the decoder
  int text_dim = 4096;  // width of stored text representations
  int attention_heads = 4;
  int encoder_layers = 1;
  int decoder_layers = 1;
  int ffn_mult = 4;
  double gcn_dropout = 0.5;  // training-mode dropout on aggregated inputs
  Mode mode = Mode::combined;
  // When false the decoder consumes summed medication embeddings; when true
  // the history also passes through the medication visit graph.
  bool med_history_through_graph = false;
  std::uint64_t init_seed = 1;
  int diagnosis_vocab = 0;
  int procedure_vocab = 0;
  int medication_vocab = 0;
  void validate() const;
  bool uses_codes() const { return mode != Mode::text_only; }
  bool uses_text() const { return mode != Mode::codes_only; }
};

// Corpus-level inputs shared by every phase.
struct CorpusInputs {
  Matrix diag_mh;  // visits x diagnosis vocab
  Matrix proc_mh;  // visits x procedure vocab
  Matrix med_mh;   // visits x medication vocab (history and targets)
  Matrix text;     // visits x text_dim
};

// Row-stochastic attention matrices for the active phase.
struct PhaseAttention {
  Matrix diag;
  Matrix proc;
  Matrix med;  // may be empty unless med history goes through the graph
};

// Corpus-wide activations reused by every patient in a batch.
struct CorpusVars {
  ad::Var visit;     // visits x d, f(h_d + h_p); invalid in text-only mode
  ad::Var med_hist;  // visits x d
  ad::Var text;      // visits x text_dim; invalid in codes-only mode
};

struct ForwardVars {
  ad::Var logits;         // T x medication vocab
  ad::Var probabilities;  // sigmoid(logits)
};

class Recommender {
 public:
  explicit Recommender(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Embedding, graph convolution and visit aggregation over the whole
  // corpus. Dropout fires only when training.
  CorpusVars corpus_forward(ad::Tape& tape, nn::Binding& bind,
                            const CorpusInputs& inputs,
                            const PhaseAttention& attention, bool training,
                            SplitMix64* dropout_rng) const;

  // Sequence encoders, decoder and output head for one patient; `rows` are
  // the patient's visit indices in corpus order.
  ForwardVars patient_forward(ad::Tape& tape, nn::Binding& bind,
                              const CorpusVars& corpus,
                              const std::vector<int>& rows) const;

  // Evaluation-mode probabilities for one patient (fresh tape inside).
  Matrix predict(const CorpusInputs& inputs, const PhaseAttention& attention,
                 const std::vector<int>& rows) const;
  // Shares one corpus pass across patients.
  std::vector<Matrix> predict_many(
      const CorpusInputs& inputs, const PhaseAttention& attention,
      const std::vector<std::vector<int>>& patients) const;

 private:
  ad::Var gcn_on_tape(ad::Tape& tape, nn::Binding& bind,
                      const std::string& prefix, ad::Var embeddings,
                      const Matrix& attention, bool training,
                      SplitMix64* dropout_rng) const;

  ModelConfig config_;
  nn::ParamStore params_;
};

// Sum of embedding rows selected by the multi-hot vector.
Eigen::RowVectorXd embed_codes(const Matrix& embedding,
                               const emr::MultiHotVector& codes);
// relu((h_d + h_p) W + b); one-layer feed-forward visit aggregation.
Matrix aggregate_diag_proc(const Matrix& h_diag, const Matrix& h_proc,
                           const Matrix& weight,
                           const Eigen::RowVectorXd& bias);
// Bias-free projection of text states onto the code width.
Matrix project_text(const Matrix& text_states, const Matrix& projection);
// Element-wise sum of the two encoder outputs; enforces mode requirements.
Matrix combine(const std::optional<Matrix>& codes,
               const std::optional<Matrix>& text, Mode mode);
Matrix predict_probabilities(const Matrix& logits);
// Indices with probability >= threshold, ascending.
std::vector<int> select_medications(const Eigen::RowVectorXd& probabilities,
                                    double threshold = 0.5);

// Dense multi-hot corpus tensors in corpus-index order.
CorpusInputs build_corpus_inputs(const emr::Dataset& dataset,
                                 const emr::Vocabularies& vocabs,
                                 const Matrix& text);

}  // namespace notecode::model
