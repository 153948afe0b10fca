#include "notecode/recommender.hpp"

#include <algorithm>

namespace notecode::model {

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::codes_only:
      return "C";
    case Mode::text_only:
      return "T";
    case Mode::combined:
      return "C+T";
  }
  return "?";
}

Mode mode_from_string(const std::string& name) {
  if (name == "C" || name == "codes" || name == "codes_only")
    return Mode::codes_only;
  if (name == "T" || name == "text" || name == "text_only")
    return Mode::text_only;
  if (name == "C+T" || name == "combined") return Mode::combined;
  throw ConfigError("unknown mode: " + name + " (expected C, T or C+T)");
}

void ModelConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (attention_heads < 1 || embed_dim % attention_heads != 0)
    throw ConfigError("attention heads must divide embed_dim");
  if (encoder_layers < 1 || decoder_layers < 1)
    throw ConfigError("need at least one encoder and decoder layer");
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be positive");
  if (gcn_dropout < 0.0 || gcn_dropout >= 1.0)
    throw ConfigError("gcn_dropout must be in [0, 1)");
  if (medication_vocab < 1)
    throw ConfigError("medication vocabulary must be non-empty");
  if (uses_codes() && (diagnosis_vocab < 1 || procedure_vocab < 1))
    throw ConfigError("code vocabularies must be non-empty in this mode");
  if (uses_text()) {
    if (text_dim < 1) throw ConfigError("text_dim must be positive");
    if (text_dim % attention_heads != 0)
      throw ConfigError("attention heads must divide text_dim");
  }
}

Recommender::Recommender(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  SplitMix64 rng(config_.init_seed);
  int d = config_.embed_dim;
  int ffn = d * config_.ffn_mult;
  if (config_.uses_codes()) {
    params_.insert("embed.diag.W",
                   nn::uniform_init(config_.diagnosis_vocab, d, d, rng));
    params_.insert("embed.proc.W",
                   nn::uniform_init(config_.procedure_vocab, d, d, rng));
    nn::init_linear(params_, "gcn.diag", d, d, rng);
    nn::init_linear(params_, "gcn.proc", d, d, rng);
    nn::init_linear(params_, "agg", d, d, rng);
    for (int l = 0; l < config_.encoder_layers; ++l)
      nn::init_encoder_layer(params_, "code_enc.l" + std::to_string(l), d,
                             ffn, rng);
  }
  params_.insert("embed.med.W",
                 nn::uniform_init(config_.medication_vocab, d, d, rng));
  if (config_.med_history_through_graph)
    nn::init_linear(params_, "gcn.med", d, d, rng);
  if (config_.uses_text()) {
    int h = config_.text_dim;
    for (int l = 0; l < config_.encoder_layers; ++l)
      nn::init_encoder_layer(params_, "text_enc.l" + std::to_string(l), h,
                             h * config_.ffn_mult, rng);
    params_.insert("proj.W", nn::uniform_init(h, d, h, rng));
  }
  params_.insert("decoder.start", nn::uniform_init(1, d, d, rng));
  for (int l = 0; l < config_.decoder_layers; ++l)
    nn::init_decoder_layer(params_, "dec.l" + std::to_string(l), d, ffn, rng);
  nn::init_linear(params_, "out", d, config_.medication_vocab, rng);
}

ad::Var Recommender::gcn_on_tape(ad::Tape& tape, nn::Binding& bind,
                                 const std::string& prefix,
                                 ad::Var embeddings, const Matrix& attention,
                                 bool training,
                                 SplitMix64* dropout_rng) const {
  if (attention.rows() != tape.val(embeddings).rows() ||
      attention.cols() != tape.val(embeddings).rows())
    throw ShapeError("attention matrix must be visits x visits");
  ad::Var agg = tape.matmul(tape.constant(attention), embeddings);
  if (training && config_.gcn_dropout > 0.0) {
    if (!dropout_rng) throw ConfigError("training forward needs an rng");
    agg = tape.dropout(agg, config_.gcn_dropout, true, *dropout_rng);
  }
  return tape.relu(nn::linear(tape, bind, prefix, agg));
}

CorpusVars Recommender::corpus_forward(ad::Tape& tape, nn::Binding& bind,
                                       const CorpusInputs& inputs,
                                       const PhaseAttention& attention,
                                       bool training,
                                       SplitMix64* dropout_rng) const {
  CorpusVars out;
  Eigen::Index n = inputs.med_mh.rows();
  if (config_.uses_codes()) {
    if (inputs.diag_mh.rows() != n || inputs.proc_mh.rows() != n)
      throw ShapeError("corpus inputs disagree on visit count");
    ad::Var e_diag =
        tape.matmul(tape.constant(inputs.diag_mh), bind("embed.diag.W"));
    ad::Var e_proc =
        tape.matmul(tape.constant(inputs.proc_mh), bind("embed.proc.W"));
    ad::Var h_diag = gcn_on_tape(tape, bind, "gcn.diag", e_diag,
                                 attention.diag, training, dropout_rng);
    ad::Var h_proc = gcn_on_tape(tape, bind, "gcn.proc", e_proc,
                                 attention.proc, training, dropout_rng);
    out.visit = tape.relu(
        nn::linear(tape, bind, "agg", tape.add(h_diag, h_proc)));
  }
  ad::Var e_med =
      tape.matmul(tape.constant(inputs.med_mh), bind("embed.med.W"));
  if (config_.med_history_through_graph) {
    out.med_hist = gcn_on_tape(tape, bind, "gcn.med", e_med, attention.med,
                               training, dropout_rng);
  } else {
    out.med_hist = e_med;
  }
  if (config_.uses_text()) {
    if (inputs.text.rows() != n)
      throw ShapeError("text matrix disagrees on visit count");
    if (inputs.text.cols() != config_.text_dim)
      throw ShapeError("text matrix width != text_dim");
    out.text = tape.constant(inputs.text);
  }
  return out;
}

ForwardVars Recommender::patient_forward(ad::Tape& tape, nn::Binding& bind,
                                         const CorpusVars& corpus,
                                         const std::vector<int>& rows) const {
  if (rows.empty()) throw ConfigError("patient has no visits");
  int t_len = static_cast<int>(rows.size());
  ad::BoolMask mask = nn::causal_mask(t_len);
  int d = config_.embed_dim;

  ad::Var memory;
  ad::Var code_memory, text_memory;
  if (config_.uses_codes()) {
    ad::Var seq = tape.gather_rows(corpus.visit, rows);
    seq = tape.add(seq, tape.constant(nn::sinusoidal_positions(t_len, d)));
    for (int l = 0; l < config_.encoder_layers; ++l)
      seq = nn::encoder_layer(tape, bind, "code_enc.l" + std::to_string(l),
                              seq, config_.attention_heads, &mask);
    code_memory = seq;
  }
  if (config_.uses_text()) {
    int h = config_.text_dim;
    ad::Var seq = tape.gather_rows(corpus.text, rows);
    seq = tape.add(seq, tape.constant(nn::sinusoidal_positions(t_len, h)));
    for (int l = 0; l < config_.encoder_layers; ++l)
      seq = nn::encoder_layer(tape, bind, "text_enc.l" + std::to_string(l),
                              seq, config_.attention_heads, &mask);
    text_memory = tape.matmul(seq, bind("proj.W"));
  }
  switch (config_.mode) {
    case Mode::codes_only:
      memory = code_memory;
      break;
    case Mode::text_only:
      memory = text_memory;
      break;
    case Mode::combined:
      memory = tape.add(code_memory, text_memory);
      break;
  }

  // Medication history shifted right: the first position sees only the
  // learned start embedding.
  std::vector<ad::Var> hist_parts = {bind("decoder.start")};
  if (t_len > 1) {
    std::vector<int> hist_rows(rows.begin(), rows.end() - 1);
    hist_parts.push_back(tape.gather_rows(corpus.med_hist, hist_rows));
  }
  ad::Var target = tape.vconcat(hist_parts);
  target = tape.add(target, tape.constant(nn::sinusoidal_positions(t_len, d)));
  for (int l = 0; l < config_.decoder_layers; ++l)
    target = nn::decoder_layer(tape, bind, "dec.l" + std::to_string(l),
                               target, memory, config_.attention_heads, &mask,
                               &mask);
  ForwardVars out;
  out.logits = nn::linear(tape, bind, "out", target);
  out.probabilities = tape.sigmoid(out.logits);
  return out;
}

Matrix Recommender::predict(const CorpusInputs& inputs,
                            const PhaseAttention& attention,
                            const std::vector<int>& rows) const {
  return predict_many(inputs, attention, {rows})[0];
}

std::vector<Matrix> Recommender::predict_many(
    const CorpusInputs& inputs, const PhaseAttention& attention,
    const std::vector<std::vector<int>>& patients) const {
  ad::Tape tape;
  nn::Binding bind(tape, params_, /*requires_grad=*/false);
  CorpusVars corpus =
      corpus_forward(tape, bind, inputs, attention, false, nullptr);
  std::vector<Matrix> out;
  out.reserve(patients.size());
  for (const auto& rows : patients) {
    ForwardVars f = patient_forward(tape, bind, corpus, rows);
    out.push_back(tape.val(f.probabilities));
  }
  return out;
}

Eigen::RowVectorXd embed_codes(const Matrix& embedding,
                               const emr::MultiHotVector& codes) {
  if (codes.size() != embedding.rows())
    throw ShapeError("multi-hot length != embedding rows");
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(embedding.cols());
  for (int i = 0; i < codes.size(); ++i)
    if (codes.bits[static_cast<std::size_t>(i)]) out += embedding.row(i);
  return out;
}

Matrix aggregate_diag_proc(const Matrix& h_diag, const Matrix& h_proc,
                           const Matrix& weight,
                           const Eigen::RowVectorXd& bias) {
  if (h_diag.rows() != h_proc.rows() || h_diag.cols() != h_proc.cols())
    throw ShapeError("aggregate: operand shapes differ");
  if (weight.rows() != h_diag.cols() || bias.cols() != weight.cols())
    throw ShapeError("aggregate: parameter shapes invalid");
  Matrix z = ((h_diag + h_proc) * weight).rowwise() + bias;
  return z.cwiseMax(0.0);
}

Matrix project_text(const Matrix& text_states, const Matrix& projection) {
  if (text_states.cols() != projection.rows())
    throw ShapeError("project_text: width mismatch");
  return text_states * projection;
}

Matrix combine(const std::optional<Matrix>& codes,
               const std::optional<Matrix>& text, Mode mode) {
  switch (mode) {
    case Mode::codes_only:
      if (!codes) throw ConfigError("codes-only mode requires code states");
      return *codes;
    case Mode::text_only:
      if (!text) throw ConfigError("text-only mode requires text states");
      return *text;
    case Mode::combined:
      if (!codes || !text)
        throw ConfigError(
            "combined mode requires both inputs; supply zero vectors for "
            "visits without notes");
      if (codes->rows() != text->rows() || codes->cols() != text->cols())
        throw ShapeError("combine: shapes differ");
      return *codes + *text;
  }
  throw ConfigError("bad mode");
}

Matrix predict_probabilities(const Matrix& logits) {
  return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
}

std::vector<int> select_medications(const Eigen::RowVectorXd& probabilities,
                                    double threshold) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < probabilities.size(); ++i)
    if (probabilities[i] >= threshold) out.push_back(static_cast<int>(i));
  return out;
}

CorpusInputs build_corpus_inputs(const emr::Dataset& dataset,
                                 const emr::Vocabularies& vocabs,
                                 const Matrix& text) {
  int n = dataset.total_visits();
  CorpusInputs out;
  out.diag_mh = Matrix::Zero(n, vocabs.diagnosis.size());
  out.proc_mh = Matrix::Zero(n, vocabs.procedure.size());
  out.med_mh = Matrix::Zero(n, vocabs.medication.size());
  int row = 0;
  for (const auto& p : dataset.patients) {
    for (const auto& v : p.visits) {
      for (const auto& c : v.diagnosis)
        out.diag_mh(row, vocabs.diagnosis.index_of(c)) = 1.0;
      for (const auto& c : v.procedure)
        out.proc_mh(row, vocabs.procedure.index_of(c)) = 1.0;
      for (const auto& c : v.medication)
        out.med_mh(row, vocabs.medication.index_of(c)) = 1.0;
      ++row;
    }
  }
  if (text.size() != 0) {
    if (text.rows() != n) throw ShapeError("text matrix rows != visits");
    out.text = text;
  }
  return out;
}

}  // namespace notecode::model
