// Command-line pipeline driver: synthetic data generation, preprocessing,
// text-representation extraction, visit-graph export, training, evaluation,
// and cross-mode reporting.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error (bad or missing
// inputs, including "run <stage> first"), 3 runtime failure.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <list>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "notecode/artifacts.hpp"
#include "notecode/emr_data.hpp"
#include "notecode/metrics.hpp"
#include "notecode/notes_pipeline.hpp"
#include "notecode/pipeline.hpp"
#include "notecode/recommender.hpp"
#include "notecode/text_repr.hpp"
#include "notecode/training.hpp"
#include "notecode/visit_graph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace notecode;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: defaults, JSON overlay, flag overlay.

struct StubConfig {
  int hidden_dim = 64;
  int context_window = 4096;
  double signal_scale = 4.0;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "run";
  std::string backend = "stub";
  int workers = 1;

  emr::SynthConfig synth;
  int max_diagnosis = 2000;

  notes::ChunkingConfig chunking;  // token_counter stays empty (whitespace)
  int layer = 16;
  StubConfig stub;

  graph::GraphConfig graph;
  model::ModelConfig model;
  train::LossConfig loss;
  train::OptimizerConfig optimizer;
  double threshold = 0.5;

  RunConfig() {
    // Desk-scale model defaults sized for the stub backend.
    model.embed_dim = 32;
    model.text_dim = 64;
    model.attention_heads = 4;
  }
};

const char* chunk_mode_name(notes::ChunkMode mode) {
  return mode == notes::ChunkMode::section_based ? "section_based"
                                                 : "length_based";
}

notes::ChunkMode chunk_mode_from_string(const std::string& name) {
  if (name == "section_based") return notes::ChunkMode::section_based;
  if (name == "length_based") return notes::ChunkMode::length_based;
  throw ConfigError("unknown chunk mode: " + name);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["backend"] = c.backend;
  j["workers"] = c.workers;
  j["max_diagnosis"] = c.max_diagnosis;
  j["threshold"] = c.threshold;

  json s;
  s["patients"] = c.synth.patients;
  s["min_visits"] = c.synth.min_visits;
  s["max_visits"] = c.synth.max_visits;
  s["diagnosis_codes"] = c.synth.diagnosis_codes;
  s["procedure_codes"] = c.synth.procedure_codes;
  s["medication_codes"] = c.synth.medication_codes;
  s["diagnoses_per_visit_min"] = c.synth.diagnoses_per_visit_min;
  s["diagnoses_per_visit_max"] = c.synth.diagnoses_per_visit_max;
  s["procedures_per_visit_min"] = c.synth.procedures_per_visit_min;
  s["procedures_per_visit_max"] = c.synth.procedures_per_visit_max;
  s["extra_medications_min"] = c.synth.extra_medications_min;
  s["extra_medications_max"] = c.synth.extra_medications_max;
  s["note_probability"] = c.synth.note_probability;
  s["ddi_pairs"] = c.synth.ddi_pairs;
  j["synth"] = std::move(s);

  json ch;
  ch["token_budget"] = c.chunking.token_budget;
  ch["mode"] = chunk_mode_name(c.chunking.mode);
  j["chunking"] = std::move(ch);

  json ex;
  ex["layer"] = c.layer;
  ex["stub_hidden_dim"] = c.stub.hidden_dim;
  ex["stub_context_window"] = c.stub.context_window;
  ex["stub_signal_scale"] = c.stub.signal_scale;
  j["extraction"] = std::move(ex);

  json g;
  g["k_neighbors"] = c.graph.k_neighbors;
  g["include_self_loop"] = c.graph.include_self_loop;
  j["graph"] = std::move(g);

  json m;
  m["embed_dim"] = c.model.embed_dim;
  m["text_dim"] = c.model.text_dim;
  m["attention_heads"] = c.model.attention_heads;
  m["encoder_layers"] = c.model.encoder_layers;
  m["decoder_layers"] = c.model.decoder_layers;
  m["ffn_mult"] = c.model.ffn_mult;
  m["gcn_dropout"] = c.model.gcn_dropout;
  m["mode"] = model::mode_name(c.model.mode);
  m["med_history_through_graph"] = c.model.med_history_through_graph;
  m["init_seed"] = c.model.init_seed;
  j["model"] = std::move(m);

  json l;
  l["alpha"] = c.loss.alpha;
  j["loss"] = std::move(l);

  json o;
  o["learning_rate"] = c.optimizer.learning_rate;
  o["epochs"] = c.optimizer.epochs;
  o["batch_size"] = c.optimizer.batch_size;
  o["warmup_fraction"] = c.optimizer.warmup_fraction;
  o["min_learning_rate"] = c.optimizer.min_learning_rate;
  o["seed"] = c.optimizer.seed;
  o["keep_top_k"] = c.optimizer.keep_top_k;
  j["optimizer"] = std::move(o);

  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void apply_config_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ParseError("config root must be a JSON object");
  maybe(j, "seed", c.seed);
  maybe(j, "out_dir", c.out_dir);
  maybe(j, "backend", c.backend);
  maybe(j, "workers", c.workers);
  maybe(j, "max_diagnosis", c.max_diagnosis);
  maybe(j, "threshold", c.threshold);
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    maybe(s, "patients", c.synth.patients);
    maybe(s, "min_visits", c.synth.min_visits);
    maybe(s, "max_visits", c.synth.max_visits);
    maybe(s, "diagnosis_codes", c.synth.diagnosis_codes);
    maybe(s, "procedure_codes", c.synth.procedure_codes);
    maybe(s, "medication_codes", c.synth.medication_codes);
    maybe(s, "diagnoses_per_visit_min", c.synth.diagnoses_per_visit_min);
    maybe(s, "diagnoses_per_visit_max", c.synth.diagnoses_per_visit_max);
    maybe(s, "procedures_per_visit_min", c.synth.procedures_per_visit_min);
    maybe(s, "procedures_per_visit_max", c.synth.procedures_per_visit_max);
    maybe(s, "extra_medications_min", c.synth.extra_medications_min);
    maybe(s, "extra_medications_max", c.synth.extra_medications_max);
    maybe(s, "note_probability", c.synth.note_probability);
    maybe(s, "ddi_pairs", c.synth.ddi_pairs);
  }
  if (j.contains("chunking")) {
    const json& s = j.at("chunking");
    maybe(s, "token_budget", c.chunking.token_budget);
    if (s.contains("mode"))
      c.chunking.mode = chunk_mode_from_string(s.at("mode").get<std::string>());
  }
  if (j.contains("extraction")) {
    const json& s = j.at("extraction");
    maybe(s, "layer", c.layer);
    maybe(s, "stub_hidden_dim", c.stub.hidden_dim);
    maybe(s, "stub_context_window", c.stub.context_window);
    maybe(s, "stub_signal_scale", c.stub.signal_scale);
  }
  if (j.contains("graph")) {
    const json& s = j.at("graph");
    maybe(s, "k_neighbors", c.graph.k_neighbors);
    maybe(s, "include_self_loop", c.graph.include_self_loop);
  }
  if (j.contains("model")) {
    const json& s = j.at("model");
    maybe(s, "embed_dim", c.model.embed_dim);
    maybe(s, "text_dim", c.model.text_dim);
    maybe(s, "attention_heads", c.model.attention_heads);
    maybe(s, "encoder_layers", c.model.encoder_layers);
    maybe(s, "decoder_layers", c.model.decoder_layers);
    maybe(s, "ffn_mult", c.model.ffn_mult);
    maybe(s, "gcn_dropout", c.model.gcn_dropout);
    if (s.contains("mode"))
      c.model.mode = model::mode_from_string(s.at("mode").get<std::string>());
    maybe(s, "med_history_through_graph", c.model.med_history_through_graph);
    maybe(s, "init_seed", c.model.init_seed);
  }
  if (j.contains("loss")) maybe(j.at("loss"), "alpha", c.loss.alpha);
  if (j.contains("optimizer")) {
    const json& s = j.at("optimizer");
    maybe(s, "learning_rate", c.optimizer.learning_rate);
    maybe(s, "epochs", c.optimizer.epochs);
    maybe(s, "batch_size", c.optimizer.batch_size);
    maybe(s, "warmup_fraction", c.optimizer.warmup_fraction);
    maybe(s, "min_learning_rate", c.optimizer.min_learning_rate);
    maybe(s, "seed", c.optimizer.seed);
    maybe(s, "keep_top_k", c.optimizer.keep_top_k);
  }
}

// ---------------------------------------------------------------------------
// Artifact layout under out_dir.

struct Paths {
  fs::path root;
  explicit Paths(const std::string& out_dir) : root(out_dir) {}

  std::string patients() const { return (root / "patients.jsonl").string(); }
  std::string notes() const { return (root / "notes.jsonl").string(); }
  std::string ddi() const { return (root / "ddi.csv").string(); }

  fs::path filtered_dir() const { return root / "filtered"; }
  std::string filtered_patients() const {
    return (filtered_dir() / "patients.jsonl").string();
  }
  std::string vocab() const { return (filtered_dir() / "vocab.json").string(); }
  std::string split() const { return (filtered_dir() / "split.json").string(); }
  std::string stats() const { return (filtered_dir() / "stats.json").string(); }

  std::string repr_dir() const { return (root / "repr").string(); }
  std::string repr_manifest() const {
    return (root / "repr" / "manifest.json").string();
  }

  fs::path graph_dir() const { return root / "graph"; }
  std::string graph_file(emr::CodeType type) const {
    return (graph_dir() / (std::string(emr::code_type_name(type)) + ".jsonl"))
        .string();
  }

  fs::path train_dir(model::Mode mode) const {
    return root / "train" / mode_slug(mode);
  }
  std::string checkpoint(model::Mode mode, int rank) const {
    return (train_dir(mode) / ("top" + std::to_string(rank) + ".ckpt"))
        .string();
  }
  std::string averaged(model::Mode mode) const {
    return (train_dir(mode) / "averaged.ckpt").string();
  }
  std::string train_report(model::Mode mode) const {
    return (train_dir(mode) / "train_report.jsonl").string();
  }

  fs::path eval_dir() const { return root / "eval"; }
  std::string eval_file(model::Mode mode) const {
    return (eval_dir() / (std::string(mode_slug(mode)) + ".json")).string();
  }

  std::string report_md() const { return (root / "report.md").string(); }
  std::string report_csv() const { return (root / "report.csv").string(); }

  std::string meta(const std::string& stage) const {
    return (root / (stage + ".meta.json")).string();
  }

  static const char* mode_slug(model::Mode mode) {
    switch (mode) {
      case model::Mode::codes_only: return "c";
      case model::Mode::text_only: return "t";
      case model::Mode::combined: return "ct";
    }
    throw ConfigError("invalid mode");
  }
};

void require_file(const std::string& path, const std::string& stage) {
  if (!fs::exists(path))
    throw StageError("missing " + path + "; run " + stage + " first");
}

// Provenance hash over the preprocessing outputs every later stage consumes.
std::uint64_t compute_data_hash(const Paths& paths) {
  std::uint64_t h = fnv1a64(read_text_file(paths.filtered_patients()));
  h = fnv1a64(read_text_file(paths.vocab()), h);
  h = fnv1a64(read_text_file(paths.split()), h);
  return h;
}

void write_meta(const Paths& paths, const std::string& stage,
                const json& effective, std::uint64_t config_hash,
                json extra = json::object()) {
  json j = std::move(extra);
  j["stage"] = stage;
  j["config_hash"] = hash_hex(config_hash);
  j["config"] = effective;
  write_text_file(paths.meta(stage), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared loading helpers.

emr::Dataset load_filtered(const Paths& paths) {
  require_file(paths.filtered_patients(), "preprocess");
  return emr::load_patients(paths.filtered_patients());
}

emr::Vocabularies load_vocab(const Paths& paths) {
  require_file(paths.vocab(), "preprocess");
  json j;
  try {
    j = json::parse(read_text_file(paths.vocab()));
  } catch (const json::exception& e) {
    throw ParseError("bad vocabulary file: " + std::string(e.what()));
  }
  emr::Vocabularies v;
  v.diagnosis = emr::CodeVocabulary(
      emr::CodeType::diagnosis,
      j.at("diagnosis").get<std::vector<std::string>>());
  v.procedure = emr::CodeVocabulary(
      emr::CodeType::procedure,
      j.at("procedure").get<std::vector<std::string>>());
  v.medication = emr::CodeVocabulary(
      emr::CodeType::medication,
      j.at("medication").get<std::vector<std::string>>());
  return v;
}

emr::DatasetSplit load_split_file(const Paths& paths) {
  require_file(paths.split(), "preprocess");
  return artifacts::load_split(paths.split());
}

std::unique_ptr<text::HiddenStateProvider> make_provider(const RunConfig& cfg) {
  if (cfg.backend == "stub")
    return text::stub_provider(cfg.seed, cfg.stub.hidden_dim,
                               cfg.stub.context_window,
                               cfg.stub.signal_scale);
  throw ConfigError("unknown backend '" + cfg.backend +
                    "'; only the stub backend is built in");
}

// Corpus text matrix for the active mode; zero when text is unused.
model::Matrix load_text_matrix(const RunConfig& cfg, const Paths& paths,
                               const emr::CorpusIndex& index) {
  if (cfg.model.mode == model::Mode::codes_only)
    return model::Matrix::Zero(static_cast<Eigen::Index>(index.visits.size()),
                               cfg.model.text_dim);
  require_file(paths.repr_manifest(), "extract");
  text::RepresentationStore store(paths.repr_dir());
  if (store.hidden_dim() != cfg.model.text_dim)
    throw ConfigError("model.text_dim (" + std::to_string(cfg.model.text_dim) +
                      ") must match the representation store hidden_dim (" +
                      std::to_string(store.hidden_dim()) + ")");
  return text::representation_matrix(index, store);
}

// ---------------------------------------------------------------------------
// Stages.

void cmd_synth(const RunConfig& cfg, const json& effective,
               std::uint64_t config_hash) {
  cfg.synth.validate();
  Paths paths(cfg.out_dir);
  fs::create_directories(paths.root);

  emr::Dataset dataset = emr::generate_synthetic(cfg.synth, cfg.seed);
  auto ddi_pairs = emr::generate_synthetic_ddi(cfg.synth, cfg.seed);

  std::vector<notes::NoteRecord> records;
  for (const auto& p : dataset.patients)
    for (const auto& v : p.visits)
      if (v.note)
        records.push_back({v.visit_id, "Discharge summary", *v.note});

  emr::save_patients(dataset, paths.patients(), /*inline_notes=*/false);
  notes::save_notes(records, paths.notes());
  std::string csv = "med_a,med_b\n";
  for (const auto& [a, b] : ddi_pairs) csv += a + "," + b + "\n";
  write_text_file(paths.ddi(), csv);

  json extra;
  extra["patients"] = static_cast<int>(dataset.patients.size());
  extra["visits"] = dataset.total_visits();
  extra["note_records"] = static_cast<int>(records.size());
  extra["ddi_pairs"] = static_cast<int>(ddi_pairs.size());
  write_meta(paths, "synth", effective, config_hash, std::move(extra));

  std::cout << "synth: wrote " << dataset.patients.size() << " patients, "
            << dataset.total_visits() << " visits, " << records.size()
            << " note records, " << ddi_pairs.size() << " interaction pairs\n";
}

void cmd_preprocess(const RunConfig& cfg, const json& effective,
                    std::uint64_t config_hash) {
  Paths paths(cfg.out_dir);
  require_file(paths.patients(), "synth");
  require_file(paths.notes(), "synth");

  emr::Dataset dataset = emr::load_patients(paths.patients());
  auto records = notes::load_notes(paths.notes());
  notes::AttachReport attach = notes::attach_notes(dataset, records);

  emr::PreprocessResult first =
      emr::build_vocabularies(std::move(dataset), cfg.max_diagnosis);
  emr::PreprocessResult result =
      emr::filter_consistent_codes(std::move(first.dataset));
  emr::PreprocessReport report{
      first.report.codes_removed + result.report.codes_removed,
      first.report.visits_dropped + result.report.visits_dropped,
      first.report.patients_dropped + result.report.patients_dropped};

  emr::DatasetSplit split = emr::split_dataset(result.dataset, cfg.seed);

  notes::ChunkingConfig chunking = cfg.chunking;
  emr::ChunkCounter counter = [&chunking](const std::string& note) {
    auto chunks = notes::chunk_note(note, chunking);
    int oversized = 0;
    for (const auto& c : chunks) oversized += c.oversized ? 1 : 0;
    return std::make_pair(static_cast<int>(chunks.size()), oversized);
  };
  emr::DatasetStats stats =
      emr::compute_stats(result.dataset, result.vocabularies, &counter);

  fs::create_directories(paths.filtered_dir());
  emr::save_patients(result.dataset, paths.filtered_patients(),
                     /*inline_notes=*/true);
  json vocab;
  vocab["config_hash"] = hash_hex(config_hash);
  vocab["diagnosis"] = result.vocabularies.diagnosis.codes();
  vocab["procedure"] = result.vocabularies.procedure.codes();
  vocab["medication"] = result.vocabularies.medication.codes();
  write_text_file(paths.vocab(), vocab.dump(2) + "\n");
  artifacts::save_split(paths.split(), split);
  json stats_json = artifacts::stats_to_json(stats);
  stats_json["config_hash"] = hash_hex(config_hash);
  write_text_file(paths.stats(), stats_json.dump(2) + "\n");

  json extra;
  extra["data_hash"] = hash_hex(compute_data_hash(paths));
  extra["attach"] = {{"visits_with_note", attach.visits_with_note},
                     {"visits_without_note", attach.visits_without_note},
                     {"records_attached", attach.records_attached},
                     {"records_skipped_category",
                      attach.records_skipped_category},
                     {"orphan_records", attach.orphan_records}};
  extra["filter"] = {{"codes_removed", report.codes_removed},
                     {"visits_dropped", report.visits_dropped},
                     {"patients_dropped", report.patients_dropped}};
  extra["split"] = {{"train", split.train.size()},
                    {"validation", split.validation.size()},
                    {"test", split.test.size()}};
  write_meta(paths, "preprocess", effective, config_hash, std::move(extra));

  std::cout << "preprocess: " << result.dataset.patients.size()
            << " patients kept (" << report.patients_dropped << " dropped), "
            << result.dataset.total_visits() << " visits, vocab d/p/m = "
            << result.vocabularies.diagnosis.size() << "/"
            << result.vocabularies.procedure.size() << "/"
            << result.vocabularies.medication.size() << ", split "
            << split.train.size() << ":" << split.validation.size() << ":"
            << split.test.size() << "\n";
}

void cmd_extract(const RunConfig& cfg, const json& effective,
                 std::uint64_t config_hash) {
  Paths paths(cfg.out_dir);
  emr::Dataset dataset = load_filtered(paths);
  auto provider = make_provider(cfg);
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");

  text::ExtractionConfig extraction;
  extraction.layer = cfg.layer;
  extraction.chunking = cfg.chunking;

  fs::create_directories(paths.repr_dir());
  text::RepresentationStore store(paths.repr_dir());
  text::ExtractionReport report = text::extract_corpus(
      dataset, *provider, extraction, store, cfg.workers);
  store.flush();

  json extra;
  extra["data_hash"] = hash_hex(compute_data_hash(paths));
  extra["provider"] = provider->name();
  extra["visits_total"] = report.visits_total;
  extra["extracted"] = report.extracted;
  extra["reused"] = report.reused;
  extra["missing_note"] = report.missing_note;
  extra["failed"] = report.failed;
  write_meta(paths, "extract", effective, config_hash, std::move(extra));

  std::cout << "extract: " << report.extracted << " extracted, "
            << report.reused << " reused, " << report.missing_note
            << " without notes, " << report.failed << " failed (provider "
            << provider->name() << ")\n";
}

void cmd_build_graph(const RunConfig& cfg, const json& effective,
                     std::uint64_t config_hash) {
  Paths paths(cfg.out_dir);
  emr::Dataset dataset = load_filtered(paths);
  emr::Vocabularies vocabs = load_vocab(paths);
  emr::CorpusIndex index = emr::build_corpus_index(dataset);

  fs::create_directories(paths.graph_dir());
  json counts;
  for (emr::CodeType type : emr::kCodeTypes) {
    auto visits = graph::graph_visits(dataset, vocabs.of(type), type);
    graph::AdjacencyMatrix adj = graph::build_visit_graph(visits, cfg.graph);
    artifacts::export_graph(paths.graph_file(type), adj, index);
    counts[emr::code_type_name(type)] = adj.edge_list().size();
  }

  json extra;
  extra["data_hash"] = hash_hex(compute_data_hash(paths));
  extra["edges"] = std::move(counts);
  write_meta(paths, "build-graph", effective, config_hash, std::move(extra));

  std::cout << "build-graph: exported adjacency for "
            << index.visits.size() << " visits to " << paths.graph_dir()
            << "\n";
}

void cmd_train(const RunConfig& cfg, const json& effective,
               std::uint64_t config_hash) {
  Paths paths(cfg.out_dir);
  cfg.loss.validate();
  cfg.optimizer.validate();

  emr::Dataset dataset = load_filtered(paths);
  emr::Vocabularies vocabs = load_vocab(paths);
  emr::DatasetSplit split = load_split_file(paths);
  emr::CorpusIndex index = emr::build_corpus_index(dataset);
  std::vector<emr::Phase> phases = emr::visit_phases(dataset, split);

  model::ModelConfig mc = cfg.model;
  mc.diagnosis_vocab = vocabs.diagnosis.size();
  mc.procedure_vocab = vocabs.procedure.size();
  mc.medication_vocab = vocabs.medication.size();
  mc.validate();

  model::Matrix text = load_text_matrix(cfg, paths, index);
  train::TrainingData data;
  data.inputs = model::build_corpus_inputs(dataset, vocabs, text);

  pipeline::GraphBundle graphs = pipeline::build_graphs(
      dataset, vocabs, cfg.graph, mc.med_history_through_graph);
  data.train_attention = pipeline::phase_attention(
      graphs, phases, emr::Phase::train, mc.med_history_through_graph);
  data.validation_attention = pipeline::phase_attention(
      graphs, phases, emr::Phase::validation, mc.med_history_through_graph);

  pipeline::PhasePatients groups = pipeline::group_patients(dataset, split);
  data.train_patients = std::move(groups.train);
  data.validation_patients = std::move(groups.validation);

  model::Recommender model(mc);
  train::TrainResult result =
      train::train(model, data, cfg.optimizer, cfg.loss);

  fs::create_directories(paths.train_dir(mc.mode));
  for (std::size_t i = 0; i < result.top_checkpoints.size(); ++i) {
    const train::Checkpoint& ckpt = result.top_checkpoints[i];
    artifacts::save_checkpoint(paths.checkpoint(mc.mode,
                                                static_cast<int>(i) + 1),
                               ckpt.params, mc, ckpt.epoch, ckpt.val_jaccard);
  }
  nn::ParamStore averaged = train::average_top_checkpoints(
      result.top_checkpoints, cfg.optimizer.keep_top_k);
  artifacts::save_checkpoint(paths.averaged(mc.mode), averaged, mc,
                             /*epoch=*/-1, /*val_jaccard=*/0.0);
  artifacts::save_train_report(paths.train_report(mc.mode), result.history);

  double best = result.top_checkpoints.empty()
                    ? 0.0
                    : result.top_checkpoints.front().val_jaccard;
  json extra;
  extra["data_hash"] = hash_hex(compute_data_hash(paths));
  extra["mode"] = model::mode_name(mc.mode);
  extra["epochs"] = static_cast<int>(result.history.size());
  extra["best_val_jaccard"] = best;
  extra["checkpoints"] = static_cast<int>(result.top_checkpoints.size());
  write_meta(paths, std::string("train-") + Paths::mode_slug(mc.mode),
             effective, config_hash, std::move(extra));

  std::cout << "train[" << model::mode_name(mc.mode) << "]: "
            << result.history.size() << " epochs, final loss "
            << (result.history.empty() ? 0.0
                                       : result.history.back().train_loss)
            << ", best val jaccard " << best << "\n";
}

void cmd_evaluate(const RunConfig& cfg, const json& effective,
                  std::uint64_t config_hash, const std::string& ckpt_flag) {
  Paths paths(cfg.out_dir);
  emr::Dataset dataset = load_filtered(paths);
  emr::Vocabularies vocabs = load_vocab(paths);
  emr::DatasetSplit split = load_split_file(paths);
  emr::CorpusIndex index = emr::build_corpus_index(dataset);
  std::vector<emr::Phase> phases = emr::visit_phases(dataset, split);
  require_file(paths.ddi(), "synth");
  if (cfg.threshold < 0.0 || cfg.threshold > 1.0)
    throw ConfigError("threshold must lie in [0, 1]");

  // The spec-level precondition: text modes need the representation store
  // before anything else can proceed.
  if (cfg.model.mode != model::Mode::codes_only)
    require_file(paths.repr_manifest(), "extract");

  std::string ckpt_path =
      ckpt_flag.empty() ? paths.averaged(cfg.model.mode) : ckpt_flag;
  require_file(ckpt_path, "train");
  artifacts::LoadedCheckpoint loaded = artifacts::load_checkpoint(ckpt_path);
  if (loaded.config.mode != cfg.model.mode)
    throw IntegrityError("checkpoint mode " +
                         std::string(model::mode_name(loaded.config.mode)) +
                         " does not match requested mode " +
                         model::mode_name(cfg.model.mode));
  if (loaded.config.diagnosis_vocab != vocabs.diagnosis.size() ||
      loaded.config.procedure_vocab != vocabs.procedure.size() ||
      loaded.config.medication_vocab != vocabs.medication.size())
    throw IntegrityError(
        "checkpoint vocabularies do not match the dataset; re-run train");

  model::Recommender model(loaded.config);
  for (auto& [name, value] : model.params().entries()) {
    if (!loaded.params.contains(name))
      throw IntegrityError("checkpoint is missing parameter " + name);
    const model::Matrix& stored = loaded.params.at(name);
    if (stored.rows() != value.rows() || stored.cols() != value.cols())
      throw IntegrityError("checkpoint parameter " + name +
                           " has the wrong shape");
    value = stored;
  }

  RunConfig text_cfg = cfg;
  text_cfg.model = loaded.config;
  model::Matrix text = load_text_matrix(text_cfg, paths, index);
  model::CorpusInputs inputs =
      model::build_corpus_inputs(dataset, vocabs, text);
  pipeline::GraphBundle graphs = pipeline::build_graphs(
      dataset, vocabs, cfg.graph, loaded.config.med_history_through_graph);
  model::PhaseAttention attention = pipeline::phase_attention(
      graphs, phases, emr::Phase::test,
      loaded.config.med_history_through_graph);
  pipeline::PhasePatients groups = pipeline::group_patients(dataset, split);

  graph::DDIMatrix ddi = graph::build_ddi_matrix(paths.ddi(),
                                                 vocabs.medication);
  metrics::MetricsReport report = metrics::evaluate(
      model, inputs, attention, groups.test, ddi, cfg.threshold);

  fs::create_directories(paths.eval_dir());
  json out;
  out["config_hash"] = hash_hex(config_hash);
  out["data_hash"] = hash_hex(compute_data_hash(paths));
  out["mode"] = model::mode_name(loaded.config.mode);
  out["threshold"] = cfg.threshold;
  out["checkpoint"] = ckpt_path;
  out["config"] = effective;
  out["metrics"] = artifacts::metrics_to_json(report);
  write_text_file(paths.eval_file(loaded.config.mode), out.dump(2) + "\n");

  std::cout << "evaluate[" << model::mode_name(loaded.config.mode)
            << "]: jaccard " << report.jaccard << ", f1 " << report.f1
            << ", prauc " << report.prauc << ", ddi " << report.ddi_rate
            << ", avg meds " << report.avg_med_count << " over "
            << report.visit_count << " visits\n";
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void cmd_report(const RunConfig& cfg, const json& effective,
                std::uint64_t config_hash,
                const std::vector<std::string>& input_flags) {
  Paths paths(cfg.out_dir);
  std::vector<std::string> inputs = input_flags;
  if (inputs.empty()) {
    for (model::Mode mode : {model::Mode::codes_only, model::Mode::text_only,
                             model::Mode::combined}) {
      std::string path = paths.eval_file(mode);
      if (fs::exists(path)) inputs.push_back(path);
    }
  }
  if (inputs.empty())
    throw StageError("no evaluation outputs found; run evaluate first");

  struct Row {
    std::string mode;
    std::string data_hash;
    metrics::MetricsReport metrics;
  };
  std::vector<Row> rows;
  for (const auto& path : inputs) {
    require_file(path, "evaluate");
    json j;
    try {
      j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
      throw ParseError("bad evaluation file " + path + ": " + e.what());
    }
    Row row;
    row.mode = j.at("mode").get<std::string>();
    row.data_hash = j.at("data_hash").get<std::string>();
    row.metrics = artifacts::metrics_from_json(j.at("metrics"));
    rows.push_back(std::move(row));
  }
  for (const auto& row : rows)
    if (row.data_hash != rows.front().data_hash)
      throw IntegrityError(
          "evaluation outputs have mismatched data hashes (" +
          rows.front().data_hash + " vs " + row.data_hash +
          "); re-run the pipeline on one dataset");

  // Fixed row order C, T, C+T; unknown labels keep input order at the end.
  auto rank = [](const std::string& mode) {
    if (mode == "C") return 0;
    if (mode == "T") return 1;
    if (mode == "C+T") return 2;
    return 3;
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
    return rank(a.mode) < rank(b.mode);
  });

  std::string md;
  md += "| Mode | Jaccard | Precision | Recall | F1 | PR-AUC | DDI rate | "
        "Avg meds |\n";
  md += "|---|---|---|---|---|---|---|---|\n";
  std::string csv =
      "# config_hash=" + hash_hex(config_hash) +
      " data_hash=" + rows.front().data_hash + "\n" +
      "mode,jaccard,precision,recall,f1,prauc,ddi_rate,avg_med_count\n";
  for (const auto& row : rows) {
    const metrics::MetricsReport& m = row.metrics;
    md += "| " + row.mode + " | " + format_fixed(m.jaccard, 4) + " | " +
          format_fixed(m.precision, 4) + " | " + format_fixed(m.recall, 4) +
          " | " + format_fixed(m.f1, 4) + " | " + format_fixed(m.prauc, 4) +
          " | " + format_fixed(m.ddi_rate, 4) + " | " +
          format_fixed(m.avg_med_count, 4) + " |\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  row.mode.c_str(), m.jaccard, m.precision, m.recall, m.f1,
                  m.prauc, m.ddi_rate, m.avg_med_count);
    csv += buf;
  }
  md += "\nconfig hash: " + hash_hex(config_hash) +
        "; data hash: " + rows.front().data_hash + "\n";

  write_text_file(paths.report_md(), md);
  write_text_file(paths.report_csv(), csv);
  (void)effective;
  std::cout << md;
}

// ---------------------------------------------------------------------------
// Option plumbing.

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string backend;
  int workers = 0;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* backend_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
};

CommonFlags* add_common(CLI::App* sub, std::list<CommonFlags>& storage) {
  storage.emplace_back();
  CommonFlags* f = &storage.back();
  sub->add_option("--config", f->config_path,
                  "JSON config file; flags override file values");
  f->out_opt = sub->add_option("--out", f->out_dir, "artifact directory");
  f->seed_opt = sub->add_option("--seed", f->seed, "master random seed");
  f->backend_opt = sub->add_option(
      "--backend", f->backend,
      "hidden-state backend (overrides NOTECODE_BACKEND)");
  f->workers_opt = sub->add_option(
      "--workers", f->workers,
      "within-stage parallelism (overrides NOTECODE_WORKERS)");
  return f;
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_path.empty()) {
    json j;
    try {
      j = json::parse(read_text_file(f.config_path));
    } catch (const json::exception& e) {
      throw ParseError("bad config file " + f.config_path + ": " + e.what());
    }
    apply_config_json(j, cfg);
  }
  if (const char* env = std::getenv("NOTECODE_BACKEND")) cfg.backend = env;
  if (const char* env = std::getenv("NOTECODE_WORKERS")) {
    try {
      cfg.workers = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError("NOTECODE_WORKERS must be an integer");
    }
  }
  if (f.out_opt->count() > 0) cfg.out_dir = f.out_dir;
  if (f.seed_opt->count() > 0) cfg.seed = f.seed;
  if (f.backend_opt->count() > 0) cfg.backend = f.backend;
  if (f.workers_opt->count() > 0) cfg.workers = f.workers;
  return cfg;
}

std::uint64_t echo_config(const RunConfig& cfg, json& effective) {
  effective = config_to_json(cfg);
  std::uint64_t hash = fnv1a64(effective.dump());
  std::cout << "effective config (hash " << hash_hex(hash) << "):\n"
            << effective.dump(2) << "\n";
  return hash;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Medication recommendation pipeline: synthetic EMR generation, "
      "preprocessing, text-representation extraction, visit graphs, "
      "training, evaluation, and cross-mode reports."};
  app.require_subcommand(1);
  std::list<CommonFlags> storage;

  int exit_code = 0;
  auto guard = [&exit_code](auto&& body) {
    try {
      body();
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      exit_code = 1;
    } catch (const LookupError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      exit_code = 1;
    } catch (const ShapeError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      exit_code = 1;
    } catch (const StageError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      exit_code = 2;
    } catch (const ParseError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      exit_code = 2;
    } catch (const IntegrityError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      exit_code = 2;
    } catch (const TrainingError& e) {
      std::cerr << "runtime error: " << e.what() << "\n";
      exit_code = 3;
    } catch (const std::exception& e) {
      std::cerr << "runtime error: " << e.what() << "\n";
      exit_code = 3;
    }
  };

  // synth
  {
    CLI::App* sub = app.add_subcommand(
        "synth", "generate a synthetic dataset with notes and a DDI table");
    CommonFlags* f = add_common(sub, storage);
    auto patients = std::make_shared<int>(0);
    CLI::Option* patients_opt =
        sub->add_option("--patients", *patients, "number of patients");
    sub->callback([f, patients, patients_opt, &guard] {
      guard([&] {
        RunConfig cfg = resolve_config(*f);
        if (patients_opt->count() > 0) cfg.synth.patients = *patients;
        json effective;
        std::uint64_t hash = echo_config(cfg, effective);
        cmd_synth(cfg, effective, hash);
      });
    });
  }

  // preprocess
  {
    CLI::App* sub = app.add_subcommand(
        "preprocess",
        "attach notes, filter codes, build vocabularies and the split");
    CommonFlags* f = add_common(sub, storage);
    auto max_diag = std::make_shared<int>(0);
    CLI::Option* max_diag_opt = sub->add_option(
        "--max-diagnosis", *max_diag, "diagnosis codes kept by frequency");
    sub->callback([f, max_diag, max_diag_opt, &guard] {
      guard([&] {
        RunConfig cfg = resolve_config(*f);
        if (max_diag_opt->count() > 0) cfg.max_diagnosis = *max_diag;
        json effective;
        std::uint64_t hash = echo_config(cfg, effective);
        cmd_preprocess(cfg, effective, hash);
      });
    });
  }

  // extract
  {
    CLI::App* sub = app.add_subcommand(
        "extract", "extract text representations into the on-disk store");
    CommonFlags* f = add_common(sub, storage);
    auto layer = std::make_shared<int>(0);
    CLI::Option* layer_opt =
        sub->add_option("--layer", *layer, "hidden layer to read");
    sub->callback([f, layer, layer_opt, &guard] {
      guard([&] {
        RunConfig cfg = resolve_config(*f);
        if (layer_opt->count() > 0) cfg.layer = *layer;
        json effective;
        std::uint64_t hash = echo_config(cfg, effective);
        cmd_extract(cfg, effective, hash);
      });
    });
  }

  // build-graph
  {
    CLI::App* sub = app.add_subcommand(
        "build-graph", "export per-code-type visit graphs as JSON lines");
    CommonFlags* f = add_common(sub, storage);
    auto k = std::make_shared<int>(0);
    CLI::Option* k_opt =
        sub->add_option("--k", *k, "in-neighbors kept per visit");
    sub->callback([f, k, k_opt, &guard] {
      guard([&] {
        RunConfig cfg = resolve_config(*f);
        if (k_opt->count() > 0) cfg.graph.k_neighbors = *k;
        json effective;
        std::uint64_t hash = echo_config(cfg, effective);
        cmd_build_graph(cfg, effective, hash);
      });
    });
  }

  // train
  {
    CLI::App* sub =
        app.add_subcommand("train", "train one mode and save checkpoints");
    CommonFlags* f = add_common(sub, storage);
    auto mode = std::make_shared<std::string>();
    auto epochs = std::make_shared<int>(0);
    auto lr = std::make_shared<double>(0.0);
    auto batch = std::make_shared<int>(0);
    CLI::Option* mode_opt =
        sub->add_option("--mode", *mode, "input mode: C, T, or C+T");
    CLI::Option* epochs_opt =
        sub->add_option("--epochs", *epochs, "training epochs");
    CLI::Option* lr_opt =
        sub->add_option("--lr", *lr, "base learning rate");
    CLI::Option* batch_opt =
        sub->add_option("--batch-size", *batch, "patients per step");
    sub->callback([f, mode, epochs, lr, batch, mode_opt, epochs_opt, lr_opt,
                   batch_opt, &guard] {
      guard([&] {
        RunConfig cfg = resolve_config(*f);
        if (mode_opt->count() > 0)
          cfg.model.mode = model::mode_from_string(*mode);
        if (epochs_opt->count() > 0) cfg.optimizer.epochs = *epochs;
        if (lr_opt->count() > 0) cfg.optimizer.learning_rate = *lr;
        if (batch_opt->count() > 0) cfg.optimizer.batch_size = *batch;
        json effective;
        std::uint64_t hash = echo_config(cfg, effective);
        cmd_train(cfg, effective, hash);
      });
    });
  }

  // evaluate
  {
    CLI::App* sub = app.add_subcommand(
        "evaluate", "score a trained mode on the held-out test patients");
    CommonFlags* f = add_common(sub, storage);
    auto mode = std::make_shared<std::string>();
    auto threshold = std::make_shared<double>(0.0);
    auto ckpt = std::make_shared<std::string>();
    CLI::Option* mode_opt =
        sub->add_option("--mode", *mode, "input mode: C, T, or C+T");
    CLI::Option* threshold_opt = sub->add_option(
        "--threshold", *threshold, "probability cut for selection");
    sub->add_option("--checkpoint", *ckpt,
                    "checkpoint path (defaults to the mode's averaged one)");
    sub->callback([f, mode, threshold, ckpt, mode_opt, threshold_opt,
                   &guard] {
      guard([&] {
        RunConfig cfg = resolve_config(*f);
        if (mode_opt->count() > 0)
          cfg.model.mode = model::mode_from_string(*mode);
        if (threshold_opt->count() > 0) cfg.threshold = *threshold;
        json effective;
        std::uint64_t hash = echo_config(cfg, effective);
        cmd_evaluate(cfg, effective, hash, *ckpt);
      });
    });
  }

  // report
  {
    CLI::App* sub = app.add_subcommand(
        "report", "compare evaluation outputs across modes (markdown + CSV)");
    CommonFlags* f = add_common(sub, storage);
    auto inputs = std::make_shared<std::vector<std::string>>();
    sub->add_option("--inputs", *inputs,
                    "evaluation JSON files (default: all present modes)");
    sub->callback([f, inputs, &guard] {
      guard([&] {
        RunConfig cfg = resolve_config(*f);
        json effective;
        std::uint64_t hash = echo_config(cfg, effective);
        cmd_report(cfg, effective, hash, *inputs);
      });
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  return exit_code;
}
