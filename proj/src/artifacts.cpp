#include "notecode/artifacts.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace notecode::artifacts {

using nlohmann::json;

namespace {
constexpr char kCheckpointMagic[8] = {'N', 'C', 'C', 'K', 'P', 'T', '0', '1'};
}

json model_config_to_json(const model::ModelConfig& config) {
  json j;
  j["embed_dim"] = config.embed_dim;
  j["text_dim"] = config.text_dim;
  j["attention_heads"] = config.attention_heads;
  j["encoder_layers"] = config.encoder_layers;
  j["decoder_layers"] = config.decoder_layers;
  j["ffn_mult"] = config.ffn_mult;
  j["gcn_dropout"] = config.gcn_dropout;
  j["mode"] = model::mode_name(config.mode);
  j["med_history_through_graph"] = config.med_history_through_graph;
  j["init_seed"] = config.init_seed;
  j["diagnosis_vocab"] = config.diagnosis_vocab;
  j["procedure_vocab"] = config.procedure_vocab;
  j["medication_vocab"] = config.medication_vocab;
  return j;
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.text_dim = j.at("text_dim").get<int>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.gcn_dropout = j.at("gcn_dropout").get<double>();
  c.mode = model::mode_from_string(j.at("mode").get<std::string>());
  c.med_history_through_graph = j.at("med_history_through_graph").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.diagnosis_vocab = j.at("diagnosis_vocab").get<int>();
  c.procedure_vocab = j.at("procedure_vocab").get<int>();
  c.medication_vocab = j.at("medication_vocab").get<int>();
  return c;
}

void save_checkpoint(const std::string& path, const nn::ParamStore& params,
                     const model::ModelConfig& config, int epoch,
                     double val_jaccard) {
  json header;
  header["config"] = model_config_to_json(config);
  header["epoch"] = epoch;
  header["val_jaccard"] = val_jaccard;
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : params.entries()) {
    json t;
    t["name"] = name;
    t["rows"] = m.rows();
    t["cols"] = m.cols();
    t["offset"] = offset;
    tensors.push_back(std::move(t));
    offset += static_cast<std::uint64_t>(m.size());
  }
  header["tensors"] = std::move(tensors);
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  unsigned char len_bytes[4] = {
      static_cast<unsigned char>(len & 0xff),
      static_cast<unsigned char>((len >> 8) & 0xff),
      static_cast<unsigned char>((len >> 16) & 0xff),
      static_cast<unsigned char>((len >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(len_bytes), 4);
  out.write(header_str.data(),
            static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, m] : params.entries()) {
    // Row-major scan so (rows, cols) in the header fully determines layout.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        float v = static_cast<float>(m(r, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }
  if (!out) throw ParseError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ParseError("not a checkpoint file: " + path);
  unsigned char len_bytes[4];
  in.read(reinterpret_cast<char*>(len_bytes), 4);
  if (!in) throw ParseError("truncated checkpoint header: " + path);
  std::uint32_t len = static_cast<std::uint32_t>(len_bytes[0]) |
                      (static_cast<std::uint32_t>(len_bytes[1]) << 8) |
                      (static_cast<std::uint32_t>(len_bytes[2]) << 16) |
                      (static_cast<std::uint32_t>(len_bytes[3]) << 24);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("truncated checkpoint header: " + path);
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw ParseError("bad checkpoint header: " + std::string(e.what()));
  }
  LoadedCheckpoint out;
  out.config = model_config_from_json(header.at("config"));
  out.epoch = header.at("epoch").get<int>();
  out.val_jaccard = header.at("val_jaccard").get<double>();
  for (const auto& t : header.at("tensors")) {
    std::string name = t.at("name").get<std::string>();
    Eigen::Index rows = t.at("rows").get<Eigen::Index>();
    Eigen::Index cols = t.at("cols").get<Eigen::Index>();
    ad::Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        float v;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in)
          throw ParseError("truncated checkpoint tensor " + name + ": " +
                           path);
        m(r, c) = static_cast<double>(v);
      }
    out.params.insert(name, std::move(m));
  }
  return out;
}

void save_split(const std::string& path, const emr::DatasetSplit& split) {
  json j;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  write_text_file(path, j.dump(2) + "\n");
}

emr::DatasetSplit load_split(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError("bad split manifest: " + std::string(e.what()));
  }
  emr::DatasetSplit split;
  split.seed = j.at("seed").get<std::uint64_t>();
  split.train = j.at("train").get<std::vector<std::string>>();
  split.validation = j.at("validation").get<std::vector<std::string>>();
  split.test = j.at("test").get<std::vector<std::string>>();
  return split;
}

void export_graph(const std::string& path, const graph::AdjacencyMatrix& adj,
                  const emr::CorpusIndex& index) {
  if (adj.nodes != static_cast<int>(index.visits.size()))
    throw ShapeError("graph/index size mismatch");
  std::ostringstream out;
  for (int t = 0; t < adj.nodes; ++t) {
    json j;
    j["node"] = index.visits[static_cast<std::size_t>(t)].visit_id;
    json edges = json::array();
    for (const auto& e :
         adj.in_edges[static_cast<std::size_t>(t)]) {
      json je;
      je["src"] = index.visits[static_cast<std::size_t>(e.src)].visit_id;
      je["w"] = e.weight;
      edges.push_back(std::move(je));
    }
    j["edges"] = std::move(edges);
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

json metrics_to_json(const metrics::MetricsReport& report) {
  json j;
  j["jaccard"] = report.jaccard;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["prauc"] = report.prauc;
  j["ddi_rate"] = report.ddi_rate;
  j["avg_med_count"] = report.avg_med_count;
  j["visit_count"] = report.visit_count;
  return j;
}

metrics::MetricsReport metrics_from_json(const json& j) {
  metrics::MetricsReport r;
  r.jaccard = j.at("jaccard").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.prauc = j.at("prauc").get<double>();
  r.ddi_rate = j.at("ddi_rate").get<double>();
  r.avg_med_count = j.at("avg_med_count").get<double>();
  r.visit_count = j.at("visit_count").get<int>();
  return r;
}

void save_train_report(const std::string& path,
                       const std::vector<train::EpochStats>& history) {
  std::ostringstream out;
  for (const auto& e : history) {
    json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_jaccard"] = e.val_jaccard;
    j["lr"] = e.learning_rate;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

json stats_to_json(const emr::DatasetStats& stats) {
  json j;
  j["patients"] = stats.patients;
  j["visits"] = stats.visits;
  j["avg_visits_per_patient"] = stats.avg_visits_per_patient;
  j["diagnosis_vocab"] = stats.diagnosis_vocab;
  j["procedure_vocab"] = stats.procedure_vocab;
  j["medication_vocab"] = stats.medication_vocab;
  j["avg_diagnosis_per_visit"] = stats.avg_diagnosis_per_visit;
  j["avg_procedure_per_visit"] = stats.avg_procedure_per_visit;
  j["avg_medication_per_visit"] = stats.avg_medication_per_visit;
  json notes;
  notes["visits_with_note"] = stats.notes.visits_with_note;
  notes["avg_tokens"] = stats.notes.avg_tokens;
  notes["min_tokens"] = stats.notes.min_tokens;
  notes["max_tokens"] = stats.notes.max_tokens;
  j["notes"] = std::move(notes);
  if (stats.chunks) {
    json chunks;
    chunks["avg_chunks_per_note"] = stats.chunks->avg_chunks_per_note;
    chunks["max_chunks_per_note"] = stats.chunks->max_chunks_per_note;
    chunks["oversized_chunks"] = stats.chunks->oversized_chunks;
    j["chunks"] = std::move(chunks);
  }
  return j;
}

}  // namespace notecode::artifacts
