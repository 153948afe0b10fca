#include "notecode/text_repr.hpp"

#include <atomic>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace notecode::text {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class StubProvider final : public HiddenStateProvider {
 public:
  StubProvider(std::uint64_t seed, int hidden_dim, int context_window,
               double signal_scale)
      : seed_(seed),
        hidden_dim_(hidden_dim),
        context_window_(context_window),
        signal_scale_(signal_scale) {
    if (hidden_dim < 1 || context_window < 1)
      throw ConfigError("stub provider dims must be positive");
  }

  std::string name() const override { return "stub"; }
  int context_window() const override { return context_window_; }
  int hidden_dim() const override { return hidden_dim_; }
  int layer_count() const override { return 33; }

  std::vector<std::string> tokenize(std::string_view text) const override {
    return split_whitespace(text);
  }

  Matrix hidden_states(const std::vector<std::string>& tokens,
                       int layer) const override {
    if (layer < 0 || layer >= layer_count())
      throw ConfigError("layer out of range for stub provider");
    if (static_cast<int>(tokens.size()) > context_window_)
      throw IntegrityError("token sequence exceeds stub context window");
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(tokens.size()),
                              hidden_dim_);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      int med = med_token_index(tokens[i]);
      if (med >= 0) {
        out(static_cast<Eigen::Index>(i), med % hidden_dim_) = signal_scale_;
        continue;
      }
      // Keyed by token and layer only, never position, so the same token
      // gets the same state in any chunk.
      std::uint64_t h = fnv1a64(tokens[i], seed_ ^ 0x9e3779b97f4a7c15ull);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&layer),
                                   sizeof layer),
                  h);
      SplitMix64 rng(h);
      for (int c = 0; c < hidden_dim_; ++c)
        out(static_cast<Eigen::Index>(i), c) = rng.next_unit() * 2.0 - 1.0;
    }
    return out;
  }

 private:
  // "MED7", optionally wrapped in punctuation ("(MED7)." matches), else -1.
  static int med_token_index(const std::string& token) {
    std::size_t b = 0, e = token.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(token[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(token[e - 1])))
      --e;
    std::string_view core(token.data() + b, e - b);
    if (core.size() < 4 || core.substr(0, 3) != "MED") return -1;
    int value = 0;
    for (char c : core.substr(3)) {
      if (c < '0' || c > '9') return -1;
      value = value * 10 + (c - '0');
    }
    return value;
  }

  std::uint64_t seed_;
  int hidden_dim_;
  int context_window_;
  double signal_scale_;
};

}  // namespace

std::unique_ptr<HiddenStateProvider> stub_provider(std::uint64_t seed,
                                                   int hidden_dim,
                                                   int context_window,
                                                   double signal_scale) {
  return std::make_unique<StubProvider>(seed, hidden_dim, context_window,
                                        signal_scale);
}

Matrix extract_chunk_states(const HiddenStateProvider& provider,
                            const notes::Chunk& chunk, int layer) {
  std::vector<std::string> tokens = provider.tokenize(chunk.text);
  if (static_cast<int>(tokens.size()) > provider.context_window())
    throw IntegrityError("chunk exceeds provider context window (" +
                         std::to_string(tokens.size()) + " > " +
                         std::to_string(provider.context_window()) + ")");
  return provider.hidden_states(tokens, layer);
}

Eigen::VectorXd assemble_visit_representation(
    const std::vector<Matrix>& chunk_states) {
  if (chunk_states.empty())
    throw ConfigError("no chunk states: missing-note path is the caller's");
  Eigen::Index cols = chunk_states[0].cols();
  Eigen::Index rows = 0;
  for (const auto& m : chunk_states) {
    if (m.cols() != cols)
      throw ShapeError("chunk state width mismatch");
    rows += m.rows();
  }
  if (rows == 0) throw ConfigError("chunk states contain no tokens");
  Matrix stacked(rows, cols);
  Eigen::Index at = 0;
  for (const auto& m : chunk_states) {
    stacked.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  return stacked.colwise().mean().transpose();
}

RepresentationStore::RepresentationStore(std::string dir)
    : dir_(std::move(dir)) {
  load();
}

void RepresentationStore::load() {
  fs::path manifest = fs::path(dir_) / "manifest.json";
  if (!fs::exists(manifest)) return;
  json j;
  try {
    j = json::parse(read_text_file(manifest.string()));
  } catch (const json::exception& e) {
    throw ParseError("representation manifest: " + std::string(e.what()));
  }
  hidden_dim_ = j.value("hidden_dim", 0);
  provider_ = j.value("provider", std::string());
  std::string data_path = (fs::path(dir_) / "vectors.f32").string();
  std::ifstream data(data_path, std::ios::binary);
  if (!data && !j.at("entries").empty())
    throw ParseError("missing representation data file: " + data_path);
  for (const auto& [visit_id, je] : j.at("entries").items()) {
    Entry e;
    e.has_note = je.at("has_note").get<bool>();
    e.failed = je.value("failed", false);
    e.config_hash =
        std::stoull(je.at("config_hash").get<std::string>(), nullptr, 16);
    std::uint64_t offset = je.at("offset").get<std::uint64_t>();
    std::uint64_t length = je.at("length").get<std::uint64_t>();
    e.values.resize(length);
    if (length > 0) {
      data.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
      data.read(reinterpret_cast<char*>(e.values.data()),
                static_cast<std::streamsize>(length * sizeof(float)));
      if (!data)
        throw ParseError("truncated representation data for visit " +
                         visit_id);
    }
    entries_.emplace(visit_id, std::move(e));
  }
}

bool RepresentationStore::has_current(const std::string& visit_id,
                                      std::uint64_t config_hash) const {
  auto it = entries_.find(visit_id);
  return it != entries_.end() && !it->second.failed &&
         it->second.config_hash == config_hash;
}

std::optional<TextRepresentation> RepresentationStore::get(
    const std::string& visit_id) const {
  auto it = entries_.find(visit_id);
  if (it == entries_.end()) return std::nullopt;
  TextRepresentation rep;
  rep.visit_id = visit_id;
  rep.has_note = it->second.has_note;
  rep.values.resize(static_cast<Eigen::Index>(it->second.values.size()));
  for (std::size_t i = 0; i < it->second.values.size(); ++i)
    rep.values[static_cast<Eigen::Index>(i)] =
        static_cast<double>(it->second.values[i]);
  return rep;
}

void RepresentationStore::put(const std::string& visit_id, Entry entry) {
  entries_[visit_id] = std::move(entry);
}

void RepresentationStore::set_meta(int hidden_dim, std::string provider_name) {
  hidden_dim_ = hidden_dim;
  provider_ = std::move(provider_name);
}

void RepresentationStore::flush() const {
  fs::create_directories(dir_);
  std::string data_path = (fs::path(dir_) / "vectors.f32").string();
  std::ofstream data(data_path, std::ios::binary | std::ios::trunc);
  if (!data) throw ParseError("cannot write " + data_path);
  json entries = json::object();
  std::uint64_t offset = 0;
  for (const auto& [visit_id, e] : entries_) {
    data.write(reinterpret_cast<const char*>(e.values.data()),
               static_cast<std::streamsize>(e.values.size() * sizeof(float)));
    json je;
    je["has_note"] = e.has_note;
    je["failed"] = e.failed;
    je["config_hash"] = hash_hex(e.config_hash);
    je["offset"] = offset;
    je["length"] = e.values.size();
    entries[visit_id] = std::move(je);
    offset += e.values.size();
  }
  if (!data) throw ParseError("failed writing " + data_path);
  data.close();
  json manifest;
  manifest["hidden_dim"] = hidden_dim_;
  manifest["provider"] = provider_;
  manifest["entries"] = std::move(entries);
  write_text_file((fs::path(dir_) / "manifest.json").string(),
                  manifest.dump(2) + "\n");
}

std::uint64_t extraction_config_hash(const HiddenStateProvider& provider,
                                     const ExtractionConfig& config) {
  std::string desc = provider.name();
  desc += "|H=" + std::to_string(provider.hidden_dim());
  desc += "|D=" + std::to_string(provider.context_window());
  desc += "|layer=" + std::to_string(config.layer);
  desc += "|budget=" + std::to_string(config.chunking.token_budget);
  desc += config.chunking.mode == notes::ChunkMode::section_based
              ? "|section"
              : "|length";
  desc += "|discard=";
  for (auto s : config.chunking.discarded_sections) {
    desc += notes::section_name_str(s);
    desc += ",";
  }
  return fnv1a64(desc);
}

ExtractionReport extract_corpus(const emr::Dataset& dataset,
                                const HiddenStateProvider& provider,
                                const ExtractionConfig& config,
                                RepresentationStore& store, int workers) {
  if (config.layer < 0 || config.layer >= provider.layer_count())
    throw ConfigError("extraction layer out of range for provider " +
                      provider.name());
  if (workers < 1) workers = 1;
  if (store.hidden_dim() != 0 && store.hidden_dim() != provider.hidden_dim())
    throw IntegrityError("representation store was written with hidden_dim " +
                         std::to_string(store.hidden_dim()));
  store.set_meta(provider.hidden_dim(), provider.name());
  std::uint64_t cfg_hash = extraction_config_hash(provider, config);

  struct Job {
    const emr::VisitRecord* visit;
  };
  std::vector<Job> jobs;
  ExtractionReport report;
  for (const auto& p : dataset.patients)
    for (const auto& v : p.visits) {
      ++report.visits_total;
      if (store.has_current(v.visit_id, cfg_hash)) {
        ++report.reused;
        continue;
      }
      jobs.push_back({&v});
    }

  std::vector<RepresentationStore::Entry> results(jobs.size());
  std::vector<std::uint8_t> ok(jobs.size(), 0);
  auto run_job = [&](std::size_t i) {
    const emr::VisitRecord& v = *jobs[i].visit;
    RepresentationStore::Entry e;
    e.config_hash = cfg_hash;
    if (!v.note) {
      e.has_note = false;
      e.values.assign(static_cast<std::size_t>(provider.hidden_dim()), 0.0f);
      results[i] = std::move(e);
      ok[i] = 1;
      return;
    }
    try {
      auto chunks = notes::chunk_note(*v.note, config.chunking);
      if (chunks.empty()) {
        // A note whose retained sections are empty carries no signal.
        e.has_note = false;
        e.values.assign(static_cast<std::size_t>(provider.hidden_dim()),
                        0.0f);
      } else {
        std::vector<Matrix> states;
        states.reserve(chunks.size());
        for (const auto& c : chunks)
          states.push_back(
              extract_chunk_states(provider, c, config.layer));
        Eigen::VectorXd rep = assemble_visit_representation(states);
        e.has_note = true;
        e.values.resize(static_cast<std::size_t>(rep.size()));
        for (Eigen::Index k = 0; k < rep.size(); ++k)
          e.values[static_cast<std::size_t>(k)] =
              static_cast<float>(rep[k]);
      }
      results[i] = std::move(e);
      ok[i] = 1;
    } catch (const std::exception&) {
      e.failed = true;
      e.has_note = v.note.has_value();
      e.values.assign(static_cast<std::size_t>(provider.hidden_dim()), 0.0f);
      results[i] = std::move(e);
      ok[i] = 0;
    }
  };

  if (workers == 1 || jobs.size() < 2) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    int n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers),
                                          jobs.size());
    for (int w = 0; w < n_threads; ++w)
      pool.emplace_back([&]() {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          run_job(i);
        }
      });
    for (auto& t : pool) t.join();
  }

  // Single-writer: results land in the store in corpus order.
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (ok[i]) {
      if (results[i].has_note)
        ++report.extracted;
      else
        ++report.missing_note;
    } else {
      ++report.failed;
    }
    store.put(jobs[i].visit->visit_id, std::move(results[i]));
  }
  return report;
}

Matrix representation_matrix(const emr::CorpusIndex& index,
                             const RepresentationStore& store) {
  int h = store.hidden_dim();
  if (h <= 0) throw ConfigError("representation store has no hidden_dim");
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(index.visits.size()), h);
  for (std::size_t i = 0; i < index.visits.size(); ++i) {
    auto rep = store.get(index.visits[i].visit_id);
    if (!rep) continue;
    if (rep->values.size() != h)
      throw ShapeError("stored representation width mismatch for visit " +
                       index.visits[i].visit_id);
    out.row(static_cast<Eigen::Index>(i)) = rep->values.transpose();
  }
  return out;
}

}  // namespace notecode::text
