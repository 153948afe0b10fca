#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "notecode/emr_data.hpp"
#include "notecode/notes_pipeline.hpp"

namespace notecode::text {

using Matrix = Eigen::MatrixXd;

// Backend contract for hidden-state extraction. Implementations must be
// deterministic: same tokens and layer give the same states.
class HiddenStateProvider {
 public:
  virtual ~HiddenStateProvider() = default;
  virtual std::string name() const = 0;
  virtual int context_window() const = 0;  // max tokens per call
  virtual int hidden_dim() const = 0;
  virtual int layer_count() const = 0;
  virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
  // (tokens x hidden_dim) hidden states at the given layer.
  virtual Matrix hidden_states(const std::vector<std::string>& tokens,
                               int layer) const = 0;
};

struct ExtractionConfig {
  int layer = 16;
  notes::ChunkingConfig chunking;
};

struct TextRepresentation {
  std::string visit_id;
  bool has_note = false;  // false implies an all-zero vector
  Eigen::VectorXd values;
};

// Deterministic test backend. Ordinary tokens map to a pseudo-random vector
// keyed by (seed, token, layer) only, so chunk boundaries cannot change a
// token's state. Tokens of the form MED<k> (ignoring surrounding
// punctuation) map to signal_scale * basis_vector(k mod hidden_dim).
std::unique_ptr<HiddenStateProvider> stub_provider(std::uint64_t seed,
                                                   int hidden_dim = 64,
                                                   int context_window = 4096,
                                                   double signal_scale = 4.0);

// Tokenizes one chunk and returns its hidden states. Throws IntegrityError
// when the chunk exceeds the provider's context window.
Matrix extract_chunk_states(const HiddenStateProvider& provider,
                            const notes::Chunk& chunk, int layer);

// Mean over the row-concatenation of the chunk matrices. Throws ConfigError
// on an empty list; callers handle missing notes by emitting zeros.
Eigen::VectorXd assemble_visit_representation(
    const std::vector<Matrix>& chunk_states);

// On-disk store: vectors.f32 (little-endian float32) plus manifest.json.
class RepresentationStore {
 public:
  struct Entry {
    bool has_note = false;
    bool failed = false;
    std::uint64_t config_hash = 0;
    std::vector<float> values;
  };

  explicit RepresentationStore(std::string dir);

  int hidden_dim() const { return hidden_dim_; }
  const std::string& provider_name() const { return provider_; }
  bool has_current(const std::string& visit_id,
                   std::uint64_t config_hash) const;
  std::optional<TextRepresentation> get(const std::string& visit_id) const;
  void put(const std::string& visit_id, Entry entry);
  void set_meta(int hidden_dim, std::string provider_name);
  const std::map<std::string, Entry>& entries() const { return entries_; }
  // Rewrites vectors.f32 and manifest.json; entry order is by visit id.
  void flush() const;

 private:
  void load();
  std::string dir_;
  int hidden_dim_ = 0;
  std::string provider_;
  std::map<std::string, Entry> entries_;
};

std::uint64_t extraction_config_hash(const HiddenStateProvider& provider,
                                     const ExtractionConfig& config);

struct ExtractionReport {
  int visits_total = 0;
  int extracted = 0;
  int reused = 0;
  int missing_note = 0;
  int failed = 0;
};

// Extracts a representation for every visit. Visits without a note get an
// exact zero vector; a provider failure marks the visit failed and the run
// continues. Entries already present with the same config hash are reused,
// so reruns are no-ops. Chunk computation fans out over `workers` threads;
// the store is written once by the caller thread.
ExtractionReport extract_corpus(const emr::Dataset& dataset,
                                const HiddenStateProvider& provider,
                                const ExtractionConfig& config,
                                RepresentationStore& store, int workers = 1);

// (visits x hidden_dim) matrix in corpus order; absent or failed entries are
// zero rows.
Matrix representation_matrix(const emr::CorpusIndex& index,
                             const RepresentationStore& store);

}  // namespace notecode::text
