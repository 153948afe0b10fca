#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "notecode/common.hpp"

namespace notecode::emr {

enum class CodeType { diagnosis, procedure, medication };
inline constexpr std::array<CodeType, 3> kCodeTypes = {
    CodeType::diagnosis, CodeType::procedure, CodeType::medication};
const char* code_type_name(CodeType type);

class CodeVocabulary {
 public:
  CodeVocabulary() = default;
  // Codes are deduplicated and kept in the given order.
  CodeVocabulary(CodeType type, std::vector<std::string> codes);

  CodeType type() const { return type_; }
  int size() const { return static_cast<int>(codes_.size()); }
  const std::vector<std::string>& codes() const { return codes_; }
  const std::string& code_at(int index) const;
  int index_of(const std::string& code) const;  // throws LookupError
  bool contains(const std::string& code) const;

 private:
  CodeType type_ = CodeType::diagnosis;
  std::vector<std::string> codes_;
  std::unordered_map<std::string, int> index_;
};

struct VisitRecord {
  std::string visit_id;
  std::int64_t admission_time = 0;  // epoch seconds, UTC
  // Code sets are kept sorted and unique.
  std::vector<std::string> diagnosis;
  std::vector<std::string> procedure;
  std::vector<std::string> medication;
  std::optional<std::string> note;

  const std::vector<std::string>& codes(CodeType type) const;
  std::vector<std::string>& codes(CodeType type);
};

struct PatientRecord {
  std::string patient_id;
  std::vector<VisitRecord> visits;  // admission_time strictly increasing
};

struct Dataset {
  std::vector<PatientRecord> patients;  // sorted by patient_id
  int total_visits() const;
};

struct Vocabularies {
  CodeVocabulary diagnosis;
  CodeVocabulary procedure;
  CodeVocabulary medication;
  const CodeVocabulary& of(CodeType type) const;
};

struct PreprocessReport {
  int codes_removed = 0;
  int visits_dropped = 0;
  int patients_dropped = 0;
};

struct PreprocessResult {
  Dataset dataset;
  Vocabularies vocabularies;
  PreprocessReport report;
};

// patients.jsonl, one patient object per line. Inline notes are honored; a
// null note leaves the visit note-less. Visits are re-sorted by
// admission_time; duplicate visit ids or equal admission times within a
// patient raise IntegrityError.
Dataset load_patients(const std::string& path);
void save_patients(const Dataset& dataset, const std::string& path,
                   bool inline_notes = false);

// Keeps the max_diagnosis most frequent diagnosis codes (frequency ties break
// lexicographically), rebuilds all three vocabularies from the surviving
// corpus, and drops visits left without codes of some type.
PreprocessResult build_vocabularies(Dataset dataset, int max_diagnosis = 2000);

// Keeps codes present both in the full corpus and in the sub-corpus of
// patients with >= 2 visits. Runs to a fixpoint so a second application is a
// no-op.
PreprocessResult filter_consistent_codes(Dataset dataset);

struct MultiHotVector {
  std::vector<std::uint8_t> bits;
  int size() const { return static_cast<int>(bits.size()); }
  int active_count() const;
};

MultiHotVector encode_multi_hot(const std::vector<std::string>& codes,
                                const CodeVocabulary& vocab);
std::vector<std::string> decode_multi_hot(const MultiHotVector& vec,
                                          const CodeVocabulary& vocab);

enum class Phase { train, validation, test };
const char* phase_name(Phase phase);

struct DatasetSplit {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  Phase phase_of(const std::string& patient_id) const;  // throws LookupError
};

// 4:1:1 patient-level split (largest-remainder rounding) over a seeded
// shuffle. Requires at least 6 patients.
DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed);

// Global visit enumeration: patients in dataset order, visits in sequence
// order. Graph nodes and model rows use these indices.
struct CorpusIndex {
  struct Entry {
    std::string visit_id;
    int patient = 0;
    int position = 0;  // index within the patient's sequence
    std::int64_t admission_time = 0;
  };
  std::vector<Entry> visits;
  std::unordered_map<std::string, int> by_id;
  int index_of(const std::string& visit_id) const;
};

CorpusIndex build_corpus_index(const Dataset& dataset);

std::vector<Phase> visit_phases(const Dataset& dataset,
                                const DatasetSplit& split);

struct VisitEdge {
  int src = 0;
  int dst = 0;
  double weight = 0.0;
};

struct SplitEdgeLists {
  std::vector<VisitEdge> train;
  std::vector<VisitEdge> validation;
  std::vector<VisitEdge> test;
};

// Train keeps edges with both endpoints in train. Validation and test each
// keep the train edges plus edges fully inside their own partition.
// Cross-partition edges appear nowhere.
SplitEdgeLists split_edges(const std::vector<VisitEdge>& edges,
                           const std::vector<Phase>& visit_phase);

struct SynthConfig {
  int patients = 50;
  int min_visits = 2;
  int max_visits = 4;
  int diagnosis_codes = 24;
  int procedure_codes = 12;
  int medication_codes = 16;
  int diagnoses_per_visit_min = 2;
  int diagnoses_per_visit_max = 4;
  int procedures_per_visit_min = 1;
  int procedures_per_visit_max = 3;
  // Extra medications drawn at random and surfaced only inside the note
  // text; the remaining medications are a deterministic function of the
  // visit's diagnoses.
  int extra_medications_min = 2;
  int extra_medications_max = 3;
  double note_probability = 1.0;
  int ddi_pairs = 8;
  void validate() const;  // throws ConfigError
};

Dataset generate_synthetic(const SynthConfig& config, std::uint64_t seed);
std::vector<std::pair<std::string, std::string>> generate_synthetic_ddi(
    const SynthConfig& config, std::uint64_t seed);

struct NoteStats {
  int visits_with_note = 0;
  double avg_tokens = 0.0;
  int min_tokens = 0;
  int max_tokens = 0;
};

struct ChunkStats {
  double avg_chunks_per_note = 0.0;
  int max_chunks_per_note = 0;
  int oversized_chunks = 0;
};

struct DatasetStats {
  int patients = 0;
  int visits = 0;
  double avg_visits_per_patient = 0.0;
  int diagnosis_vocab = 0;
  int procedure_vocab = 0;
  int medication_vocab = 0;
  double avg_diagnosis_per_visit = 0.0;
  double avg_procedure_per_visit = 0.0;
  double avg_medication_per_visit = 0.0;
  NoteStats notes;
  std::optional<ChunkStats> chunks;
};

// chunk_counter maps a note to (chunk count, oversized count); pass nullptr
// to skip chunk statistics. Keeps this module independent of the chunker.
using ChunkCounter = std::function<std::pair<int, int>(const std::string&)>;
DatasetStats compute_stats(const Dataset& dataset, const Vocabularies& vocabs,
                           const ChunkCounter* chunk_counter = nullptr);

}  // namespace notecode::emr
