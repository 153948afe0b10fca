#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "notecode/emr_data.hpp"

namespace notecode::notes {

enum class SectionName {
  preamble,  // text before the first recognized header
  chief_complaint,
  present_illness,
  medical_history,
  medications_on_admission,
  allergies,
  physical_exam,
  family_history,
  social_history,
  procedure,
  discharge_medication,
  discharge_diagnosis,
  discharge_condition,
  pertinent_results,
  hospital_course,
  discharge_instructions,
};
const char* section_name_str(SectionName name);

struct NoteSection {
  SectionName name = SectionName::preamble;
  std::string text;  // content only, header line excluded
};

// Splits on case-insensitive colon-terminated headers (with aliases, e.g.
// "History of Present Illness:" and "HPI:" both map to present_illness).
// Content on the header line after the colon belongs to the section. The
// discharge-medication section is always removed: it restates the
// prediction target.
std::vector<NoteSection> section_note(const std::string& text);

// Joins multiple records of one visit with a newline, collapsing space/tab
// runs within lines. Newlines survive so sectioning still sees line starts.
std::string normalize_and_concat(const std::vector<std::string>& records);

using TokenCounter = std::function<std::size_t(std::string_view)>;
std::size_t whitespace_token_count(std::string_view text);

enum class ChunkMode { section_based, length_based };

struct ChunkingConfig {
  std::size_t token_budget = 2048;
  ChunkMode mode = ChunkMode::section_based;
  // Empty counter means whitespace tokens.
  TokenCounter token_counter;
  // Optional additional section filter (the discharge-medication section is
  // already gone after sectioning).
  std::vector<SectionName> discarded_sections;
};

struct Chunk {
  std::string text;  // whitespace-canonicalized
  std::size_t token_count = 0;
  int index = 0;
  // A single sentence longer than the budget becomes its own flagged chunk.
  bool oversized = false;
};

// Sentence boundaries sit at [.?!]+ followed by whitespace and an uppercase
// letter or digit, with common clinical abbreviations exempted; every
// newline also ends a sentence. Whitespace inside sentences is canonicalized
// to single spaces.
std::vector<std::string> split_sentences(const std::string& text);

// Sections, drops discarded sections, then greedily packs sentences into
// chunks of at most token_budget tokens. section_based additionally starts a
// fresh chunk at every section boundary. Joining the chunk texts with single
// spaces reproduces the whitespace-canonicalized retained text.
std::vector<Chunk> chunk_note(const std::string& text,
                              const ChunkingConfig& config);

struct NoteRecord {
  std::string visit_id;
  std::string category;
  std::string text;
};

// notes.jsonl, one record per line.
std::vector<NoteRecord> load_notes(const std::string& path);
void save_notes(const std::vector<NoteRecord>& records,
                const std::string& path);

struct AttachConfig {
  std::vector<std::string> categories = {"Discharge summary"};
};

struct AttachReport {
  int visits_with_note = 0;
  int visits_without_note = 0;
  int records_attached = 0;
  int records_skipped_category = 0;
  int orphan_records = 0;
};

// Groups records by visit (keeping file order), filters by category, and
// stores the normalized concatenation on each visit. A visit with an inline
// note keeps it as the first record.
AttachReport attach_notes(emr::Dataset& dataset,
                          const std::vector<NoteRecord>& records,
                          const AttachConfig& config = {});

}  // namespace notecode::notes
