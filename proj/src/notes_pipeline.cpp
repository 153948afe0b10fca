#include "notecode/notes_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace notecode::notes {

using nlohmann::json;

const char* section_name_str(SectionName name) {
  switch (name) {
    case SectionName::preamble:
      return "preamble";
    case SectionName::chief_complaint:
      return "chief_complaint";
    case SectionName::present_illness:
      return "present_illness";
    case SectionName::medical_history:
      return "medical_history";
    case SectionName::medications_on_admission:
      return "medications_on_admission";
    case SectionName::allergies:
      return "allergies";
    case SectionName::physical_exam:
      return "physical_exam";
    case SectionName::family_history:
      return "family_history";
    case SectionName::social_history:
      return "social_history";
    case SectionName::procedure:
      return "procedure";
    case SectionName::discharge_medication:
      return "discharge_medication";
    case SectionName::discharge_diagnosis:
      return "discharge_diagnosis";
    case SectionName::discharge_condition:
      return "discharge_condition";
    case SectionName::pertinent_results:
      return "pertinent_results";
    case SectionName::hospital_course:
      return "hospital_course";
    case SectionName::discharge_instructions:
      return "discharge_instructions";
  }
  return "unknown";
}

namespace {

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct HeaderAlias {
  const char* header;
  SectionName name;
};

// Lowercase header aliases, matched against the text before a colon.
const HeaderAlias kHeaderAliases[] = {
    {"chief complaint", SectionName::chief_complaint},
    {"history of present illness", SectionName::present_illness},
    {"present illness", SectionName::present_illness},
    {"hpi", SectionName::present_illness},
    {"past medical history", SectionName::medical_history},
    {"medical history", SectionName::medical_history},
    {"medications on admission", SectionName::medications_on_admission},
    {"admission medications", SectionName::medications_on_admission},
    {"allergies", SectionName::allergies},
    {"physical exam", SectionName::physical_exam},
    {"physical examination", SectionName::physical_exam},
    {"family history", SectionName::family_history},
    {"social history", SectionName::social_history},
    {"major surgical or invasive procedure", SectionName::procedure},
    {"procedures", SectionName::procedure},
    {"procedure", SectionName::procedure},
    {"discharge medications", SectionName::discharge_medication},
    {"discharge medication", SectionName::discharge_medication},
    {"medications on discharge", SectionName::discharge_medication},
    {"discharge diagnosis", SectionName::discharge_diagnosis},
    {"discharge diagnoses", SectionName::discharge_diagnosis},
    {"final diagnosis", SectionName::discharge_diagnosis},
    {"discharge condition", SectionName::discharge_condition},
    {"condition at discharge", SectionName::discharge_condition},
    {"pertinent results", SectionName::pertinent_results},
    {"brief hospital course", SectionName::hospital_course},
    {"hospital course", SectionName::hospital_course},
    {"discharge instructions", SectionName::discharge_instructions},
    {"followup instructions", SectionName::discharge_instructions},
    {"follow-up instructions", SectionName::discharge_instructions},
};

// Returns true when the line starts a section; fills the name and content
// after the colon.
bool match_header(const std::string& line, SectionName& name,
                  std::string& rest) {
  auto colon = line.find(':');
  if (colon == std::string::npos) return false;
  std::string head = normalize_whitespace(line.substr(0, colon));
  std::string lower = to_lower(head);
  for (const auto& alias : kHeaderAliases) {
    if (lower == alias.header) {
      name = alias.name;
      rest = line.substr(colon + 1);
      return true;
    }
  }
  return false;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  lines.push_back(cur);
  return lines;
}

}  // namespace

std::vector<NoteSection> section_note(const std::string& text) {
  std::vector<NoteSection> sections;
  NoteSection current;
  bool current_open = false;
  auto flush = [&]() {
    // Trim trailing newlines; drop sections with no visible content.
    while (!current.text.empty() &&
           (current.text.back() == '\n' || current.text.back() == ' '))
      current.text.pop_back();
    if (!current.text.empty() || current.name != SectionName::preamble)
      if (current_open) sections.push_back(current);
    current = NoteSection{};
    current_open = false;
  };
  for (const std::string& line : split_lines(text)) {
    SectionName name;
    std::string rest;
    if (match_header(line, name, rest)) {
      flush();
      current.name = name;
      current_open = true;
      std::string trimmed = normalize_whitespace(rest);
      if (!trimmed.empty()) current.text = rest + "\n";
      continue;
    }
    if (!current_open) {
      current.name = SectionName::preamble;
      current_open = true;
    }
    current.text += line;
    current.text += "\n";
  }
  flush();
  // The discharge medication list never reaches downstream consumers: it
  // restates the prediction target verbatim.
  std::erase_if(sections, [](const NoteSection& s) {
    return s.name == SectionName::discharge_medication;
  });
  return sections;
}

std::string normalize_and_concat(const std::vector<std::string>& records) {
  std::string joined;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i) joined += "\n";
    joined += records[i];
  }
  // Collapse space/tab runs per line; keep the line structure.
  std::string out;
  out.reserve(joined.size());
  std::string line;
  auto emit_line = [&](const std::string& l) {
    std::string compact;
    bool pending = false;
    for (char c : l) {
      if (c == ' ' || c == '\t' || c == '\r') {
        pending = !compact.empty();
      } else {
        if (pending) compact.push_back(' ');
        pending = false;
        compact.push_back(c);
      }
    }
    out += compact;
    out += "\n";
  };
  for (char c : joined) {
    if (c == '\n') {
      emit_line(line);
      line.clear();
    } else {
      line.push_back(c);
    }
  }
  emit_line(line);
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

std::size_t whitespace_token_count(std::string_view text) {
  return split_whitespace(text).size();
}

namespace {

bool is_exempt_abbreviation(const std::string& token) {
  static const std::set<std::string> kExempt = {
      "dr.",  "mr.",   "mrs.",  "ms.",    "st.",    "vs.",   "e.g.",
      "i.e.", "etc.",  "no.",   "approx.", "b.i.d.", "t.i.d.", "q.i.d.",
      "q.d.", "p.r.n.", "p.o.", "i.v.",
  };
  std::string lower = to_lower(token);
  if (kExempt.count(lower)) return true;
  // Single-letter initials such as "J.".
  if (lower.size() == 2 && std::isalpha(static_cast<unsigned char>(lower[0])) &&
      lower[1] == '.')
    return true;
  return false;
}

bool ends_with_sentence_punct(const std::string& token) {
  std::size_t i = token.size();
  while (i > 0 && (token[i - 1] == '.' || token[i - 1] == '?' ||
                   token[i - 1] == '!'))
    --i;
  return i < token.size();
}

bool starts_sentence(const std::string& token) {
  unsigned char c = static_cast<unsigned char>(token[0]);
  return std::isupper(c) || std::isdigit(c);
}

}  // namespace

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> sentences;
  for (const std::string& line : split_lines(text)) {
    std::vector<std::string> tokens = split_whitespace(line);
    std::string current;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!current.empty()) current += " ";
      current += tokens[i];
      bool boundary = ends_with_sentence_punct(tokens[i]) &&
                      i + 1 < tokens.size() && starts_sentence(tokens[i + 1]) &&
                      !is_exempt_abbreviation(tokens[i]);
      if (boundary) {
        sentences.push_back(current);
        current.clear();
      }
    }
    if (!current.empty()) sentences.push_back(current);
  }
  return sentences;
}

std::vector<Chunk> chunk_note(const std::string& text,
                              const ChunkingConfig& config) {
  if (config.token_budget == 0)
    throw ConfigError("chunk token budget must be positive");
  const TokenCounter& counter =
      config.token_counter ? config.token_counter
                           : TokenCounter(whitespace_token_count);
  std::set<SectionName> discard(config.discarded_sections.begin(),
                                config.discarded_sections.end());
  std::vector<NoteSection> sections = section_note(text);
  std::vector<std::vector<std::string>> groups;  // sentence runs to pack
  if (config.mode == ChunkMode::section_based) {
    for (const auto& s : sections) {
      if (discard.count(s.name)) continue;
      auto sents = split_sentences(s.text);
      if (!sents.empty()) groups.push_back(std::move(sents));
    }
  } else {
    std::vector<std::string> all;
    for (const auto& s : sections) {
      if (discard.count(s.name)) continue;
      auto sents = split_sentences(s.text);
      all.insert(all.end(), sents.begin(), sents.end());
    }
    if (!all.empty()) groups.push_back(std::move(all));
  }

  std::vector<Chunk> chunks;
  auto flush = [&](std::string& buf, bool oversized) {
    if (buf.empty()) return;
    Chunk c;
    c.text = std::move(buf);
    c.token_count = counter(c.text);
    c.index = static_cast<int>(chunks.size());
    c.oversized = oversized;
    chunks.push_back(std::move(c));
    buf.clear();
  };
  for (const auto& sentences : groups) {
    std::string buf;
    std::size_t buf_tokens = 0;
    for (const auto& sentence : sentences) {
      std::size_t n = counter(sentence);
      if (n > config.token_budget) {
        flush(buf, false);
        buf_tokens = 0;
        std::string own = sentence;
        flush(own, true);
        continue;
      }
      if (!buf.empty() && buf_tokens + n > config.token_budget) {
        flush(buf, false);
        buf_tokens = 0;
      }
      if (!buf.empty()) buf += " ";
      buf += sentence;
      buf_tokens += n;
    }
    flush(buf, false);
  }
  return chunks;
}

std::vector<NoteRecord> load_notes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open notes file: " + path);
  std::vector<NoteRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    NoteRecord r;
    if (!j.is_object() || !j.contains("visit_id") ||
        !j.at("visit_id").is_string() || !j.contains("category") ||
        !j.at("category").is_string() || !j.contains("text") ||
        !j.at("text").is_string())
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected {visit_id, category, text}");
    r.visit_id = j.at("visit_id").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.text = j.at("text").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

void save_notes(const std::vector<NoteRecord>& records,
                const std::string& path) {
  std::ostringstream out;
  for (const auto& r : records) {
    json j;
    j["visit_id"] = r.visit_id;
    j["category"] = r.category;
    j["text"] = r.text;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

AttachReport attach_notes(emr::Dataset& dataset,
                          const std::vector<NoteRecord>& records,
                          const AttachConfig& config) {
  AttachReport report;
  std::set<std::string> categories(config.categories.begin(),
                                   config.categories.end());
  std::map<std::string, std::vector<std::string>> by_visit;
  std::set<std::string> known_visits;
  for (const auto& p : dataset.patients)
    for (const auto& v : p.visits) known_visits.insert(v.visit_id);
  for (const auto& r : records) {
    if (!categories.count(r.category)) {
      ++report.records_skipped_category;
      continue;
    }
    if (!known_visits.count(r.visit_id)) {
      ++report.orphan_records;
      continue;
    }
    by_visit[r.visit_id].push_back(r.text);
    ++report.records_attached;
  }
  for (auto& p : dataset.patients) {
    for (auto& v : p.visits) {
      std::vector<std::string> parts;
      if (v.note) parts.push_back(*v.note);
      auto it = by_visit.find(v.visit_id);
      if (it != by_visit.end())
        parts.insert(parts.end(), it->second.begin(), it->second.end());
      if (parts.empty()) {
        v.note.reset();
        ++report.visits_without_note;
      } else {
        v.note = normalize_and_concat(parts);
        ++report.visits_with_note;
      }
    }
  }
  return report;
}

}  // namespace notecode::notes
