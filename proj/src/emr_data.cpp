#include "notecode/emr_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace notecode::emr {

using nlohmann::json;

const char* code_type_name(CodeType type) {
  switch (type) {
    case CodeType::diagnosis:
      return "diagnosis";
    case CodeType::procedure:
      return "procedure";
    case CodeType::medication:
      return "medication";
  }
  return "unknown";
}

CodeVocabulary::CodeVocabulary(CodeType type, std::vector<std::string> codes)
    : type_(type) {
  for (auto& code : codes) {
    if (index_.count(code)) continue;
    index_.emplace(code, static_cast<int>(codes_.size()));
    codes_.push_back(std::move(code));
  }
}

const std::string& CodeVocabulary::code_at(int index) const {
  if (index < 0 || index >= size())
    throw LookupError("vocabulary index out of range");
  return codes_[static_cast<std::size_t>(index)];
}

int CodeVocabulary::index_of(const std::string& code) const {
  auto it = index_.find(code);
  if (it == index_.end())
    throw LookupError(std::string("unknown ") + code_type_name(type_) +
                      " code: " + code);
  return it->second;
}

bool CodeVocabulary::contains(const std::string& code) const {
  return index_.count(code) > 0;
}

const std::vector<std::string>& VisitRecord::codes(CodeType type) const {
  switch (type) {
    case CodeType::diagnosis:
      return diagnosis;
    case CodeType::procedure:
      return procedure;
    case CodeType::medication:
      return medication;
  }
  throw ConfigError("bad code type");
}

std::vector<std::string>& VisitRecord::codes(CodeType type) {
  return const_cast<std::vector<std::string>&>(
      static_cast<const VisitRecord&>(*this).codes(type));
}

int Dataset::total_visits() const {
  int n = 0;
  for (const auto& p : patients) n += static_cast<int>(p.visits.size());
  return n;
}

const CodeVocabulary& Vocabularies::of(CodeType type) const {
  switch (type) {
    case CodeType::diagnosis:
      return diagnosis;
    case CodeType::procedure:
      return procedure;
    case CodeType::medication:
      return medication;
  }
  throw ConfigError("bad code type");
}

namespace {

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::string> parse_code_array(const json& j, const char* key,
                                          int line) {
  if (!j.contains(key) || !j.at(key).is_array())
    throw ParseError("line " + std::to_string(line) + ": missing array \"" +
                     key + "\"");
  std::vector<std::string> out;
  for (const auto& item : j.at(key)) {
    if (!item.is_string())
      throw ParseError("line " + std::to_string(line) + ": non-string code in \"" +
                       key + "\"");
    std::string code = item.get<std::string>();
    if (code.empty())
      throw ParseError("line " + std::to_string(line) + ": empty code in \"" +
                       key + "\"");
    out.push_back(std::move(code));
  }
  return sorted_unique(std::move(out));
}

void finalize_dataset(Dataset& ds) {
  std::sort(ds.patients.begin(), ds.patients.end(),
            [](const PatientRecord& a, const PatientRecord& b) {
              return a.patient_id < b.patient_id;
            });
  std::set<std::string> seen_visits;
  for (auto& p : ds.patients) {
    std::stable_sort(p.visits.begin(), p.visits.end(),
                     [](const VisitRecord& a, const VisitRecord& b) {
                       return a.admission_time < b.admission_time;
                     });
    for (std::size_t i = 0; i < p.visits.size(); ++i) {
      if (!seen_visits.insert(p.visits[i].visit_id).second)
        throw IntegrityError("duplicate visit id: " + p.visits[i].visit_id);
      if (i > 0 &&
          p.visits[i].admission_time <= p.visits[i - 1].admission_time)
        throw IntegrityError("patient " + p.patient_id +
                             ": admission times must strictly increase");
    }
  }
}

}  // namespace

Dataset load_patients(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open patients file: " + path);
  std::map<std::string, PatientRecord> by_id;
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
    if (!j.is_object() || !j.contains("patient_id") ||
        !j.at("patient_id").is_string())
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected object with \"patient_id\"");
    std::string pid = j.at("patient_id").get<std::string>();
    if (!j.contains("visits") || !j.at("visits").is_array())
      throw ParseError("line " + std::to_string(line_no) +
                       ": missing \"visits\" array");
    PatientRecord& patient = by_id[pid];
    patient.patient_id = pid;
    for (const auto& jv : j.at("visits")) {
      VisitRecord v;
      if (!jv.contains("visit_id") || !jv.at("visit_id").is_string())
        throw ParseError("line " + std::to_string(line_no) +
                         ": visit missing \"visit_id\"");
      v.visit_id = jv.at("visit_id").get<std::string>();
      if (!jv.contains("admission_time") ||
          !jv.at("admission_time").is_string())
        throw ParseError("line " + std::to_string(line_no) +
                         ": visit missing \"admission_time\"");
      try {
        v.admission_time =
            parse_iso8601_utc(jv.at("admission_time").get<std::string>());
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
      }
      v.diagnosis = parse_code_array(jv, "diagnosis", line_no);
      v.procedure = parse_code_array(jv, "procedure", line_no);
      v.medication = parse_code_array(jv, "medication", line_no);
      if (jv.contains("note") && !jv.at("note").is_null()) {
        if (!jv.at("note").is_string())
          throw ParseError("line " + std::to_string(line_no) +
                           ": \"note\" must be string or null");
        v.note = jv.at("note").get<std::string>();
      }
      patient.visits.push_back(std::move(v));
    }
  }
  Dataset ds;
  ds.patients.reserve(by_id.size());
  for (auto& [pid, p] : by_id) ds.patients.push_back(std::move(p));
  finalize_dataset(ds);
  return ds;
}

void save_patients(const Dataset& dataset, const std::string& path,
                   bool inline_notes) {
  std::ostringstream out;
  for (const auto& p : dataset.patients) {
    json jp;
    jp["patient_id"] = p.patient_id;
    json visits = json::array();
    for (const auto& v : p.visits) {
      json jv;
      jv["visit_id"] = v.visit_id;
      jv["admission_time"] = format_iso8601_utc(v.admission_time);
      jv["diagnosis"] = v.diagnosis;
      jv["procedure"] = v.procedure;
      jv["medication"] = v.medication;
      if (inline_notes && v.note)
        jv["note"] = *v.note;
      else
        jv["note"] = nullptr;
      visits.push_back(std::move(jv));
    }
    jp["visits"] = std::move(visits);
    out << jp.dump() << "\n";
  }
  write_text_file(path, out.str());
}

namespace {

struct CorpusCodeSets {
  std::set<std::string> all[3];
  std::set<std::string> multi[3];  // patients with >= 2 visits
};

CorpusCodeSets collect_code_sets(const Dataset& ds) {
  CorpusCodeSets out;
  for (const auto& p : ds.patients) {
    bool multi = p.visits.size() >= 2;
    for (const auto& v : p.visits) {
      for (std::size_t t = 0; t < kCodeTypes.size(); ++t) {
        for (const auto& code : v.codes(kCodeTypes[t])) {
          out.all[t].insert(code);
          if (multi) out.multi[t].insert(code);
        }
      }
    }
  }
  return out;
}

// Removes codes outside `keep` per type, then drops visits missing any code
// type and patients left without visits. Returns true when anything changed.
bool apply_keep_sets(Dataset& ds, const std::set<std::string> keep[3],
                     PreprocessReport& report) {
  bool changed = false;
  std::vector<PatientRecord> kept_patients;
  kept_patients.reserve(ds.patients.size());
  for (auto& p : ds.patients) {
    std::vector<VisitRecord> kept_visits;
    kept_visits.reserve(p.visits.size());
    for (auto& v : p.visits) {
      bool empty_type = false;
      for (std::size_t t = 0; t < kCodeTypes.size(); ++t) {
        auto& codes = v.codes(kCodeTypes[t]);
        auto old_size = codes.size();
        codes.erase(std::remove_if(codes.begin(), codes.end(),
                                   [&](const std::string& c) {
                                     return keep[t].count(c) == 0;
                                   }),
                    codes.end());
        report.codes_removed += static_cast<int>(old_size - codes.size());
        if (old_size != codes.size()) changed = true;
        if (codes.empty()) empty_type = true;
      }
      if (empty_type) {
        ++report.visits_dropped;
        changed = true;
      } else {
        kept_visits.push_back(std::move(v));
      }
    }
    if (kept_visits.empty()) {
      ++report.patients_dropped;
      changed = true;
    } else {
      p.visits = std::move(kept_visits);
      kept_patients.push_back(std::move(p));
    }
  }
  ds.patients = std::move(kept_patients);
  return changed;
}

Vocabularies vocabularies_from(const Dataset& ds) {
  CorpusCodeSets sets = collect_code_sets(ds);
  auto make = [&](CodeType type, const std::set<std::string>& s) {
    return CodeVocabulary(type,
                          std::vector<std::string>(s.begin(), s.end()));
  };
  Vocabularies v;
  v.diagnosis = make(CodeType::diagnosis, sets.all[0]);
  v.procedure = make(CodeType::procedure, sets.all[1]);
  v.medication = make(CodeType::medication, sets.all[2]);
  return v;
}

}  // namespace

PreprocessResult build_vocabularies(Dataset dataset, int max_diagnosis) {
  if (max_diagnosis < 1) throw ConfigError("max_diagnosis must be >= 1");
  std::map<std::string, int> freq;
  for (const auto& p : dataset.patients)
    for (const auto& v : p.visits)
      for (const auto& code : v.diagnosis) ++freq[code];
  std::vector<std::pair<std::string, int>> ordered(freq.begin(), freq.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second > b.second;
              return a.first < b.first;
            });
  std::set<std::string> keep[3];
  for (std::size_t i = 0;
       i < ordered.size() && i < static_cast<std::size_t>(max_diagnosis); ++i)
    keep[0].insert(ordered[i].first);
  for (const auto& p : dataset.patients)
    for (const auto& v : p.visits) {
      for (const auto& c : v.procedure) keep[1].insert(c);
      for (const auto& c : v.medication) keep[2].insert(c);
    }
  PreprocessResult result;
  result.dataset = std::move(dataset);
  apply_keep_sets(result.dataset, keep, result.report);
  result.vocabularies = vocabularies_from(result.dataset);
  return result;
}

PreprocessResult filter_consistent_codes(Dataset dataset) {
  PreprocessResult result;
  result.dataset = std::move(dataset);
  // Dropping a visit can change the multi-visit sub-corpus, so iterate until
  // stable; this makes a repeated application a no-op.
  while (true) {
    CorpusCodeSets sets = collect_code_sets(result.dataset);
    std::set<std::string> keep[3];
    for (std::size_t t = 0; t < kCodeTypes.size(); ++t) {
      std::set_intersection(sets.all[t].begin(), sets.all[t].end(),
                            sets.multi[t].begin(), sets.multi[t].end(),
                            std::inserter(keep[t], keep[t].begin()));
    }
    if (!apply_keep_sets(result.dataset, keep, result.report)) break;
  }
  result.vocabularies = vocabularies_from(result.dataset);
  return result;
}

int MultiHotVector::active_count() const {
  int n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

MultiHotVector encode_multi_hot(const std::vector<std::string>& codes,
                                const CodeVocabulary& vocab) {
  MultiHotVector out;
  out.bits.assign(static_cast<std::size_t>(vocab.size()), 0);
  for (const auto& code : codes)
    out.bits[static_cast<std::size_t>(vocab.index_of(code))] = 1;
  return out;
}

std::vector<std::string> decode_multi_hot(const MultiHotVector& vec,
                                          const CodeVocabulary& vocab) {
  if (vec.size() != vocab.size())
    throw ShapeError("multi-hot length does not match vocabulary size");
  std::vector<std::string> out;
  for (int i = 0; i < vec.size(); ++i)
    if (vec.bits[static_cast<std::size_t>(i)]) out.push_back(vocab.code_at(i));
  return out;
}

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::train:
      return "train";
    case Phase::validation:
      return "validation";
    case Phase::test:
      return "test";
  }
  return "unknown";
}

Phase DatasetSplit::phase_of(const std::string& patient_id) const {
  auto in = [&](const std::vector<std::string>& ids) {
    return std::find(ids.begin(), ids.end(), patient_id) != ids.end();
  };
  if (in(train)) return Phase::train;
  if (in(validation)) return Phase::validation;
  if (in(test)) return Phase::test;
  throw LookupError("patient not in split: " + patient_id);
}

DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed) {
  std::size_t n = dataset.patients.size();
  if (n < 6)
    throw ConfigError("split requires at least 6 patients, got " +
                      std::to_string(n));
  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& p : dataset.patients) ids.push_back(p.patient_id);
  SplitMix64 rng(seed);
  shuffle_inplace(ids, rng);

  // 4:1:1 with largest-remainder rounding; remainder ties go to the earlier
  // bucket.
  const double shares[3] = {4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
  std::size_t counts[3];
  double fractions[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = shares[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    fractions[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  int order[3] = {0, 1, 2};
  std::stable_sort(order, order + 3,
                   [&](int a, int b) { return fractions[a] > fractions[b]; });
  for (std::size_t left = n - assigned, i = 0; i < left; ++i)
    ++counts[order[i % 3]];

  DatasetSplit split;
  split.seed = seed;
  auto take = [&](std::size_t begin, std::size_t count) {
    std::vector<std::string> out(ids.begin() + begin,
                                 ids.begin() + begin + count);
    std::sort(out.begin(), out.end());
    return out;
  };
  split.train = take(0, counts[0]);
  split.validation = take(counts[0], counts[1]);
  split.test = take(counts[0] + counts[1], counts[2]);
  return split;
}

int CorpusIndex::index_of(const std::string& visit_id) const {
  auto it = by_id.find(visit_id);
  if (it == by_id.end()) throw LookupError("unknown visit id: " + visit_id);
  return it->second;
}

CorpusIndex build_corpus_index(const Dataset& dataset) {
  CorpusIndex idx;
  for (std::size_t p = 0; p < dataset.patients.size(); ++p) {
    const auto& patient = dataset.patients[p];
    for (std::size_t t = 0; t < patient.visits.size(); ++t) {
      const auto& v = patient.visits[t];
      idx.by_id.emplace(v.visit_id, static_cast<int>(idx.visits.size()));
      idx.visits.push_back({v.visit_id, static_cast<int>(p),
                            static_cast<int>(t), v.admission_time});
    }
  }
  return idx;
}

std::vector<Phase> visit_phases(const Dataset& dataset,
                                const DatasetSplit& split) {
  std::unordered_map<std::string, Phase> by_patient;
  for (const auto& id : split.train) by_patient.emplace(id, Phase::train);
  for (const auto& id : split.validation)
    by_patient.emplace(id, Phase::validation);
  for (const auto& id : split.test) by_patient.emplace(id, Phase::test);
  std::vector<Phase> out;
  out.reserve(static_cast<std::size_t>(dataset.total_visits()));
  for (const auto& p : dataset.patients) {
    auto it = by_patient.find(p.patient_id);
    if (it == by_patient.end())
      throw LookupError("patient not in split: " + p.patient_id);
    for (std::size_t i = 0; i < p.visits.size(); ++i) out.push_back(it->second);
  }
  return out;
}

SplitEdgeLists split_edges(const std::vector<VisitEdge>& edges,
                           const std::vector<Phase>& visit_phase) {
  SplitEdgeLists out;
  auto phase_at = [&](int v) {
    if (v < 0 || static_cast<std::size_t>(v) >= visit_phase.size())
      throw LookupError("edge endpoint outside corpus: " + std::to_string(v));
    return visit_phase[static_cast<std::size_t>(v)];
  };
  for (const auto& e : edges) {
    Phase a = phase_at(e.src);
    Phase b = phase_at(e.dst);
    if (a == Phase::train && b == Phase::train) {
      out.train.push_back(e);
      out.validation.push_back(e);
      out.test.push_back(e);
    } else if (a == Phase::validation && b == Phase::validation) {
      out.validation.push_back(e);
    } else if (a == Phase::test && b == Phase::test) {
      out.test.push_back(e);
    }
  }
  return out;
}

void SynthConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(patients >= 1 && patients <= 9999,
          "patients must be in [1, 9999]");
  require(min_visits >= 1 && min_visits <= max_visits,
          "visit count range invalid");
  require(diagnosis_codes >= 1 && procedure_codes >= 1 &&
              medication_codes >= 1,
          "code universe sizes must be >= 1");
  require(diagnoses_per_visit_min >= 1 &&
              diagnoses_per_visit_min <= diagnoses_per_visit_max &&
              diagnoses_per_visit_max <= diagnosis_codes,
          "diagnoses-per-visit range invalid");
  require(procedures_per_visit_min >= 1 &&
              procedures_per_visit_min <= procedures_per_visit_max &&
              procedures_per_visit_max <= procedure_codes,
          "procedures-per-visit range invalid");
  require(extra_medications_min >= 0 &&
              extra_medications_min <= extra_medications_max &&
              extra_medications_max <= medication_codes,
          "extra-medication range invalid");
  require(note_probability >= 0.0 && note_probability <= 1.0,
          "note_probability must be in [0, 1]");
  require(ddi_pairs >= 0, "ddi_pairs must be >= 0");
}

namespace {

std::string zero_pad(int value, int width) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

std::vector<int> sample_distinct(SplitMix64& rng, int universe, int count) {
  std::vector<int> pool(static_cast<std::size_t>(universe));
  for (int i = 0; i < universe; ++i) pool[static_cast<std::size_t>(i)] = i;
  shuffle_inplace(pool, rng);
  pool.resize(static_cast<std::size_t>(std::min(count, universe)));
  std::sort(pool.begin(), pool.end());
  return pool;
}

const char* kFillerSentences[] = {
    "Patient presented with intermittent symptoms over several days.",
    "Vital signs were stable on arrival and remained so overnight.",
    "Laboratory values were reviewed and trended appropriately.",
    "The patient tolerated the treatment course without complication.",
    "Follow up with the primary care clinic was arranged.",
    "Imaging showed no acute process requiring intervention.",
    "Diet was advanced as tolerated during the stay.",
    "Pain was managed conservatively with good effect.",
    "The patient remained afebrile throughout the admission.",
    "Physical therapy evaluated the patient before discharge.",
    "Home services were coordinated with the case manager.",
    "The family was updated at the bedside each morning.",
};
constexpr int kFillerCount =
    static_cast<int>(sizeof(kFillerSentences) / sizeof(kFillerSentences[0]));

std::string pick_fillers(SplitMix64& rng, int count) {
  std::string out;
  for (int i = 0; i < count; ++i) {
    if (!out.empty()) out += " ";
    out += kFillerSentences[rng.next_below(kFillerCount)];
  }
  return out;
}

// Builds a sectioned note. Extra medications appear as MED<k> tokens inside
// the hospital course; the full list is echoed only under the discharge
// medication header, which downstream sectioning discards.
std::string build_note(SplitMix64& rng, const std::vector<int>& extra_meds,
                       const std::vector<std::string>& all_meds) {
  std::string med_tokens;
  for (int m : extra_meds) {
    if (!med_tokens.empty()) med_tokens += " ";
    med_tokens += "MED" + std::to_string(m);
  }
  std::string note;
  note += "Chief Complaint:\n" + pick_fillers(rng, 1) + "\n\n";
  note += "History of Present Illness:\n" + pick_fillers(rng, 2) + "\n\n";
  note += "Brief Hospital Course:\n" + pick_fillers(rng, 1);
  if (!med_tokens.empty())
    note += " Additional agents given during the course were " + med_tokens +
            " per protocol.";
  note += " " + pick_fillers(rng, 1) + "\n\n";
  note += "Discharge Medications:\n";
  for (std::size_t i = 0; i < all_meds.size(); ++i) {
    note += std::to_string(i + 1) + ". " + all_meds[i] + " daily.\n";
  }
  note += "\nDischarge Diagnosis:\n" + pick_fillers(rng, 1) + "\n";
  return note;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  SplitMix64 rng(seed);
  Dataset ds;
  const std::int64_t base_time = parse_iso8601_utc("2020-01-01T00:00:00Z");
  for (int p = 0; p < config.patients; ++p) {
    PatientRecord patient;
    patient.patient_id = "p" + zero_pad(p, 4);
    int n_visits = static_cast<int>(
        rng.next_range(config.min_visits, config.max_visits));
    std::int64_t t =
        base_time + rng.next_range(0, 364) * 86400 + rng.next_range(0, 86399);
    for (int v = 0; v < n_visits; ++v) {
      VisitRecord visit;
      visit.visit_id = patient.patient_id + "-v" + std::to_string(v);
      visit.admission_time = t;
      t += rng.next_range(1, 90) * 86400 + rng.next_range(0, 86399);

      int nd = static_cast<int>(rng.next_range(
          config.diagnoses_per_visit_min, config.diagnoses_per_visit_max));
      std::vector<int> diag = sample_distinct(rng, config.diagnosis_codes, nd);
      for (int d : diag) visit.diagnosis.push_back("D" + std::to_string(d));

      int np = static_cast<int>(rng.next_range(
          config.procedures_per_visit_min, config.procedures_per_visit_max));
      for (int c : sample_distinct(rng, config.procedure_codes, np))
        visit.procedure.push_back("P" + std::to_string(c));

      // Medications: a deterministic image of the diagnoses plus random
      // extras that only the note mentions.
      std::set<int> meds;
      for (int d : diag) meds.insert(d % config.medication_codes);
      std::vector<int> remaining;
      for (int m = 0; m < config.medication_codes; ++m)
        if (!meds.count(m)) remaining.push_back(m);
      shuffle_inplace(remaining, rng);
      int ne = static_cast<int>(rng.next_range(config.extra_medications_min,
                                               config.extra_medications_max));
      ne = std::min<int>(ne, static_cast<int>(remaining.size()));
      std::vector<int> extra(remaining.begin(), remaining.begin() + ne);
      std::sort(extra.begin(), extra.end());
      for (int m : extra) meds.insert(m);
      for (int m : meds) visit.medication.push_back("M" + std::to_string(m));
      std::sort(visit.medication.begin(), visit.medication.end());
      std::sort(visit.diagnosis.begin(), visit.diagnosis.end());
      std::sort(visit.procedure.begin(), visit.procedure.end());

      if (rng.next_unit() < config.note_probability)
        visit.note = build_note(rng, extra, visit.medication);
      patient.visits.push_back(std::move(visit));
    }
    ds.patients.push_back(std::move(patient));
  }
  return ds;
}

std::vector<std::pair<std::string, std::string>> generate_synthetic_ddi(
    const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  SplitMix64 rng(seed ^ fnv1a64("ddi"));
  std::set<std::pair<int, int>> pairs;
  std::int64_t max_pairs =
      static_cast<std::int64_t>(config.medication_codes) *
      (config.medication_codes - 1) / 2;
  int want = static_cast<int>(
      std::min<std::int64_t>(config.ddi_pairs, max_pairs));
  while (static_cast<int>(pairs.size()) < want) {
    int a = static_cast<int>(rng.next_below(config.medication_codes));
    int b = static_cast<int>(rng.next_below(config.medication_codes));
    if (a == b) continue;
    pairs.emplace(std::min(a, b), std::max(a, b));
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [a, b] : pairs)
    out.emplace_back("M" + std::to_string(a), "M" + std::to_string(b));
  std::sort(out.begin(), out.end());
  return out;
}

DatasetStats compute_stats(const Dataset& dataset, const Vocabularies& vocabs,
                           const ChunkCounter* chunk_counter) {
  DatasetStats s;
  s.patients = static_cast<int>(dataset.patients.size());
  s.visits = dataset.total_visits();
  s.avg_visits_per_patient =
      s.patients ? static_cast<double>(s.visits) / s.patients : 0.0;
  s.diagnosis_vocab = vocabs.diagnosis.size();
  s.procedure_vocab = vocabs.procedure.size();
  s.medication_vocab = vocabs.medication.size();
  long long nd = 0, np = 0, nm = 0;
  long long note_tokens_sum = 0;
  int chunk_total = 0;
  ChunkStats chunks;
  for (const auto& p : dataset.patients) {
    for (const auto& v : p.visits) {
      nd += static_cast<long long>(v.diagnosis.size());
      np += static_cast<long long>(v.procedure.size());
      nm += static_cast<long long>(v.medication.size());
      if (v.note) {
        int tokens = static_cast<int>(split_whitespace(*v.note).size());
        if (s.notes.visits_with_note == 0) {
          s.notes.min_tokens = tokens;
          s.notes.max_tokens = tokens;
        } else {
          s.notes.min_tokens = std::min(s.notes.min_tokens, tokens);
          s.notes.max_tokens = std::max(s.notes.max_tokens, tokens);
        }
        ++s.notes.visits_with_note;
        note_tokens_sum += tokens;
        if (chunk_counter && *chunk_counter) {
          auto [count, oversized] = (*chunk_counter)(*v.note);
          chunk_total += count;
          chunks.max_chunks_per_note =
              std::max(chunks.max_chunks_per_note, count);
          chunks.oversized_chunks += oversized;
        }
      }
    }
  }
  if (s.visits > 0) {
    s.avg_diagnosis_per_visit = static_cast<double>(nd) / s.visits;
    s.avg_procedure_per_visit = static_cast<double>(np) / s.visits;
    s.avg_medication_per_visit = static_cast<double>(nm) / s.visits;
  }
  if (s.notes.visits_with_note > 0)
    s.notes.avg_tokens =
        static_cast<double>(note_tokens_sum) / s.notes.visits_with_note;
  if (chunk_counter && *chunk_counter && s.notes.visits_with_note > 0) {
    chunks.avg_chunks_per_note =
        static_cast<double>(chunk_total) / s.notes.visits_with_note;
    s.chunks = chunks;
  }
  return s;
}

}  // namespace notecode::emr
