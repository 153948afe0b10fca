#include "doctest.h"

#include <filesystem>
#include <string>
#include <vector>

#include "notecode/text_repr.hpp"

using namespace notecode;
using text::ExtractionConfig;
using text::Matrix;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path("repr_fixture_" + name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

notes::Chunk make_chunk(const std::string& text) {
  notes::Chunk c;
  c.text = text;
  c.token_count = notes::whitespace_token_count(text);
  return c;
}

// Provider that fails on any chunk containing the token "BOOM"; otherwise a
// constant vector of ones. Exercises the failure path of extract_corpus.
class ExplodingProvider : public text::HiddenStateProvider {
 public:
  std::string name() const override { return "exploding"; }
  int context_window() const override { return 4096; }
  int hidden_dim() const override { return 4; }
  int layer_count() const override { return 33; }
  std::vector<std::string> tokenize(std::string_view t) const override {
    return split_whitespace(t);
  }
  Matrix hidden_states(const std::vector<std::string>& tokens,
                       int) const override {
    for (const auto& t : tokens)
      if (t == "BOOM") throw IntegrityError("backend exploded");
    return Matrix::Ones(static_cast<Eigen::Index>(tokens.size()), 4);
  }
};

emr::Dataset three_visit_dataset() {
  emr::Dataset ds;
  emr::PatientRecord p;
  p.patient_id = "pat";
  for (int i = 0; i < 3; ++i) {
    emr::VisitRecord v;
    v.visit_id = "v" + std::to_string(i);
    v.admission_time = i * 86400;
    v.diagnosis = {"D1"};
    v.procedure = {"P1"};
    v.medication = {"M1"};
    p.visits.push_back(v);
  }
  p.visits[0].note = "Plain words only here.";
  p.visits[2].note = "Another note with MED2 planted.";
  ds.patients.push_back(p);
  return ds;
}

}  // namespace

TEST_SUITE("text_repr") {

TEST_CASE("stub provider is deterministic and token-sensitive") {
  auto p1 = text::stub_provider(9, 16);
  auto p2 = text::stub_provider(9, 16);
  auto tokens = p1->tokenize("alpha beta gamma");
  REQUIRE(tokens.size() == 3);
  Matrix a = p1->hidden_states(tokens, 16);
  Matrix b = p2->hidden_states(tokens, 16);
  CHECK(a.rows() == 3);
  CHECK(a.cols() == 16);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  // One token changed: only that row changes.
  Matrix c = p1->hidden_states({"alpha", "beta", "delta"}, 16);
  CHECK((a.row(0) - c.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.row(2) - c.row(2)).cwiseAbs().maxCoeff() > 0.0);
  // Different seed changes states.
  auto p3 = text::stub_provider(10, 16);
  CHECK((a - p3->hidden_states(tokens, 16)).cwiseAbs().maxCoeff() > 0.0);
  // Different layer changes states.
  CHECK((a - p1->hidden_states(tokens, 15)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("stub provider brands medication tokens with basis directions") {
  auto provider = text::stub_provider(9, 16, 4096, 4.0);
  Matrix m = provider->hidden_states({"MED5", "MED21", "med5", "MED5x"}, 16);
  // MED5 -> 4.0 * e_5; MED21 -> 4.0 * e_{21 mod 16}.
  for (int c = 0; c < 16; ++c) {
    CHECK(m(0, c) == (c == 5 ? 4.0 : 0.0));
    CHECK(m(1, c) == (c == 5 ? 4.0 : 0.0));
  }
  // Lower-case and suffixed lookalikes are ordinary tokens.
  CHECK((m.row(2).array() == 0.0).count() < 16);
  CHECK(m.row(2).cwiseAbs().maxCoeff() < 4.0);
  CHECK((m.row(3).array() == 0.0).count() < 16);
  // Punctuation-wrapped forms still count as medication tokens.
  Matrix w = provider->hidden_states({"(MED5)", "MED5."}, 16);
  CHECK((w.row(0) - m.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((w.row(1) - m.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stub provider states do not depend on position") {
  auto provider = text::stub_provider(5, 8);
  Matrix a = provider->hidden_states({"x", "y", "z"}, 3);
  Matrix b = provider->hidden_states({"z", "x"}, 3);
  CHECK((a.row(2) - b.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.row(0) - b.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extract_chunk_states shape, determinism, overflow") {
  auto provider = text::stub_provider(1, 8, /*context_window=*/6);
  auto chunk = make_chunk("one two three four five");
  Matrix m = text::extract_chunk_states(*provider, chunk, 2);
  CHECK(m.rows() == 5);
  CHECK(m.cols() == 8);
  Matrix m2 = text::extract_chunk_states(*provider, chunk, 2);
  CHECK((m - m2).cwiseAbs().maxCoeff() == 0.0);
  auto big = make_chunk("a b c d e f g");
  CHECK_THROWS_AS(text::extract_chunk_states(*provider, big, 2),
                  IntegrityError);
}

TEST_CASE("assemble_visit_representation arithmetic") {
  SUBCASE("identical rows collapse to themselves") {
    Matrix m(3, 2);
    m << 1.5, -2.0, 1.5, -2.0, 1.5, -2.0;
    Eigen::VectorXd v = text::assemble_visit_representation({m});
    CHECK(v(0) == 1.5);
    CHECK(v(1) == -2.0);
  }
  SUBCASE("two chunks average over all four rows") {
    Matrix a(2, 2), b(2, 2);
    a << 1, 0, 0, 1;
    b << 3, 0, 0, 3;
    Eigen::VectorXd v = text::assemble_visit_representation({a, b});
    CHECK(v(0) == doctest::Approx(1.0));
    CHECK(v(1) == doctest::Approx(1.0));
  }
  SUBCASE("empty list throws") {
    CHECK_THROWS_AS(text::assemble_visit_representation({}), ConfigError);
  }
  SUBCASE("row order does not matter") {
    SplitMix64 rng(4);
    Matrix m(6, 3);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = rng.next_unit();
    Matrix shuffled = m;
    shuffled.row(0).swap(shuffled.row(5));
    shuffled.row(1).swap(shuffled.row(3));
    Eigen::VectorXd v1 = text::assemble_visit_representation({m});
    Eigen::VectorXd v2 = text::assemble_visit_representation({shuffled});
    CHECK((v1 - v2).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("mean equals length-weighted mean of chunk means") {
    SplitMix64 rng(5);
    Matrix a(2, 3), b(5, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.next_unit();
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.next_unit();
    Eigen::VectorXd whole = text::assemble_visit_representation({a, b});
    Eigen::VectorXd weighted =
        (2.0 * a.colwise().mean().transpose() +
         5.0 * b.colwise().mean().transpose()) /
        7.0;
    CHECK((whole - weighted).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("chunked extraction equals whole-text extraction exactly") {
  auto provider = text::stub_provider(123, 12);
  SplitMix64 rng(77);
  std::vector<std::string> words{"alpha", "beta",  "gamma", "delta", "MED3",
                                 "omega", "theta", "MED11", "kappa"};
  for (int trial = 0; trial < 20; ++trial) {
    int n = 4 + static_cast<int>(rng.next_below(20));
    std::string textline;
    for (int i = 0; i < n; ++i) {
      if (!textline.empty()) textline += " ";
      textline += words[rng.next_below(words.size())];
    }
    // Whole text at once.
    auto all_tokens = provider->tokenize(textline);
    Matrix whole = provider->hidden_states(all_tokens, 16);
    Eigen::VectorXd direct = text::assemble_visit_representation({whole});
    // Random chunking into 1..4 pieces at whitespace boundaries.
    int pieces = 1 + static_cast<int>(rng.next_below(4));
    std::vector<Matrix> parts;
    std::size_t start = 0;
    for (int piece = 0; piece < pieces && start < all_tokens.size(); ++piece) {
      std::size_t remaining = all_tokens.size() - start;
      std::size_t take = piece + 1 == pieces
                             ? remaining
                             : 1 + rng.next_below(remaining - (pieces - piece - 1));
      std::string chunk_text;
      for (std::size_t i = start; i < start + take; ++i) {
        if (!chunk_text.empty()) chunk_text += " ";
        chunk_text += all_tokens[i];
      }
      parts.push_back(text::extract_chunk_states(
          *provider, make_chunk(chunk_text), 16));
      start += take;
    }
    Eigen::VectorXd chunked = text::assemble_visit_representation(parts);
    CHECK((direct - chunked).cwiseAbs().maxCoeff() == 0.0);  // exact
  }
}

TEST_CASE("representation store round-trips through disk") {
  TempDir dir("roundtrip");
  {
    text::RepresentationStore store(dir.path);
    store.set_meta(3, "stub");
    text::RepresentationStore::Entry e;
    e.has_note = true;
    e.config_hash = 42;
    e.values = {1.5f, -2.25f, 0.5f};
    store.put("v1", e);
    text::RepresentationStore::Entry zero;
    zero.has_note = false;
    zero.config_hash = 42;
    zero.values = {0.0f, 0.0f, 0.0f};
    store.put("v0", zero);
    store.flush();
  }
  {
    text::RepresentationStore store(dir.path);
    CHECK(store.hidden_dim() == 3);
    CHECK(store.provider_name() == "stub");
    CHECK(store.has_current("v1", 42));
    CHECK_FALSE(store.has_current("v1", 43));
    CHECK_FALSE(store.has_current("v9", 42));
    auto r = store.get("v1");
    REQUIRE(r.has_value());
    CHECK(r->has_note);
    CHECK(r->values(0) == 1.5);
    CHECK(r->values(1) == -2.25);
    auto z = store.get("v0");
    REQUIRE(z.has_value());
    CHECK_FALSE(z->has_note);
    CHECK(z->values.cwiseAbs().maxCoeff() == 0.0);
    CHECK_FALSE(store.get("missing").has_value());
  }
}

TEST_CASE("store flush writes identical bytes on identical content") {
  TempDir dir("bytes");
  text::RepresentationStore store(dir.path);
  store.set_meta(2, "stub");
  for (const char* id : {"b", "a", "c"}) {
    text::RepresentationStore::Entry e;
    e.has_note = true;
    e.config_hash = 7;
    e.values = {static_cast<float>(id[0]), 1.0f};
    store.put(id, e);
  }
  store.flush();
  std::string manifest1 = read_text_file(dir.path + "/manifest.json");
  std::string data1 = read_text_file(dir.path + "/vectors.f32");
  store.flush();
  CHECK(read_text_file(dir.path + "/manifest.json") == manifest1);
  CHECK(read_text_file(dir.path + "/vectors.f32") == data1);
}

TEST_CASE("failed entries are never considered current") {
  TempDir dir("failed");
  text::RepresentationStore store(dir.path);
  store.set_meta(2, "stub");
  text::RepresentationStore::Entry e;
  e.has_note = false;
  e.failed = true;
  e.config_hash = 9;
  e.values = {0.0f, 0.0f};
  store.put("vx", e);
  CHECK_FALSE(store.has_current("vx", 9));
}

TEST_CASE("extraction_config_hash tracks meaningful settings") {
  auto provider = text::stub_provider(1, 8);
  ExtractionConfig a;
  a.chunking.token_budget = 64;
  std::uint64_t base = text::extraction_config_hash(*provider, a);
  CHECK(base == text::extraction_config_hash(*provider, a));
  ExtractionConfig b = a;
  b.layer = 15;
  CHECK(text::extraction_config_hash(*provider, b) != base);
  ExtractionConfig c = a;
  c.chunking.token_budget = 65;
  CHECK(text::extraction_config_hash(*provider, c) != base);
  ExtractionConfig d = a;
  d.chunking.mode = notes::ChunkMode::length_based;
  CHECK(text::extraction_config_hash(*provider, d) != base);
  auto other = text::stub_provider(1, 16);
  CHECK(text::extraction_config_hash(*other, a) != base);
}

TEST_CASE("extract_corpus walks the dataset") {
  emr::Dataset ds = three_visit_dataset();
  auto provider = text::stub_provider(3, 8);
  ExtractionConfig cfg;
  cfg.chunking.token_budget = 16;
  TempDir dir("corpus");
  text::RepresentationStore store(dir.path);
  auto report = text::extract_corpus(ds, *provider, cfg, store);
  CHECK(report.visits_total == 3);
  CHECK(report.extracted == 2);
  CHECK(report.missing_note == 1);
  CHECK(report.reused == 0);
  CHECK(report.failed == 0);
  // Note-less visit: exact zero vector, has_note = false.
  auto v1 = store.get("v1");
  REQUIRE(v1.has_value());
  CHECK_FALSE(v1->has_note);
  CHECK(v1->values.cwiseAbs().maxCoeff() == 0.0);
  CHECK(v1->values.size() == 8);
  // MED2 contributes its branded direction to the mean of v2.
  auto v2 = store.get("v2");
  REQUIRE(v2.has_value());
  CHECK(v2->has_note);
  CHECK(v2->values.size() == 8);

  SUBCASE("rerun reuses everything") {
    auto again = text::extract_corpus(ds, *provider, cfg, store);
    CHECK(again.extracted == 0);
    CHECK(again.reused == 3);
  }
  SUBCASE("layer change forces re-extraction") {
    ExtractionConfig other = cfg;
    other.layer = 12;
    auto again = text::extract_corpus(ds, *provider, other, store);
    CHECK(again.extracted == 2);
    CHECK(again.reused == 0);
  }
  SUBCASE("multithreaded extraction matches single-threaded") {
    TempDir dir2("corpus_mt");
    text::RepresentationStore store2(dir2.path);
    auto rep2 = text::extract_corpus(ds, *provider, cfg, store2, 4);
    CHECK(rep2.extracted == 2);
    for (const char* id : {"v0", "v1", "v2"}) {
      auto a = store.get(id);
      auto b = store2.get(id);
      REQUIRE(a.has_value());
      REQUIRE(b.has_value());
      CHECK((a->values - b->values).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("extract_corpus survives provider failures") {
  emr::Dataset ds = three_visit_dataset();
  ds.patients[0].visits[0].note = "BOOM goes the backend";
  ExplodingProvider provider;
  ExtractionConfig cfg;
  TempDir dir("boom");
  text::RepresentationStore store(dir.path);
  auto report = text::extract_corpus(ds, provider, cfg, store);
  CHECK(report.failed == 1);
  CHECK(report.extracted == 1);
  CHECK(report.missing_note == 1);
  auto v0 = store.get("v0");
  REQUIRE(v0.has_value());
  CHECK(v0->values.cwiseAbs().maxCoeff() == 0.0);
  // Failed visits are retried on the next run.
  auto again = text::extract_corpus(ds, provider, cfg, store);
  CHECK(again.failed == 1);
  CHECK(again.reused == 2);
}

TEST_CASE("extract_corpus rejects an out-of-range layer") {
  emr::Dataset ds = three_visit_dataset();
  auto provider = text::stub_provider(3, 8);
  ExtractionConfig cfg;
  cfg.layer = 99;
  TempDir dir("layer");
  text::RepresentationStore store(dir.path);
  CHECK_THROWS_AS(text::extract_corpus(ds, *provider, cfg, store),
                  ConfigError);
}

TEST_CASE("representation_matrix assembles corpus-ordered rows") {
  emr::Dataset ds = three_visit_dataset();
  auto provider = text::stub_provider(3, 8);
  ExtractionConfig cfg;
  TempDir dir("matrix");
  text::RepresentationStore store(dir.path);
  text::extract_corpus(ds, *provider, cfg, store);
  auto index = emr::build_corpus_index(ds);
  Matrix m = text::representation_matrix(index, store);
  CHECK(m.rows() == 3);
  CHECK(m.cols() == 8);
  CHECK(m.row(1).cwiseAbs().maxCoeff() == 0.0);  // note-less visit
  CHECK(m.row(0).cwiseAbs().maxCoeff() > 0.0);
  auto v2 = store.get("v2");
  CHECK((m.row(2).transpose() - v2->values).cwiseAbs().maxCoeff() == 0.0);
}

}  // TEST_SUITE
