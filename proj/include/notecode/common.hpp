#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace notecode {

// Error taxonomy. Parse/Integrity/Stage surface as data errors (CLI exit 2),
// Config/Lookup/Shape are caller mistakes, Training covers runtime failures
// such as divergence (CLI exit 3).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a over raw bytes; stable across platforms, used for config/data hashes.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// SplitMix64 generator. The standard <random> distributions are
// implementation-defined, so all sampling goes through this.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  // Uniform in [0, n), rejection-sampled so results are unbiased.
  std::uint64_t next_below(std::uint64_t n);
  // Uniform in [0, 1) with 53 bits of precision.
  double next_unit();
  // Uniform in [lo, hi].
  std::int64_t next_range(std::int64_t lo, std::int64_t hi);

 private:
  std::uint64_t state_;
};

template <typename T>
void shuffle_inplace(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

// ISO-8601 UTC timestamps ("2143-01-30T14:05:00Z" or date-only) to epoch
// seconds and back. Hand-rolled so parsing does not depend on the host
// timezone database.
std::int64_t parse_iso8601_utc(std::string_view text);
std::string format_iso8601_utc(std::int64_t epoch_seconds);

// Collapses every run of whitespace (including newlines) to a single space
// and trims the ends.
std::string normalize_whitespace(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace notecode
