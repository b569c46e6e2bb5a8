#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "misground/qa_generator.hpp"

namespace misground {

struct ResponseRecord {
  std::string question_id;
  std::string raw_text;
  bool operator==(const ResponseRecord&) const = default;
};

std::string serialize_responses(const std::vector<ResponseRecord>& responses);
std::vector<ResponseRecord> parse_responses(std::string_view jsonl);
void write_responses(const std::vector<ResponseRecord>& responses, const std::filesystem::path& path);
std::vector<ResponseRecord> read_responses(const std::filesystem::path& path);

/// Trimmed content of the last <answer>...</answer> span (tags matched
/// case-insensitively); nullopt when there is none.
std::optional<std::string> extract_answer(std::string_view raw);

/// Lower-case, collapse runs of whitespace, trim, and strip surrounding
/// quotes and terminal punctuation.
std::string normalize_answer(std::string_view s);

enum class MatchMode { exact, synonym };
std::string_view to_string(MatchMode m);
std::optional<MatchMode> parse_match_mode(std::string_view s);

/// Alternative spellings accepted for canonical answers in synonym mode.
class SynonymTable {
 public:
  /// The table shipped in data/synonyms.json.
  static SynonymTable defaults();
  /// {"canonical": ["alt", ...], ...}; an alternative may not be another
  /// canonical entry or belong to two entries.
  static SynonymTable parse(std::string_view json_text);

  /// Canonical form of a normalized answer (itself when unknown).
  std::string canonical(const std::string& normalized) const;
  std::size_t size() const { return to_canonical_.size(); }

 private:
  std::map<std::string, std::string> to_canonical_;
};

struct ScoreOptions {
  MatchMode mode = MatchMode::synonym;
  SynonymTable synonyms = SynonymTable::defaults();
};

bool score(const QAItem& item, std::string_view answer, const ScoreOptions& opts = {});

// ---------------------------------------------------------------------------
// Beta posterior

struct BetaPrior {
  double alpha = 1.0;
  double beta = 1.0;
  static BetaPrior uniform() { return {1.0, 1.0}; }
  static BetaPrior jeffreys() { return {0.5, 0.5}; }
};

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
/// Inverse of I_x(a, b) in x by bisection, to within 1e-12.
double beta_quantile(double a, double b, double p);
/// Equal-tailed interval of Beta(alpha + successes, beta + failures).
Interval credible_interval(std::size_t successes, std::size_t failures, const BetaPrior& prior = {}, double mass = 0.95);

// ---------------------------------------------------------------------------
// Aggregation

struct CategoryStats {
  std::size_t n_items = 0;
  std::size_t n_scored = 0;
  std::size_t n_omitted = 0;  // response present but without answer tags
  std::size_t n_missing = 0;  // no response at all
  std::size_t n_correct = 0;
  std::optional<double> accuracy;
  double posterior_mean = 0.0;
  Interval interval;
};

struct EvalOptions {
  ScoreOptions scoring;
  BetaPrior prior;
  double mass = 0.95;
};

struct EvalReport {
  EvalOptions options;
  CategoryStats overall;
  std::map<std::string, CategoryStats> by_tag;
  /// Keyed by parameter name, then value.
  std::map<std::string, std::map<std::string, CategoryStats>> by_param;
  std::vector<std::string> unmatched;  // response ids with no item
  std::size_t n_duplicates = 0;        // responses superseded by a later one

  nlohmann::json to_json() const;
};

/// Scores each item against its response (the last one when an id repeats).
EvalReport aggregate(const std::vector<QAItem>& items, const std::vector<ResponseRecord>& responses,
                     const EvalOptions& opts = {});

/// Answers the key with probability 1 - error_rate, else a distractor chosen
/// uniformly; each item draws from its own stream seeded by (seed, id).
std::vector<ResponseRecord> stub_respond(const std::vector<QAItem>& items, double error_rate, std::uint64_t seed);

}  // namespace misground
