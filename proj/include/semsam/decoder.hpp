#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "semsam/neighbor_table.hpp"
#include "semsam/vocab_partition.hpp"

namespace semsam {

/// Request-level failure carrying a stable wire error code.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct FilterSpec {
  enum class Kind { top_m, top_p };
  Kind kind = Kind::top_m;
  std::uint32_t m = 1;
  double p = 1.0;

  static FilterSpec top_m(std::uint32_t m) { return {Kind::top_m, m, 1.0}; }
  static FilterSpec top_p(double p) { return {Kind::top_p, 0, p}; }
};

/// Which neighbor slots of a candidate's row contribute to its score.
struct KeepSpec {
  enum class Kind { top_k_prime, threshold };
  Kind kind = Kind::top_k_prime;
  std::uint32_t k_prime = 1;
  float sim_threshold = 1.0f;

  static KeepSpec top_k_prime(std::uint32_t k) { return {Kind::top_k_prime, k, 1.0f}; }
  static KeepSpec threshold(float t) { return {Kind::threshold, 0, t}; }
};

enum class SelectMode { argmax, sample };

struct DecodeRequest {
  std::vector<float> logits;
  double temperature = 1.0;
  FilterSpec filter;
  KeepSpec keep;
  SelectMode select = SelectMode::argmax;
  std::optional<std::uint64_t> seed;
  double score_temperature = 1.0;  ///< softmax temperature over scores in sample mode
};

struct Candidate {
  std::uint32_t token = 0;
  float p = 0.0f;
  float score = 0.0f;

  bool operator==(const Candidate&) const = default;
};

struct StepOutcome {
  std::uint32_t token = 0;
  bool deferred = false;
  std::vector<Candidate> candidates;  ///< I_t in descending-probability order
  std::uint64_t lookups = 0;          ///< neighbor probability reads performed by scoring

  bool operator==(const StepOutcome&) const = default;
};

/// Temperature-scaled softmax with max subtraction. Throws DecodeError for T <= 0.
std::vector<float> softmax_probs(std::span<const float> logits, double temperature);

/// Candidate set I_t ordered by descending probability, ties by ascending id.
/// top_p keeps the shortest prefix reaching mass p and never includes zero-probability ids.
std::vector<std::uint32_t> apply_filter(std::span<const float> probs, const FilterSpec& filter);

/// token id -> table row, or -1 for tokens without a row.
std::vector<std::int32_t> make_row_index(const NeighborTable& table, std::uint64_t v_emb);

/// Score(c) = sum over kept slots k of max(0, S_val[c,k]) * p(S_tid[c,k]), with p the
/// full-vocabulary distribution. Slot 0 (self) is always kept. `lookups`, when given,
/// is incremented once per neighbor probability read.
std::vector<double> semantic_scores(std::span<const std::uint32_t> candidates, std::span<const float> probs,
                                    const NeighborTable& table, std::span<const std::int32_t> row_index,
                                    const KeepSpec& keep, std::uint64_t* lookups = nullptr);

/// Reference sampler shared by deferral and stochastic selection: draws u from
/// Xoshiro256(seed).uniform01() once and walks the cumulative weights in the
/// given candidate order, returning the first index whose running sum exceeds
/// u * total.
std::size_t sample_index(std::span<const double> weights, std::uint64_t seed);

/// Greedy argmax over raw logits, ties to the smaller id.
std::uint32_t argmax_logits(std::span<const float> logits);

/// One decoding step against an immutable table and partition. Thread-safe.
class Decoder {
 public:
  Decoder(NeighborTable table, VocabPartition partition);

  StepOutcome step(const DecodeRequest& req) const;

  /// Same as step() for T > 0 with the softmax already computed; lets callers
  /// time or reuse the distribution separately.
  StepOutcome step_with_probs(const DecodeRequest& req, std::span<const float> probs) const;

  /// Throws DecodeError with the wire code of the first problem found.
  void validate(const DecodeRequest& req) const;

  const NeighborTable& table() const { return table_; }
  const VocabPartition& partition() const { return partition_; }
  std::uint64_t v_emb() const { return partition_.v_emb(); }

 private:
  NeighborTable table_;
  VocabPartition partition_;
  std::vector<std::int32_t> row_index_;
};

}  // namespace semsam
