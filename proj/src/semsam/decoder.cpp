#include "semsam/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "semsam/error.hpp"
#include "semsam/rng.hpp"

namespace semsam {

namespace {

// Descending probability, ascending id.
struct ByProb {
  std::span<const float> p;
  bool operator()(std::uint32_t a, std::uint32_t b) const {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  }
};

std::vector<std::uint32_t> top_m_ids(std::span<const float> probs, std::size_t m) {
  const std::size_t v = probs.size();
  ByProb order{probs};
  if (m >= v) {
    std::vector<std::uint32_t> all(v);
    std::iota(all.begin(), all.end(), 0u);
    std::sort(all.begin(), all.end(), order);
    return all;
  }
  // Bounded heap whose front is the worst kept id; most ids are rejected by a
  // single comparison.
  std::vector<std::uint32_t> heap;
  heap.reserve(m);
  for (std::uint32_t id = 0; id < v; ++id) {
    if (heap.size() < m) {
      heap.push_back(id);
      std::push_heap(heap.begin(), heap.end(), order);
    } else if (order(id, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), order);
      heap.back() = id;
      std::push_heap(heap.begin(), heap.end(), order);
    }
  }
  std::sort(heap.begin(), heap.end(), order);
  return heap;
}

}  // namespace

std::vector<float> softmax_probs(std::span<const float> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw DecodeError("bad_temperature", fmt::format("softmax needs temperature > 0, got {}", temperature));
  if (logits.empty()) throw DecodeError("bad_logits_len", "empty logits");
  const float max_logit = *std::max_element(logits.begin(), logits.end());
  const double inv_t = 1.0 / temperature;
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp((static_cast<double>(logits[i]) - max_logit) * inv_t);
    sum += e[i];
  }
  std::vector<float> out(logits.size());
  const double inv_sum = 1.0 / sum;
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] * inv_sum);
  return out;
}

std::vector<std::uint32_t> apply_filter(std::span<const float> probs, const FilterSpec& filter) {
  if (probs.empty()) return {};
  std::vector<std::uint32_t> ids;
  if (filter.kind == FilterSpec::Kind::top_m) {
    ids = top_m_ids(probs, std::max<std::uint32_t>(1, filter.m));
    return ids;
  }

  const double target = filter.p;
  // Grow a sorted prefix until it holds enough mass; typical nucleus sets are
  // tiny compared with the vocabulary.
  for (std::size_t want = 64;; want *= 4) {
    ids = top_m_ids(probs, want);
    double cum = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (probs[ids[i]] <= 0.0f) {
        ids.resize(std::max<std::size_t>(i, 1));
        return ids;
      }
      cum += probs[ids[i]];
      if (target < 1.0 && cum >= target) {
        ids.resize(i + 1);
        return ids;
      }
    }
    if (ids.size() >= probs.size()) return ids;  // whole vocabulary, all nonzero
  }
}

std::vector<std::int32_t> make_row_index(const NeighborTable& table, std::uint64_t v_emb) {
  std::vector<std::int32_t> index(v_emb, -1);
  for (std::size_t row = 0; row < table.content_ids.size(); ++row) {
    const auto id = table.content_ids[row];
    if (id >= v_emb) throw ValidationError(fmt::format("table content id {} ≥ v_emb {}", id, v_emb));
    index[id] = static_cast<std::int32_t>(row);
  }
  return index;
}

std::vector<double> semantic_scores(std::span<const std::uint32_t> candidates, std::span<const float> probs,
                                    const NeighborTable& table, std::span<const std::int32_t> row_index,
                                    const KeepSpec& keep, std::uint64_t* lookups) {
  std::vector<double> scores(candidates.size());
  std::uint64_t reads = 0;
  const std::size_t k = table.k;
  const std::size_t k_prime = keep.kind == KeepSpec::Kind::top_k_prime ? std::min<std::size_t>(keep.k_prime, k) : k;

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = candidates[i];
    const std::int32_t row = c < row_index.size() ? row_index[c] : -1;
    if (row < 0) throw DecodeError("internal", fmt::format("candidate {} has no neighbor row", c));
    const std::uint32_t* ids = table.s_tid.data() + static_cast<std::size_t>(row) * k;
    const float* vals = table.s_val.data() + static_cast<std::size_t>(row) * k;

    double score = 0.0;
    for (std::size_t slot = 0; slot < k_prime; ++slot) {
      if (slot > 0 && keep.kind == KeepSpec::Kind::threshold && vals[slot] < keep.sim_threshold) break;
      const double w = slot == 0 ? 1.0 : std::max(0.0f, vals[slot]);
      score += w * static_cast<double>(probs[ids[slot]]);
      ++reads;
    }
    scores[i] = score;
  }
  if (lookups) *lookups += reads;
  return scores;
}

std::size_t sample_index(std::span<const double> weights, std::uint64_t seed) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  Xoshiro256 rng(seed);
  const double target = rng.uniform01() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    cum += weights[i];
    if (target < cum) return i;
  }
  // Rounding can leave target == total; fall back to the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

std::uint32_t argmax_logits(std::span<const float> logits) {
  return static_cast<std::uint32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

Decoder::Decoder(NeighborTable table, VocabPartition partition)
    : table_(std::move(table)), partition_(std::move(partition)) {
  table_.validate();
  if (table_.content_ids != partition_.content_ids())
    throw ValidationError(fmt::format("table covers {} content tokens but the partition has {}", table_.size(),
                                      partition_.content_ids().size()));
  row_index_ = make_row_index(table_, partition_.v_emb());
}

void Decoder::validate(const DecodeRequest& req) const {
  if (req.logits.size() != v_emb())
    throw DecodeError("bad_logits_len", fmt::format("expected {} logits, got {}", v_emb(), req.logits.size()));
  for (float v : req.logits) {
    if (!std::isfinite(v)) throw DecodeError("non_finite_logits", "logits must be finite");
  }
  if (!(req.temperature >= 0.0) || !std::isfinite(req.temperature))
    throw DecodeError("bad_temperature", "temperature must be a finite number >= 0");
  if (req.filter.kind == FilterSpec::Kind::top_m && req.filter.m < 1)
    throw DecodeError("bad_filter", "top_m requires m >= 1");
  if (req.filter.kind == FilterSpec::Kind::top_p && !(req.filter.p > 0.0 && req.filter.p <= 1.0))
    throw DecodeError("bad_filter", "top_p requires 0 < p <= 1");
  if (req.keep.kind == KeepSpec::Kind::top_k_prime && (req.keep.k_prime < 1 || req.keep.k_prime > table_.k))
    throw DecodeError("bad_keep", fmt::format("k_prime must be in [1, {}]", table_.k));
  if (req.keep.kind == KeepSpec::Kind::threshold && !std::isfinite(req.keep.sim_threshold))
    throw DecodeError("bad_keep", "similarity threshold must be finite");
  if (!(req.score_temperature > 0.0) || !std::isfinite(req.score_temperature))
    throw DecodeError("bad_score_temperature", "score_temperature must be > 0");
  // Any T > 0 step may defer to the stochastic default sampler.
  if (req.temperature > 0.0 && !req.seed)
    throw DecodeError("missing_seed", "a seed is required when temperature > 0");
}

StepOutcome Decoder::step(const DecodeRequest& req) const {
  validate(req);
  if (req.temperature == 0.0) {
    StepOutcome out;
    out.token = argmax_logits(req.logits);
    out.deferred = true;
    return out;
  }
  const auto probs = softmax_probs(req.logits, req.temperature);
  return step_with_probs(req, probs);
}

StepOutcome Decoder::step_with_probs(const DecodeRequest& req, std::span<const float> probs) const {
  if (!req.seed) throw DecodeError("missing_seed", "a seed is required when temperature > 0");
  if (probs.size() != v_emb())
    throw DecodeError("bad_logits_len", fmt::format("expected {} probabilities, got {}", v_emb(), probs.size()));
  const auto ids = apply_filter(probs, req.filter);
  StepOutcome out;
  out.candidates.reserve(ids.size());

  const bool all_content = std::all_of(ids.begin(), ids.end(), [&](auto id) {
    return partition_.is_content_unchecked(id);
  });

  if (!all_content) {
    out.deferred = true;
    std::vector<double> weights(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      weights[i] = probs[ids[i]];
      out.candidates.push_back({ids[i], probs[ids[i]], probs[ids[i]]});
    }
    out.token = ids[sample_index(weights, *req.seed)];
    return out;
  }

  const auto scores = semantic_scores(ids, probs, table_, row_index_, req.keep, &out.lookups);
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.candidates.push_back({ids[i], probs[ids[i]], static_cast<float>(scores[i])});

  if (req.select == SelectMode::argmax) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < ids.size(); ++i) {
      if (scores[i] > scores[best] || (scores[i] == scores[best] && ids[i] < ids[best])) best = i;
    }
    out.token = ids[best];
  } else {
    const double top = *std::max_element(scores.begin(), scores.end());
    std::vector<double> weights(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      weights[i] = std::exp((scores[i] - top) / req.score_temperature);
    out.token = ids[sample_index(weights, *req.seed)];
  }
  return out;
}

}  // namespace semsam
