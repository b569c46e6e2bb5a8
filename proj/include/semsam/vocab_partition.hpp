#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semsam/embedding_io.hpp"

namespace semsam {

/// Split of embedding rows [0, v_emb) into content tokens (C) and
/// non-content tokens (U: special, added, and rows beyond the tokenizer).
class VocabPartition {
 public:
  VocabPartition() = default;

  std::uint64_t v_emb() const { return content_mask_.size(); }
  const std::vector<std::uint32_t>& content_ids() const { return content_ids_; }
  const std::vector<std::uint32_t>& non_content_ids() const { return non_content_ids_; }

  /// O(1). Throws std::out_of_range for id >= v_emb.
  bool is_content(std::uint64_t id) const;

  /// Unchecked variant for hot loops where the id is known to be in range.
  bool is_content_unchecked(std::uint32_t id) const { return content_mask_[id] != 0; }

  /// {"v_emb": n, "content_ids": [...], "non_content_ids": [...]}
  std::string to_json() const;

  friend VocabPartition build_partition(const TokenizerMeta&, std::uint64_t, std::span<const std::uint32_t>);

 private:
  std::vector<std::uint8_t> content_mask_;
  std::vector<std::uint32_t> content_ids_;
  std::vector<std::uint32_t> non_content_ids_;
};

/// U = special ∪ added ∪ [v_tok, v_emb) ∪ extra_exclusions; C = the rest.
/// extra_exclusions is empty by default: byte-like and whitespace tokens stay in C.
VocabPartition build_partition(const TokenizerMeta& meta, std::uint64_t v_emb,
                               std::span<const std::uint32_t> extra_exclusions = {});

}  // namespace semsam
