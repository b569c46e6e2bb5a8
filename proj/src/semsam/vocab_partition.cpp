#include "semsam/vocab_partition.hpp"

#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "semsam/error.hpp"

namespace semsam {

bool VocabPartition::is_content(std::uint64_t id) const {
  if (id >= content_mask_.size())
    throw std::out_of_range(fmt::format("token id {} out of range for v_emb {}", id, content_mask_.size()));
  return content_mask_[id] != 0;
}

std::string VocabPartition::to_json() const {
  nlohmann::json doc;
  doc["v_emb"] = v_emb();
  doc["content_ids"] = content_ids_;
  doc["non_content_ids"] = non_content_ids_;
  return doc.dump();
}

VocabPartition build_partition(const TokenizerMeta& meta, std::uint64_t v_emb,
                               std::span<const std::uint32_t> extra_exclusions) {
  if (v_emb < meta.v_tok) throw ValidationError(fmt::format("v_emb {} < v_tok {}", v_emb, meta.v_tok));
  if (v_emb > 0xFFFFFFFFull) throw ValidationError("v_emb exceeds 32-bit token id range");

  VocabPartition p;
  p.content_mask_.assign(v_emb, 1);
  for (auto id : meta.special_ids) p.content_mask_.at(id) = 0;
  for (auto id : meta.added_ids) p.content_mask_.at(id) = 0;
  for (auto id : extra_exclusions) {
    if (id >= v_emb) throw ValidationError(fmt::format("excluded id {} ≥ v_emb {}", id, v_emb));
    p.content_mask_[id] = 0;
  }
  for (std::uint64_t id = meta.v_tok; id < v_emb; ++id) p.content_mask_[id] = 0;

  for (std::uint64_t id = 0; id < v_emb; ++id) {
    (p.content_mask_[id] ? p.content_ids_ : p.non_content_ids_).push_back(static_cast<std::uint32_t>(id));
  }
  return p;
}

}  // namespace semsam
