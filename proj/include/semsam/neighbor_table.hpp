#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "semsam/embedding_io.hpp"
#include "semsam/vocab_partition.hpp"

namespace semsam {

struct NeighborBuildConfig {
  std::uint32_t k = 32;           ///< neighbors per row, self included
  double epsilon = 1e-8;          ///< row-normalization damping
  std::size_t block_size = 256;   ///< query rows per block
  unsigned workers = 1;           ///< threads; output is identical for any value
};

/// Precomputed cosine neighborhoods over content tokens. Row i belongs to
/// content_ids[i]; slot 0 of every row is the token itself.
struct NeighborTable {
  std::vector<std::uint32_t> content_ids;  // sorted ascending
  std::uint32_t k = 0;
  std::vector<std::uint32_t> s_tid;  // |C| x k, row-major
  std::vector<float> s_val;          // |C| x k, unclamped cosine

  std::size_t size() const { return content_ids.size(); }
  std::span<const std::uint32_t> ids(std::size_t row) const { return {s_tid.data() + row * k, k}; }
  std::span<const float> vals(std::size_t row) const { return {s_val.data() + row * k, k}; }

  /// Structural checks: shapes, sorted ids, neighbor ids drawn from content_ids.
  void validate() const;

  bool operator==(const NeighborTable&) const = default;
};

/// Rows E[ids[i]] / (||E[ids[i]]||_2 + epsilon), packed |ids| x dim.
std::vector<float> normalize_rows(const EmbeddingMatrix& e, std::span<const std::uint32_t> ids, double epsilon);

/// Exact top-K cosine neighbors within C. Ties break toward the smaller token id.
NeighborTable build_neighbor_table(const EmbeddingMatrix& e, const VocabPartition& p,
                                   const NeighborBuildConfig& cfg);

std::vector<std::uint8_t> encode_table(const NeighborTable& t);
NeighborTable decode_table(std::span<const std::uint8_t> bytes);
void save_table(const NeighborTable& t, const std::filesystem::path& path);
NeighborTable load_table(const std::filesystem::path& path);

}  // namespace semsam
