#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <vector>

namespace semsam {

/// Dense row-major token-embedding table (V_emb x d), f32.
struct EmbeddingMatrix {
  std::uint64_t rows = 0;
  std::uint64_t dim = 0;
  std::vector<float> data;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::uint64_t r, std::uint64_t d) : rows(r), dim(d), data(r * d, 0.0f) {}

  std::span<const float> row(std::uint64_t i) const { return {data.data() + i * dim, dim}; }
  std::span<float> row(std::uint64_t i) { return {data.data() + i * dim, dim}; }

  /// Throws ValidationError on empty shape, size mismatch or non-finite values.
  void validate() const;

  bool operator==(const EmbeddingMatrix&) const = default;
};

/// Tokenizer-side vocabulary facts needed to separate content from control tokens.
struct TokenizerMeta {
  std::uint64_t v_tok = 0;
  std::set<std::uint32_t> special_ids;
  std::set<std::uint32_t> added_ids;
};

inline constexpr std::size_t kSembHeaderSize = 25;

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

/// In-memory SEMB codec; the file functions are thin wrappers around these.
EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m);

TokenizerMeta load_tokenizer_meta(const std::filesystem::path& path);
TokenizerMeta parse_tokenizer_meta(std::string_view json_text);

}  // namespace semsam
