#include "semsam/embedding_io.hpp"

#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "semsam/bytes.hpp"
#include "semsam/error.hpp"

namespace semsam {

namespace {

constexpr std::uint32_t kSembVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

}  // namespace

void EmbeddingMatrix::validate() const {
  if (rows < 1 || dim < 1) throw ValidationError(fmt::format("embedding shape {}x{} is empty", rows, dim));
  if (data.size() != rows * dim)
    throw ValidationError(fmt::format("embedding payload has {} values, expected {}", data.size(), rows * dim));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i]))
      throw ValidationError(fmt::format("non-finite embedding value at row {} col {}", i / dim, i % dim));
  }
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m) {
  m.validate();
  bytes::Writer w;
  w.reserve(kSembHeaderSize + m.data.size() * 4);
  w.raw("SEMB");
  w.u32(kSembVersion);
  w.u64(m.rows);
  w.u64(m.dim);
  w.u8(kDtypeF32);
  for (float v : m.data) w.f32(v);
  return std::move(w.buffer());
}

EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (r.raw(4) != "SEMB") throw FormatError("bad magic at offset 0 (expected SEMB)");
  const auto version = r.u32();
  if (version != kSembVersion) throw FormatError(fmt::format("unsupported version {} at offset 4", version));
  const auto rows = r.u64();
  const auto dim = r.u64();
  const auto dtype = r.u8();
  if (dtype != kDtypeF32) throw FormatError(fmt::format("unsupported dtype {} at offset 24", dtype));
  if (rows < 1 || dim < 1) throw FormatError(fmt::format("empty shape {}x{} at offset 8", rows, dim));
  std::uint64_t count = 0;
  std::uint64_t payload = 0;
  if (__builtin_mul_overflow(rows, dim, &count) || __builtin_mul_overflow(count, 4, &payload) ||
      r.remaining() < payload)
    throw FormatError(fmt::format("truncated at offset {}", data.size()));
  if (r.remaining() > count * 4)
    throw FormatError(fmt::format("trailing bytes at offset {}", kSembHeaderSize + count * 4));

  EmbeddingMatrix m;
  m.rows = rows;
  m.dim = dim;
  m.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const float v = r.f32();
    if (!std::isfinite(v)) throw FormatError(fmt::format("non-finite value at offset {}", at));
    m.data[i] = v;
  }
  return m;
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(bytes::read_file(path));
}

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  const auto encoded = encode_embeddings(m);  // validates before touching the file
  bytes::write_file(path, encoded);
}

TokenizerMeta parse_tokenizer_meta(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("tokenizer meta: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("v_tok"))
    throw FormatError("tokenizer meta: expected object with v_tok, special_ids, added_ids");

  TokenizerMeta meta;
  try {
    meta.v_tok = doc.at("v_tok").get<std::uint64_t>();
    for (const char* key : {"special_ids", "added_ids"}) {
      auto& target = std::string_view(key) == "special_ids" ? meta.special_ids : meta.added_ids;
      if (!doc.contains(key)) continue;
      for (const auto& id : doc.at(key)) target.insert(id.get<std::uint32_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tokenizer meta: ") + e.what());
  }
  for (const auto* set : {&meta.special_ids, &meta.added_ids}) {
    for (auto id : *set) {
      if (id >= meta.v_tok) throw ValidationError(fmt::format("id {} ≥ v_tok {}", id, meta.v_tok));
    }
  }
  return meta;
}

TokenizerMeta load_tokenizer_meta(const std::filesystem::path& path) {
  return parse_tokenizer_meta(bytes::read_text_file(path));
}

}  // namespace semsam
