#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "semsam/bytes.hpp"
#include "semsam/embedding_io.hpp"
#include "semsam/error.hpp"
#include "test_util.hpp"

using namespace semsam;

namespace {

EmbeddingMatrix random_matrix(std::uint64_t rows, std::uint64_t dim, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  EmbeddingMatrix m(rows, dim);
  for (auto& v : m.data) v = static_cast<float>(test_util::normal(rng));
  return m;
}

}  // namespace

TEST_CASE("load_embeddings reads a 2x3 identity-like payload") {
  test_util::TempDir dir("semb_2x3");
  EmbeddingMatrix m(2, 3);
  m.data = {1, 0, 0, 0, 1, 0};
  save_embeddings(m, dir / "e.semb");
  const auto loaded = load_embeddings(dir / "e.semb");
  CHECK(loaded.rows == 2);
  CHECK(loaded.dim == 3);
  CHECK(loaded.data == std::vector<float>{1, 0, 0, 0, 1, 0});
}

TEST_CASE("header layout is 25 bytes little-endian") {
  EmbeddingMatrix m(1, 1);
  m.data = {2.5f};
  const auto bytes = encode_embeddings(m);
  REQUIRE(bytes.size() == 29);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SEMB");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[8] == 1);  // rows
  CHECK(bytes[16] == 1);  // dim
  CHECK(bytes[24] == 0);  // dtype f32
  float v;
  std::memcpy(&v, bytes.data() + 25, 4);
  CHECK(v == 2.5f);

  test_util::TempDir dir("semb_1x1");
  save_embeddings(m, dir / "one.semb");
  CHECK(std::filesystem::file_size(dir / "one.semb") == 29);
}

TEST_CASE("truncation errors name the offset of the first missing byte") {
  EmbeddingMatrix m(2, 3);
  m.data = {1, 0, 0, 0, 1, 0};
  const auto full = encode_embeddings(m);

  std::vector<std::uint8_t> cut(full.begin(), full.begin() + 24);
  CHECK_THROWS_WITH_AS(decode_embeddings(cut), "truncated at offset 24", FormatError);

  std::vector<std::uint8_t> header_only(full.begin(), full.begin() + 25);
  CHECK_THROWS_WITH_AS(decode_embeddings(header_only), "truncated at offset 25", FormatError);

  std::vector<std::uint8_t> partial(full.begin(), full.end() - 2);
  CHECK_THROWS_AS(decode_embeddings(partial), FormatError);
}

TEST_CASE("bad magic and non-finite payloads are rejected") {
  EmbeddingMatrix m(1, 2);
  m.data = {1.0f, 2.0f};
  auto bytes = encode_embeddings(m);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_embeddings(bad), FormatError);

  auto nan_bytes = bytes;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_bytes.data() + 29, &nan, 4);
  CHECK_THROWS_WITH_AS(decode_embeddings(nan_bytes), "non-finite value at offset 29", FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_embeddings(trailing), FormatError);
}

TEST_CASE("save rejects NaN before writing") {
  test_util::TempDir dir("semb_nan");
  EmbeddingMatrix m(1, 2);
  m.data = {1.0f, std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(save_embeddings(m, dir / "nan.semb"), ValidationError);
  CHECK_FALSE(std::filesystem::exists(dir / "nan.semb"));
}

TEST_CASE("round trip is bitwise exact and file size is header + 4*rows*dim") {
  test_util::TempDir dir("semb_rt");
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto m = random_matrix(257, 17, seed);
    save_embeddings(m, dir / "m.semb");
    CHECK(std::filesystem::file_size(dir / "m.semb") == kSembHeaderSize + 257 * 17 * 4);
    const auto back = load_embeddings(dir / "m.semb");
    REQUIRE(back.data.size() == m.data.size());
    CHECK(std::memcmp(back.data.data(), m.data.data(), m.data.size() * 4) == 0);
    CHECK(back == m);
  }
}

TEST_CASE("equal matrices produce equal bytes") {
  CHECK(encode_embeddings(random_matrix(5, 4, 9)) == encode_embeddings(random_matrix(5, 4, 9)));
}

TEST_CASE("tokenizer meta parsing") {
  const auto meta = parse_tokenizer_meta(R"({"v_tok":10,"special_ids":[0,9],"added_ids":[]})");
  CHECK(meta.v_tok == 10);
  CHECK(meta.special_ids.size() == 2);
  CHECK(meta.added_ids.empty());

  CHECK_THROWS_WITH_AS(parse_tokenizer_meta(R"({"v_tok":5,"special_ids":[7],"added_ids":[]})"), "id 7 ≥ v_tok 5",
                       ValidationError);
  CHECK_THROWS_AS(parse_tokenizer_meta("{not json"), FormatError);

  const auto dup = parse_tokenizer_meta(R"({"v_tok":6,"special_ids":[1,1,2],"added_ids":[2]})");
  CHECK(dup.special_ids == std::set<std::uint32_t>{1, 2});
  CHECK(dup.added_ids == std::set<std::uint32_t>{2});
}
