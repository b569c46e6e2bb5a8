#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "semsam/error.hpp"
#include "semsam/neighbor_table.hpp"
#include "test_util.hpp"

using namespace semsam;

namespace {

EmbeddingMatrix four_tokens() {
  EmbeddingMatrix e(4, 2);
  e.data = {1, 0, 0, 1, 1, 1, -1, 0};
  return e;
}

EmbeddingMatrix random_embeddings(std::uint64_t rows, std::uint64_t dim, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  EmbeddingMatrix e(rows, dim);
  for (auto& v : e.data) v = static_cast<float>(test_util::normal(rng));
  return e;
}

void check_table_invariants(const NeighborTable& t, const VocabPartition& p) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto ids = t.ids(i);
    auto vals = t.vals(i);
    CHECK(ids[0] == t.content_ids[i]);
    for (std::size_t j = 0; j < t.k; ++j) {
      CHECK(p.is_content(ids[j]));
      CHECK(vals[j] >= -1.0f - 1e-6f);
      CHECK(vals[j] <= 1.0f + 1e-6f);
      if (j > 0) CHECK(vals[j] <= vals[j - 1]);
    }
  }
}

}  // namespace

TEST_CASE("normalize_rows examples") {
  EmbeddingMatrix e(3, 2);
  e.data = {3, 4, 0, 0, 1, 0};
  const std::vector<std::uint32_t> ids{0, 1, 2};
  const auto unit = normalize_rows(e, ids, 1e-8);
  CHECK(unit[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(unit[1] == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(unit[2] == 0.0f);
  CHECK(unit[3] == 0.0f);
  CHECK(std::abs(unit[4] - 1.0f) < 1e-6f);
  CHECK(unit[5] == 0.0f);
}

TEST_CASE("nonzero rows normalize to unit length") {
  const auto e = random_embeddings(50, 13, 4);
  std::vector<std::uint32_t> ids(50);
  for (std::uint32_t i = 0; i < 50; ++i) ids[i] = i;
  const auto unit = normalize_rows(e, ids, 1e-8);
  for (std::size_t i = 0; i < 50; ++i) {
    double n = 0;
    for (std::size_t j = 0; j < 13; ++j) n += double(unit[i * 13 + j]) * unit[i * 13 + j];
    CHECK(std::sqrt(n) >= 1 - 1e-5);
    CHECK(std::sqrt(n) <= 1 + 1e-6);
  }
}

TEST_CASE("four-token table matches the hand-computed cosine matrix") {
  const auto p = build_partition(TokenizerMeta{4, {}, {}}, 4);
  const auto t = build_neighbor_table(four_tokens(), p, {.k = 2});
  REQUIRE(t.size() == 4);
  CHECK(t.ids(0)[0] == 0);
  CHECK(t.ids(0)[1] == 2);
  CHECK(t.vals(0)[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(t.vals(0)[1] - 0.70710678f) < 1e-4f);

  CHECK(t.ids(3)[0] == 3);
  CHECK(t.ids(3)[1] == 1);
  CHECK(t.vals(3)[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(t.vals(3)[1]) < 1e-4f);
}

TEST_CASE("K=1 keeps only self") {
  const auto p = build_partition(TokenizerMeta{4, {}, {}}, 4);
  const auto t = build_neighbor_table(four_tokens(), p, {.k = 1});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t.ids(i)[0] == i);
    CHECK(t.vals(i)[0] == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("k larger than the content set is an error") {
  const auto p = build_partition(TokenizerMeta{4, {0}, {}}, 4);
  CHECK_THROWS_AS(build_neighbor_table(four_tokens(), p, {.k = 4}), ValidationError);
}

TEST_CASE("neighbors are drawn only from content tokens") {
  // Token 2 = (1,1) is special; token 0's nearest content neighbor becomes 1 or 3.
  const auto p = build_partition(TokenizerMeta{4, {2}, {}}, 4);
  const auto t = build_neighbor_table(four_tokens(), p, {.k = 2});
  CHECK(t.content_ids == std::vector<std::uint32_t>{0, 1, 3});
  CHECK(t.ids(0)[1] == 1);
  check_table_invariants(t, p);
}

TEST_CASE("zero rows keep self at slot 0 with value 0") {
  EmbeddingMatrix e(3, 2);
  e.data = {0, 0, 1, 0, 0, 1};
  const auto p = build_partition(TokenizerMeta{3, {}, {}}, 3);
  const auto t = build_neighbor_table(e, p, {.k = 3});
  CHECK(t.ids(0)[0] == 0);
  CHECK(t.vals(0)[0] == 0.0f);
  CHECK(t.ids(0)[1] == 1);  // all ties at 0, ascending id
  CHECK(t.ids(0)[2] == 2);
  check_table_invariants(t, p);
}

TEST_CASE("oracle equivalence on random embeddings") {
  struct Case {
    std::uint64_t v, d;
    std::uint32_t k;
  };
  for (auto c : {Case{64, 4, 5}, Case{200, 32, 16}, Case{512, 8, 7}}) {
    const auto e = random_embeddings(c.v, c.d, c.v * 7 + c.d);
    TokenizerMeta meta{c.v - 3, {0, 5}, {7}};
    const auto p = build_partition(meta, c.v);
    const auto t = build_neighbor_table(e, p, {.k = c.k, .block_size = 37});
    const auto ref = oracle::brute_force_knn(e, p.content_ids(), c.k, 1e-8);
    REQUIRE(t.size() == ref.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t j = 0; j < c.k; ++j) {
        CHECK(t.ids(i)[j] == ref[i].ids[j]);
        CHECK(std::abs(t.vals(i)[j] - ref[i].vals[j]) <= 1e-5);
      }
    }
    check_table_invariants(t, p);
  }
}

TEST_CASE("output is independent of block size and worker count") {
  const auto e = random_embeddings(300, 12, 99);
  const auto p = build_partition(TokenizerMeta{290, {3}, {}}, 300);
  const auto base = build_neighbor_table(e, p, {.k = 9, .block_size = 256, .workers = 1});
  for (std::size_t block : {1, 7, 64, 1000}) {
    for (unsigned workers : {1u, 3u}) {
      CHECK(build_neighbor_table(e, p, {.k = 9, .block_size = block, .workers = workers}) == base);
    }
  }
}

TEST_CASE("tables from two checkpoints sharing a tokenizer share shape and id domain") {
  const auto p = build_partition(TokenizerMeta{100, {0, 1}, {}}, 104);
  const auto a = build_neighbor_table(random_embeddings(104, 8, 1), p, {.k = 6});
  const auto b = build_neighbor_table(random_embeddings(104, 16, 2), p, {.k = 6});
  CHECK(a.content_ids == b.content_ids);
  CHECK(a.k == b.k);
  CHECK(a.s_tid.size() == b.s_tid.size());
  check_table_invariants(b, p);
}

TEST_CASE("SEMN round trip and corruption") {
  test_util::TempDir dir("semn");
  const auto p = build_partition(TokenizerMeta{4, {}, {}}, 4);
  const auto t = build_neighbor_table(four_tokens(), p, {.k = 2});
  save_table(t, dir / "t.semn");
  CHECK(load_table(dir / "t.semn") == t);
  CHECK(std::filesystem::file_size(dir / "t.semn") == 20 + 4 * 4 + 4 * 2 * 8);

  auto bytes = encode_table(t);
  auto bad_magic = bytes;
  bad_magic[3] = 'X';
  CHECK_THROWS_AS(decode_table(bad_magic), FormatError);

  auto bad_n = bytes;
  bad_n[8] = 5;  // n = 5 but payload holds 4 rows
  CHECK_THROWS_AS(decode_table(bad_n), FormatError);

  auto short_payload = bytes;
  short_payload.pop_back();
  CHECK_THROWS_AS(decode_table(short_payload), FormatError);
}
