#include "semsam/neighbor_table.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "semsam/bytes.hpp"
#include "semsam/error.hpp"

namespace semsam {

namespace {

constexpr std::uint32_t kSemnVersion = 1;
constexpr std::size_t kSemnHeaderSize = 20;

double dot(const float* a, const float* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

struct Scored {
  double sim;
  std::uint32_t row;
};

// Higher similarity first; equal similarity -> smaller row (= smaller token id,
// since content_ids is sorted).
bool better(const Scored& a, const Scored& b) {
  if (a.sim != b.sim) return a.sim > b.sim;
  return a.row < b.row;
}

}  // namespace

void NeighborTable::validate() const {
  const std::size_t n = content_ids.size();
  if (n == 0 || k == 0) throw ValidationError("neighbor table is empty");
  if (s_tid.size() != n * k || s_val.size() != n * k)
    throw ValidationError(fmt::format("neighbor table payload does not match {}x{}", n, k));
  if (!std::is_sorted(content_ids.begin(), content_ids.end()) ||
      std::adjacent_find(content_ids.begin(), content_ids.end()) != content_ids.end())
    throw ValidationError("content ids must be strictly increasing");
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ids(i);
    if (row[0] != content_ids[i]) throw ValidationError(fmt::format("row {} does not start with its own id", i));
    for (auto id : row) {
      if (!std::binary_search(content_ids.begin(), content_ids.end(), id))
        throw ValidationError(fmt::format("row {} references non-content id {}", i, id));
    }
  }
}

std::vector<float> normalize_rows(const EmbeddingMatrix& e, std::span<const std::uint32_t> ids, double epsilon) {
  const std::size_t d = e.dim;
  std::vector<float> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= e.rows) throw ValidationError(fmt::format("row id {} out of range {}", ids[i], e.rows));
    auto src = e.row(ids[i]);
    const double norm = std::sqrt(dot(src.data(), src.data(), d));
    const double scale = 1.0 / (norm + epsilon);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(src[j] * scale);
  }
  return out;
}

NeighborTable build_neighbor_table(const EmbeddingMatrix& e, const VocabPartition& p,
                                   const NeighborBuildConfig& cfg) {
  const auto& content = p.content_ids();
  const std::size_t n = content.size();
  if (cfg.k < 1) throw ValidationError("k must be >= 1");
  if (cfg.k > n) throw ValidationError(fmt::format("k {} exceeds content token count {}", cfg.k, n));
  if (!(cfg.epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  if (p.v_emb() != e.rows)
    throw ValidationError(fmt::format("partition covers {} rows, embeddings have {}", p.v_emb(), e.rows));

  const std::size_t d = e.dim;
  const std::size_t k = cfg.k;
  const std::size_t block = std::max<std::size_t>(1, cfg.block_size);
  const auto unit = normalize_rows(e, content, cfg.epsilon);

  NeighborTable t;
  t.content_ids = content;
  t.k = cfg.k;
  t.s_tid.resize(n * k);
  t.s_val.resize(n * k);

  const std::size_t n_blocks = (n + block - 1) / block;
  std::atomic<std::size_t> next_block{0};

  auto worker = [&] {
    std::vector<double> sims(block * block);
    std::vector<std::vector<Scored>> best(block);
    for (;;) {
      const std::size_t qb = next_block.fetch_add(1);
      if (qb >= n_blocks) return;
      const std::size_t q0 = qb * block;
      const std::size_t q1 = std::min(n, q0 + block);
      for (auto& b : best) b.clear();

      // Blocked similarity: each dot product is evaluated identically no matter
      // how rows are grouped, so results do not depend on block size or threads.
      for (std::size_t c0 = 0; c0 < n; c0 += block) {
        const std::size_t c1 = std::min(n, c0 + block);
        for (std::size_t q = q0; q < q1; ++q) {
          const float* qa = unit.data() + q * d;
          for (std::size_t c = c0; c < c1; ++c) sims[(q - q0) * block + (c - c0)] = dot(qa, unit.data() + c * d, d);
        }
        for (std::size_t q = q0; q < q1; ++q) {
          auto& heap = best[q - q0];  // min-heap on `better`, holds k-1 non-self entries
          for (std::size_t c = c0; c < c1; ++c) {
            if (c == q || k == 1) continue;
            Scored s{sims[(q - q0) * block + (c - c0)], static_cast<std::uint32_t>(c)};
            if (heap.size() < k - 1) {
              heap.push_back(s);
              std::push_heap(heap.begin(), heap.end(), better);
            } else if (better(s, heap.front())) {
              std::pop_heap(heap.begin(), heap.end(), better);
              heap.back() = s;
              std::push_heap(heap.begin(), heap.end(), better);
            }
          }
        }
      }

      for (std::size_t q = q0; q < q1; ++q) {
        auto& heap = best[q - q0];
        std::sort(heap.begin(), heap.end(), better);
        std::uint32_t* ids = t.s_tid.data() + q * k;
        float* vals = t.s_val.data() + q * k;
        const float* qa = unit.data() + q * d;
        ids[0] = content[q];
        vals[0] = static_cast<float>(dot(qa, qa, d));
        for (std::size_t j = 0; j + 1 < k; ++j) {
          ids[j + 1] = content[heap[j].row];
          // Self is forced into slot 0 (a zero row has self value 0). Duplicate
          // directions can round above the self value, so clamp to keep rows
          // non-increasing.
          vals[j + 1] = std::min(static_cast<float>(heap[j].sim), vals[0]);
        }
      }
    }
  };

  const unsigned workers = std::max(1u, cfg.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  return t;
}

std::vector<std::uint8_t> encode_table(const NeighborTable& t) {
  t.validate();
  bytes::Writer w;
  w.reserve(kSemnHeaderSize + t.size() * 4 + t.s_tid.size() * 8);
  w.raw("SEMN");
  w.u32(kSemnVersion);
  w.u64(t.size());
  w.u32(t.k);
  for (auto id : t.content_ids) w.u32(id);
  for (auto id : t.s_tid) w.u32(id);
  for (auto v : t.s_val) w.f32(v);
  return std::move(w.buffer());
}

NeighborTable decode_table(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (r.raw(4) != "SEMN") throw FormatError("bad magic at offset 0 (expected SEMN)");
  const auto version = r.u32();
  if (version != kSemnVersion) throw FormatError(fmt::format("unsupported version {} at offset 4", version));
  const auto n = r.u64();
  const auto k = r.u32();
  if (n == 0 || k == 0) throw FormatError(fmt::format("empty table n={} k={}", n, k));

  std::uint64_t cells = 0;
  std::uint64_t payload = 0;
  std::uint64_t expected = 0;
  if (__builtin_mul_overflow(n, static_cast<std::uint64_t>(k), &cells) ||
      __builtin_mul_overflow(cells, 8, &payload) || __builtin_add_overflow(payload, n * 4, &expected) ||
      expected != r.remaining())
    throw FormatError(fmt::format("size mismatch: header declares n={} k={} but payload has {} bytes", n, k,
                                  r.remaining()));

  NeighborTable t;
  t.k = k;
  t.content_ids.resize(n);
  t.s_tid.resize(cells);
  t.s_val.resize(cells);
  for (auto& id : t.content_ids) id = r.u32();
  for (auto& id : t.s_tid) id = r.u32();
  for (auto& v : t.s_val) v = r.f32();
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid table: ") + e.what());
  }
  return t;
}

void save_table(const NeighborTable& t, const std::filesystem::path& path) {
  bytes::write_file(path, encode_table(t));
}

NeighborTable load_table(const std::filesystem::path& path) { return decode_table(bytes::read_file(path)); }

}  // namespace semsam
