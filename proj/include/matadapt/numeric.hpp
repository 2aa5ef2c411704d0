#pragma once
// Deterministic dense kernels: prefix cosine similarity, exact brute-force
// top-k neighbours under full-dimension cosine, and nDCG@k.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "matadapt/embedding.hpp"
#include "matadapt/errors.hpp"

namespace matadapt {

// Prefixes with norm below this are treated as zero vectors (cosine 0), so
// losses over truncated embeddings stay finite.
inline constexpr double kNormGuard = 1e-12;

namespace detail {

template <typename T>
double cosine_prefix_impl(std::span<const T> a, std::span<const T> b, std::size_t m) {
  if (a.size() != b.size()) throw DimMismatch("cosine_prefix: vectors differ in dimension");
  if (m < 1 || m > a.size())
    throw PrefixOutOfRange("cosine_prefix: m=" + std::to_string(m) + " outside [1, " +
                           std::to_string(a.size()) + "]");
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na2 += x * x;
    nb2 += y * y;
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na < kNormGuard || nb < kNormGuard) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

}  // namespace detail

inline double cosine_prefix(std::span<const float> a, std::span<const float> b, std::size_t m) {
  return detail::cosine_prefix_impl(a, b, m);
}

inline double cosine_prefix(std::span<const double> a, std::span<const double> b, std::size_t m) {
  return detail::cosine_prefix_impl(a, b, m);
}

// --------------------------------------------------------------------------
// Exact top-k neighbours

struct NeighborTable {
  std::uint32_t k = 0;
  // Per anchor, min(k, N-1) row indices ordered by non-increasing
  // full-dimension cosine; ties broken by lower index. The anchor itself is
  // excluded.
  std::vector<std::vector<std::uint32_t>> neighbor_ids;
};

// Brute-force top-k over a subset of corpus rows. Returned indices are
// positions within `rows`, not corpus row indices.
inline NeighborTable topk_neighbors_subset(const EmbeddingMatrix& corpus,
                                           std::span<const std::uint32_t> rows, std::uint32_t k) {
  const std::size_t n = rows.size();
  if (n < 2) throw CorpusTooSmall("topk_neighbors: need at least 2 rows, got " + std::to_string(n));
  if (k < 1) throw Error("topk_neighbors: k must be positive");

  const std::size_t d = corpus.dim;
  std::vector<double> inv_norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = corpus.row(rows[i]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(r[j]) * static_cast<double>(r[j]);
    s = std::sqrt(s);
    inv_norm[i] = s < kNormGuard ? 0.0 : 1.0 / s;
  }

  const std::size_t keep = std::min<std::size_t>(k, n - 1);
  NeighborTable table;
  table.k = k;
  table.neighbor_ids.resize(n);

  std::vector<double> sims(n);
  std::vector<std::uint32_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto ri = corpus.row(rows[i]);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        sims[j] = 0.0;
        continue;
      }
      auto rj = corpus.row(rows[j]);
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c)
        dot += static_cast<double>(ri[c]) * static_cast<double>(rj[c]);
      sims[j] = dot * inv_norm[i] * inv_norm[j];
    }
    std::size_t cnt = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order[cnt++] = static_cast<std::uint32_t>(j);
    auto better = [&](std::uint32_t a, std::uint32_t b) {
      if (sims[a] != sims[b]) return sims[a] > sims[b];
      return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + keep, order.begin() + cnt, better);
    table.neighbor_ids[i].assign(order.begin(), order.begin() + keep);
  }
  return table;
}

inline NeighborTable topk_neighbors(const EmbeddingMatrix& corpus, std::uint32_t k) {
  std::vector<std::uint32_t> rows(corpus.size());
  for (std::uint32_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return topk_neighbors_subset(corpus, rows, k);
}

// --------------------------------------------------------------------------
// nDCG@k

// Gain 2^grade - 1, discount log2(rank + 1) with 1-based ranks; the ideal
// ordering uses every judged grade for the query. Returns 0 when the query
// has no positive grade.
inline double ndcg_at_k(const std::vector<std::string>& ranked_doc_ids,
                        const std::unordered_map<std::string, int>& grades, std::size_t k = 10) {
  std::unordered_set<std::string_view> seen;
  seen.reserve(ranked_doc_ids.size());
  for (const auto& id : ranked_doc_ids)
    if (!seen.insert(id).second) throw DuplicateDoc("duplicate doc in ranking: " + id);

  std::vector<int> judged;
  judged.reserve(grades.size());
  bool any_positive = false;
  for (const auto& [id, g] : grades) {
    judged.push_back(g);
    any_positive |= g > 0;
  }
  if (!any_positive) return 0.0;

  double dcg = 0.0;
  const std::size_t depth = std::min(k, ranked_doc_ids.size());
  for (std::size_t r = 0; r < depth; ++r) {
    auto it = grades.find(ranked_doc_ids[r]);
    if (it == grades.end() || it->second <= 0) continue;
    dcg += (std::exp2(static_cast<double>(it->second)) - 1.0) /
           std::log2(static_cast<double>(r) + 2.0);
  }

  std::sort(judged.begin(), judged.end(), std::greater<int>());
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, judged.size()); ++r) {
    if (judged[r] <= 0) break;
    idcg += (std::exp2(static_cast<double>(judged[r])) - 1.0) /
            std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / idcg;
}

}  // namespace matadapt
