#pragma once
// Prefix-cosine retrieval shared by training-time validation and the
// evaluation sweep: top-N selection with deterministic tie-breaking by doc
// id, and mean nDCG over a query set.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "matadapt/matrix.hpp"
#include "matadapt/numeric.hpp"

namespace matadapt {

using GradesByQuery = std::unordered_map<std::string, std::unordered_map<std::string, int>>;

// Indices of the `depth` highest-scoring docs under prefix-m cosine; ties
// broken by ascending doc id so reports are invariant to corpus row order.
inline std::vector<std::uint32_t> top_docs_prefix(std::span<const double> query,
                                                  const Matrix& docs,
                                                  const std::vector<std::string>& doc_ids,
                                                  std::size_t m, std::size_t depth) {
  const std::size_t n = docs.rows;
  std::vector<double> scores(n);
  for (std::size_t j = 0; j < n; ++j) scores[j] = cosine_prefix(query, docs.row(j), m);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t keep = std::min(depth, n);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return doc_ids[a] < doc_ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + keep, order.end(), better);
  order.resize(keep);
  return order;
}

namespace detail {

inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const unsigned t = std::min<unsigned>(threads, static_cast<unsigned>(n));
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (unsigned w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += t) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Mean nDCG@k under prefix-m cosine retrieval. Queries without a positive
// judgment are skipped (trec_eval convention); returns 0 when none remain.
// Per-query results are independent, so `threads` does not affect the value.
inline double mean_ndcg_prefix(const Matrix& queries, const std::vector<std::string>& query_ids,
                               const Matrix& docs, const std::vector<std::string>& doc_ids,
                               const GradesByQuery& grades_by_query, std::size_t m,
                               std::size_t k = 10, unsigned threads = 1) {
  std::vector<std::size_t> eval_queries;
  for (std::size_t i = 0; i < queries.rows; ++i) {
    auto it = grades_by_query.find(query_ids[i]);
    if (it == grades_by_query.end()) continue;
    bool positive = false;
    for (const auto& [doc, g] : it->second) positive |= g > 0;
    if (positive) eval_queries.push_back(i);
  }
  if (eval_queries.empty()) return 0.0;

  std::vector<double> per_query(eval_queries.size(), 0.0);
  detail::parallel_for(eval_queries.size(), threads, [&](std::size_t idx) {
    const std::size_t qi = eval_queries[idx];
    const auto& grades = grades_by_query.at(query_ids[qi]);
    auto top = top_docs_prefix(queries.row(qi), docs, doc_ids, m, k);
    std::vector<std::string> ranked;
    ranked.reserve(top.size());
    for (std::uint32_t j : top) ranked.push_back(doc_ids[j]);
    per_query[idx] = ndcg_at_k(ranked, grades, k);
  });
  double sum = 0.0;
  for (double v : per_query) sum += v;
  return sum / static_cast<double>(eval_queries.size());
}

}  // namespace matadapt
