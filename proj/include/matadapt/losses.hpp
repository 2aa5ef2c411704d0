#pragma once
// Similarity-preservation and ranking losses over Matryoshka prefixes. Each
// loss returns a scalar plus exact gradients with respect to the adapted
// embeddings involved; all sums are normalized to means so the fixed unit
// loss weights stay meaningful across batch sizes.
//
//   pairwise: mean over unordered in-batch pairs and prefix lengths of
//             |cos(orig_i, orig_j) - cos(adapted_i[:m], adapted_j[:m])|
//   topk:     the same gap restricted to each anchor's full-dimension
//             nearest neighbours
//   rec:      mean L1 residual per coordinate, |adapted - orig| / (N*d)
//   rank:     grade-weighted logistic pairwise ranking loss at every prefix

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "matadapt/errors.hpp"
#include "matadapt/matrix.hpp"
#include "matadapt/numeric.hpp"

namespace matadapt {

struct DimSchedule {
  std::vector<std::uint32_t> dims;  // strictly increasing prefix lengths

  std::size_t size() const { return dims.size(); }
  std::uint32_t back() const { return dims.back(); }

  // When d > 0 the last entry must not exceed it.
  void validate(std::uint32_t d = 0) const {
    if (dims.empty()) throw Error("dim schedule is empty");
    std::uint32_t prev = 0;
    for (std::uint32_t m : dims) {
      if (m < 1) throw Error("dim schedule entries must be positive");
      if (m <= prev) throw Error("dim schedule must be strictly increasing");
      prev = m;
    }
    if (d > 0 && dims.back() > d)
      throw PrefixOutOfRange("dim schedule entry " + std::to_string(dims.back()) +
                             " exceeds dimension " + std::to_string(d));
  }

  static DimSchedule parse(const std::string& csv) {
    DimSchedule s;
    std::size_t start = 0;
    while (start <= csv.size()) {
      std::size_t end = csv.find(',', start);
      if (end == std::string::npos) end = csv.size();
      const std::string tok = csv.substr(start, end - start);
      if (tok.empty()) throw FormatError("bad dim list: `" + csv + "`");
      try {
        s.dims.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
      } catch (const std::exception&) {
        throw FormatError("bad dim entry: `" + tok + "`");
      }
      start = end + 1;
      if (end == csv.size()) break;
    }
    s.validate();
    return s;
  }

  // Powers of two starting at 8, closed with d itself.
  static DimSchedule defaults_for(std::uint32_t d) {
    DimSchedule s;
    for (std::uint32_t m = 8; m < d; m *= 2) s.dims.push_back(m);
    if (s.dims.empty() || s.dims.back() != d) s.dims.push_back(d);
    s.validate(d);
    return s;
  }
};

struct ObjectiveWeights {
  double alpha = 1.0;  // pairwise
  double beta = 1.0;   // reconstruction
  double gamma = 1.0;  // ranking

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw Error("objective weights must be >= 0");
  }
};

struct LossToggles {
  bool topk = true;
  bool pairwise = true;
  bool rec = true;
  bool rank = true;

  bool any_unsupervised() const { return topk || pairwise || rec; }
};

struct LossGrad {
  double value = 0.0;
  Matrix grad;  // same shape as the adapted batch
};

struct RankLossGrad {
  double value = 0.0;
  Matrix grad_queries;
  Matrix grad_corpus;
};

namespace detail {

// Reusable buffers for per-pair prefix snapshots.
struct PairWorkspace {
  std::vector<double> dot, na2, nb2;
};

inline double full_cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na < kNormGuard || nb < kNormGuard) return 0.0;
  return dot / (na * nb);
}

// Prefix dots and squared norms of (a, b) at every schedule cut.
inline void prefix_stats(std::span<const double> a, std::span<const double> b,
                         const std::vector<std::uint32_t>& dims, PairWorkspace& ws) {
  ws.dot.resize(dims.size());
  ws.na2.resize(dims.size());
  ws.nb2.resize(dims.size());
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  std::size_t next = 0;
  for (std::uint32_t i = 0; i < dims.back(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
    if (i + 1 == dims[next]) {
      ws.dot[next] = dot;
      ws.na2[next] = na2;
      ws.nb2[next] = nb2;
      ++next;
    }
  }
}

inline double cos_from_stats(double dot, double na2, double nb2) {
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na < kNormGuard || nb < kNormGuard) return 0.0;
  return dot / (na * nb);
}

// Adds w * d(cos_m)/d(a or b) into ga/gb over the first m coordinates.
// Degenerate prefixes (guarded norm) carry zero subgradient.
inline void add_cosine_grad(std::span<const double> a, std::span<const double> b, std::uint32_t m,
                            double dot, double na2, double nb2, double w, std::span<double> ga,
                            std::span<double> gb) {
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na < kNormGuard || nb < kNormGuard) return;
  const double inv = 1.0 / (na * nb);
  const double c = dot * inv;
  const double ca = c / na2, cb = c / nb2;
  for (std::uint32_t i = 0; i < m; ++i) {
    ga[i] += w * (b[i] * inv - ca * a[i]);
    gb[i] += w * (a[i] * inv - cb * b[i]);
  }
}

// One (i, j) pair of the similarity-gap losses: accumulates the raw
// sum over dims of |target - cos_m| and, when grad_scale != 0, the scaled
// subgradients into ga/gb. |.| has subgradient 0 at exact ties.
inline double sim_gap_pair(std::span<const double> a, std::span<const double> b, double target,
                           const std::vector<std::uint32_t>& dims, double grad_scale,
                           std::span<double> ga, std::span<double> gb, PairWorkspace& ws) {
  prefix_stats(a, b, dims, ws);
  double raw = 0.0;
  for (std::size_t t = 0; t < dims.size(); ++t) {
    const double c = cos_from_stats(ws.dot[t], ws.na2[t], ws.nb2[t]);
    const double diff = target - c;
    raw += std::abs(diff);
    if (grad_scale != 0.0 && diff != 0.0) {
      const double w = (diff > 0.0 ? -1.0 : 1.0) * grad_scale;
      add_cosine_grad(a, b, dims[t], ws.dot[t], ws.na2[t], ws.nb2[t], w, ga, gb);
    }
  }
  return raw;
}

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace detail

// --------------------------------------------------------------------------

inline LossGrad pairwise_loss(const Matrix& orig, const Matrix& adapted, const DimSchedule& dims) {
  if (!orig.same_shape(adapted)) throw DimMismatch("pairwise_loss: batch shapes differ");
  if (orig.rows < 2) throw BatchTooSmall("pairwise_loss: need at least 2 rows");
  dims.validate(static_cast<std::uint32_t>(adapted.cols));

  LossGrad out;
  out.grad = Matrix(adapted.rows, adapted.cols);
  const double n_terms =
      0.5 * static_cast<double>(orig.rows) * static_cast<double>(orig.rows - 1) *
      static_cast<double>(dims.size());
  detail::PairWorkspace ws;
  double raw = 0.0;
  for (std::size_t i = 0; i < orig.rows; ++i) {
    for (std::size_t j = i + 1; j < orig.rows; ++j) {
      const double target = detail::full_cosine(orig.row(i), orig.row(j));
      raw += detail::sim_gap_pair(adapted.row(i), adapted.row(j), target, dims.dims, 1.0 / n_terms,
                                  out.grad.row(i), out.grad.row(j), ws);
    }
  }
  out.value = raw / n_terms;
  return out;
}

inline LossGrad topk_loss(const Matrix& orig, const Matrix& adapted,
                          const std::vector<std::vector<std::uint32_t>>& neighbors,
                          const DimSchedule& dims) {
  if (!orig.same_shape(adapted)) throw DimMismatch("topk_loss: batch shapes differ");
  if (neighbors.size() != orig.rows)
    throw InvalidNeighborIndex("topk_loss: one neighbour list per batch row required");
  dims.validate(static_cast<std::uint32_t>(adapted.cols));

  std::size_t pair_count = 0;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    for (std::uint32_t j : neighbors[i])
      if (j >= orig.rows || j == i)
        throw InvalidNeighborIndex("topk_loss: neighbour index " + std::to_string(j) +
                                   " invalid for anchor " + std::to_string(i));
    pair_count += neighbors[i].size();
  }

  LossGrad out;
  out.grad = Matrix(adapted.rows, adapted.cols);
  if (pair_count == 0) return out;

  const double n_terms = static_cast<double>(pair_count) * static_cast<double>(dims.size());
  detail::PairWorkspace ws;
  double raw = 0.0;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    for (std::uint32_t j : neighbors[i]) {
      const double target = detail::full_cosine(orig.row(i), orig.row(j));
      raw += detail::sim_gap_pair(adapted.row(i), adapted.row(j), target, dims.dims, 1.0 / n_terms,
                                  out.grad.row(i), out.grad.row(j), ws);
    }
  }
  out.value = raw / n_terms;
  return out;
}

inline LossGrad rec_loss(const Matrix& orig, const Matrix& adapted) {
  if (!orig.same_shape(adapted)) throw DimMismatch("rec_loss: batch shapes differ");
  LossGrad out;
  out.grad = Matrix(adapted.rows, adapted.cols);
  if (orig.rows == 0) return out;
  const double scale = 1.0 / (static_cast<double>(orig.rows) * static_cast<double>(orig.cols));
  double raw = 0.0;
  for (std::size_t i = 0; i < orig.data.size(); ++i) {
    const double r = adapted.data[i] - orig.data[i];
    raw += std::abs(r);
    out.grad.data[i] = r > 0.0 ? scale : (r < 0.0 ? -scale : 0.0);
  }
  out.value = raw * scale;
  return out;
}

// grades: rows = queries, cols = docs; pairs (j, k) with grade_ij > grade_ik
// contribute (grade_ij - grade_ik) * log(1 + exp(s_ik - s_ij)) at every
// prefix length. Equal grades contribute nothing.
inline RankLossGrad rank_loss(const Matrix& query_adapted, const Matrix& corpus_adapted,
                              const Matrix& grades, const DimSchedule& dims) {
  if (query_adapted.cols != corpus_adapted.cols)
    throw DimMismatch("rank_loss: query/corpus dimension mismatch");
  if (grades.rows != query_adapted.rows || grades.cols != corpus_adapted.rows)
    throw DimMismatch("rank_loss: grade matrix shape mismatch");
  dims.validate(static_cast<std::uint32_t>(query_adapted.cols));

  RankLossGrad out;
  out.grad_queries = Matrix(query_adapted.rows, query_adapted.cols);
  out.grad_corpus = Matrix(corpus_adapted.rows, corpus_adapted.cols);

  const std::size_t nq = query_adapted.rows, nc = corpus_adapted.rows, nd = dims.size();
  if (nq == 0 || nc == 0) return out;

  std::size_t n_pairs = 0;
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < nc; ++j)
      for (std::size_t k = 0; k < nc; ++k)
        if (grades.at(i, j) > grades.at(i, k)) ++n_pairs;
  if (n_pairs == 0) return out;
  const double inv_terms = 1.0 / (static_cast<double>(n_pairs) * static_cast<double>(nd));

  // Phase 1: prefix similarities s[i][j][t] for every query-doc pair.
  std::vector<double> sims(nq * nc * nd);
  detail::PairWorkspace ws;
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      detail::prefix_stats(query_adapted.row(i), corpus_adapted.row(j), dims.dims, ws);
      for (std::size_t t = 0; t < nd; ++t)
        sims[(i * nc + j) * nd + t] = detail::cos_from_stats(ws.dot[t], ws.na2[t], ws.nb2[t]);
    }
  }

  // Phase 2: accumulate the loss and d(loss)/d(s).
  std::vector<double> sim_grad(nq * nc * nd, 0.0);
  double value = 0.0;
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      for (std::size_t k = 0; k < nc; ++k) {
        const double gap = grades.at(i, j) - grades.at(i, k);
        if (gap <= 0.0) continue;
        const double w = gap * inv_terms;
        for (std::size_t t = 0; t < nd; ++t) {
          const double z = sims[(i * nc + k) * nd + t] - sims[(i * nc + j) * nd + t];
          value += w * detail::softplus(z);
          const double sg = w * detail::sigmoid(z);
          sim_grad[(i * nc + k) * nd + t] += sg;
          sim_grad[(i * nc + j) * nd + t] -= sg;
        }
      }
    }
  }
  out.value = value;

  // Phase 3: push d(loss)/d(s) through each prefix cosine once per pair.
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      const double* sg = sim_grad.data() + (i * nc + j) * nd;
      bool live = false;
      for (std::size_t t = 0; t < nd; ++t) live |= sg[t] != 0.0;
      if (!live) continue;
      detail::prefix_stats(query_adapted.row(i), corpus_adapted.row(j), dims.dims, ws);
      for (std::size_t t = 0; t < nd; ++t)
        if (sg[t] != 0.0)
          detail::add_cosine_grad(query_adapted.row(i), corpus_adapted.row(j), dims.dims[t],
                                  ws.dot[t], ws.na2[t], ws.nb2[t], sg[t], out.grad_queries.row(i),
                                  out.grad_corpus.row(j));
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// Aggregates

inline LossGrad unsup_objective(const LossGrad& topk, const LossGrad& pair, const LossGrad& rec,
                                const ObjectiveWeights& w) {
  w.validate();
  if (!topk.grad.same_shape(pair.grad) || !topk.grad.same_shape(rec.grad))
    throw DimMismatch("unsup_objective: component gradient shapes differ");
  LossGrad out;
  out.value = topk.value + w.alpha * pair.value + w.beta * rec.value;
  out.grad = Matrix(topk.grad.rows, topk.grad.cols);
  for (std::size_t i = 0; i < out.grad.data.size(); ++i)
    out.grad.data[i] =
        topk.grad.data[i] + w.alpha * pair.grad.data[i] + w.beta * rec.grad.data[i];
  return out;
}

// The supervised aggregate keeps the ranking gradients separate because the
// ranking batch (queries and candidate docs) need not coincide with the
// corpus batch of the unsupervised terms.
struct SupObjective {
  double value = 0.0;
  Matrix corpus_grad;      // unsupervised terms, corpus batch shape
  Matrix rank_query_grad;  // gamma-scaled
  Matrix rank_corpus_grad;
};

inline SupObjective sup_objective(const LossGrad& topk, const LossGrad& pair, const LossGrad& rec,
                                  const RankLossGrad& rank, const ObjectiveWeights& w) {
  LossGrad unsup = unsup_objective(topk, pair, rec, w);
  SupObjective out;
  out.value = unsup.value + w.gamma * rank.value;
  out.corpus_grad = std::move(unsup.grad);
  out.rank_query_grad = Matrix(rank.grad_queries.rows, rank.grad_queries.cols);
  out.rank_corpus_grad = Matrix(rank.grad_corpus.rows, rank.grad_corpus.cols);
  for (std::size_t i = 0; i < out.rank_query_grad.data.size(); ++i)
    out.rank_query_grad.data[i] = w.gamma * rank.grad_queries.data[i];
  for (std::size_t i = 0; i < out.rank_corpus_grad.data.size(); ++i)
    out.rank_corpus_grad.data[i] = w.gamma * rank.grad_corpus.data[i];
  return out;
}

}  // namespace matadapt
