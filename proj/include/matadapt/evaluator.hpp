#pragma once
// Retrieval evaluation across the dimension sweep for the three methods
// (raw truncation baseline, PCA, adaptor), label-free distance diagnostics
// on a held-out corpus, and the loss-ablation grid. Reports are exported as
// CSV and JSON with a metadata block.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matadapt/adaptor.hpp"
#include "matadapt/embedding.hpp"
#include "matadapt/errors.hpp"
#include "matadapt/losses.hpp"
#include "matadapt/numeric.hpp"
#include "matadapt/pca.hpp"
#include "matadapt/ranking.hpp"
#include "matadapt/trainer.hpp"

namespace matadapt {

enum class TransformKind { Identity, Pca, Adaptor };

// Non-owning handle to one of the three embedding transforms. Identity and
// adaptor keep the full dimension d; PCA maps to its m_max components, whose
// prefixes coincide with lower-dimensional projections.
struct Transform {
  TransformKind kind = TransformKind::Identity;
  const PcaModel* pca = nullptr;
  const MlpAdaptor* adaptor = nullptr;

  static Transform identity() { return {}; }
  static Transform of(const PcaModel& m) { return {TransformKind::Pca, &m, nullptr}; }
  static Transform of(const MlpAdaptor& f) { return {TransformKind::Adaptor, nullptr, &f}; }

  const char* name() const {
    switch (kind) {
      case TransformKind::Pca: return "pca";
      case TransformKind::Adaptor: return "adaptor";
      default: return "baseline";
    }
  }

  std::uint32_t out_dim(std::uint32_t d) const {
    return kind == TransformKind::Pca ? pca->m_max : d;
  }

  Matrix apply(const EmbeddingMatrix& m) const {
    switch (kind) {
      case TransformKind::Pca: {
        Matrix out(m.size(), pca->m_max);
        for (std::size_t i = 0; i < m.size(); ++i)
          detail::pca_transform_impl<float>(*pca, m.row(i), pca->m_max, out.row(i));
        return out;
      }
      case TransformKind::Adaptor: {
        if (adaptor->d != m.dim) throw DimMismatch("transform: adaptor dimension mismatch");
        return adapt_batch(*adaptor, to_matrix(m)).adapted;
      }
      default:
        return to_matrix(m);
    }
  }
};

struct EvalRow {
  std::string method;
  std::uint32_t dim = 0;
  double ndcg10 = 0.0;
  std::optional<double> pairwise_dist;
  std::optional<double> topk_dist;
};

struct ReportMeta {
  std::string dataset;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct EvalReport {
  ReportMeta meta;
  std::vector<EvalRow> rows;
};

// Mean nDCG@10 of prefix-cosine retrieval at every schedule entry; ranking
// ties are broken by doc id, so the rows are invariant to corpus row order.
inline std::vector<EvalRow> evaluate_retrieval(const EmbeddingMatrix& queries,
                                               const EmbeddingMatrix& corpus,
                                               const RelevanceSet& rels,
                                               const Transform& transform, const DimSchedule& dims,
                                               unsigned threads = 1) {
  const auto qindex = id_index(queries);
  const auto cindex = id_index(corpus);
  for (const auto& t : rels.triplets) {
    if (!qindex.count(t.query_id)) throw UnknownId("unknown query id: " + t.query_id);
    if (!cindex.count(t.doc_id)) throw UnknownId("unknown doc id: " + t.doc_id);
  }
  dims.validate(transform.out_dim(corpus.dim));
  if (queries.dim != corpus.dim) throw DimMismatch("evaluate_retrieval: dimension mismatch");

  const Matrix tq = transform.apply(queries);
  const Matrix tc = transform.apply(corpus);
  const GradesByQuery grades = rels.by_query();

  std::vector<EvalRow> rows;
  rows.reserve(dims.size());
  for (std::uint32_t m : dims.dims) {
    EvalRow row;
    row.method = transform.name();
    row.dim = m;
    row.ndcg10 = mean_ndcg_prefix(tq, queries.ids, tc, corpus.ids, grades, m, 10, threads);
    rows.push_back(std::move(row));
  }
  return rows;
}

// --------------------------------------------------------------------------
// Distance diagnostics

struct Diagnostics {
  std::vector<std::uint32_t> dims;
  std::vector<double> pairwise_dist;  // per dim
  std::vector<double> topk_dist;      // per dim
  std::size_t pairs_used = 0;
  bool pairs_sampled = false;
  std::uint64_t seed = 0;
};

// Mean |cos(orig_i, orig_j) - cos(t_i[:m], t_j[:m])| over random pairs and
// over full-dimension top-k neighbour pairs of the held-out corpus. All
// pairs are used while N^2 <= 1e7; beyond that a seeded sample of 100k.
inline Diagnostics distance_diagnostics(const EmbeddingMatrix& corpus_val,
                                        const Transform& transform, const DimSchedule& dims,
                                        std::uint32_t k, std::uint64_t seed = 17) {
  const std::size_t n = corpus_val.size();
  if (n < static_cast<std::size_t>(k) + 1)
    throw CorpusTooSmall("distance_diagnostics: need at least k + 1 rows");
  dims.validate(transform.out_dim(corpus_val.dim));

  const Matrix orig = to_matrix(corpus_val);
  const Matrix t = transform.apply(corpus_val);

  Diagnostics diag;
  diag.dims = dims.dims;
  diag.seed = seed;
  diag.pairwise_dist.assign(dims.size(), 0.0);
  diag.topk_dist.assign(dims.size(), 0.0);

  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  constexpr std::size_t kSampleBudget = 100000;
  if (static_cast<double>(n) * static_cast<double>(n) <= 1e7) {
    pairs.reserve(n * (n - 1) / 2);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    diag.pairs_sampled = true;
    Rng rng(seed);
    pairs.reserve(kSampleBudget);
    for (std::size_t s = 0; s < kSampleBudget; ++s) {
      auto i = static_cast<std::uint32_t>(rng.index(n));
      auto j = static_cast<std::uint32_t>(rng.index(n - 1));
      if (j >= i) ++j;
      pairs.emplace_back(i, j);
    }
  }
  diag.pairs_used = pairs.size();

  detail::PairWorkspace ws;
  auto accumulate = [&](std::uint32_t i, std::uint32_t j, std::vector<double>& into) {
    const double target = detail::full_cosine(orig.row(i), orig.row(j));
    detail::prefix_stats(t.row(i), t.row(j), dims.dims, ws);
    for (std::size_t m = 0; m < dims.size(); ++m)
      into[m] += std::abs(target - detail::cos_from_stats(ws.dot[m], ws.na2[m], ws.nb2[m]));
  };

  for (auto [i, j] : pairs) accumulate(i, j, diag.pairwise_dist);
  for (auto& v : diag.pairwise_dist) v /= static_cast<double>(pairs.size());

  const NeighborTable table = topk_neighbors(corpus_val, k);
  std::size_t topk_pairs = 0;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j : table.neighbor_ids[i]) {
      accumulate(i, j, diag.topk_dist);
      ++topk_pairs;
    }
  for (auto& v : diag.topk_dist) v /= static_cast<double>(topk_pairs);
  return diag;
}

// --------------------------------------------------------------------------
// Ablation grid

struct AblationSetting {
  std::string name;
  LossToggles toggles;
};

inline std::vector<AblationSetting> default_ablation_grid() {
  return {{"all", {true, true, true, false}},
          {"wo_topk", {false, true, true, false}},
          {"wo_pairwise", {true, false, true, false}},
          {"wo_rec", {true, true, false, false}}};
}

struct AblationRun {
  AblationSetting setting;
  std::vector<EvalRow> rows;
  TrainLog log;
};

// One unsupervised training run per toggle setting, each evaluated over the
// schedule.
inline std::vector<AblationRun> run_ablation(
    const EmbeddingMatrix& corpus, const EmbeddingMatrix& queries, const RelevanceSet& rels,
    const TrainConfig& cfg, const std::vector<AblationSetting>& grid = default_ablation_grid(),
    unsigned threads = 1) {
  std::vector<AblationRun> runs;
  runs.reserve(grid.size());
  for (const auto& setting : grid) {
    TrainConfig c = cfg;
    c.toggles = setting.toggles;
    auto [adaptor, log] = train_unsupervised(corpus, c);
    const TrainConfig resolved = detail::resolve_config(c, corpus.dim);
    AblationRun run;
    run.setting = setting;
    run.rows = evaluate_retrieval(queries, corpus, rels, Transform::of(adaptor), resolved.dims,
                                  threads);
    run.log = std::move(log);
    runs.push_back(std::move(run));
  }
  return runs;
}

// --------------------------------------------------------------------------
// Report export

namespace detail {

// Shortest round-trip decimal form, so CSV and JSON carry identical values.
inline std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline std::string config_hash(const TrainConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(cfg.to_json().dump())));
  return std::string(buf);
}

inline void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::string out = "method,dim,ndcg10,pairwise_dist,topk_dist\n";
  for (const auto& r : report.rows) {
    out += r.method;
    out += ',';
    out += std::to_string(r.dim);
    out += ',';
    out += detail::fmt_double(r.ndcg10);
    out += ',';
    if (r.pairwise_dist) out += detail::fmt_double(*r.pairwise_dist);
    out += ',';
    if (r.topk_dist) out += detail::fmt_double(*r.topk_dist);
    out += '\n';
  }
  detail::write_file_bytes(path, out);
}

inline void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["metadata"] = {{"dataset", report.meta.dataset},
                   {"seed", report.meta.seed},
                   {"config_hash", report.meta.config_hash}};
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row{{"method", r.method}, {"dim", r.dim}, {"ndcg10", r.ndcg10}};
    if (r.pairwise_dist) row["pairwise_dist"] = *r.pairwise_dist;
    if (r.topk_dist) row["topk_dist"] = *r.topk_dist;
    j["rows"].push_back(std::move(row));
  }
  detail::write_file_bytes(path, j.dump(2) + "\n");
}

}  // namespace matadapt
