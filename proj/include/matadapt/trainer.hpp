#pragma once
// Two-stage optimization of the adaptor with Adam:
//
//   stage 1 (unsupervised): top-k + pairwise + reconstruction losses over
//     corpus minibatches; early stopping on the same objective evaluated on
//     a held-out slice of corpus rows.
//   stage 2 (supervised): continues from the stage-1 weights, adding the
//     grade-weighted ranking loss over train-query minibatches; early
//     stopping on mean validation nDCG@10 across the dim schedule.
//
// Both stages return the weights from the best validation iteration and are
// fully deterministic under (inputs, config, seed). Neighbour tables are
// computed once per corpus batch on the original embeddings; corpus batches
// are cycled by seeded shuffle per epoch. Adam moments are reset at the
// stage boundary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "matadapt/adaptor.hpp"
#include "matadapt/embedding.hpp"
#include "matadapt/errors.hpp"
#include "matadapt/losses.hpp"
#include "matadapt/numeric.hpp"
#include "matadapt/optimizer.hpp"
#include "matadapt/ranking.hpp"

namespace matadapt {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::uint32_t batch_size = 128;
  std::uint32_t corpus_batch_size = 50000;
  std::uint32_t max_iters = 5000;  // per stage
  std::uint32_t patience = 500;    // iterations without validation improvement
  std::uint32_t k_neighbors = 10;
  std::uint32_t hidden_dim = 0;    // 0 -> same as embedding dimension
  double val_fraction = 0.1;       // held-out fraction for early stopping
  std::uint32_t val_interval = 10; // iterations between validation evaluations
  DimSchedule dims;                // empty -> DimSchedule::defaults_for(d)
  ObjectiveWeights weights;
  LossToggles toggles;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0) throw Error("learning_rate must be > 0");
    if (batch_size < 2) throw Error("batch_size must be >= 2");
    if (corpus_batch_size < 2) throw Error("corpus_batch_size must be >= 2");
    if (max_iters < 1 || patience < 1 || val_interval < 1)
      throw Error("max_iters, patience and val_interval must be positive");
    if (k_neighbors < 1) throw Error("k_neighbors must be positive");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw Error("val_fraction must be in (0, 1)");
    weights.validate();
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"corpus_batch_size", corpus_batch_size},
            {"max_iters", max_iters},
            {"patience", patience},
            {"k_neighbors", k_neighbors},
            {"hidden_dim", hidden_dim},
            {"val_fraction", val_fraction},
            {"val_interval", val_interval},
            {"dims", dims.dims},
            {"alpha", weights.alpha},
            {"beta", weights.beta},
            {"gamma", weights.gamma},
            {"loss_topk", toggles.topk},
            {"loss_pairwise", toggles.pairwise},
            {"loss_rec", toggles.rec},
            {"loss_rank", toggles.rank},
            {"seed", seed}};
  }
};

struct TrainRecord {
  std::uint32_t iter = 0;
  std::string stage;       // "unsup" | "sup"
  double train_loss = 0.0;
  double val_metric = 0.0; // objective (unsup) or mean nDCG@10 (sup)
  bool has_val = false;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::uint32_t best_iter = 0;
  std::string stop_reason;
};

inline void write_train_log_jsonl(const TrainLog& log, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : log.records) {
    nlohmann::json j{{"iter", r.iter}, {"stage", r.stage}, {"train_loss", r.train_loss}};
    if (r.has_val) j["val_metric"] = r.val_metric;
    out += j.dump();
    out += '\n';
  }
  nlohmann::json tail{{"best_iter", log.best_iter}, {"stop_reason", log.stop_reason}};
  out += tail.dump();
  out += '\n';
  detail::write_file_bytes(path, out);
}

namespace detail {

inline TrainConfig resolve_config(const TrainConfig& cfg, std::uint32_t d) {
  TrainConfig out = cfg;
  if (out.hidden_dim == 0) out.hidden_dim = d;
  if (out.dims.dims.empty()) out.dims = DimSchedule::defaults_for(d);
  out.dims.validate(d);
  out.validate();
  return out;
}

// One training minibatch: `corpus_rows` holds the anchors first, then any
// of their neighbours not already present; `anchor_neighbors` indexes into
// `corpus_rows`.
struct MiniBatch {
  std::vector<std::uint32_t> corpus_rows;
  std::size_t n_anchors = 0;
  std::vector<std::vector<std::uint32_t>> anchor_neighbors;
};

// Cycles corpus batches (seeded shuffle per epoch), computes each batch's
// neighbour table once on the original embeddings, and deals anchor chunks
// of `batch_size`. When the training rows fit a single corpus batch the
// table is computed exactly once and reused across epochs.
class CorpusCycler {
 public:
  CorpusCycler(const EmbeddingMatrix& corpus, std::vector<std::uint32_t> rows,
               const TrainConfig& cfg, std::uint64_t seed)
      : corpus_(&corpus),
        rows_(std::move(rows)),
        cbs_(cfg.corpus_batch_size),
        bs_(cfg.batch_size),
        k_(cfg.k_neighbors),
        rng_(seed),
        single_batch_(rows_.size() <= cbs_) {
    if (rows_.size() < 2) throw CorpusTooSmall("training corpus needs at least 2 rows");
    if (single_batch_) {
      cur_rows_ = rows_;
      const std::uint32_t k_eff =
          static_cast<std::uint32_t>(std::min<std::size_t>(k_, cur_rows_.size() - 1));
      table_ = topk_neighbors_subset(*corpus_, cur_rows_, k_eff);
    }
  }

  MiniBatch next() {
    while (cursor_ >= visit_.size()) advance();
    std::size_t chunk = std::min<std::size_t>(bs_, visit_.size() - cursor_);
    if (visit_.size() - cursor_ - chunk == 1) ++chunk;  // absorb a trailing orphan

    MiniBatch mb;
    mb.n_anchors = chunk;
    mb.corpus_rows.reserve(chunk * (k_ + 1));
    std::unordered_map<std::uint32_t, std::uint32_t> local;  // batch pos -> minibatch index
    local.reserve(chunk * (k_ + 1));
    for (std::size_t a = 0; a < chunk; ++a) {
      const std::uint32_t pos = visit_[cursor_ + a];
      local.emplace(pos, static_cast<std::uint32_t>(mb.corpus_rows.size()));
      mb.corpus_rows.push_back(cur_rows_[pos]);
    }
    mb.anchor_neighbors.resize(chunk);
    for (std::size_t a = 0; a < chunk; ++a) {
      const std::uint32_t pos = visit_[cursor_ + a];
      for (std::uint32_t nb : table_.neighbor_ids[pos]) {
        auto [it, inserted] = local.emplace(nb, static_cast<std::uint32_t>(mb.corpus_rows.size()));
        if (inserted) mb.corpus_rows.push_back(cur_rows_[nb]);
        mb.anchor_neighbors[a].push_back(it->second);
      }
    }
    cursor_ += chunk;
    return mb;
  }

 private:
  void advance() {
    if (single_batch_) {
      // New epoch: reshuffle the anchor visit order only.
      visit_.resize(cur_rows_.size());
      for (std::uint32_t i = 0; i < visit_.size(); ++i) visit_[i] = i;
      rng_.shuffle(visit_);
      cursor_ = 0;
      return;
    }
    if (batch_end_ >= perm_.size()) {
      perm_ = rows_;
      rng_.shuffle(perm_);
      batch_end_ = 0;
    }
    std::size_t begin = batch_end_;
    std::size_t end = std::min(begin + cbs_, perm_.size());
    if (perm_.size() - end == 1) ++end;  // avoid a 1-row trailing corpus batch
    batch_end_ = end;
    cur_rows_.assign(perm_.begin() + begin, perm_.begin() + end);
    const std::uint32_t k_eff =
        static_cast<std::uint32_t>(std::min<std::size_t>(k_, cur_rows_.size() - 1));
    table_ = topk_neighbors_subset(*corpus_, cur_rows_, k_eff);
    visit_.resize(cur_rows_.size());
    for (std::uint32_t i = 0; i < visit_.size(); ++i) visit_[i] = i;
    cursor_ = 0;
  }

  const EmbeddingMatrix* corpus_;
  std::vector<std::uint32_t> rows_;
  std::uint32_t cbs_, bs_, k_;
  Rng rng_;
  bool single_batch_;
  std::vector<std::uint32_t> perm_;
  std::size_t batch_end_ = 0;
  std::vector<std::uint32_t> cur_rows_;
  NeighborTable table_;
  std::vector<std::uint32_t> visit_;
  std::size_t cursor_ = std::numeric_limits<std::size_t>::max();
};

// Enabled unsupervised losses on one minibatch; accumulates parameter
// gradients and returns the objective value. Pairwise and reconstruction
// terms run over the anchors only; the top-k term spans anchors plus their
// gathered neighbours.
inline double unsup_minibatch_step(const MlpAdaptor& f, const EmbeddingMatrix& corpus,
                                   const MiniBatch& mb, const TrainConfig& cfg,
                                   AdaptorGrads& pgrads) {
  const Matrix orig = gather_rows(corpus, mb.corpus_rows);
  AdaptedBatch ab = adapt_batch(f, orig);
  Matrix upstream(orig.rows, orig.cols);
  double value = 0.0;

  if (cfg.toggles.topk) {
    std::vector<std::vector<std::uint32_t>> lists(orig.rows);
    for (std::size_t a = 0; a < mb.n_anchors; ++a) lists[a] = mb.anchor_neighbors[a];
    LossGrad topk = topk_loss(orig, ab.adapted, lists, cfg.dims);
    value += topk.value;
    for (std::size_t i = 0; i < upstream.data.size(); ++i)
      upstream.data[i] += topk.grad.data[i];
  }

  const std::size_t na = mb.n_anchors;
  Matrix anchor_orig(na, orig.cols), anchor_adapted(na, orig.cols);
  std::copy_n(orig.data.begin(), na * orig.cols, anchor_orig.data.begin());
  std::copy_n(ab.adapted.data.begin(), na * orig.cols, anchor_adapted.data.begin());

  if (cfg.toggles.pairwise && cfg.weights.alpha != 0.0 && na >= 2) {
    LossGrad pair = pairwise_loss(anchor_orig, anchor_adapted, cfg.dims);
    value += cfg.weights.alpha * pair.value;
    for (std::size_t i = 0; i < pair.grad.data.size(); ++i)
      upstream.data[i] += cfg.weights.alpha * pair.grad.data[i];
  }
  if (cfg.toggles.rec && cfg.weights.beta != 0.0) {
    LossGrad rec = rec_loss(anchor_orig, anchor_adapted);
    value += cfg.weights.beta * rec.value;
    for (std::size_t i = 0; i < rec.grad.data.size(); ++i)
      upstream.data[i] += cfg.weights.beta * rec.grad.data[i];
  }

  adapt_backward_batch(f, orig, ab.hidden, upstream, pgrads);
  return value;
}

// Fixed validation structures for the unsupervised objective on held-out
// corpus rows: the neighbour table is computed once, and the pairwise term
// uses every pair up to a cap, then a seeded sample.
class UnsupValidator {
 public:
  static constexpr std::size_t kPairCap = 20000;

  UnsupValidator(const EmbeddingMatrix& corpus, std::span<const std::uint32_t> val_rows,
                 const TrainConfig& cfg, std::uint64_t pair_seed)
      : cfg_(&cfg), orig_(gather_rows(corpus, val_rows)) {
    const std::size_t n = val_rows.size();
    if (cfg.toggles.topk && n >= 2) {
      const std::uint32_t k_eff =
          static_cast<std::uint32_t>(std::min<std::size_t>(cfg.k_neighbors, n - 1));
      neighbors_ = topk_neighbors_subset(corpus, val_rows, k_eff).neighbor_ids;
    }
    if (cfg.toggles.pairwise && n >= 2) {
      const std::size_t all = n * (n - 1) / 2;
      if (all <= kPairCap) {
        pairs_.reserve(all);
        for (std::uint32_t i = 0; i < n; ++i)
          for (std::uint32_t j = i + 1; j < n; ++j) pairs_.emplace_back(i, j);
      } else {
        Rng rng(pair_seed);
        pairs_.reserve(kPairCap);
        for (std::size_t t = 0; t < kPairCap; ++t) {
          auto i = static_cast<std::uint32_t>(rng.index(n));
          auto j = static_cast<std::uint32_t>(rng.index(n - 1));
          if (j >= i) ++j;
          pairs_.emplace_back(i, j);
        }
      }
    }
  }

  double evaluate(const MlpAdaptor& f) const {
    AdaptedBatch ab = adapt_batch(f, orig_);
    detail::PairWorkspace ws;
    double value = 0.0;
    if (cfg_->toggles.topk && !neighbors_.empty()) {
      double raw = 0.0;
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < neighbors_.size(); ++i)
        for (std::uint32_t j : neighbors_[i]) {
          raw += sim_gap_pair(ab.adapted.row(i), ab.adapted.row(j),
                              full_cosine(orig_.row(i), orig_.row(j)), cfg_->dims.dims, 0.0, {},
                              {}, ws);
          ++cnt;
        }
      if (cnt > 0) value += raw / (static_cast<double>(cnt) * cfg_->dims.size());
    }
    if (cfg_->toggles.pairwise && cfg_->weights.alpha != 0.0 && !pairs_.empty()) {
      double raw = 0.0;
      for (auto [i, j] : pairs_)
        raw += sim_gap_pair(ab.adapted.row(i), ab.adapted.row(j),
                            full_cosine(orig_.row(i), orig_.row(j)), cfg_->dims.dims, 0.0, {}, {},
                            ws);
      value += cfg_->weights.alpha * raw / (static_cast<double>(pairs_.size()) * cfg_->dims.size());
    }
    if (cfg_->toggles.rec && cfg_->weights.beta != 0.0) {
      double raw = 0.0;
      for (std::size_t i = 0; i < orig_.data.size(); ++i)
        raw += std::abs(ab.adapted.data[i] - orig_.data[i]);
      value += cfg_->weights.beta * raw / static_cast<double>(orig_.data.size());
    }
    return value;
  }

 private:
  const TrainConfig* cfg_;
  Matrix orig_;
  std::vector<std::vector<std::uint32_t>> neighbors_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_;
};

}  // namespace detail

// --------------------------------------------------------------------------

inline std::pair<MlpAdaptor, TrainLog> train_unsupervised(const EmbeddingMatrix& corpus,
                                                          const TrainConfig& cfg_in) {
  const TrainConfig cfg = detail::resolve_config(cfg_in, corpus.dim);
  const std::size_t n = corpus.size();
  if (n < static_cast<std::size_t>(cfg.k_neighbors) + 1)
    throw CorpusTooSmall("train_unsupervised: need at least k_neighbors + 1 corpus rows");

  Rng master(cfg.seed);
  const std::uint64_t init_seed = master.next_u64();
  const std::uint64_t split_seed = master.next_u64();
  const std::uint64_t cycle_seed = master.next_u64();
  const std::uint64_t pair_seed = master.next_u64();

  MlpAdaptor f = init_adaptor(corpus.dim, cfg.hidden_dim, init_seed);
  TrainLog log;
  if (!cfg.toggles.any_unsupervised()) {
    log.stop_reason = "no_losses_enabled";
    return {f, log};
  }

  // Held-out corpus rows for the validation objective.
  std::vector<std::uint32_t> rows(n);
  for (std::uint32_t i = 0; i < n; ++i) rows[i] = i;
  Rng(split_seed).shuffle(rows);
  auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 2);
  std::vector<std::uint32_t> val_rows(rows.begin(), rows.begin() + n_val);
  std::vector<std::uint32_t> train_rows(rows.begin() + n_val, rows.end());

  detail::UnsupValidator validator(corpus, val_rows, cfg, pair_seed);
  detail::CorpusCycler cycler(corpus, std::move(train_rows), cfg, cycle_seed);

  AdamState adam(f.param_count());
  AdaptorGrads grads(f);
  MlpAdaptor best = f;
  double best_val = validator.evaluate(f);
  std::uint32_t best_iter = 0;

  for (std::uint32_t iter = 1; iter <= cfg.max_iters; ++iter) {
    detail::MiniBatch mb = cycler.next();
    grads.clear();
    const double loss = detail::unsup_minibatch_step(f, corpus, mb, cfg, grads);
    adam_step(f, grads, adam, cfg.learning_rate);

    TrainRecord rec{iter, "unsup", loss, 0.0, false};
    if (iter % cfg.val_interval == 0 || iter == cfg.max_iters) {
      const double v = validator.evaluate(f);
      rec.val_metric = v;
      rec.has_val = true;
      if (v < best_val) {
        best_val = v;
        best_iter = iter;
        best = f;
      }
    }
    log.records.push_back(std::move(rec));
    if (iter - best_iter >= cfg.patience) {
      log.stop_reason = "patience";
      break;
    }
  }
  if (log.stop_reason.empty()) log.stop_reason = "max_iters";
  log.best_iter = best_iter;
  return {best, log};
}

inline std::pair<MlpAdaptor, TrainLog> train_supervised(const EmbeddingMatrix& corpus,
                                                        const EmbeddingMatrix& queries,
                                                        const RelevanceSet& rels,
                                                        const DatasetSplit& split,
                                                        const TrainConfig& cfg_in) {
  const TrainConfig cfg = detail::resolve_config(cfg_in, corpus.dim);
  if (queries.dim != corpus.dim)
    throw DimMismatch("train_supervised: query/corpus dimension mismatch");

  const auto qindex = id_index(queries);
  const auto cindex = id_index(corpus);
  for (const auto& t : rels.triplets) {
    if (!qindex.count(t.query_id)) throw UnknownId("unknown query id: " + t.query_id);
    if (!cindex.count(t.doc_id)) throw UnknownId("unknown doc id: " + t.doc_id);
  }
  const GradesByQuery grades_by_query = rels.by_query();

  // Every train query must come with at least one positive judgment.
  std::vector<std::uint32_t> train_q_rows;
  train_q_rows.reserve(split.train_query_ids.size());
  for (const auto& qid : split.train_query_ids) {
    auto it = qindex.find(qid);
    if (it == qindex.end()) throw UnknownId("train query not in query matrix: " + qid);
    bool positive = false;
    if (auto g = grades_by_query.find(qid); g != grades_by_query.end())
      for (const auto& [doc, grade] : g->second) positive |= grade > 0;
    if (!positive) throw NoPositivePairs("train query has no positive judgment: " + qid);
    train_q_rows.push_back(it->second);
  }
  std::vector<std::uint32_t> val_q_rows;
  val_q_rows.reserve(split.val_query_ids.size());
  for (const auto& qid : split.val_query_ids) {
    auto it = qindex.find(qid);
    if (it == qindex.end()) throw UnknownId("val query not in query matrix: " + qid);
    val_q_rows.push_back(it->second);
  }
  if (train_q_rows.empty()) throw TooFewQueries("no training queries in split");

  // Positive doc rows per train query, in sorted-id order.
  std::vector<std::vector<std::uint32_t>> positives(train_q_rows.size());
  for (std::size_t i = 0; i < train_q_rows.size(); ++i) {
    const auto& qid = queries.ids[train_q_rows[i]];
    const auto& docs = grades_by_query.at(qid);
    std::vector<std::string> ids;
    ids.reserve(docs.size());
    for (const auto& [doc, grade] : docs)
      if (grade > 0) ids.push_back(doc);
    std::sort(ids.begin(), ids.end());
    for (const auto& doc : ids) positives[i].push_back(cindex.at(doc));
  }

  // Stage 1.
  auto [f, log] = train_unsupervised(corpus, cfg);
  const std::uint32_t iter0 = log.records.empty() ? 0 : log.records.back().iter;

  const bool rank_on = cfg.toggles.rank && cfg.weights.gamma != 0.0;
  if (!rank_on && !cfg.toggles.any_unsupervised()) {
    log.stop_reason = "no_losses_enabled";
    return {f, log};
  }

  Rng master(cfg.seed ^ 0x8f1bbcdcbfa53e0bull);  // stage-2 stream, distinct from stage 1
  const std::uint64_t qcycle_seed = master.next_u64();
  const std::uint64_t ccycle_seed = master.next_u64();

  // Validation metric: mean nDCG@10 over the dim schedule, val queries
  // against the full corpus.
  std::vector<std::string> val_qids;
  for (std::uint32_t r : val_q_rows) val_qids.push_back(queries.ids[r]);
  const Matrix val_q_orig = gather_rows(queries, val_q_rows);
  const Matrix corpus_orig = to_matrix(corpus);
  auto sup_val_metric = [&](const MlpAdaptor& g) {
    const Matrix tq = adapt_batch(g, val_q_orig).adapted;
    const Matrix tc = adapt_batch(g, corpus_orig).adapted;
    double sum = 0.0;
    for (std::uint32_t m : cfg.dims.dims)
      sum += mean_ndcg_prefix(tq, val_qids, tc, corpus.ids, grades_by_query, m);
    return sum / static_cast<double>(cfg.dims.size());
  };

  std::optional<detail::CorpusCycler> cycler;
  if (cfg.toggles.any_unsupervised()) {
    std::vector<std::uint32_t> all_rows(corpus.size());
    for (std::uint32_t i = 0; i < all_rows.size(); ++i) all_rows[i] = i;
    cycler.emplace(corpus, std::move(all_rows), cfg, ccycle_seed);
  }

  Rng qrng(qcycle_seed);
  std::vector<std::uint32_t> qvisit(train_q_rows.size());
  for (std::uint32_t i = 0; i < qvisit.size(); ++i) qvisit[i] = i;
  std::size_t qcursor = qvisit.size();

  AdamState adam(f.param_count());  // stage boundary: moments reset
  AdaptorGrads grads(f);
  MlpAdaptor best = f;
  double best_metric = sup_val_metric(f);
  std::uint32_t best_iter = iter0;
  std::string stop_reason;

  for (std::uint32_t it = 1; it <= cfg.max_iters; ++it) {
    const std::uint32_t giter = iter0 + it;
    grads.clear();
    double loss = 0.0;

    if (cycler) {
      detail::MiniBatch mb = cycler->next();
      loss += detail::unsup_minibatch_step(f, corpus, mb, cfg, grads);
    }

    if (rank_on) {
      if (qcursor >= qvisit.size()) {
        qrng.shuffle(qvisit);
        qcursor = 0;
      }
      const std::size_t chunk = std::min<std::size_t>(cfg.batch_size, qvisit.size() - qcursor);
      std::vector<std::uint32_t> q_sel(qvisit.begin() + qcursor, qvisit.begin() + qcursor + chunk);
      qcursor += chunk;

      // Candidate docs: union of the sampled queries' positives. Docs
      // relevant to other queries in the batch act as grade-0 negatives
      // unless judged otherwise.
      std::vector<std::uint32_t> doc_rows;
      std::unordered_map<std::uint32_t, std::uint32_t> doc_local;
      for (std::uint32_t qi : q_sel)
        for (std::uint32_t doc : positives[qi])
          if (doc_local.emplace(doc, static_cast<std::uint32_t>(doc_rows.size())).second)
            doc_rows.push_back(doc);

      if (!doc_rows.empty()) {
        std::vector<std::uint32_t> q_rows;
        q_rows.reserve(q_sel.size());
        for (std::uint32_t qi : q_sel) q_rows.push_back(train_q_rows[qi]);

        const Matrix q_orig = gather_rows(queries, q_rows);
        const Matrix d_orig = gather_rows(corpus, doc_rows);
        AdaptedBatch qa = adapt_batch(f, q_orig);
        AdaptedBatch da = adapt_batch(f, d_orig);

        Matrix grade_mat(q_rows.size(), doc_rows.size());
        for (std::size_t qi = 0; qi < q_rows.size(); ++qi) {
          const auto& judged = grades_by_query.at(queries.ids[q_rows[qi]]);
          for (std::size_t dj = 0; dj < doc_rows.size(); ++dj) {
            auto itg = judged.find(corpus.ids[doc_rows[dj]]);
            grade_mat.at(qi, dj) = itg == judged.end() ? 0.0 : itg->second;
          }
        }

        RankLossGrad rank = rank_loss(qa.adapted, da.adapted, grade_mat, cfg.dims);
        loss += cfg.weights.gamma * rank.value;
        for (auto& v : rank.grad_queries.data) v *= cfg.weights.gamma;
        for (auto& v : rank.grad_corpus.data) v *= cfg.weights.gamma;
        adapt_backward_batch(f, q_orig, qa.hidden, rank.grad_queries, grads);
        adapt_backward_batch(f, d_orig, da.hidden, rank.grad_corpus, grads);
      }
    }

    adam_step(f, grads, adam, cfg.learning_rate);

    TrainRecord rec{giter, "sup", loss, 0.0, false};
    if (it % cfg.val_interval == 0 || it == cfg.max_iters) {
      const double metric = sup_val_metric(f);
      rec.val_metric = metric;
      rec.has_val = true;
      if (metric > best_metric) {
        best_metric = metric;
        best_iter = giter;
        best = f;
      }
    }
    log.records.push_back(std::move(rec));
    if (giter - best_iter >= cfg.patience) {
      stop_reason = "patience";
      break;
    }
  }
  log.stop_reason = stop_reason.empty() ? "max_iters" : stop_reason;
  log.best_iter = best_iter;
  return {best, log};
}

}  // namespace matadapt
