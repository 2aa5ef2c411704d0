// matadapt: train, evaluate and export Matryoshka-tuned embedding adaptors.
//
// Subcommands: ingest, train (unsup|sup), eval, export, ablate, diagnose.
// Exit codes: 0 success, 1 runtime error, 2 usage error. Flags override
// config-file values.

#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "matadapt/matadapt.hpp"

namespace {

using namespace matadapt;

EmbeddingFormat resolve_format(const std::string& flag, const std::filesystem::path& path) {
  if (flag == "jsonl") return EmbeddingFormat::Jsonl;
  if (flag == "binary") return EmbeddingFormat::Binary;
  return format_from_path(path);
}

EmbeddingMatrix load_matrix(const std::filesystem::path& path, const std::string& fmt_flag) {
  return load_embeddings(path, resolve_format(fmt_flag, path));
}

struct TrainOpts {
  std::string corpus, queries, qrels;
  std::string corpus_format = "auto", queries_format = "auto";
  std::string dims_csv;
  std::string out, log_path, manifest_path;
  bool no_topk = false, no_pairwise = false, no_rec = false, no_rank = false;
  TrainConfig cfg;
};

void add_train_options(CLI::App* cmd, TrainOpts& o, bool supervised) {
  cmd->add_option("--corpus", o.corpus, "corpus embedding file")->required();
  cmd->add_option("--corpus-format", o.corpus_format, "jsonl|binary|auto");
  if (supervised) {
    cmd->add_option("--queries", o.queries, "query embedding file")->required();
    cmd->add_option("--queries-format", o.queries_format, "jsonl|binary|auto");
    cmd->add_option("--qrels", o.qrels, "TREC qrels file")->required();
    cmd->add_flag("--no-rank", o.no_rank, "disable the ranking loss");
  }
  cmd->add_option("--dims", o.dims_csv, "prefix schedule, e.g. 8,16,32 (default: powers of two)");
  cmd->add_option("--alpha", o.cfg.weights.alpha, "pairwise loss weight");
  cmd->add_option("--beta", o.cfg.weights.beta, "reconstruction loss weight");
  cmd->add_option("--gamma", o.cfg.weights.gamma, "ranking loss weight");
  cmd->add_option("--k", o.cfg.k_neighbors, "neighbours per anchor");
  cmd->add_option("--seed", o.cfg.seed, "RNG seed");
  cmd->add_option("--lr", o.cfg.learning_rate, "Adam learning rate");
  cmd->add_option("--batch-size", o.cfg.batch_size, "training batch size");
  cmd->add_option("--corpus-batch-size", o.cfg.corpus_batch_size, "corpus batch size");
  cmd->add_option("--max-iters", o.cfg.max_iters, "max iterations per stage");
  cmd->add_option("--patience", o.cfg.patience, "early-stopping patience (iterations)");
  cmd->add_option("--val-fraction", o.cfg.val_fraction, "held-out fraction for validation");
  cmd->add_option("--val-interval", o.cfg.val_interval, "iterations between validations");
  cmd->add_option("--hidden", o.cfg.hidden_dim, "hidden width (default: embedding dim)");
  cmd->add_flag("--no-topk", o.no_topk, "disable the top-k loss");
  cmd->add_flag("--no-pairwise", o.no_pairwise, "disable the pairwise loss");
  cmd->add_flag("--no-rec", o.no_rec, "disable the reconstruction loss");
  cmd->add_option("--out", o.out, "output weight file (JSON)")->required();
  cmd->add_option("--log", o.log_path, "training log (JSONL; default <out>.log.jsonl)");
  cmd->add_option("--manifest", o.manifest_path, "run manifest (default <out>.manifest.json)");
}

int run_train(TrainOpts& o, bool supervised) {
  o.cfg.toggles.topk = !o.no_topk;
  o.cfg.toggles.pairwise = !o.no_pairwise;
  o.cfg.toggles.rec = !o.no_rec;
  o.cfg.toggles.rank = supervised && !o.no_rank;
  if (!o.dims_csv.empty()) o.cfg.dims = DimSchedule::parse(o.dims_csv);
  if (o.log_path.empty()) o.log_path = o.out + ".log.jsonl";
  if (o.manifest_path.empty()) o.manifest_path = o.out + ".manifest.json";

  RunManifest manifest;
  manifest.seed = o.cfg.seed;
  manifest.add_input(o.corpus);
  if (supervised) {
    manifest.add_input(o.queries);
    manifest.add_input(o.qrels);
  }

  const EmbeddingMatrix corpus = load_matrix(o.corpus, o.corpus_format);
  manifest.config = detail::resolve_config(o.cfg, corpus.dim).to_json();
  manifest.config["mode"] = supervised ? "train-sup" : "train-unsup";

  MlpAdaptor adaptor;
  TrainLog log;
  if (supervised) {
    const EmbeddingMatrix queries = load_matrix(o.queries, o.queries_format);
    const RelevanceSet rels = load_qrels(o.qrels);
    const DatasetSplit split = split_train_val(queries, rels, o.cfg.val_fraction, o.cfg.seed);
    std::tie(adaptor, log) = train_supervised(corpus, queries, rels, split, o.cfg);
  } else {
    std::tie(adaptor, log) = train_unsupervised(corpus, o.cfg);
  }

  save_weights(adaptor, o.out);
  write_train_log_jsonl(log, o.log_path);
  manifest.outputs = {o.out, o.log_path};
  write_manifest(manifest, o.manifest_path);
  std::cout << "trained: best_iter=" << log.best_iter << " stop=" << log.stop_reason
            << " weights=" << o.out << "\n";
  return 0;
}

struct EvalOpts {
  std::string queries, corpus, qrels, weights, report;
  std::string queries_format = "auto", corpus_format = "auto";
  std::string methods = "baseline";
  std::string dims_csv;
  std::string dataset = "unnamed";
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t end = csv.find(',', start);
    if (end == std::string::npos) end = csv.size();
    out.push_back(csv.substr(start, end - start));
    if (end == csv.size()) break;
    start = end + 1;
  }
  return out;
}

std::filesystem::path sibling_json(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".json");
  return p;
}

int run_eval(EvalOpts& o) {
  const auto methods = split_csv(o.methods);
  for (const auto& m : methods)
    if (m != "baseline" && m != "pca" && m != "adaptor")
      throw UnknownMethod("unknown method: " + m);
  const bool wants_adaptor =
      std::find(methods.begin(), methods.end(), "adaptor") != methods.end();
  if (wants_adaptor && o.weights.empty()) {
    std::cerr << "error: the adaptor method requires --weights\n";
    return 2;
  }

  const EmbeddingMatrix queries = load_matrix(o.queries, o.queries_format);
  const EmbeddingMatrix corpus = load_matrix(o.corpus, o.corpus_format);
  const RelevanceSet rels = load_qrels(o.qrels);
  const DimSchedule dims =
      o.dims_csv.empty() ? DimSchedule::defaults_for(corpus.dim) : DimSchedule::parse(o.dims_csv);

  EvalReport report;
  report.meta.dataset = o.dataset;
  report.meta.seed = o.seed;
  TrainConfig cfg;
  cfg.seed = o.seed;
  cfg.dims = dims;
  report.meta.config_hash = config_hash(detail::resolve_config(cfg, corpus.dim));

  PcaModel pca;
  MlpAdaptor adaptor;
  for (const auto& m : methods) {
    Transform t = Transform::identity();
    if (m == "pca") {
      pca = pca_fit(corpus, dims.back());
      t = Transform::of(pca);
    } else if (m == "adaptor") {
      adaptor = load_weights(o.weights);
      t = Transform::of(adaptor);
    }
    auto rows = evaluate_retrieval(queries, corpus, rels, t, dims, o.threads);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }

  write_report_csv(report, o.report);
  write_report_json(report, sibling_json(o.report));
  std::cout << "report: " << o.report << " (+ " << sibling_json(o.report).string() << ")\n";
  return 0;
}

struct ExportOpts {
  std::string weights, in, out;
  std::string in_format = "auto", out_format = "auto";
  std::uint32_t m = 0;
};

int run_export(ExportOpts& o) {
  const MlpAdaptor adaptor = load_weights(o.weights);
  const EmbeddingMatrix in = load_matrix(o.in, o.in_format);
  if (in.dim != adaptor.d)
    throw DimMismatch("export: embeddings have dim " + std::to_string(in.dim) +
                      ", adaptor expects " + std::to_string(adaptor.d));
  if (o.m < 1 || o.m > adaptor.d)
    throw PrefixOutOfRange("export: m=" + std::to_string(o.m) + " outside [1, " +
                           std::to_string(adaptor.d) + "]");

  EmbeddingMatrix out;
  out.dim = o.m;
  out.ids = in.ids;
  out.data.reserve(in.size() * o.m);
  std::vector<double> y(adaptor.d), hidden(adaptor.h), x(adaptor.d);
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto r = in.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) x[j] = static_cast<double>(r[j]);
    adapt_into(adaptor, x, y, hidden);
    for (std::uint32_t j = 0; j < o.m; ++j) out.data.push_back(static_cast<float>(y[j]));
  }
  save_embeddings(out, o.out, resolve_format(o.out_format, o.out));
  std::cout << "exported " << out.size() << " vectors at dim " << o.m << " to " << o.out << "\n";
  return 0;
}

struct AblateOpts {
  TrainOpts train;
  std::string seeds_csv = "1,2,3";
  std::string out_dir = "ablation";
  unsigned threads = 1;
};

int run_ablate(AblateOpts& o) {
  const EmbeddingMatrix corpus = load_matrix(o.train.corpus, o.train.corpus_format);
  const EmbeddingMatrix queries = load_matrix(o.train.queries, o.train.queries_format);
  const RelevanceSet rels = load_qrels(o.train.qrels);
  TrainConfig cfg = o.train.cfg;
  if (!o.train.dims_csv.empty()) cfg.dims = DimSchedule::parse(o.train.dims_csv);
  const TrainConfig resolved = detail::resolve_config(cfg, corpus.dim);

  std::filesystem::create_directories(o.out_dir);
  const auto grid = default_ablation_grid();

  // setting -> dim -> ndcg values across seeds
  std::map<std::string, std::map<std::uint32_t, std::vector<double>>> table;
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_csv(o.seeds_csv)) seeds.push_back(std::stoull(s));

  auto baseline_rows = evaluate_retrieval(queries, corpus, rels, Transform::identity(),
                                          resolved.dims, o.threads);
  for (const auto& r : baseline_rows) table["baseline"][r.dim].push_back(r.ndcg10);

  for (std::uint64_t seed : seeds) {
    TrainConfig c = cfg;
    c.seed = seed;
    auto runs = run_ablation(corpus, queries, rels, c, grid, o.threads);
    for (const auto& run : runs) {
      EvalReport rep;
      rep.meta.dataset = run.setting.name;
      rep.meta.seed = seed;
      rep.meta.config_hash = config_hash(resolved);
      rep.rows = run.rows;
      const auto stem = o.out_dir + "/" + run.setting.name + "_seed" + std::to_string(seed);
      write_report_csv(rep, stem + ".csv");
      write_report_json(rep, stem + ".json");
      for (const auto& r : run.rows) table[run.setting.name][r.dim].push_back(r.ndcg10);
    }
    std::cout << "seed " << seed << ": " << grid.size() << " settings trained\n";
  }

  // Summary grid: one row per setting, mean nDCG over seeds per dim.
  std::string summary = "setting";
  for (std::uint32_t m : resolved.dims.dims) summary += ",dim" + std::to_string(m);
  summary += '\n';
  std::vector<std::string> order{"baseline"};
  for (const auto& g : grid) order.push_back(g.name);
  for (const auto& name : order) {
    summary += name;
    for (std::uint32_t m : resolved.dims.dims) {
      const auto& vals = table[name][m];
      double mean = 0;
      for (double v : vals) mean += v;
      if (!vals.empty()) mean /= static_cast<double>(vals.size());
      summary += ',' + detail::fmt_double(mean);
    }
    summary += '\n';
  }
  detail::write_file_bytes(o.out_dir + "/summary.csv", summary);
  std::cout << "ablation summary: " << o.out_dir << "/summary.csv\n";
  return 0;
}

struct DiagnoseOpts {
  std::string corpus, weights, report;
  std::string corpus_format = "auto";
  std::string dims_csv;
  std::uint32_t k = 10;
  std::uint64_t seed = 17;
  bool with_pca = false;
};

int run_diagnose(DiagnoseOpts& o) {
  const EmbeddingMatrix corpus = load_matrix(o.corpus, o.corpus_format);
  const DimSchedule dims =
      o.dims_csv.empty() ? DimSchedule::defaults_for(corpus.dim) : DimSchedule::parse(o.dims_csv);

  struct Entry {
    std::string name;
    Diagnostics diag;
  };
  std::vector<Entry> entries;
  entries.push_back({"baseline", distance_diagnostics(corpus, Transform::identity(), dims, o.k, o.seed)});
  PcaModel pca;
  if (o.with_pca) {
    pca = pca_fit(corpus, dims.back());
    entries.push_back({"pca", distance_diagnostics(corpus, Transform::of(pca), dims, o.k, o.seed)});
  }
  MlpAdaptor adaptor;
  if (!o.weights.empty()) {
    adaptor = load_weights(o.weights);
    entries.push_back({"adaptor", distance_diagnostics(corpus, Transform::of(adaptor), dims, o.k, o.seed)});
  }

  std::string out = "method,dim,pairwise_dist,topk_dist\n";
  for (const auto& e : entries)
    for (std::size_t i = 0; i < e.diag.dims.size(); ++i)
      out += e.name + ',' + std::to_string(e.diag.dims[i]) + ',' +
             detail::fmt_double(e.diag.pairwise_dist[i]) + ',' +
             detail::fmt_double(e.diag.topk_dist[i]) + '\n';
  detail::write_file_bytes(o.report, out);
  std::cout << "diagnostics: " << o.report << "\n";
  return 0;
}

struct IngestOpts {
  std::string in, out, texts, cache_dir;
  std::string in_format = "auto", out_format = "auto";
  std::string provider = "mock";
  std::string endpoint, source;
  std::uint32_t dim = 0;
  std::uint64_t mock_seed = 0;
};

int run_ingest(IngestOpts& o) {
  if (o.in.empty() == o.texts.empty()) {
    std::cerr << "error: ingest needs exactly one of --in (convert) or --texts (embed)\n";
    return 2;
  }
  if (!o.in.empty()) {
    auto m = load_matrix(o.in, o.in_format);
    save_embeddings(m, o.out, resolve_format(o.out_format, o.out));
    std::cout << "converted " << m.size() << " vectors to " << o.out << "\n";
    return 0;
  }

  ProviderSpec spec;
  if (o.provider == "mock") spec.kind = ProviderSpec::Kind::Mock;
  else if (o.provider == "file") spec.kind = ProviderSpec::Kind::File;
  else if (o.provider == "remote") spec.kind = ProviderSpec::Kind::Remote;
  else throw UnknownMethod("unknown provider: " + o.provider);
  spec.dim = o.dim;
  spec.endpoint = o.endpoint;
  spec.source_path = o.source;
  spec.mock_seed = o.mock_seed;

  std::vector<std::string> items;
  {
    std::ifstream in(o.texts);
    if (!in) throw IoError("cannot open " + o.texts);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) items.push_back(line);
  }

  EmbeddingProvider provider(spec);
  EmbeddingMatrix m = o.cache_dir.empty() ? provider.embed(items)
                                          : cache_embeddings(provider, items, o.cache_dir);
  save_embeddings(m, o.out, resolve_format(o.out_format, o.out));
  std::cout << "embedded " << m.size() << " items to " << o.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matryoshka embedding adaptor toolkit"};
  app.set_version_flag("--version", matadapt::kVersion);
  app.set_config("--config", "", "config file (key=value; flags win)");
  app.require_subcommand(1);

  TrainOpts unsup_opts, sup_opts;
  EvalOpts eval_opts;
  ExportOpts export_opts;
  AblateOpts ablate_opts;
  DiagnoseOpts diagnose_opts;
  IngestOpts ingest_opts;

  auto* train = app.add_subcommand("train", "train an adaptor");
  train->require_subcommand(1);
  auto* unsup = train->add_subcommand("unsup", "unsupervised tuning on corpus embeddings");
  add_train_options(unsup, unsup_opts, false);
  auto* sup = train->add_subcommand("sup", "two-stage supervised tuning");
  add_train_options(sup, sup_opts, true);

  auto* eval = app.add_subcommand("eval", "retrieval evaluation across the dim sweep");
  eval->add_option("--queries", eval_opts.queries)->required();
  eval->add_option("--queries-format", eval_opts.queries_format, "jsonl|binary|auto");
  eval->add_option("--corpus", eval_opts.corpus)->required();
  eval->add_option("--corpus-format", eval_opts.corpus_format, "jsonl|binary|auto");
  eval->add_option("--qrels", eval_opts.qrels)->required();
  eval->add_option("--methods", eval_opts.methods, "comma list of baseline|pca|adaptor");
  eval->add_option("--weights", eval_opts.weights, "adaptor weight file");
  eval->add_option("--dims", eval_opts.dims_csv, "prefix schedule");
  eval->add_option("--report", eval_opts.report, "CSV report path (JSON written alongside)")->required();
  eval->add_option("--dataset", eval_opts.dataset, "dataset name for the metadata block");
  eval->add_option("--seed", eval_opts.seed, "seed recorded in metadata");
  eval->add_option("--threads", eval_opts.threads, "worker threads for per-query evaluation");

  auto* exp = app.add_subcommand("export", "write adapted, truncated embeddings");
  exp->add_option("--weights", export_opts.weights)->required();
  exp->add_option("--in", export_opts.in)->required();
  exp->add_option("--in-format", export_opts.in_format, "jsonl|binary|auto");
  exp->add_option("--m", export_opts.m, "output dimension")->required();
  exp->add_option("--out", export_opts.out)->required();
  exp->add_option("--out-format", export_opts.out_format, "jsonl|binary|auto");

  auto* ablate = app.add_subcommand("ablate", "loss-toggle ablation grid");
  add_train_options(ablate, ablate_opts.train, true);
  ablate->get_option("--out")->required(false);
  ablate->add_option("--seeds", ablate_opts.seeds_csv, "comma list of seeds");
  ablate->add_option("--out-dir", ablate_opts.out_dir, "report directory");
  ablate->add_option("--threads", ablate_opts.threads, "worker threads for evaluation");

  auto* diagnose = app.add_subcommand("diagnose", "pairwise/top-k distance diagnostics");
  diagnose->add_option("--corpus", diagnose_opts.corpus, "held-out corpus embeddings")->required();
  diagnose->add_option("--corpus-format", diagnose_opts.corpus_format, "jsonl|binary|auto");
  diagnose->add_option("--weights", diagnose_opts.weights, "adaptor weights (optional)");
  diagnose->add_flag("--pca", diagnose_opts.with_pca, "also diagnose a PCA fit of this corpus");
  diagnose->add_option("--dims", diagnose_opts.dims_csv, "prefix schedule");
  diagnose->add_option("--k", diagnose_opts.k, "neighbours per anchor");
  diagnose->add_option("--seed", diagnose_opts.seed, "pair-sampling seed");
  diagnose->add_option("--report", diagnose_opts.report, "CSV output")->required();

  auto* ingest = app.add_subcommand("ingest", "convert embedding files or embed text items");
  ingest->add_option("--in", ingest_opts.in, "embedding file to convert");
  ingest->add_option("--in-format", ingest_opts.in_format, "jsonl|binary|auto");
  ingest->add_option("--out", ingest_opts.out, "output embedding file")->required();
  ingest->add_option("--out-format", ingest_opts.out_format, "jsonl|binary|auto");
  ingest->add_option("--texts", ingest_opts.texts, "file with one item per line");
  ingest->add_option("--provider", ingest_opts.provider, "mock|file|remote");
  ingest->add_option("--dim", ingest_opts.dim, "provider dimension");
  ingest->add_option("--endpoint", ingest_opts.endpoint, "remote endpoint URL");
  ingest->add_option("--source", ingest_opts.source, "file-provider embedding file");
  ingest->add_option("--mock-seed", ingest_opts.mock_seed, "mock provider seed");
  ingest->add_option("--cache", ingest_opts.cache_dir, "embedding cache directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (unsup->parsed()) return run_train(unsup_opts, false);
    if (sup->parsed()) return run_train(sup_opts, true);
    if (eval->parsed()) return run_eval(eval_opts);
    if (exp->parsed()) return run_export(export_opts);
    if (ablate->parsed()) return run_ablate(ablate_opts);
    if (diagnose->parsed()) return run_diagnose(diagnose_opts);
    if (ingest->parsed()) return run_ingest(ingest_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
