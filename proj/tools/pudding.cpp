// pudding — prompt-routed dynamic depth pruning, end to end:
//   search         greedy omission-set search over calibration datasets
//   build-dataset  per-prompt loss labels for every pool entry
//   train          soft-label router training
//   infer          route → load blocks → generate, with stage timings
//   bench          comparisons, heatmaps, ablations, speedup measurements
//
// Options may come from flags, a TOML config (-c), or PUDDING_* environment
// variables. Exit codes: 0 success, 2 config/validation, 3 algorithmic
// failure, 4 I/O.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pudding/bench.hpp"
#include "pudding/data.hpp"
#include "pudding/error.hpp"
#include "pudding/fixtures.hpp"
#include "pudding/hash.hpp"
#include "pudding/losses.hpp"
#include "pudding/model_io.hpp"
#include "pudding/pipeline.hpp"
#include "pudding/router.hpp"
#include "pudding/search.hpp"
#include "pudding/tokenizer.hpp"

namespace {

using namespace pudding;

struct Options {
  std::string model_path;
  std::string pool_path;
  std::string router_path;
  std::string data_path;  // router dataset JSONL
  std::string prompts_path;
  std::vector<std::string> datasets;  // NAME=PATH entries
  std::vector<std::string> criteria{"tl"};
  std::string tokenizer = "ids";
  std::string loss_mode = "mse";
  std::string out_dir = "out";
  int k = 2;
  std::uint64_t seed = 0;
  int threads = 1;
  bool dry_run = false;
  bool two_pass = false;

  // router architecture + training
  int embed_dim = 32;
  int encoder_layers = 1;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  int batch_size = 32;
  int epochs = 10;
  int warmup_steps = 500;
  double val_fraction = 0.1;

  // infer
  int max_new = 8;
  bool omit_timings = false;
  int max_resident = -2;  // -2: derive d-k from the pool; -1: uncapped

  // bench
  std::vector<int> pool_sizes;
  std::vector<int> gen_lengths{8};
  int repetitions = 5;
  bool bench_compare = false;
  bool bench_heatmap = false;
  bool bench_ablate = false;
  bool bench_speedup = false;
};

void check_exists(const std::string& path, const std::string& what) {
  require(!path.empty(), ErrorKind::Config, what + " path is required");
  require(std::filesystem::exists(path), ErrorKind::Config,
          what + " path '" + path + "' does not exist");
}

std::filesystem::path out_file(const Options& opt, const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create output directory '" + opt.out_dir + "'");
  return std::filesystem::path(opt.out_dir) / name;
}

std::vector<Criterion> parse_criteria(const std::vector<std::string>& names) {
  std::vector<Criterion> out;
  for (const auto& name : names) out.push_back(criterion_from_string(name));
  require(!out.empty(), ErrorKind::Config, "at least one criterion is required");
  return out;
}

std::vector<CalibrationDataset> load_datasets(const Options& opt, int vocab_size) {
  require(!opt.datasets.empty(), ErrorKind::Config,
          "at least one --dataset NAME=PATH is required");
  const TokenizerKind kind = tokenizer_from_string(opt.tokenizer);
  std::vector<CalibrationDataset> datasets;
  for (const auto& entry : opt.datasets) {
    const auto eq = entry.find('=');
    std::string name, path;
    if (eq == std::string::npos) {
      path = entry;
      name = std::filesystem::path(entry).stem().string();
    } else {
      name = entry.substr(0, eq);
      path = entry.substr(eq + 1);
    }
    check_exists(path, "dataset '" + name + "'");
    CalibrationDataset dataset{name, load_pairs_jsonl(path, kind, vocab_size)};
    require(!dataset.pairs.empty(), ErrorKind::Config,
            "dataset '" + name + "' (" + path + ") is empty");
    datasets.push_back(std::move(dataset));
  }
  return datasets;
}

TransformerModel load_model_checked(const Options& opt) {
  check_exists(opt.model_path, "model");
  return load_model(opt.model_path);
}

CandidatePool load_pool_checked(const Options& opt) {
  check_exists(opt.pool_path, "pool");
  return load_pool(opt.pool_path);
}

void check_k(const Options& opt, int d) {
  require(opt.k >= 1 && opt.k <= d - 1, ErrorKind::Config,
          "--k must satisfy 1 <= k <= d-1 for this model (k=" + std::to_string(opt.k) +
              ", d=" + std::to_string(d) + ")");
}

int cmd_search(const Options& opt) {
  const TransformerModel model = load_model_checked(opt);
  check_k(opt, model.config.n_blocks);
  const auto datasets = load_datasets(opt, model.config.vocab_size);
  const auto criteria = parse_criteria(opt.criteria);
  const std::string pool_out =
      opt.pool_path.empty() ? out_file(opt, "pool.json").string() : opt.pool_path;

  if (opt.dry_run) {
    std::cout << "plan: greedy search, k=" << opt.k << ", datasets=" << datasets.size()
              << ", criteria=" << criteria.size() << " -> pool of m="
              << datasets.size() * criteria.size() << " at " << pool_out << "\n";
    return 0;
  }

  const CandidatePool pool =
      generate_pool(model, datasets, criteria, opt.k, {opt.threads, opt.two_pass});
  save_pool(pool, pool_out);

  std::cout << "pool: m=" << pool.size() << ", k=" << pool.k << ", model " << pool.model_hash
            << "\n";
  std::size_t name_width = std::string("dataset").size();
  for (const auto& e : pool.entries) name_width = std::max(name_width, e.dataset.size());
  std::cout << "idx  " << std::left << std::setw(static_cast<int>(name_width))
            << "dataset" << "  criterion  loss          blocks\n";
  for (int j = 0; j < pool.size(); ++j) {
    const auto& e = pool.entries[static_cast<std::size_t>(j)];
    std::cout << std::left << std::setw(3) << j << "  " << std::setw(static_cast<int>(name_width))
              << e.dataset << "  " << std::setw(9) << to_string(e.criterion) << "  "
              << std::setw(12) << e.loss << "  {";
    for (std::size_t i = 0; i < e.set.indices.size(); ++i) {
      std::cout << (i ? "," : "") << e.set.indices[i];
    }
    std::cout << "}\n";
  }
  std::cout << "wrote " << pool_out << "\n";
  return 0;
}

int cmd_build_dataset(const Options& opt) {
  const TransformerModel model = load_model_checked(opt);
  const CandidatePool pool = load_pool_checked(opt);
  require(pool.model_hash == model_hash(model), ErrorKind::Config,
          "pool was generated from a different model");
  const auto datasets = load_datasets(opt, model.config.vocab_size);
  const Criterion criterion = criterion_from_string(opt.criteria.front());
  std::vector<PromptAnswerPair> pairs;
  for (const auto& d : datasets) pairs.insert(pairs.end(), d.pairs.begin(), d.pairs.end());
  const std::string data_out =
      opt.data_path.empty() ? out_file(opt, "router_dataset.jsonl").string() : opt.data_path;

  if (opt.dry_run) {
    std::cout << "plan: label " << pairs.size() << " pairs against m=" << pool.size()
              << " sets (" << to_string(criterion) << ") -> " << data_out << "\n";
    return 0;
  }

  const auto samples = build_router_dataset(model, pool, pairs, criterion, opt.threads);
  save_router_dataset(samples, data_out);
  std::cout << "wrote " << samples.size() << " samples to " << data_out << "\n";
  return 0;
}

int cmd_train(const Options& opt) {
  const TransformerModel model = load_model_checked(opt);
  const CandidatePool pool = load_pool_checked(opt);
  check_exists(opt.data_path, "router dataset");
  const auto samples = load_router_dataset(opt.data_path);
  require(!samples.empty(), ErrorKind::Config,
          "router dataset '" + opt.data_path + "' is empty");

  RouterConfig arch;
  arch.vocab = model.config.vocab_size;
  arch.embed_dim = opt.embed_dim;
  arch.n_layers = opt.encoder_layers;
  arch.m = pool.size();

  TrainConfig config;
  config.learning_rate = opt.learning_rate;
  config.weight_decay = opt.weight_decay;
  config.batch_size = opt.batch_size;
  config.epochs = opt.epochs;
  config.warmup_steps = opt.warmup_steps;
  config.seed = opt.seed;
  const LossMode mode = loss_mode_from_string(opt.loss_mode);
  const std::string router_out =
      opt.router_path.empty() ? out_file(opt, "router.pudr").string() : opt.router_path;

  if (opt.dry_run) {
    std::cout << "plan: train router (" << to_string(mode) << ", lr=" << config.learning_rate
              << ", epochs=" << config.epochs << ") on " << samples.size() << " samples -> "
              << router_out << "\n";
    return 0;
  }

  if (config.epochs == 0) {
    std::cerr << "warning: epochs=0, writing the initialized checkpoint untrained\n";
  }
  auto [train_split, val_split] = split_samples(samples, opt.val_fraction, opt.seed);
  if (train_split.empty()) train_split = samples;
  std::vector<EpochStats> log;
  const RouterModel router = train_router(train_split, pool, arch, config, mode, &log);
  for (const auto& stats : log) {
    std::cout << "epoch " << stats.epoch << ": loss " << stats.mean_loss << "\n";
  }
  if (!val_split.empty()) {
    const RouterMetrics metrics = evaluate_router(router, val_split);
    std::cout << "validation: accuracy " << metrics.accuracy << ", regret " << metrics.regret
              << ", mse " << metrics.mse << "\n";
  }
  save_router(router, router_out);
  std::cout << "wrote " << router_out << "\n";
  return 0;
}

int cmd_infer(const Options& opt) {
  check_exists(opt.model_path, "model");
  const CandidatePool pool = load_pool_checked(opt);
  check_exists(opt.router_path, "router checkpoint");
  const RouterModel router = load_router(opt.router_path);
  check_exists(opt.prompts_path, "prompts");

  int cap = opt.max_resident;
  BlockStore probe(opt.model_path);  // header only until blocks are requested
  const int d = probe.config().n_blocks;
  if (cap == -2) cap = d - pool.k;
  const TokenizerKind kind = tokenizer_from_string(opt.tokenizer);
  const auto prompts = load_prompt_lines(opt.prompts_path, kind, probe.config().vocab_size);
  const std::string reports_out = out_file(opt, "reports.jsonl").string();

  if (opt.dry_run) {
    std::cout << "plan: route+infer " << prompts.size() << " prompts, max_new=" << opt.max_new
              << ", residency cap=" << cap << " -> " << reports_out << "\n";
    return 0;
  }

  BlockStore store(opt.model_path, cap);
  std::ofstream reports(reports_out, std::ios::binary);
  require(reports.good(), ErrorKind::Io, "cannot open '" + reports_out + "' for writing");
  PipelineStats stats;
  for (const auto& prompt : prompts) {
    auto [output, report] = run_inference(store, router, pool, prompt, opt.max_new, &stats);
    reports << report_to_jsonl(report, output, !opt.omit_timings) << '\n';
  }
  require(reports.good(), ErrorKind::Io, "failed writing '" + reports_out + "'");
  std::cout << "inferred " << prompts.size() << " prompts (" << stats.route_invocations
            << " routing calls), total bytes loaded " << store.bytes_transferred_total()
            << ", wrote " << reports_out << "\n";
  return 0;
}

int cmd_bench(const Options& opt) {
  const TransformerModel model = load_model_checked(opt);
  const CandidatePool pool = load_pool_checked(opt);
  check_exists(opt.router_path, "router checkpoint");
  const RouterModel router = load_router(opt.router_path);
  const auto datasets = load_datasets(opt, model.config.vocab_size);
  const auto criteria = parse_criteria(opt.criteria);

  bool compare = opt.bench_compare, heatmap = opt.bench_heatmap;
  bool ablate = opt.bench_ablate, speedup = opt.bench_speedup;
  if (!compare && !heatmap && !ablate && !speedup) {
    compare = heatmap = true;  // default analysis set
  }
  require(!ablate || !opt.pool_sizes.empty(), ErrorKind::Config,
          "--ablate needs at least one --pool-size");

  if (opt.dry_run) {
    std::cout << "plan: bench [compare=" << compare << " heatmap=" << heatmap
              << " ablate=" << ablate << " speedup=" << speedup << "] -> " << opt.out_dir
              << "\n";
    return 0;
  }

  BenchResults results;
  if (compare) {
    results.has_comparison = true;
    results.comparison =
        compare_methods(model, pool, router, datasets, criteria.front(), opt.threads);
  }
  if (heatmap) {
    results.has_heatmap = true;
    results.heatmap = compute_heatmap(router, pool, datasets, model.config.n_blocks);
    for (const auto& warning : results.heatmap.warnings) {
      std::cerr << "warning: " << warning << "\n";
    }
  }
  if (ablate) {
    RouterConfig arch;
    arch.vocab = model.config.vocab_size;
    arch.embed_dim = opt.embed_dim;
    arch.n_layers = opt.encoder_layers;
    TrainConfig config;
    config.learning_rate = opt.learning_rate;
    config.weight_decay = opt.weight_decay;
    config.batch_size = opt.batch_size;
    config.epochs = opt.epochs;
    config.warmup_steps = opt.warmup_steps;
    config.seed = opt.seed;
    results.ablation =
        ablate_pool_size(model, datasets, criteria, opt.pool_sizes, pool.k, arch, config,
                         loss_mode_from_string(opt.loss_mode), criteria.front(), opt.threads);
  }
  if (speedup) {
    check_exists(opt.model_path, "model");
    BlockStore dense_store(opt.model_path);
    BlockStore routed_store(opt.model_path, model.config.n_blocks - pool.k);
    std::vector<TokenSequence> workload;
    for (const auto& d : datasets) {
      for (const auto& pair : d.pairs) {
        workload.push_back(pair.prompt());
        if (workload.size() >= 2) break;
      }
      if (workload.size() >= 2) break;
    }
    results.speedup = measure_speedup(dense_store, routed_store, router, pool, workload,
                                      opt.gen_lengths, opt.repetitions);
  }

  const auto written = emit_reports(results, opt.out_dir);
  for (const auto& path : written) std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt-routed dynamic depth pruning"};
  app.require_subcommand(1);
  Options opt;

  app.set_config("-c,--config")->envname("PUDDING_CONFIG");
  app.add_option("--seed", opt.seed, "master seed; stages derive named substreams")
      ->envname("PUDDING_SEED")
      ->capture_default_str();
  app.add_option("--threads", opt.threads, "worker cap for parallel loss evaluation")
      ->envname("PUDDING_THREADS")
      ->capture_default_str();
  app.add_option("--out", opt.out_dir, "output directory")
      ->envname("PUDDING_OUT")
      ->capture_default_str();
  app.add_flag("--dry-run", opt.dry_run, "validate config and print the plan only");
  app.add_option("--model", opt.model_path, "PUDW weight file")->envname("PUDDING_MODEL");
  app.add_option("--pool", opt.pool_path, "pool JSON (output of search, input elsewhere)")
      ->envname("PUDDING_POOL");
  app.add_option("--router", opt.router_path, "router checkpoint (PUDR)")
      ->envname("PUDDING_ROUTER");
  app.add_option("--dataset", opt.datasets, "calibration dataset as NAME=PATH (repeatable)");
  app.add_option("--criterion", opt.criteria, "loss criterion: ppl|tl|tld|sl (repeatable)")
      ->capture_default_str();
  app.add_option("--tokenizer", opt.tokenizer, "byte|whitespace|ids")->capture_default_str();
  app.add_option("--k", opt.k, "blocks to omit per set")->capture_default_str();
  app.fallthrough();

  auto* search = app.add_subcommand("search", "greedy omission-set search -> pool JSON");
  search->add_flag("--two-pass", opt.two_pass, "refinement sweep after the greedy build");

  auto* build = app.add_subcommand("build-dataset", "label prompts per pool entry -> JSONL");
  build->add_option("--data", opt.data_path, "output JSONL path (default <out>/router_dataset.jsonl)");

  auto* train = app.add_subcommand("train", "train the router -> checkpoint");
  train->add_option("--data", opt.data_path, "router dataset JSONL");
  train->add_option("--loss-mode", opt.loss_mode, "mse|ce|ce-onehot")->capture_default_str();
  train->add_option("--lr", opt.learning_rate, "learning rate")->capture_default_str();
  train->add_option("--weight-decay", opt.weight_decay, "decoupled weight decay")
      ->capture_default_str();
  train->add_option("--batch-size", opt.batch_size, "")->capture_default_str();
  train->add_option("--epochs", opt.epochs, "")->capture_default_str();
  train->add_option("--warmup-steps", opt.warmup_steps, "linear warmup steps")
      ->capture_default_str();
  train->add_option("--embed-dim", opt.embed_dim, "router embedding width")
      ->capture_default_str();
  train->add_option("--encoder-layers", opt.encoder_layers, "dense layers after pooling (0-2)")
      ->capture_default_str();
  train->add_option("--val-fraction", opt.val_fraction, "held-out fraction")
      ->capture_default_str();

  auto* infer = app.add_subcommand("infer", "route and generate per prompt -> reports JSONL");
  infer->add_option("--prompts", opt.prompts_path, "prompt file, one per line");
  infer->add_option("--max-new", opt.max_new, "tokens to generate")->capture_default_str();
  infer->add_flag("--omit-timings", opt.omit_timings,
                  "zero timing fields for byte-stable reports");
  infer->add_option("--max-resident", opt.max_resident,
                    "residency cap in blocks (-1 uncapped; default d-k)");

  auto* bench = app.add_subcommand("bench", "comparisons, heatmaps, ablations, speedups");
  bench->add_flag("--compare", opt.bench_compare, "method comparison table");
  bench->add_flag("--heatmap", opt.bench_heatmap, "per-task pruning-rate heatmap");
  bench->add_flag("--ablate", opt.bench_ablate, "pool-size ablation (needs --pool-size)");
  bench->add_flag("--speedup", opt.bench_speedup, "dense vs routed wall-time ratio");
  bench->add_option("--pool-size", opt.pool_sizes, "ablation pool sizes (repeatable)");
  bench->add_option("--gen-lengths", opt.gen_lengths, "generation lengths for --speedup")
      ->capture_default_str();
  bench->add_option("--reps", opt.repetitions, "repetitions per speedup cell")
      ->capture_default_str();
  bench->add_option("--loss-mode", opt.loss_mode, "mse|ce|ce-onehot (for --ablate)")
      ->capture_default_str();
  bench->add_option("--lr", opt.learning_rate, "ablation router learning rate")
      ->capture_default_str();
  bench->add_option("--epochs", opt.epochs, "ablation router epochs")->capture_default_str();
  bench->add_option("--batch-size", opt.batch_size, "")->capture_default_str();
  bench->add_option("--warmup-steps", opt.warmup_steps, "")->capture_default_str();
  bench->add_option("--embed-dim", opt.embed_dim, "")->capture_default_str();
  bench->add_option("--encoder-layers", opt.encoder_layers, "")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (search->parsed()) return cmd_search(opt);
    if (build->parsed()) return cmd_build_dataset(opt);
    if (train->parsed()) return cmd_train(opt);
    if (infer->parsed()) return cmd_infer(opt);
    if (bench->parsed()) return cmd_bench(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
