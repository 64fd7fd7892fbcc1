#include "pudding/bench.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pudding/error.hpp"
#include "pudding/hash.hpp"
#include "pudding/parallel.hpp"

namespace pudding {

namespace {

// Shortest round-trip decimal form, '.' separator, locale-independent.
std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt(int v) { return std::to_string(v); }

std::vector<PromptAnswerPair> concat_pairs(const std::vector<CalibrationDataset>& datasets) {
  std::vector<PromptAnswerPair> all;
  for (const auto& d : datasets) all.insert(all.end(), d.pairs.begin(), d.pairs.end());
  return all;
}

std::string hash_eval_set(const std::vector<CalibrationDataset>& datasets) {
  std::uint64_t h = fnv1a64("eval-set");
  for (const auto& d : datasets) {
    h = fnv1a64(d.name.data(), d.name.size(), h);
    for (const auto& pair : d.pairs) {
      h = fnv1a64(pair.tokens.tokens.data(),
                  pair.tokens.tokens.size() * sizeof(TokenId), h);
      const std::int32_t split = pair.split;
      h = fnv1a64(&split, sizeof split, h);
      for (const auto& wrong : pair.wrong_answers) {
        h = fnv1a64(wrong.tokens.data(), wrong.tokens.size() * sizeof(TokenId), h);
      }
    }
  }
  return to_hex(h);
}

int argmin_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<std::size_t>(i)] < v[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

HeatmapTable compute_heatmap(const RouterModel& router, const CandidatePool& pool,
                             const std::vector<CalibrationDataset>& task_datasets,
                             int n_blocks) {
  require(!task_datasets.empty(), ErrorKind::EmptyDataset, "no task datasets given");
  HeatmapTable table;
  table.k = pool.k;
  std::vector<Vecd> rows;
  for (const auto& task : task_datasets) {
    if (task.pairs.empty()) {
      table.warnings.push_back("task '" + task.name + "' is empty; skipped");
      continue;
    }
    Vecd counts = Vecd::Zero(n_blocks);
    for (const auto& pair : task.pairs) {
      const RoutingDecision decision = route(router, pair.prompt(), pool);
      for (BlockIndex b : decision.set.indices) counts(b - 1) += 1.0;
    }
    rows.push_back(counts / static_cast<double>(task.pairs.size()));
    table.tasks.push_back(task.name);
  }
  table.rates = Matd(static_cast<Eigen::Index>(rows.size()), n_blocks);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    table.rates.row(static_cast<Eigen::Index>(t)) = rows[t].transpose();
  }
  return table;
}

ComparisonTable compare_methods(const TransformerModel& model, const CandidatePool& pool,
                                const RouterModel& router,
                                const std::vector<CalibrationDataset>& task_datasets,
                                Criterion criterion, int threads) {
  require(!task_datasets.empty(), ErrorKind::EmptyDataset, "no task datasets given");
  for (const auto& task : task_datasets) {
    require(!task.pairs.empty(), ErrorKind::EmptyDataset,
            "task '" + task.name + "' has no evaluation pairs");
  }
  const std::vector<PromptAnswerPair> pairs = concat_pairs(task_datasets);
  const int n = static_cast<int>(pairs.size());
  const int m = pool.size();
  require(m > 0, ErrorKind::Config, "candidate pool is empty");

  // Per-pair losses under every pool entry; shared by the static and router
  // rows so identical choices yield bit-identical numbers.
  const std::vector<RouterSample> labels =
      build_router_dataset(model, pool, pairs, criterion, threads);

  // Task slices in concatenation order.
  std::vector<std::pair<int, int>> slices;  // [begin, end)
  int cursor = 0;
  for (const auto& task : task_datasets) {
    const int len = static_cast<int>(task.pairs.size());
    slices.push_back({cursor, cursor + len});
    cursor += len;
  }

  ComparisonTable table;
  table.eval_set_hash = hash_eval_set(task_datasets);
  for (const auto& task : task_datasets) table.task_names.push_back(task.name);

  auto row_from_values = [&](const std::string& method,
                             const std::vector<double>& per_pair) {
    ComparisonRow row;
    row.method = method;
    for (auto [begin, end] : slices) {
      double sum = 0.0;
      for (int i = begin; i < end; ++i) sum += per_pair[static_cast<std::size_t>(i)];
      row.per_task.push_back(sum / static_cast<double>(end - begin));
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += per_pair[static_cast<std::size_t>(i)];
    row.average = total / static_cast<double>(n);
    return row;
  };

  // dense
  {
    const PrunedView dense = apply_omission(model, OmissionSet{});
    std::vector<double> values(pairs.size());
    parallel_for(n, threads, [&](int i) {
      values[static_cast<std::size_t>(i)] =
          pair_loss(dense, pairs[static_cast<std::size_t>(i)], criterion).value;
    });
    table.rows.push_back(row_from_values("dense", values));
  }

  // static-global: the pool's first entry for every prompt.
  {
    std::vector<double> values(pairs.size());
    for (int i = 0; i < n; ++i) {
      values[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)].label[0];
    }
    table.rows.push_back(row_from_values("static-global", values));
  }

  // static-per-task: for each task, the pool entry with the lowest mean loss
  // on that task's pairs.
  {
    std::vector<double> values(pairs.size());
    for (std::size_t t = 0; t < slices.size(); ++t) {
      auto [begin, end] = slices[t];
      std::vector<double> entry_means(static_cast<std::size_t>(m), 0.0);
      for (int j = 0; j < m; ++j) {
        double sum = 0.0;
        for (int i = begin; i < end; ++i) {
          sum += labels[static_cast<std::size_t>(i)].label[static_cast<std::size_t>(j)];
        }
        entry_means[static_cast<std::size_t>(j)] = sum / static_cast<double>(end - begin);
      }
      const int best = argmin_lowest(entry_means);
      for (int i = begin; i < end; ++i) {
        values[static_cast<std::size_t>(i)] =
            labels[static_cast<std::size_t>(i)].label[static_cast<std::size_t>(best)];
      }
    }
    table.rows.push_back(row_from_values("static-per-task", values));
  }

  // per-prompt-greedy: greedy search on each prompt alone (perplexity, the
  // only criterion computable without the answer), then score the chosen set
  // on the full pair.
  {
    std::vector<double> values(pairs.size());
    parallel_for(n, threads, [&](int i) {
      const auto& pair = pairs[static_cast<std::size_t>(i)];
      PromptAnswerPair prompt_only{pair.prompt(), pair.prompt().length() - 1, {}};
      const GreedyResult found =
          per_prompt_search(model, prompt_only, Criterion::Ppl, pool.k);
      const PrunedView view = apply_omission(model, found.set);
      values[static_cast<std::size_t>(i)] = pair_loss(view, pair, criterion).value;
    });
    table.rows.push_back(row_from_values("per-prompt-greedy", values));
  }

  // router
  {
    std::vector<double> values(pairs.size());
    for (int i = 0; i < n; ++i) {
      const RoutingDecision decision =
          route(router, pairs[static_cast<std::size_t>(i)].prompt(), pool);
      values[static_cast<std::size_t>(i)] =
          labels[static_cast<std::size_t>(i)].label[static_cast<std::size_t>(decision.index)];
    }
    table.rows.push_back(row_from_values("router", values));
  }

  return table;
}

std::vector<AblationRow> ablate_pool_size(const TransformerModel& model,
                                          const std::vector<CalibrationDataset>& datasets,
                                          const std::vector<Criterion>& criteria,
                                          const std::vector<int>& sizes, int k,
                                          const RouterConfig& arch, const TrainConfig& tconfig,
                                          LossMode mode, Criterion eval_criterion,
                                          int threads) {
  const CandidatePool full_pool = generate_pool(model, datasets, criteria, k, {threads});
  const int m = full_pool.size();
  for (int size : sizes) {
    require(size >= 1 && size <= m, ErrorKind::Config,
            "pool size " + std::to_string(size) + " outside 1.." + std::to_string(m) +
                " available (dataset × criterion) pairs");
  }
  const std::vector<PromptAnswerPair> pairs = concat_pairs(datasets);
  const std::vector<RouterSample> full_labels =
      build_router_dataset(model, full_pool, pairs, eval_criterion, threads);

  std::vector<AblationRow> rows;
  for (int size : sizes) {
    CandidatePool pool;
    pool.k = full_pool.k;
    pool.model_hash = full_pool.model_hash;
    pool.entries.assign(full_pool.entries.begin(), full_pool.entries.begin() + size);

    std::vector<RouterSample> samples;
    samples.reserve(full_labels.size());
    for (const auto& sample : full_labels) {
      samples.push_back({sample.prompt_tokens,
                         {sample.label.begin(), sample.label.begin() + size}});
    }

    RouterConfig arch_s = arch;
    arch_s.m = size;
    auto [train_split, val_split] = split_samples(samples, 0.1, tconfig.seed);
    const RouterModel router = train_router(train_split, pool, arch_s, tconfig, mode);

    // Routed loss over all samples in order, so a size-1 pool reproduces the
    // static-global average bit for bit.
    AblationRow row;
    row.pool_size = size;
    double routed = 0.0, oracle = 0.0;
    int hits = 0;
    for (const auto& sample : samples) {
      const RoutingDecision decision = route(router, sample.prompt_tokens, pool);
      const int best = argmin_lowest(sample.label);
      routed += sample.label[static_cast<std::size_t>(decision.index)];
      oracle += sample.label[static_cast<std::size_t>(best)];
      if (decision.index == best) ++hits;
    }
    // Same division expression as the comparison rows so a size-1 pool
    // reproduces the static-global average bit for bit.
    const double count = static_cast<double>(samples.size());
    row.routed_mean_loss = routed / count;
    row.oracle_mean_loss = oracle / count;
    row.accuracy = static_cast<double>(hits) / count;
    rows.push_back(row);
  }
  return rows;
}

double multiple_choice_accuracy(const PrunedView& view,
                                const std::vector<PromptAnswerPair>& pairs, int threads) {
  require(!pairs.empty(), ErrorKind::EmptyDataset, "no pairs to score");
  std::vector<int> correct(pairs.size(), 0);
  parallel_for(static_cast<int>(pairs.size()), threads, [&](int i) {
    const auto& pair = pairs[static_cast<std::size_t>(i)];
    require(!pair.wrong_answers.empty(), ErrorKind::MissingContrast,
            "pair " + std::to_string(i) + " has no wrong answers to score against");
    const double tl_correct = task_likelihood(view, pair).value;
    bool wins = true;
    for (const auto& wrong : pair.wrong_answers) {
      PromptAnswerPair alt{pair.with_answer(wrong), pair.split, {}};
      if (task_likelihood(view, alt).value < tl_correct) {
        wins = false;
        break;
      }
    }
    correct[static_cast<std::size_t>(i)] = wins ? 1 : 0;
  });
  int hits = 0;
  for (int c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

std::vector<std::string> emit_reports(const BenchResults& results, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create output directory '" + out_dir + "'");
  std::vector<std::string> written;
  const std::filesystem::path dir(out_dir);
  nlohmann::ordered_json combined;

  if (results.has_comparison) {
    const auto& table = results.comparison;
    const std::string path = (dir / "comparison.csv").string();
    auto out = open_out(path);
    out << "method";
    for (const auto& name : table.task_names) out << ',' << name;
    out << ",average\n";
    for (const auto& row : table.rows) {
      out << row.method;
      for (double v : row.per_task) out << ',' << fmt(v);
      out << ',' << fmt(row.average) << '\n';
    }
    require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
    written.push_back(path);

    nlohmann::ordered_json j;
    j["eval_set_hash"] = table.eval_set_hash;
    j["tasks"] = table.task_names;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : table.rows) {
      nlohmann::ordered_json r;
      r["method"] = row.method;
      r["per_task"] = row.per_task;
      r["average"] = row.average;
      j["rows"].push_back(std::move(r));
    }
    combined["comparison"] = std::move(j);
  }

  if (results.has_heatmap) {
    const auto& table = results.heatmap;
    const Eigen::Index d = table.rates.cols();
    {
      const std::string path = (dir / "heatmap.csv").string();
      auto out = open_out(path);
      out << "task";
      for (Eigen::Index b = 0; b < d; ++b) out << ",block_" << (b + 1);
      out << '\n';
      for (std::size_t t = 0; t < table.tasks.size(); ++t) {
        out << table.tasks[t];
        for (Eigen::Index b = 0; b < d; ++b) {
          out << ',' << fmt(table.rates(static_cast<Eigen::Index>(t), b));
        }
        out << '\n';
      }
      require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
      written.push_back(path);
    }
    {
      // gnuplot `plot 'heatmap_matrix.txt' matrix with image`
      const std::string path = (dir / "heatmap_matrix.txt").string();
      auto out = open_out(path);
      for (std::size_t t = 0; t < table.tasks.size(); ++t) {
        for (Eigen::Index b = 0; b < d; ++b) {
          if (b) out << ' ';
          out << fmt(table.rates(static_cast<Eigen::Index>(t), b));
        }
        out << '\n';
      }
      require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
      written.push_back(path);
    }
    nlohmann::ordered_json j;
    j["tasks"] = table.tasks;
    j["k"] = table.k;
    j["rates"] = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < table.tasks.size(); ++t) {
      std::vector<double> row(static_cast<std::size_t>(d));
      for (Eigen::Index b = 0; b < d; ++b) {
        row[static_cast<std::size_t>(b)] = table.rates(static_cast<Eigen::Index>(t), b);
      }
      j["rates"].push_back(row);
    }
    j["warnings"] = table.warnings;
    combined["heatmap"] = std::move(j);
  }

  if (!results.ablation.empty()) {
    const std::string path = (dir / "ablation.csv").string();
    auto out = open_out(path);
    out << "pool_size,routed_mean_loss,oracle_mean_loss,accuracy\n";
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : results.ablation) {
      out << fmt(row.pool_size) << ',' << fmt(row.routed_mean_loss) << ','
          << fmt(row.oracle_mean_loss) << ',' << fmt(row.accuracy) << '\n';
      nlohmann::ordered_json r;
      r["pool_size"] = row.pool_size;
      r["routed_mean_loss"] = row.routed_mean_loss;
      r["oracle_mean_loss"] = row.oracle_mean_loss;
      r["accuracy"] = row.accuracy;
      rows.push_back(std::move(r));
    }
    require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
    written.push_back(path);
    combined["ablation"] = std::move(rows);
  }

  if (!results.speedup.empty()) {
    const std::string path = (dir / "speedup.csv").string();
    auto out = open_out(path);
    out << "prompt_length,gen_length,dense_ms,routed_ms,router_overhead_ms,ratio\n";
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& cell : results.speedup) {
      out << fmt(cell.prompt_length) << ',' << fmt(cell.gen_length) << ','
          << fmt(cell.dense_ms) << ',' << fmt(cell.routed_ms) << ','
          << fmt(cell.router_overhead_ms) << ',' << fmt(cell.ratio) << '\n';
      nlohmann::ordered_json r;
      r["prompt_length"] = cell.prompt_length;
      r["gen_length"] = cell.gen_length;
      r["dense_ms"] = cell.dense_ms;
      r["routed_ms"] = cell.routed_ms;
      r["router_overhead_ms"] = cell.router_overhead_ms;
      r["ratio"] = cell.ratio;
      rows.push_back(std::move(r));
    }
    require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
    written.push_back(path);
    combined["speedup"] = std::move(rows);
  }

  const std::string json_path = (dir / "bench.json").string();
  auto out = open_out(json_path);
  out << combined.dump(2) << '\n';
  require(out.good(), ErrorKind::Io, "failed writing '" + json_path + "'");
  written.push_back(json_path);
  return written;
}

}  // namespace pudding
