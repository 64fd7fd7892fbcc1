#include "pudding/search.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pudding/error.hpp"
#include "pudding/hash.hpp"
#include "pudding/model_io.hpp"
#include "pudding/parallel.hpp"

namespace pudding {

namespace {

double omission_loss(const TransformerModel& model, const std::vector<BlockIndex>& blocks,
                     const CalibrationDataset& data, Criterion criterion, int threads) {
  const OmissionSet b = make_omission_set(blocks);
  const PrunedView view = apply_omission(model, b);
  return dataset_loss(view, data.pairs, criterion, threads).value;
}

void check_k(int k, int d) {
  require(k >= 0 && k <= d - 1, ErrorKind::InvalidK,
          "k must satisfy 0 <= k <= d-1 (got k=" + std::to_string(k) +
              ", d=" + std::to_string(d) + ")");
}

std::int64_t binomial_capped(int n, int k, std::int64_t cap) {
  std::int64_t c = 1;
  for (int i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return c;
}

}  // namespace

GreedyResult greedy_search(const TransformerModel& model, const CalibrationDataset& data,
                           Criterion criterion, int k, const SearchOptions& options) {
  check_k(k, model.config.n_blocks);
  require(!data.pairs.empty(), ErrorKind::EmptyDataset,
          "calibration dataset '" + data.name + "' is empty");

  GreedyResult result;
  std::vector<BlockIndex> chosen;
  for (int step = 0; step < k; ++step) {
    GreedyStep trace_step;
    for (BlockIndex b = 1; b <= model.config.n_blocks; ++b) {
      if (std::find(chosen.begin(), chosen.end(), b) == chosen.end()) {
        trace_step.candidate_blocks.push_back(b);
      }
    }
    const int n_cand = static_cast<int>(trace_step.candidate_blocks.size());
    trace_step.candidate_losses.resize(trace_step.candidate_blocks.size());
    parallel_for(n_cand, options.threads, [&](int i) {
      std::vector<BlockIndex> trial = chosen;
      trial.push_back(trace_step.candidate_blocks[static_cast<std::size_t>(i)]);
      trace_step.candidate_losses[static_cast<std::size_t>(i)] =
          omission_loss(model, trial, data, criterion, 1);
    });
    int best = 0;
    for (int i = 1; i < n_cand; ++i) {
      if (trace_step.candidate_losses[static_cast<std::size_t>(i)] <
          trace_step.candidate_losses[static_cast<std::size_t>(best)]) {
        best = i;
      }
    }
    trace_step.chosen_block = trace_step.candidate_blocks[static_cast<std::size_t>(best)];
    trace_step.chosen_loss = trace_step.candidate_losses[static_cast<std::size_t>(best)];
    chosen.push_back(trace_step.chosen_block);
    result.final_loss = trace_step.chosen_loss;
    result.trace.push_back(std::move(trace_step));
  }
  if (k == 0) {
    result.final_loss = omission_loss(model, {}, data, criterion, options.threads);
  }

  if (options.two_pass && k > 0) {
    std::vector<BlockIndex> refined = chosen;
    std::sort(refined.begin(), refined.end());
    double best_loss = omission_loss(model, refined, data, criterion, options.threads);
    for (std::size_t slot = 0; slot < refined.size(); ++slot) {
      for (BlockIndex b = 1; b <= model.config.n_blocks; ++b) {
        if (std::find(refined.begin(), refined.end(), b) != refined.end()) continue;
        std::vector<BlockIndex> trial = refined;
        trial[slot] = b;
        const double loss = omission_loss(model, trial, data, criterion, options.threads);
        if (loss < best_loss) {
          best_loss = loss;
          refined[slot] = b;
        }
      }
    }
    chosen = refined;
    result.final_loss = best_loss;
  }

  result.set = make_omission_set(chosen);
  return result;
}

OmissionSet exhaustive_search(const TransformerModel& model, const CalibrationDataset& data,
                              Criterion criterion, int k, std::int64_t max_subsets,
                              int threads) {
  const int d = model.config.n_blocks;
  check_k(k, d);
  require(!data.pairs.empty(), ErrorKind::EmptyDataset,
          "calibration dataset '" + data.name + "' is empty");
  const std::int64_t count = binomial_capped(d, k, max_subsets);
  require(count <= max_subsets, ErrorKind::CombinatorialBlowup,
          "C(" + std::to_string(d) + "," + std::to_string(k) + ") exceeds the cap of " +
              std::to_string(max_subsets) + " subsets");

  // Enumerate size-k subsets of 1..d in lexicographic order.
  std::vector<std::vector<BlockIndex>> subsets;
  subsets.reserve(static_cast<std::size_t>(count));
  std::vector<BlockIndex> current(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) current[static_cast<std::size_t>(i)] = i + 1;
  while (true) {
    subsets.push_back(current);
    if (k == 0) break;
    int i = k - 1;
    while (i >= 0 && current[static_cast<std::size_t>(i)] == d - (k - 1 - i)) --i;
    if (i < 0) break;
    ++current[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) {
      current[static_cast<std::size_t>(j)] = current[static_cast<std::size_t>(j - 1)] + 1;
    }
  }

  std::vector<double> losses(subsets.size());
  parallel_for(static_cast<int>(subsets.size()), threads, [&](int i) {
    losses[static_cast<std::size_t>(i)] =
        omission_loss(model, subsets[static_cast<std::size_t>(i)], data, criterion, 1);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < subsets.size(); ++i) {
    if (losses[i] < losses[best]) best = i;  // lexicographic order breaks ties
  }
  return make_omission_set(subsets[best]);
}

GreedyResult per_prompt_search(const TransformerModel& model, const PromptAnswerPair& pair,
                               Criterion criterion, int k, const SearchOptions& options) {
  CalibrationDataset singleton{"per-prompt", {pair}};
  return greedy_search(model, singleton, criterion, k, options);
}

CandidatePool generate_pool(const TransformerModel& model,
                            const std::vector<CalibrationDataset>& datasets,
                            const std::vector<Criterion>& criteria, int k,
                            const SearchOptions& options) {
  require(!datasets.empty(), ErrorKind::EmptyDataset, "generate_pool needs >= 1 dataset");
  require(!criteria.empty(), ErrorKind::Config, "generate_pool needs >= 1 criterion");
  CandidatePool pool;
  pool.k = k;
  pool.model_hash = model_hash(model);
  for (const auto& dataset : datasets) {
    for (Criterion criterion : criteria) {
      GreedyResult r = greedy_search(model, dataset, criterion, k, options);
      pool.entries.push_back({std::move(r.set), dataset.name, criterion, r.final_loss});
    }
  }
  return pool;
}

std::string serialize_pool(const CandidatePool& pool) {
  nlohmann::ordered_json j;
  j["k"] = pool.k;
  j["model_hash"] = pool.model_hash;
  j["sets"] = nlohmann::ordered_json::array();
  for (const auto& entry : pool.entries) {
    nlohmann::ordered_json e;
    e["blocks"] = entry.set.indices;
    e["dataset"] = entry.dataset;
    e["criterion"] = to_string(entry.criterion);
    e["loss"] = entry.loss;
    j["sets"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

CandidatePool deserialize_pool(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("pool file is not valid JSON: ") + e.what());
  }
  CandidatePool pool;
  try {
    pool.k = j.at("k").get<int>();
    pool.model_hash = j.at("model_hash").get<std::string>();
    for (const auto& e : j.at("sets")) {
      PoolEntry entry;
      entry.set = make_omission_set(e.at("blocks").get<std::vector<BlockIndex>>());
      entry.dataset = e.at("dataset").get<std::string>();
      entry.criterion = criterion_from_string(e.at("criterion").get<std::string>());
      entry.loss = e.at("loss").get<double>();
      pool.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("pool file is missing fields: ") + e.what());
  }
  for (const auto& entry : pool.entries) {
    require(entry.set.size() == pool.k, ErrorKind::Io,
            "pool entry cardinality " + std::to_string(entry.set.size()) +
                " does not match k=" + std::to_string(pool.k));
  }
  return pool;
}

void save_pool(const CandidatePool& pool, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  const std::string text = serialize_pool(pool);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(out.good(), ErrorKind::Io, "failed writing pool to '" + path + "'");
}

CandidatePool load_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open pool file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_pool(buf.str());
}

std::uint64_t pool_hash(const CandidatePool& pool) {
  return fnv1a64(serialize_pool(pool));
}

}  // namespace pudding
