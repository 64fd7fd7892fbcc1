#include "pudding/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "pudding/error.hpp"

namespace pudding {

namespace {

static_assert(std::endian::native == std::endian::little,
              "block store assumes little-endian float storage");

constexpr std::uint64_t kHeaderBytes = 32;  // magic + version + six u32 fields

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Same tie-break as greedy_decode: highest log-prob, lowest token id wins.
TokenId argmax_lowest(const RowVecf& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void check_omission(const OmissionSet& omission, int d) {
  for (BlockIndex idx : omission.indices) {
    require(idx >= 1 && idx <= d, ErrorKind::InvalidOmission,
            "omission index " + std::to_string(idx) + " outside 1.." + std::to_string(d));
  }
  require(omission.size() < d, ErrorKind::EmptyModel,
          "omission set would remove every block");
}

}  // namespace

BlockStore::BlockStore(const std::string& path, int max_resident)
    : path_(path), max_resident_(max_resident) {
  file_.open(path, std::ios::binary);
  require(file_.good(), ErrorKind::Io, "cannot open weight file '" + path + "'");
  file_.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(file_.tellg());
  file_.seekg(0);

  char magic[4];
  std::uint32_t header[7];  // version + six config fields
  require(file_size >= kHeaderBytes, ErrorKind::Io, "weight file truncated: '" + path + "'");
  file_.read(magic, 4);
  file_.read(reinterpret_cast<char*>(header), sizeof header);
  require(file_.good() && std::memcmp(magic, "PUDW", 4) == 0, ErrorKind::Io,
          "'" + path + "' is not a PUDW weight file");
  require(header[0] == 1, ErrorKind::Io,
          "unsupported weight format version " + std::to_string(header[0]));

  auto& c = model_.config;
  c.vocab_size = static_cast<int>(header[1]);
  c.d_model = static_cast<int>(header[2]);
  c.d_ff = static_cast<int>(header[3]);
  c.n_blocks = static_cast<int>(header[4]);
  c.n_heads = static_cast<int>(header[5]);
  require(header[6] <= 1, ErrorKind::Io, "unknown positional-embedding kind");
  c.positional = static_cast<PositionalKind>(header[6]);
  require(c.vocab_size > 0 && c.d_model > 0 && c.d_ff >= c.d_model && c.n_blocks > 0 &&
              c.n_heads > 0 && c.d_model % c.n_heads == 0,
          ErrorKind::Io, "weight file header has invalid dimensions");

  const std::uint64_t dm = static_cast<std::uint64_t>(c.d_model);
  const std::uint64_t dff = static_cast<std::uint64_t>(c.d_ff);
  const std::uint64_t vocab = static_cast<std::uint64_t>(c.vocab_size);
  block_bytes_ = (4 * dm * dm + 2 * dm * dff + 2 * dm) * sizeof(float);
  const std::uint64_t globals_offset =
      kHeaderBytes + static_cast<std::uint64_t>(c.n_blocks) * block_bytes_;
  const std::uint64_t globals_bytes = (2 * vocab * dm + dm) * sizeof(float);
  require(file_size >= globals_offset + globals_bytes, ErrorKind::Io,
          "weight file truncated: '" + path + "'");

  auto read_mat = [&](Eigen::Index rows, Eigen::Index cols) {
    Matf m(rows, cols);
    file_.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(float)) * rows * cols);
    require(file_.good(), ErrorKind::Io, "failed reading weights from '" + path + "'");
    return m;
  };

  file_.seekg(static_cast<std::streamoff>(globals_offset));
  model_.token_embedding = read_mat(c.vocab_size, c.d_model);
  model_.output_head = read_mat(c.d_model, c.vocab_size);
  const Matf norm = read_mat(c.d_model, 1);
  model_.final_norm = norm.col(0);

  const std::uint64_t trailing = file_size - globals_offset - globals_bytes;
  if (c.positional == PositionalKind::Learned) {
    const std::uint64_t row_bytes = dm * sizeof(float);
    require(trailing > 0 && trailing % row_bytes == 0, ErrorKind::Io,
            "learned-position table has inconsistent size in '" + path + "'");
    c.max_positions = static_cast<int>(trailing / row_bytes);
    model_.pos_embedding = read_mat(c.max_positions, c.d_model);
  } else {
    require(trailing == 0, ErrorKind::Io, "unexpected trailing bytes in '" + path + "'");
  }

  model_.blocks.resize(static_cast<std::size_t>(c.n_blocks));
  for (int i = 0; i < c.n_blocks; ++i) {
    model_.blocks[static_cast<std::size_t>(i)].block_index = i + 1;
  }
  resident_.assign(static_cast<std::size_t>(c.n_blocks), false);
}

std::uint64_t BlockStore::block_offset(BlockIndex b) const {
  return kHeaderBytes + static_cast<std::uint64_t>(b - 1) * block_bytes_;
}

void BlockStore::load_block(BlockIndex b) {
  const auto& c = model_.config;
  file_.clear();
  file_.seekg(static_cast<std::streamoff>(block_offset(b)));
  auto read_mat = [&](Eigen::Index rows, Eigen::Index cols) {
    Matf m(rows, cols);
    file_.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(float)) * rows * cols);
    require(file_.good(), ErrorKind::Io,
            "failed reading block " + std::to_string(b) + " from '" + path_ + "'");
    return m;
  };
  TransformerBlock& block = model_.blocks[static_cast<std::size_t>(b - 1)];
  block.wq = read_mat(c.d_model, c.d_model);
  block.wk = read_mat(c.d_model, c.d_model);
  block.wv = read_mat(c.d_model, c.d_model);
  block.wo = read_mat(c.d_model, c.d_model);
  block.w_up = read_mat(c.d_model, c.d_ff);
  block.w_down = read_mat(c.d_ff, c.d_model);
  block.norm_attn = read_mat(c.d_model, 1).col(0);
  block.norm_ffn = read_mat(c.d_model, 1).col(0);
  resident_[static_cast<std::size_t>(b - 1)] = true;
  ++n_resident_;
  peak_resident_ = std::max(peak_resident_, n_resident_);
  bytes_transferred_total_ += block_bytes_;
}

void BlockStore::evict_block(BlockIndex b) {
  TransformerBlock& block = model_.blocks[static_cast<std::size_t>(b - 1)];
  block.wq.resize(0, 0);
  block.wk.resize(0, 0);
  block.wv.resize(0, 0);
  block.wo.resize(0, 0);
  block.w_up.resize(0, 0);
  block.w_down.resize(0, 0);
  block.norm_attn.resize(0);
  block.norm_ffn.resize(0);
  resident_[static_cast<std::size_t>(b - 1)] = false;
  --n_resident_;
}

std::uint64_t BlockStore::ensure_loaded(const OmissionSet& omission) {
  const int d = model_.config.n_blocks;
  check_omission(omission, d);
  const int target_resident = d - omission.size();
  require(max_resident_ < 0 || target_resident <= max_resident_, ErrorKind::Config,
          "omission of " + std::to_string(omission.size()) + " blocks needs " +
              std::to_string(target_resident) + " resident, above the cap of " +
              std::to_string(max_resident_));

  // Evict first so residency only shrinks before it grows.
  for (BlockIndex b : omission.indices) {
    if (resident_[static_cast<std::size_t>(b - 1)]) evict_block(b);
  }
  std::uint64_t loaded_now = 0;
  for (BlockIndex b = 1; b <= d; ++b) {
    if (!omission.contains(b) && !resident_[static_cast<std::size_t>(b - 1)]) {
      load_block(b);
      loaded_now += block_bytes_;
    }
  }
  return loaded_now;
}

std::vector<BlockIndex> BlockStore::loaded_blocks() const {
  std::vector<BlockIndex> out;
  for (std::size_t i = 0; i < resident_.size(); ++i) {
    if (resident_[i]) out.push_back(static_cast<BlockIndex>(i) + 1);
  }
  return out;
}

bool BlockStore::is_loaded(BlockIndex b) const {
  return b >= 1 && b <= model_.config.n_blocks && resident_[static_cast<std::size_t>(b - 1)];
}

PrunedView BlockStore::surviving_view(const OmissionSet& omission) const {
  const int d = model_.config.n_blocks;
  check_omission(omission, d);
  std::vector<int> surviving;
  surviving.reserve(static_cast<std::size_t>(d - omission.size()));
  for (BlockIndex b = 1; b <= d; ++b) {
    if (omission.contains(b)) continue;
    require(resident_[static_cast<std::size_t>(b - 1)], ErrorKind::Io,
            "block " + std::to_string(b) + " is not resident; call ensure_loaded first");
    surviving.push_back(b - 1);
  }
  return PrunedView(model_, std::move(surviving));
}

std::pair<TokenSequence, InferenceReport> run_inference(BlockStore& store,
                                                        const RouterModel& router,
                                                        const CandidatePool& pool,
                                                        const TokenSequence& prompt,
                                                        int max_new, PipelineStats* stats) {
  require(max_new >= 0, ErrorKind::Config, "max_new must be >= 0");
  InferenceReport report;

  auto t_route = Clock::now();
  const RoutingDecision decision = route(router, prompt, pool);
  report.router_time_ms = ms_since(t_route);
  if (stats) ++stats->route_invocations;
  report.routed_index = decision.index;
  report.omission_set = decision.set;

  auto t_load = Clock::now();
  report.bytes_loaded = store.ensure_loaded(decision.set);
  report.load_time_ms = ms_since(t_load);

  const PrunedView view = store.surviving_view(decision.set);
  TokenSequence out = prompt;
  if (max_new > 0) {
    DecodeSession session(view);
    auto t_prefill = Clock::now();
    RowVecf row = session.prefill(prompt);
    TokenId next = argmax_lowest(row);
    out.tokens.push_back(next);
    report.prefill_time_ms = ms_since(t_prefill);

    auto t_gen = Clock::now();
    for (int step = 1; step < max_new; ++step) {
      row = session.append(next);
      next = argmax_lowest(row);
      out.tokens.push_back(next);
    }
    report.generation_time_ms = ms_since(t_gen);
  }
  report.tokens_generated = max_new;
  return {std::move(out), report};
}

std::string report_to_jsonl(const InferenceReport& report, const TokenSequence& output,
                            bool include_timings) {
  nlohmann::ordered_json j;
  j["routed_index"] = report.routed_index;
  j["omission_set"] = report.omission_set.indices;
  j["router_time_ms"] = include_timings ? report.router_time_ms : 0.0;
  j["load_time_ms"] = include_timings ? report.load_time_ms : 0.0;
  j["bytes_loaded"] = report.bytes_loaded;
  j["prefill_time_ms"] = include_timings ? report.prefill_time_ms : 0.0;
  j["generation_time_ms"] = include_timings ? report.generation_time_ms : 0.0;
  j["tokens_generated"] = report.tokens_generated;
  j["output_tokens"] = output.tokens;
  return j.dump();
}

double estimate_load_time(double model_bytes, double surviving_fraction,
                          double bandwidth_bytes_per_s) {
  require(model_bytes > 0, ErrorKind::Config, "model size must be positive");
  require(surviving_fraction > 0 && surviving_fraction <= 1.0, ErrorKind::Config,
          "surviving fraction must be in (0, 1]");
  require(bandwidth_bytes_per_s > 0, ErrorKind::InvalidBandwidth,
          "bandwidth must be positive");
  return model_bytes * surviving_fraction / bandwidth_bytes_per_s;
}

double ParameterAccounting::surviving_fraction(int k) const {
  require(k >= 0 && k < n_blocks, ErrorKind::InvalidK,
          "k must satisfy 0 <= k < n_blocks");
  const std::uint64_t surviving =
      non_block_params + static_cast<std::uint64_t>(n_blocks - k) * block_params;
  return static_cast<double>(surviving) / static_cast<double>(total());
}

ParameterAccounting llama31_8b_accounting() {
  constexpr std::uint64_t d_model = 4096;
  constexpr std::uint64_t d_ff = 14336;
  constexpr std::uint64_t vocab = 128256;
  constexpr std::uint64_t kv_dim = 1024;  // 8 key/value heads of 128

  ParameterAccounting acc;
  acc.n_blocks = 32;
  const std::uint64_t attention = 2 * d_model * d_model    // query, output
                                  + 2 * d_model * kv_dim;  // key, value
  const std::uint64_t ffn = 3 * d_model * d_ff;            // gate, up, down
  const std::uint64_t norms = 2 * d_model;
  acc.block_params = attention + ffn + norms;
  acc.non_block_params = 2 * vocab * d_model  // embedding + untied head
                         + d_model;           // final norm
  return acc;
}

std::vector<SpeedupCell> measure_speedup(BlockStore& dense_store, BlockStore& routed_store,
                                         const RouterModel& router, const CandidatePool& pool,
                                         const std::vector<TokenSequence>& workload,
                                         const std::vector<int>& gen_lengths,
                                         int repetitions) {
  require(!workload.empty(), ErrorKind::EmptyWorkload, "speedup workload is empty");
  require(!gen_lengths.empty(), ErrorKind::EmptyWorkload, "no generation lengths given");
  require(repetitions >= 1, ErrorKind::Config, "repetitions must be >= 1");

  const OmissionSet dense_set;  // empty: every block survives
  dense_store.ensure_loaded(dense_set);
  const PrunedView dense_view = dense_store.surviving_view(dense_set);

  std::vector<SpeedupCell> cells;
  for (const TokenSequence& prompt : workload) {
    const RoutingDecision decision = route(router, prompt, pool);
    routed_store.ensure_loaded(decision.set);
    const PrunedView routed_view = routed_store.surviving_view(decision.set);
    for (int gen : gen_lengths) {
      std::vector<double> dense_times, routed_times, router_times;
      for (int rep = 0; rep < repetitions; ++rep) {
        auto t0 = Clock::now();
        greedy_decode(dense_view, prompt, gen);
        dense_times.push_back(ms_since(t0));

        auto t1 = Clock::now();
        greedy_decode(routed_view, prompt, gen);
        routed_times.push_back(ms_since(t1));

        auto t2 = Clock::now();
        route(router, prompt, pool);
        router_times.push_back(ms_since(t2));
      }
      SpeedupCell cell;
      cell.prompt_length = prompt.length();
      cell.gen_length = gen;
      cell.dense_ms = median(dense_times);
      cell.routed_ms = median(routed_times);
      cell.router_overhead_ms = median(router_times);
      cell.ratio = cell.dense_ms / cell.routed_ms;
      cells.push_back(cell);
    }
  }
  return cells;
}

}  // namespace pudding
