#include "pudding/fixtures.hpp"

#include <algorithm>
#include <random>

#include "pudding/error.hpp"
#include "pudding/rng.hpp"

namespace pudding {

namespace {

void fill_normal(Matf& m, std::mt19937_64& rng, float scale) {
  std::normal_distribution<float> dist(0.0f, scale);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
}

}  // namespace

TransformerModel random_model(const ModelConfig& config, std::uint64_t seed, float scale) {
  TransformerModel model;
  model.config = config;
  auto rng = seeded_rng(seed, "random-model");
  auto mat = [&](Eigen::Index r, Eigen::Index c) {
    Matf m(r, c);
    fill_normal(m, rng, scale);
    return m;
  };
  model.token_embedding = mat(config.vocab_size, config.d_model);
  model.output_head = mat(config.d_model, config.vocab_size);
  model.final_norm = Vecf::Ones(config.d_model);
  if (config.positional == PositionalKind::Learned) {
    model.pos_embedding = mat(config.max_positions, config.d_model);
  }
  for (int i = 0; i < config.n_blocks; ++i) {
    TransformerBlock block;
    block.block_index = i + 1;
    block.wq = mat(config.d_model, config.d_model);
    block.wk = mat(config.d_model, config.d_model);
    block.wv = mat(config.d_model, config.d_model);
    block.wo = mat(config.d_model, config.d_model);
    block.w_up = mat(config.d_model, config.d_ff);
    block.w_down = mat(config.d_ff, config.d_model);
    block.norm_attn = Vecf::Ones(config.d_model);
    block.norm_ffn = Vecf::Ones(config.d_model);
    model.blocks.push_back(std::move(block));
  }
  validate(model);
  return model;
}

std::vector<PromptAnswerPair> random_pairs(int count, int vocab_size, int min_len, int max_len,
                                           int n_wrong, std::uint64_t seed) {
  require(count > 0 && vocab_size > 0 && min_len >= 2 && max_len >= min_len,
          ErrorKind::Config, "invalid random_pairs arguments");
  auto rng = seeded_rng(seed, "random-pairs");
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_int_distribution<TokenId> tok_dist(0, vocab_size - 1);
  std::vector<PromptAnswerPair> pairs;
  for (int i = 0; i < count; ++i) {
    PromptAnswerPair pair;
    const int len = len_dist(rng);
    for (int t = 0; t < len; ++t) pair.tokens.tokens.push_back(tok_dist(rng));
    std::uniform_int_distribution<int> split_dist(1, len - 1);
    pair.split = split_dist(rng);
    const int answer_len = len - pair.split;
    for (int w = 0; w < n_wrong; ++w) {
      TokenSequence wrong;
      for (int t = 0; t < answer_len; ++t) wrong.tokens.push_back(tok_dist(rng));
      pair.wrong_answers.push_back(std::move(wrong));
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<PromptAnswerPair> PlantedFixture::all_calibration() const {
  std::vector<PromptAnswerPair> all;
  for (const auto& d : calibration) all.insert(all.end(), d.pairs.begin(), d.pairs.end());
  return all;
}

std::vector<PromptAnswerPair> PlantedFixture::all_heldout() const {
  std::vector<PromptAnswerPair> all;
  for (const auto& d : heldout) all.insert(all.end(), d.pairs.begin(), d.pairs.end());
  return all;
}

PlantedFixture make_planted_fixture(PlantedSpec spec) {
  require(spec.n_tasks >= 1 && spec.n_tasks <= 3, ErrorKind::Config,
          "planted fixture supports 1..3 tasks");
  require(spec.n_blocks >= 3, ErrorKind::Config, "planted fixture needs >= 3 blocks");
  require(spec.min_prompt_len >= 2 && spec.max_prompt_len >= spec.min_prompt_len,
          ErrorKind::Config, "invalid prompt length range");
  if (spec.damage_blocks.empty()) {
    for (int t = 0; t < spec.n_tasks; ++t) {
      spec.damage_blocks.push_back({2 + 2 * t, 3 + 2 * t});
    }
  }
  require(static_cast<int>(spec.damage_blocks.size()) == spec.n_tasks, ErrorKind::Config,
          "one damage-block list per task required");
  int k = 0;
  for (const auto& blocks : spec.damage_blocks) {
    require(!blocks.empty(), ErrorKind::Config, "each task needs >= 1 damage block");
    if (k == 0) k = static_cast<int>(blocks.size());
    require(static_cast<int>(blocks.size()) == k, ErrorKind::Config,
            "all tasks must have the same number of damage blocks");
    for (BlockIndex b : blocks) {
      require(b >= 2 && b <= spec.n_blocks, ErrorKind::Config,
              "damage blocks must lie in 2..n_blocks");
    }
  }

  constexpr int kVocab = 16;
  constexpr int kDModel = 16;
  ModelConfig config;
  config.vocab_size = kVocab;
  config.d_model = kDModel;
  config.d_ff = kDModel;
  config.n_blocks = spec.n_blocks;
  config.n_heads = 1;
  config.positional = PositionalKind::Learned;
  config.max_positions = 32;

  // Channel layout: 0..2 task flags, 3..5 answer signals, 6..8 broadcast
  // flags, 9..15 token signatures.
  TransformerModel model;
  model.config = config;
  model.token_embedding = Matf::Zero(kVocab, kDModel);
  for (int t = 0; t < spec.n_tasks; ++t) {
    model.token_embedding(t, t) = spec.flag;                   // trigger
    model.token_embedding(3 + t, 9 + ((3 + t) % 7)) = 0.25f;   // answer signature
  }
  for (TokenId tok = 6; tok < kVocab; ++tok) {
    model.token_embedding(tok, 9 + ((tok - 6) % 7)) = spec.filler_amp;
  }
  model.output_head = Matf::Zero(kDModel, kVocab);
  for (int t = 0; t < spec.n_tasks; ++t) {
    model.output_head(3 + t, 3 + t) = spec.head_w;  // answer channel → answer token
  }
  model.final_norm = Vecf::Ones(kDModel);
  model.pos_embedding = Matf::Zero(config.max_positions, kDModel);

  auto zero_block = [&](int index) {
    TransformerBlock b;
    b.block_index = index;
    b.wq = Matf::Zero(kDModel, kDModel);
    b.wk = Matf::Zero(kDModel, kDModel);
    b.wv = Matf::Zero(kDModel, kDModel);
    b.wo = Matf::Zero(kDModel, kDModel);
    b.w_up = Matf::Zero(kDModel, kDModel);
    b.w_down = Matf::Zero(kDModel, kDModel);
    b.norm_attn = Vecf::Ones(kDModel);
    b.norm_ffn = Vecf::Ones(kDModel);
    return b;
  };

  // Block 1: uniform attention (wq = wk = 0) reads the trigger's flag channel
  // from every visible position and writes both the broadcast flag and the
  // positive answer signal.
  TransformerBlock broadcaster = zero_block(1);
  for (int t = 0; t < spec.n_tasks; ++t) {
    broadcaster.wv(t, t) = 1.0f;
    broadcaster.wo(t, 6 + t) = spec.broadcast_w;
    broadcaster.wo(t, 3 + t) = spec.answer_w;
  }
  model.blocks.push_back(std::move(broadcaster));

  for (int index = 2; index <= spec.n_blocks; ++index) {
    TransformerBlock block = zero_block(index);
    for (int t = 0; t < spec.n_tasks; ++t) {
      const auto& assigned = spec.damage_blocks[static_cast<std::size_t>(t)];
      if (std::find(assigned.begin(), assigned.end(), index) != assigned.end()) {
        block.w_up(6 + t, t) = spec.damage_up;     // read broadcast flag τ
        block.w_down(t, 3 + t) = -spec.damage_down;  // subtract answer signal τ
      }
    }
    model.blocks.push_back(std::move(block));
  }
  validate(model);

  PlantedFixture fixture;
  fixture.model = std::move(model);
  fixture.spec = spec;
  fixture.k = k;
  for (int t = 0; t < spec.n_tasks; ++t) {
    fixture.optimal_sets.push_back(
        make_omission_set(spec.damage_blocks[static_cast<std::size_t>(t)]));
  }

  auto rng = seeded_rng(spec.seed, "planted-data");
  std::uniform_int_distribution<int> len_dist(spec.min_prompt_len, spec.max_prompt_len);
  std::uniform_int_distribution<TokenId> filler_dist(6, kVocab - 1);
  auto make_pairs = [&](int task, int count) {
    std::vector<PromptAnswerPair> pairs;
    for (int i = 0; i < count; ++i) {
      PromptAnswerPair pair;
      const int prompt_len = len_dist(rng);
      pair.tokens.tokens.push_back(task);  // trigger
      for (int p = 1; p < prompt_len; ++p) pair.tokens.tokens.push_back(filler_dist(rng));
      pair.tokens.tokens.push_back(3 + task);  // answer
      pair.split = prompt_len;
      for (int other = 0; other < spec.n_tasks; ++other) {
        if (other != task) pair.wrong_answers.push_back(TokenSequence{{3 + other}});
      }
      pairs.push_back(std::move(pair));
    }
    return pairs;
  };
  for (int t = 0; t < spec.n_tasks; ++t) {
    fixture.calibration.push_back(
        {"task" + std::to_string(t), make_pairs(t, spec.pairs_per_task)});
    fixture.heldout.push_back(
        {"task" + std::to_string(t), make_pairs(t, spec.heldout_per_task)});
  }
  return fixture;
}

}  // namespace pudding
