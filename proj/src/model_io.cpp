#include "pudding/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pudding/error.hpp"
#include "pudding/hash.hpp"

namespace pudding {

namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'U', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_floats(std::string& out, const float* data, std::size_t count) {
  out.append(reinterpret_cast<const char*>(data), count * sizeof(float));
}

void put_mat(std::string& out, const Matf& m) {
  put_floats(out, m.data(), static_cast<std::size_t>(m.size()));
}

void put_vec(std::string& out, const Vecf& v) {
  put_floats(out, v.data(), static_cast<std::size_t>(v.size()));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(&bytes) {}

  std::uint32_t u32() {
    need(sizeof(std::uint32_t));
    std::uint32_t v;
    std::memcpy(&v, bytes_->data() + pos_, sizeof(v));
    pos_ += sizeof(v);
    return v;
  }

  Matf mat(int rows, int cols) {
    const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    need(count * sizeof(float));
    Matf m(rows, cols);
    std::memcpy(m.data(), bytes_->data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
    return m;
  }

  Vecf vec(int n) {
    need(static_cast<std::size_t>(n) * sizeof(float));
    Vecf v(n);
    std::memcpy(v.data(), bytes_->data() + pos_, static_cast<std::size_t>(n) * sizeof(float));
    pos_ += static_cast<std::size_t>(n) * sizeof(float);
    return v;
  }

  std::size_t remaining() const { return bytes_->size() - pos_; }

 private:
  void need(std::size_t n) {
    require(pos_ + n <= bytes_->size(), ErrorKind::Io, "weight file truncated");
  }

  const std::string* bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const TransformerModel& model) {
  validate(model);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    require(model.blocks[i].block_index == static_cast<BlockIndex>(i) + 1, ErrorKind::Config,
            "blocks must be serialized in index order");
  }
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  const auto& c = model.config;
  put_u32(out, static_cast<std::uint32_t>(c.vocab_size));
  put_u32(out, static_cast<std::uint32_t>(c.d_model));
  put_u32(out, static_cast<std::uint32_t>(c.d_ff));
  put_u32(out, static_cast<std::uint32_t>(c.n_blocks));
  put_u32(out, static_cast<std::uint32_t>(c.n_heads));
  put_u32(out, static_cast<std::uint32_t>(c.positional));
  for (const auto& b : model.blocks) {
    put_mat(out, b.wq);
    put_mat(out, b.wk);
    put_mat(out, b.wv);
    put_mat(out, b.wo);
    put_mat(out, b.w_up);
    put_mat(out, b.w_down);
    put_vec(out, b.norm_attn);
    put_vec(out, b.norm_ffn);
  }
  put_mat(out, model.token_embedding);
  put_mat(out, model.output_head);
  put_vec(out, model.final_norm);
  if (c.positional == PositionalKind::Learned) {
    put_mat(out, model.pos_embedding);
  }
  return out;
}

TransformerModel deserialize_model(const std::string& bytes) {
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::Io,
          "not a PUDW weight file (bad magic)");
  Reader r(bytes);
  (void)r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  require(version == kVersion, ErrorKind::Io,
          "unsupported PUDW version " + std::to_string(version));

  TransformerModel model;
  auto& c = model.config;
  c.vocab_size = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.d_ff = static_cast<int>(r.u32());
  c.n_blocks = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  const std::uint32_t pos_kind = r.u32();
  require(pos_kind <= 1, ErrorKind::Io, "unknown positional kind");
  c.positional = static_cast<PositionalKind>(pos_kind);
  require(c.vocab_size > 0 && c.d_model > 0 && c.d_ff > 0 && c.n_blocks > 0 && c.n_heads > 0,
          ErrorKind::Io, "invalid header dimensions");

  model.blocks.resize(static_cast<std::size_t>(c.n_blocks));
  for (int i = 0; i < c.n_blocks; ++i) {
    auto& b = model.blocks[static_cast<std::size_t>(i)];
    b.wq = r.mat(c.d_model, c.d_model);
    b.wk = r.mat(c.d_model, c.d_model);
    b.wv = r.mat(c.d_model, c.d_model);
    b.wo = r.mat(c.d_model, c.d_model);
    b.w_up = r.mat(c.d_model, c.d_ff);
    b.w_down = r.mat(c.d_ff, c.d_model);
    b.norm_attn = r.vec(c.d_model);
    b.norm_ffn = r.vec(c.d_model);
    b.block_index = i + 1;
  }
  model.token_embedding = r.mat(c.vocab_size, c.d_model);
  model.output_head = r.mat(c.d_model, c.vocab_size);
  model.final_norm = r.vec(c.d_model);
  if (c.positional == PositionalKind::Learned) {
    const std::size_t row_bytes = static_cast<std::size_t>(c.d_model) * sizeof(float);
    require(r.remaining() > 0 && r.remaining() % row_bytes == 0, ErrorKind::Io,
            "positional table size inconsistent with d_model");
    c.max_positions = static_cast<int>(r.remaining() / row_bytes);
    model.pos_embedding = r.mat(c.max_positions, c.d_model);
  } else {
    require(r.remaining() == 0, ErrorKind::Io, "trailing bytes after tensors");
  }
  validate(model);
  return model;
}

void save_model(const TransformerModel& model, const std::string& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorKind::Io, "cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorKind::Io, "failed writing " + path);
}

TransformerModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::Io, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

std::string model_hash(const TransformerModel& model) {
  return to_hex(fnv1a64(serialize_model(model)));
}

}  // namespace pudding
