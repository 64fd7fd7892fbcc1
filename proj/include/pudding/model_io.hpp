#pragma once

#include <string>

#include "pudding/model.hpp"

namespace pudding {

// Weight file layout ("PUDW", version 1):
//   magic "PUDW" | u32 version | u32 vocab_size | u32 d_model | u32 d_ff
//   | u32 n_blocks | u32 n_heads | u32 positional_kind
// followed by row-major float32 little-endian tensors, no padding:
//   per block: wq, wk, wv, wo, w_up, w_down, norm_attn, norm_ffn
//   then token_embedding, output_head, final_norm,
//   then (learned positional only) the positional table as the trailing
//   tensor; its row count is recovered from the remaining byte count.
std::string serialize_model(const TransformerModel& model);
TransformerModel deserialize_model(const std::string& bytes);

void save_model(const TransformerModel& model, const std::string& path);
TransformerModel load_model(const std::string& path);

// Fingerprint of the serialized bytes, 16 hex chars.
std::string model_hash(const TransformerModel& model);

}  // namespace pudding
