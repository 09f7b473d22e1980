#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "asvr/nn.hpp"
#include "asvr/vq.hpp"

namespace asvr {

enum class FeatureSource { continuous, discrete };
std::string_view source_name(FeatureSource s);
FeatureSource parse_source(std::string_view name);

struct LvlmConfig {
  std::size_t width = 64;          // d
  std::size_t feature_width = 32;  // d_v
  std::size_t code_width = 16;     // d_c, input width of the discrete path
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_positions = 64;
  std::size_t vocab_size = 0;
  std::uint32_t vocab_fingerprint = 0;
  FeatureSource features = FeatureSource::continuous;
  std::uint64_t seed = 1;
};

// [<bos>, <boi>, H^I (m rows), <eoi>, text (n rows)] with positional
// embeddings already added.
struct SequenceLayout {
  Tensor embeddings;
  std::size_t visual_len = 0;     // m
  std::size_t prompt_len = 0;     // s
  std::vector<int> input_ids;     // the n text tokens
  std::vector<int> targets_text;  // n ids aligned to text positions
  vq::VisualCodes semantic_codes;
  vq::VisualCodes appearance_codes;

  static constexpr std::size_t kBoi = 1;
  static constexpr std::size_t kVisualStart = 2;
  std::size_t eoi() const { return kVisualStart + visual_len; }
  std::size_t text_start() const { return eoi() + 1; }
  std::size_t text_len() const { return input_ids.size(); }
  std::size_t length() const { return text_start() + text_len(); }
};

struct ForwardOutput {
  Tensor hidden;  // [L, d], final-norm output of the last block
  // [n + 1, |V|]: row j sits at the slot just before text token j, so row 0
  // is <eoi> and the last row predicts the token after the text.
  Tensor slot_logits;
  Tensor boundary_logits;  // [1, |V|] at <eoi>
  Tensor text_logits;      // [n, |V|] at the text positions
  std::vector<nn::AttentionMaps> attn;  // per layer, per head; empty unless requested
};

struct Heatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, sums to 1

  std::size_t argmax() const;
};

class LvlmModel {
 public:
  LvlmModel() = default;
  explicit LvlmModel(const LvlmConfig& cfg);

  const LvlmConfig& config() const { return cfg_; }

  // affine -> gelu -> affine, [m, d_v] -> [m, d].
  Tensor project(const Tensor& z) const;
  // Visual features of the configured source to H^I: discrete inputs
  // ([m, d_c]) pass through the learned lift first.
  Tensor visual_embeddings(const Tensor& features) const;

  // `visual` may be undefined for a text-only layout. Throws for ids outside
  // the vocabulary or sequences longer than max_positions.
  SequenceLayout assemble(const Tensor& visual, const std::vector<int>& prompt_ids,
                          const std::vector<int>& response_ids) const;
  ForwardOutput forward(const SequenceLayout& layout, bool keep_attention = false) const;

  // Greedy decoding until <eos> or max_len tokens; <eos> is not returned.
  std::vector<int> generate(const Tensor& features, const std::vector<int>& prompt_ids,
                            int max_len) const;

  // Head-averaged attention from query_pos to the image rows at `layer`,
  // renormalized and laid out on the patch grid.
  Heatmap extract_attention(const SequenceLayout& layout, std::size_t layer,
                            std::size_t query_pos) const;

  nn::ParamList projector_params() const;
  nn::ParamList backbone_params() const;
  nn::ParamList text_embed_params() const;
  nn::ParamList marker_params() const;
  nn::ParamList lm_head_params() const;
  nn::ParamList params() const;
  // params() plus "meta/vocab_fingerprint" and "meta/feature_source".
  nn::ParamList state() const;
  // Throws if the saved vocabulary fingerprint or feature source differs.
  void load_state(const nn::ParamList& saved);

  nn::Linear proj1, proj2;
  nn::Linear lift;  // d_c -> d_v, discrete source only
  Tensor text_embed;
  Tensor boi_embed, eoi_embed;
  Tensor pos_embed;
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm ln_f;
  nn::Linear lm_head;

 private:
  LvlmConfig cfg_;
};

}  // namespace asvr
