#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asvr/nn.hpp"

namespace asvr {

struct VisualHeadConfig {
  std::size_t input_width = 64;  // d
  std::size_t width = 32;        // d_h
  std::size_t layers = 3;
  std::size_t heads = 1;
  std::size_t codebook_size = 64;  // K
  std::size_t depth = 3;           // D
  std::uint64_t seed = 1;
};

// Depth transformer over the residual stack of each visual position.
// Positions are processed independently; rows are ordered p * D + d.
class VisualHead {
 public:
  VisualHead() = default;
  // `tag` separates the initialization streams of several heads.
  VisualHead(const VisualHeadConfig& cfg, const std::string& tag);

  const VisualHeadConfig& config() const { return cfg_; }

  // I_{p1} = input_proj(h_p); I_{pd} = sum_{d' < d} e(r_{pd'}). h is [P, d],
  // codes has P * D entries. Returns [P * D, d_h].
  Tensor depth_inputs(const Tensor& h, std::span<const int> codes) const;
  // Teacher-forced logits, [P * D, K].
  Tensor depth_logits(const Tensor& h, std::span<const int> codes) const;
  // Greedy decoding feeding back predicted codes. Returns P * D codes.
  std::vector<int> depth_decode(const Tensor& h) const;

  nn::ParamList params(const std::string& prefix) const;

  nn::Linear input_proj;
  Tensor code_embed;  // [K, d_h]
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm ln_f;
  std::vector<nn::Linear> heads;  // one per depth

 private:
  VisualHeadConfig cfg_;
};

}  // namespace asvr
