#include "asvr/visual_head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace asvr {

VisualHead::VisualHead(const VisualHeadConfig& cfg, const std::string& tag) : cfg_(cfg) {
  if (cfg.depth == 0 || cfg.codebook_size == 0) {
    throw std::invalid_argument("visual head: depth and codebook size must be positive");
  }
  nn::Rng rng(cfg.seed, "visual_head/" + tag);
  input_proj = nn::Linear(cfg.input_width, cfg.width, rng);
  code_embed = nn::randn_param({cfg.codebook_size, cfg.width}, 1.0 / std::sqrt(static_cast<double>(cfg.width)), rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) blocks.emplace_back(cfg.width, cfg.heads, cfg.layers, rng);
  ln_f = nn::LayerNorm(cfg.width);
  for (std::size_t d = 0; d < cfg.depth; ++d) heads.emplace_back(cfg.width, cfg.codebook_size, rng);
}

Tensor VisualHead::depth_inputs(const Tensor& h, std::span<const int> codes) const {
  const std::size_t depth = cfg_.depth;
  if (h.rank() != 2 || h.dim(1) != cfg_.input_width) {
    throw ShapeError("visual head: hidden states " + shape_str(h.shape()) + ", expected [P," +
                     std::to_string(cfg_.input_width) + "]");
  }
  const std::size_t positions = h.dim(0);
  if (codes.size() != positions * depth) {
    throw std::invalid_argument("visual head: " + std::to_string(codes.size()) + " codes for " +
                                std::to_string(positions) + " positions at depth " +
                                std::to_string(depth));
  }
  const std::size_t rows = positions * depth;
  // Constant selection matrices: `select` routes projected h_p to depth 0,
  // `prefix` sums the embeddings of the codes at shallower depths.
  std::vector<double> select(rows * positions, 0.0), prefix(rows * rows, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    select[(p * depth) * positions + p] = 1.0;
    for (std::size_t d = 1; d < depth; ++d)
      for (std::size_t e = 0; e < d; ++e) prefix[(p * depth + d) * rows + p * depth + e] = 1.0;
  }
  Tensor proj = matmul(Tensor::from({rows, positions}, std::move(select)), input_proj(h));
  if (depth == 1) return proj;
  Tensor embeds = embedding(code_embed, codes);
  return add(proj, matmul(Tensor::from({rows, rows}, std::move(prefix)), embeds));
}

Tensor VisualHead::depth_logits(const Tensor& h, std::span<const int> codes) const {
  const std::size_t depth = cfg_.depth;
  Tensor x = depth_inputs(h, codes);
  const std::size_t positions = h.dim(0), rows = positions * depth;
  const Mask mask = Mask::block_causal(positions, depth);
  for (const auto& b : blocks) x = b(x, mask);
  x = ln_f(x);
  if (depth == 1) return heads.front()(x);
  Tensor out;
  for (std::size_t d = 0; d < depth; ++d) {
    // Gather rows at depth d, apply that depth's head, scatter back.
    std::vector<double> gather(positions * rows, 0.0);
    for (std::size_t p = 0; p < positions; ++p) gather[p * rows + p * depth + d] = 1.0;
    Tensor g = Tensor::from({positions, rows}, std::move(gather));
    Tensor part = matmul(transpose(g), heads[d](matmul(g, x)));
    out = out.defined() ? add(out, part) : part;
  }
  return out;
}

std::vector<int> VisualHead::depth_decode(const Tensor& h) const {
  NoGradGuard guard;
  const std::size_t positions = h.dim(0), depth = cfg_.depth, k = cfg_.codebook_size;
  std::vector<int> codes(positions * depth, 0);
  for (std::size_t d = 0; d < depth; ++d) {
    Tensor logits = depth_logits(h, codes);
    auto v = logits.data();
    for (std::size_t p = 0; p < positions; ++p) {
      const double* row = v.data() + (p * depth + d) * k;
      codes[p * depth + d] = static_cast<int>(std::max_element(row, row + k) - row);
    }
  }
  return codes;
}

nn::ParamList VisualHead::params(const std::string& prefix) const {
  nn::ParamList out;
  input_proj.collect(prefix + "input_proj.", out);
  out.push_back({prefix + "code_embed", code_embed});
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(prefix + "block" + std::to_string(l) + ".", out);
  ln_f.collect(prefix + "ln_f.", out);
  for (std::size_t d = 0; d < heads.size(); ++d) heads[d].collect(prefix + "head" + std::to_string(d) + ".", out);
  return out;
}

}  // namespace asvr
