#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "asvr/data.hpp"
#include "asvr/tensor.hpp"

namespace asvr::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// Independent, reproducible stream per (seed, tag) so that initializing one
// module never shifts the draws of another.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view tag);
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double stddev = 1.0);
  double uniform();
  std::size_t below(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);

Tensor randn_param(Shape shape, double stddev, Rng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  // Weights ~ N(0, gain / sqrt(in)), bias zero.
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Per-head attention probabilities, each rows x cols row-major.
using AttentionMaps = std::vector<std::vector<double>>;

struct SelfAttention {
  Linear qkv;
  Linear proj;
  std::size_t heads = 1;

  SelfAttention() = default;
  SelfAttention(std::size_t width, std::size_t heads, Rng& rng, double out_gain);
  Tensor operator()(const Tensor& x, const Mask& mask,
                    AttentionMaps* maps = nullptr) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-norm block: x + attn(ln1(x)), then + mlp(ln2(x)).
struct TransformerBlock {
  LayerNorm ln1;
  SelfAttention attn;
  LayerNorm ln2;
  Linear fc1;
  Linear fc2;

  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t layers,
                   Rng& rng, std::size_t mlp_ratio = 4);
  Tensor operator()(const Tensor& x, const Mask& mask,
                    AttentionMaps* maps = nullptr) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// [m, patch_px * patch_px * 3], patches in raster order. Centered maps pixel
// values p to 2p - 1. Throws unless both image sides divide by patch_px.
Tensor patchify(const data::Image& image, std::size_t patch_px, bool centered = true);

std::vector<Tensor> tensors_of(const ParamList& params);
std::size_t count_parameters(const ParamList& params);
const Tensor& find_param(const ParamList& params, std::string_view name);

// Copies values by name from `src` into `dst`; every dst entry must exist in
// src with the same shape.
void assign_params(const ParamList& dst, const ParamList& src);

}  // namespace asvr::nn
