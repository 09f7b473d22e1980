#include "asvr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace asvr::nn {

std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  // FNV-1a over the tag, then a splitmix64 finalizer.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed, std::string_view tag)
    : engine_(mix_seed(seed, tag)) {}

double Rng::normal(double stddev) { return stddev * normal_(engine_); }

double Rng::uniform() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

std::size_t Rng::below(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

Tensor randn_param(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(stddev);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(randn_param({in, out}, gain / std::sqrt(static_cast<double>(in)), rng)),
      bias(Tensor::zeros({out}, true)) {}

Tensor Linear::operator()(const Tensor& x) const {
  return add(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

LayerNorm::LayerNorm(std::size_t d)
    : gain(Tensor::full({d}, 1.0, true)), bias(Tensor::zeros({d}, true)) {}

Tensor LayerNorm::operator()(const Tensor& x) const {
  return layer_norm(x, gain, bias);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "gain", gain});
  out.push_back({prefix + "bias", bias});
}

SelfAttention::SelfAttention(std::size_t width, std::size_t heads_, Rng& rng,
                             double out_gain)
    : qkv(width, 3 * width, rng), proj(width, width, rng, out_gain), heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(width) +
                                " not divisible by " + std::to_string(heads) +
                                " heads");
  }
}

Tensor SelfAttention::operator()(const Tensor& x, const Mask& mask,
                                 AttentionMaps* maps) const {
  const std::size_t width = proj.in_features();
  const std::size_t hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor packed = qkv(x);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor q = slice(packed, 1, h * hd, hd);
    Tensor k = slice(packed, 1, width + h * hd, hd);
    Tensor v = slice(packed, 1, 2 * width + h * hd, hd);
    Tensor probs = masked_softmax(scale(matmul(q, transpose(k)), inv_sqrt), mask);
    if (maps) maps->push_back(probs.to_vector());
    outs.push_back(matmul(probs, v));
  }
  return proj(heads == 1 ? outs.front() : concat(outs, 1));
}

void SelfAttention::collect(const std::string& prefix, ParamList& out) const {
  qkv.collect(prefix + "qkv.", out);
  proj.collect(prefix + "proj.", out);
}

TransformerBlock::TransformerBlock(std::size_t width, std::size_t heads,
                                   std::size_t layers, Rng& rng,
                                   std::size_t mlp_ratio) {
  // Residual branches scaled down with depth.
  const double out_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(layers, 1)));
  ln1 = LayerNorm(width);
  attn = SelfAttention(width, heads, rng, out_gain);
  ln2 = LayerNorm(width);
  fc1 = Linear(width, mlp_ratio * width, rng);
  fc2 = Linear(mlp_ratio * width, width, rng, out_gain);
}

Tensor TransformerBlock::operator()(const Tensor& x, const Mask& mask,
                                    AttentionMaps* maps) const {
  Tensor h = add(x, attn(ln1(x), mask, maps));
  return add(h, fc2(gelu(fc1(ln2(h)))));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + "ln1.", out);
  attn.collect(prefix + "attn.", out);
  ln2.collect(prefix + "ln2.", out);
  fc1.collect(prefix + "fc1.", out);
  fc2.collect(prefix + "fc2.", out);
}

Tensor patchify(const data::Image& image, std::size_t patch_px, bool centered) {
  if (patch_px == 0 || image.height % patch_px || image.width % patch_px) {
    throw std::invalid_argument("patchify: image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + " not divisible by patch size " +
                                std::to_string(patch_px));
  }
  const std::size_t gh = image.height / patch_px, gw = image.width / patch_px;
  const std::size_t dim = patch_px * patch_px * 3;
  std::vector<double> out(gh * gw * dim);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double* row = out.data() + (py * gw + px) * dim;
      for (std::size_t y = 0; y < patch_px; ++y)
        for (std::size_t x = 0; x < patch_px; ++x)
          for (std::size_t c = 0; c < 3; ++c) {
            const double v = image.at(py * patch_px + y, px * patch_px + x, c);
            *row++ = centered ? 2.0 * v - 1.0 : v;
          }
    }
  }
  return Tensor::from({gh * gw, dim}, std::move(out));
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

const Tensor& find_param(const ParamList& params, std::string_view name) {
  for (const auto& p : params)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

void assign_params(const ParamList& dst, const ParamList& src) {
  for (const auto& p : dst) {
    const Tensor& s = find_param(src, p.name);
    if (s.shape() != p.tensor.shape()) {
      throw ShapeError("assign '" + p.name + "': " + shape_str(p.tensor.shape()) +
                       " vs " + shape_str(s.shape()));
    }
    Tensor t = p.tensor;
    std::copy(s.data().begin(), s.data().end(), t.mutable_data().begin());
  }
}

}  // namespace asvr::nn
