#pragma once

#include <cstdint>

#include "asvr/data.hpp"
#include "asvr/nn.hpp"
#include "asvr/vq.hpp"

namespace asvr::encoder {

struct EncoderConfig {
  std::size_t width = 32;  // d_v
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t patch_px = 16;
  std::size_t steps = 1200;
  std::size_t batch_size = 16;
  double lr = 2e-3;
  double temperature = 0.07;
  std::uint64_t seed = 1;
};

// Small patch transformer producing z^I, [m, d_v].
class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(const EncoderConfig& cfg, std::size_t image_px);

  const EncoderConfig& config() const { return cfg_; }
  std::size_t positions() const { return positions_; }
  std::size_t width() const { return cfg_.width; }

  Tensor encode_image(const data::Image& image) const;
  // Patch embeddings before positional embeddings are added.
  Tensor embed_patches(const data::Image& image) const;
  const Tensor& positional() const { return pos_; }
  // Label-set embeddings, one row per set: average class one-hot through an
  // affine map.
  Tensor label_embeddings(const std::vector<std::vector<int>>& class_sets) const;

  nn::ParamList params() const;
  void load_state(const nn::ParamList& saved);

 private:
  EncoderConfig cfg_;
  std::size_t image_px_ = 48;
  std::size_t positions_ = 0;
  nn::Linear patch_embed_;
  Tensor pos_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear label_embed_;
};

// Contrastive pretraining against label sets; the logged loss of step 1 is
// taken before any update. Throws for batch_size < 2 and on divergence.
EncoderModel pretrain_encoder(const data::Corpus& corpus, const EncoderConfig& cfg,
                              const vq::StepLogger& log = {});

// Quantized semantic-tokenizer features rq_decode(rq_encode(f_p)), [m, d_c],
// before the learned lift to d_v.
Tensor quantized_features(const data::Image& image, const vq::TokenizerModel& tokenizer);
// Lifted discrete features, [m, d_v].
Tensor discrete_features(const data::Image& image, const vq::TokenizerModel& tokenizer,
                         const nn::Linear& lift);

double retrieval_accuracy(const EncoderModel& model, const std::vector<data::Sample>& samples);

}  // namespace asvr::encoder
