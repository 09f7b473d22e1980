#include "asvr/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "asvr/optim.hpp"

namespace asvr::encoder {

EncoderModel::EncoderModel(const EncoderConfig& cfg, std::size_t image_px)
    : cfg_(cfg), image_px_(image_px) {
  if (cfg.patch_px == 0 || image_px % cfg.patch_px != 0) {
    throw std::invalid_argument("encoder: image size " + std::to_string(image_px) +
                                " not divisible by patch size " + std::to_string(cfg.patch_px));
  }
  const std::size_t side = image_px / cfg.patch_px;
  positions_ = side * side;
  nn::Rng rng(cfg.seed, "encoder");
  patch_embed_ = nn::Linear(cfg.patch_px * cfg.patch_px * 3, cfg.width, rng);
  pos_ = nn::randn_param({positions_, cfg.width}, 0.1, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    blocks_.emplace_back(cfg.width, cfg.heads, cfg.layers, rng);
  }
  ln_f_ = nn::LayerNorm(cfg.width);
  // Small class weights around a shared random offset: every label set
  // starts out nearly equidistant from every image.
  label_embed_ = nn::Linear(static_cast<std::size_t>(data::kClasses), cfg.width, rng, 0.05);
  label_embed_.bias = nn::randn_param({cfg.width}, 1.0, rng);
}

Tensor EncoderModel::embed_patches(const data::Image& image) const {
  if (image.height != image_px_ || image.width != image_px_) {
    throw std::invalid_argument("encoder: expected " + std::to_string(image_px_) + "x" +
                                std::to_string(image_px_) + " image, got " +
                                std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  return patch_embed_(nn::patchify(image, cfg_.patch_px));
}

Tensor EncoderModel::encode_image(const data::Image& image) const {
  Tensor x = add(embed_patches(image), pos_);
  const Mask mask = Mask::full(positions_);
  for (const auto& b : blocks_) x = b(x, mask);
  return ln_f_(x);
}

Tensor EncoderModel::label_embeddings(const std::vector<std::vector<int>>& class_sets) const {
  return label_embed_(vq::class_set_matrix(class_sets));
}

nn::ParamList EncoderModel::params() const {
  nn::ParamList out;
  patch_embed_.collect("encoder/patch_embed.", out);
  out.push_back({"encoder/pos", pos_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    blocks_[l].collect("encoder/block" + std::to_string(l) + ".", out);
  }
  ln_f_.collect("encoder/ln_f.", out);
  label_embed_.collect("encoder/label_embed.", out);
  return out;
}

void EncoderModel::load_state(const nn::ParamList& saved) { nn::assign_params(params(), saved); }

EncoderModel pretrain_encoder(const data::Corpus& corpus, const EncoderConfig& cfg,
                              const vq::StepLogger& log) {
  if (cfg.batch_size < 2) {
    throw std::invalid_argument("encoder pretraining: contrastive loss needs batch_size >= 2");
  }
  if (corpus.train.empty()) throw std::invalid_argument("encoder pretraining: empty corpus");
  EncoderModel model(cfg, corpus.image_px);
  nn::Rng rng(cfg.seed, "encoder/batches");
  AdamW opt(model.params());
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<Tensor> pooled;
    std::vector<std::vector<int>> classes;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const data::Sample& s = corpus.train[rng.below(corpus.train.size())];
      pooled.push_back(mean_rows(model.encode_image(s.image)));
      classes.push_back(s.scene.class_ids());
    }
    Tensor loss = vq::info_nce(concat(pooled, 0), model.label_embeddings(classes), cfg.temperature);
    if (!std::isfinite(loss.item())) {
      throw std::runtime_error("encoder pretraining diverged at step " + std::to_string(step));
    }
    opt.zero_grad();
    loss.backward();
    opt.step(warmup_cosine_lr(static_cast<std::int64_t>(step), static_cast<std::int64_t>(cfg.steps),
                              cfg.lr, 0.03));
    if (log) log(step, loss.item());
  }
  return model;
}

Tensor quantized_features(const data::Image& image, const vq::TokenizerModel& tokenizer) {
  NoGradGuard guard;
  return tokenizer.quantize(tokenizer.features(image), tokenizer.config().depth);
}

Tensor discrete_features(const data::Image& image, const vq::TokenizerModel& tokenizer,
                         const nn::Linear& lift) {
  if (tokenizer.kind() != vq::TokenizerKind::semantic) {
    throw std::invalid_argument("discrete features come from the semantic tokenizer");
  }
  return lift(quantized_features(image, tokenizer));
}

double retrieval_accuracy(const EncoderModel& model, const std::vector<data::Sample>& samples) {
  NoGradGuard guard;
  std::vector<std::vector<int>> all;
  for (int c = 0; c < data::kClasses; ++c) all.push_back({c});
  return vq::label_retrieval_accuracy(
      [&](const data::Image& img) { return mean_rows(model.encode_image(img)); },
      model.label_embeddings(all), samples);
}

}  // namespace asvr::encoder
