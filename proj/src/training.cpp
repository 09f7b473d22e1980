#include "asvr/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "asvr/optim.hpp"
#include "json.hpp"

namespace asvr::train {

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::text_only: return "text";
    case Mode::semantic: return "semantic";
    case Mode::appearance: return "appearance";
    case Mode::dual: return "dual";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  if (name == "text" || name == "text_only") return Mode::text_only;
  if (name == "semantic") return Mode::semantic;
  if (name == "appearance") return Mode::appearance;
  if (name == "dual") return Mode::dual;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

bool uses_semantic(Mode m) { return m == Mode::semantic || m == Mode::dual; }
bool uses_appearance(Mode m) { return m == Mode::appearance || m == Mode::dual; }

Tensor text_loss(const ForwardOutput& out, const SequenceLayout& layout) {
  const std::size_t n = layout.text_len(), s = layout.prompt_len;
  if (s >= n) throw std::invalid_argument("text_loss: no response positions to supervise");
  if (layout.targets_text.size() != n || out.slot_logits.dim(0) != n + 1) {
    throw ShapeError("text_loss: layout and logits disagree on the text length");
  }
  std::vector<int> targets(layout.targets_text.begin() + static_cast<std::ptrdiff_t>(s),
                           layout.targets_text.end());
  return mean(cross_entropy(slice(out.slot_logits, 0, s, n - s), targets));
}

Tensor vision_loss(const ForwardOutput& out, const SequenceLayout& layout, const VisualHead& head,
                   const vq::VisualCodes& codes, const LossConfig& cfg) {
  const std::size_t m = layout.visual_len, depth = head.config().depth;
  if (m == 0 || codes.positions != m || codes.depth != depth || codes.codes.size() != m * depth) {
    throw std::invalid_argument("vision_loss: layout needs " + std::to_string(m) + "x" +
                                std::to_string(depth) + " target codes, got " +
                                std::to_string(codes.positions) + "x" + std::to_string(codes.depth));
  }
  const std::size_t first = cfg.same_position ? SequenceLayout::kVisualStart : SequenceLayout::kBoi;
  Tensor h = slice(out.hidden, 0, first, m);
  Tensor ce = cross_entropy(head.depth_logits(h, codes.codes), codes.codes);
  const double per = cfg.average_over_depth ? static_cast<double>(depth) : 1.0;
  return scale(sum(ce), 1.0 / (static_cast<double>(m) * per));
}

Tensor total_loss(const Tensor& text, const Tensor& vision_sem, const Tensor& vision_app,
                  const LossConfig& cfg) {
  if (cfg.lambda_vision < 0.0) throw std::invalid_argument("lambda_vision must be >= 0");
  switch (cfg.mode) {
    case Mode::text_only: return text;
    case Mode::semantic: return add(text, scale(vision_sem, cfg.lambda_vision));
    case Mode::appearance: return add(text, scale(vision_app, cfg.lambda_vision));
    case Mode::dual: return add(text, scale(add(vision_sem, vision_app), cfg.lambda_vision));
  }
  return text;
}

nn::ParamList ModelBundle::lvlm_state() const {
  nn::ParamList out = lvlm.state();
  auto add_all = [&](const nn::ParamList& more) { out.insert(out.end(), more.begin(), more.end()); };
  add_all(semantic_head.params("visual_head/semantic/"));
  add_all(appearance_head.params("visual_head/appearance/"));
  if (encoder_trained_jointly) add_all(encoder.params());
  out.push_back({"meta/completed_stage", Tensor::scalar(static_cast<double>(completed_stage))});
  out.push_back({"meta/encoder_trained", Tensor::scalar(encoder_trained_jointly ? 1.0 : 0.0)});
  return out;
}

void ModelBundle::load_lvlm_state(const nn::ParamList& saved) {
  lvlm.load_state(saved);
  nn::assign_params(semantic_head.params("visual_head/semantic/"), saved);
  nn::assign_params(appearance_head.params("visual_head/appearance/"), saved);
  encoder_trained_jointly = nn::find_param(saved, "meta/encoder_trained").item() == 1.0;
  if (encoder_trained_jointly) encoder.load_state(saved);
  completed_stage = static_cast<int>(nn::find_param(saved, "meta/completed_stage").item());
}

LossTerms compute_losses(const ModelBundle& models, const SequenceLayout& layout,
                         const ForwardOutput& out, const LossConfig& cfg) {
  LossTerms t;
  const bool vision = cfg.mode != Mode::text_only;
  if (layout.prompt_len < layout.text_len()) {
    t.text = text_loss(out, layout);
  } else if (cfg.caption_free && vision) {
    t.text = Tensor::scalar(0.0);
  } else {
    t.text = text_loss(out, layout);  // throws with the usual message
  }
  if (uses_semantic(cfg.mode)) {
    t.vision_sem = vision_loss(out, layout, models.semantic_head, layout.semantic_codes, cfg);
  }
  if (uses_appearance(cfg.mode)) {
    t.vision_app = vision_loss(out, layout, models.appearance_head, layout.appearance_codes, cfg);
  }
  t.total = total_loss(t.text, t.vision_sem, t.vision_app, cfg);
  return t;
}

StageConfig StageConfig::defaults(int stage) {
  StageConfig c;
  c.stage = stage;
  if (stage == 2) {
    c.lr = 2e-5;
    c.lr_multiplier = 50.0;
  }
  return c;
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : steps) {
    nlohmann::ordered_json j{{"step", r.step},       {"stage", r.stage},
                             {"mode", mode_name(r.mode)}, {"L_text", r.l_text},
                             {"L_vision", r.l_vision}, {"L_total", r.l_total},
                             {"lr", r.lr}};
    out << j.dump() << '\n';
  }
  for (std::size_t e = 0; e < epoch_metrics.size(); ++e) {
    nlohmann::ordered_json j{{"epoch", e + 1}};
    for (const auto& [k, v] : epoch_metrics[e]) j[k] = v;
    out << j.dump() << '\n';
  }
}

FeatureBank build_features(const ModelBundle& models, const std::vector<data::Sample>& samples,
                           bool need_semantic, bool need_appearance) {
  NoGradGuard guard;
  FeatureBank bank;
  const bool discrete = models.lvlm.config().features == FeatureSource::discrete;
  for (const auto& s : samples) {
    bank.features.push_back(discrete ? encoder::quantized_features(s.image, models.semantic_tokenizer)
                                     : models.encoder.encode_image(s.image));
    if (need_semantic) bank.semantic_codes.push_back(models.semantic_tokenizer.encode(s.image));
    if (need_appearance) bank.appearance_codes.push_back(models.appearance_tokenizer.encode(s.image));
  }
  return bank;
}

std::vector<Example> stage_examples(const std::vector<data::Sample>& samples, int stage) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (stage == 1) {
      Example e{i, {}, s.caption_ids};
      e.response.push_back(data::Vocab::kEos);
      out.push_back(std::move(e));
    } else {
      for (const auto& qa : s.qa_ids) {
        Example e{i, qa.question, qa.answer};
        e.response.push_back(data::Vocab::kEos);
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

namespace {

nn::ParamList trainable_params(const ModelBundle& models, const StageConfig& stage) {
  nn::ParamList out = models.lvlm.projector_params();
  auto add_all = [&](const nn::ParamList& more) { out.insert(out.end(), more.begin(), more.end()); };
  add_all(models.semantic_head.params("visual_head/semantic/"));
  add_all(models.appearance_head.params("visual_head/appearance/"));
  if (stage.stage == 2) {
    add_all(models.lvlm.backbone_params());
    add_all(models.lvlm.lm_head_params());
    add_all(models.lvlm.text_embed_params());
    add_all(models.lvlm.marker_params());
  }
  if (stage.train_encoder) add_all(models.encoder.params());
  return out;
}

nn::ParamList every_param(const ModelBundle& models) {
  nn::ParamList out = models.lvlm.params();
  auto add_all = [&](const nn::ParamList& more) { out.insert(out.end(), more.begin(), more.end()); };
  add_all(models.semantic_head.params("visual_head/semantic/"));
  add_all(models.appearance_head.params("visual_head/appearance/"));
  add_all(models.encoder.params());
  return out;
}

// Turns gradient tracking on for the trainable set only, restoring the
// previous flags on exit.
class FreezeScope {
 public:
  FreezeScope(const nn::ParamList& all, const nn::ParamList& trainable) : all_(all) {
    for (const auto& p : all_) previous_.push_back(p.tensor.requires_grad());
    for (auto& p : all_) p.tensor.set_requires_grad(false);
    for (const auto& p : trainable) {
      Tensor t = p.tensor;
      t.set_requires_grad(true);
    }
  }
  ~FreezeScope() {
    for (std::size_t i = 0; i < all_.size(); ++i) all_[i].tensor.set_requires_grad(previous_[i]);
  }

 private:
  nn::ParamList all_;
  std::vector<bool> previous_;
};

bool finite_grads(const nn::ParamList& params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad())
      if (!std::isfinite(g)) return false;
  }
  return true;
}

}  // namespace

TrainLog run_stage(const data::Corpus& corpus, ModelBundle& models, const StageConfig& stage,
                   const LossConfig& loss, std::uint64_t seed, const EpochHook& on_epoch) {
  if (stage.stage != 1 && stage.stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  if (!(stage.peak_lr() > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (stage.batch_size == 0 || stage.epochs == 0) throw std::invalid_argument("batch_size and epochs must be positive");
  if (stage.stage == 2 && models.completed_stage < 1 && !stage.from_scratch) {
    throw std::invalid_argument("stage 2 needs a stage-1 checkpoint (or from_scratch)");
  }
  if (stage.train_encoder && models.lvlm.config().features != FeatureSource::continuous) {
    throw std::invalid_argument("the encoder can only be fine-tuned on the continuous feature path");
  }
  const bool need_sem = uses_semantic(loss.mode), need_app = uses_appearance(loss.mode);
  FeatureBank bank = build_features(models, corpus.train, need_sem, need_app);

  std::vector<Example> examples = stage_examples(corpus.train, stage.stage);
  nn::Rng rng(seed, "stage" + std::to_string(stage.stage) + "/shuffle");

  const nn::ParamList trainable = trainable_params(models, stage);
  FreezeScope freeze(every_param(models), trainable);
  AdamW opt(trainable, AdamW::Options{0.9, 0.999, 1e-8, stage.weight_decay});

  std::size_t per_epoch = examples.size();
  if (stage.max_examples) per_epoch = std::min(per_epoch, stage.max_examples);
  const std::size_t steps_per_epoch = (per_epoch + stage.batch_size - 1) / stage.batch_size;
  const auto total_steps = static_cast<std::int64_t>(steps_per_epoch * stage.epochs);

  TrainLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
    std::shuffle(examples.begin(), examples.end(), rng.engine());
    for (std::size_t begin = 0; begin < per_epoch; begin += stage.batch_size) {
      const std::size_t end = std::min(per_epoch, begin + stage.batch_size);
      const double inv = 1.0 / static_cast<double>(end - begin);
      StepRecord rec;
      rec.step = ++step;
      rec.stage = stage.stage;
      rec.mode = loss.mode;
      rec.lr = warmup_cosine_lr(static_cast<std::int64_t>(step), total_steps, stage.peak_lr(),
                                stage.warmup_ratio);
      opt.zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = examples[i];
        const Tensor features = stage.train_encoder
                                    ? models.encoder.encode_image(corpus.train[ex.sample].image)
                                    : bank.features[ex.sample];
        SequenceLayout layout = models.lvlm.assemble(models.lvlm.visual_embeddings(features),
                                                     ex.prompt, ex.response);
        if (need_sem) layout.semantic_codes = bank.semantic_codes[ex.sample];
        if (need_app) layout.appearance_codes = bank.appearance_codes[ex.sample];
        LossTerms t = compute_losses(models, layout, models.lvlm.forward(layout), loss);
        const double total = t.total.item();
        if (!std::isfinite(total)) {
          throw DivergenceError("non-finite loss at stage " + std::to_string(stage.stage) +
                                " step " + std::to_string(step));
        }
        rec.l_text += inv * t.text.item();
        if (t.vision_sem.defined()) rec.l_vision += inv * t.vision_sem.item();
        if (t.vision_app.defined()) rec.l_vision += inv * t.vision_app.item();
        rec.l_total += inv * total;
        scale(t.total, inv).backward();
      }
      if (!finite_grads(trainable)) {
        throw DivergenceError("non-finite gradient at stage " + std::to_string(stage.stage) +
                              " step " + std::to_string(step));
      }
      if (stage.clip_norm > 0.0) clip_grad_norm(trainable, stage.clip_norm);
      opt.step(rec.lr);
      log.steps.push_back(rec);
    }
    if (on_epoch) log.epoch_metrics.push_back(on_epoch(epoch + 1));
  }
  opt.zero_grad();
  models.completed_stage = std::max(models.completed_stage, stage.stage);
  if (stage.train_encoder) models.encoder_trained_jointly = true;
  return log;
}

}  // namespace asvr::train
