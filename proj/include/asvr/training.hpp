#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "asvr/data.hpp"
#include "asvr/encoder.hpp"
#include "asvr/lvlm.hpp"
#include "asvr/visual_head.hpp"
#include "asvr/vq.hpp"

namespace asvr::train {

enum class Mode { text_only, semantic, appearance, dual };
// "text", "semantic", "appearance", "dual".
std::string_view mode_name(Mode m);
// Also accepts "text_only".
Mode parse_mode(std::string_view name);
bool uses_semantic(Mode m);
bool uses_appearance(Mode m);

struct LossConfig {
  Mode mode = Mode::semantic;
  double lambda_vision = 1.0;
  bool average_over_depth = true;
  // Predict position p's codes from slot p itself instead of slot p - 1.
  bool same_position = false;
  // Allow layouts with no response tokens when a vision loss is active.
  bool caption_free = false;
};

// Mean next-token cross-entropy over the response positions.
Tensor text_loss(const ForwardOutput& out, const SequenceLayout& layout);

// Mean over the m visual positions of the teacher-forced depth cross-entropy
// (summed over depths, divided by D when averaging).
Tensor vision_loss(const ForwardOutput& out, const SequenceLayout& layout, const VisualHead& head,
                   const vq::VisualCodes& codes, const LossConfig& cfg);

// Unused terms may be undefined tensors.
Tensor total_loss(const Tensor& text, const Tensor& vision_sem, const Tensor& vision_app,
                  const LossConfig& cfg);

// Everything an LVLM stage touches. Heads for both tokenizers always exist
// so that every mode starts from the same initial weights.
struct ModelBundle {
  encoder::EncoderModel encoder;
  vq::TokenizerModel semantic_tokenizer;
  vq::TokenizerModel appearance_tokenizer;
  LvlmModel lvlm;
  VisualHead semantic_head;
  VisualHead appearance_head;
  int completed_stage = 0;
  bool encoder_trained_jointly = false;

  // LVLM, heads, stage marker and (when fine-tuned) the encoder.
  nn::ParamList lvlm_state() const;
  void load_lvlm_state(const nn::ParamList& saved);
};

struct LossTerms {
  Tensor text, vision_sem, vision_app, total;
};

LossTerms compute_losses(const ModelBundle& models, const SequenceLayout& layout,
                         const ForwardOutput& out, const LossConfig& cfg);

struct StageConfig {
  int stage = 1;
  double lr = 1e-3;
  double lr_multiplier = 1.0;
  double warmup_ratio = 0.03;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // 0 disables clipping
  bool train_encoder = false;
  bool from_scratch = false;  // stage 2 without a stage-1 run
  std::size_t max_examples = 0;  // 0 = every example

  static StageConfig defaults(int stage);
  double peak_lr() const { return lr * lr_multiplier; }
};

struct StepRecord {
  std::size_t step = 0;
  int stage = 1;
  Mode mode = Mode::text_only;
  double l_text = 0.0;
  double l_vision = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<std::map<std::string, double>> epoch_metrics;

  void write_jsonl(const std::filesystem::path& path) const;
};

// Thrown on a non-finite loss or gradient; the models still hold the values
// from before the failing step.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cached per-image inputs for a frozen encoder and tokenizers.
struct FeatureBank {
  std::vector<Tensor> features;  // [m, d_v] or [m, d_c]
  std::vector<vq::VisualCodes> semantic_codes;
  std::vector<vq::VisualCodes> appearance_codes;
};

FeatureBank build_features(const ModelBundle& models, const std::vector<data::Sample>& samples,
                           bool need_semantic, bool need_appearance);

struct Example {
  std::size_t sample = 0;
  std::vector<int> prompt;
  std::vector<int> response;  // ends with <eos>
};

// Stage 1: caption with empty prompt; stage 2: every QA pair.
std::vector<Example> stage_examples(const std::vector<data::Sample>& samples, int stage);

using EpochHook = std::function<std::map<std::string, double>(std::size_t epoch)>;

TrainLog run_stage(const data::Corpus& corpus, ModelBundle& models, const StageConfig& stage,
                   const LossConfig& loss, std::uint64_t seed, const EpochHook& on_epoch = {});

}  // namespace asvr::train
