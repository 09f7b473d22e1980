#include "asvr/lvlm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "asvr/data.hpp"

namespace asvr {

std::string_view source_name(FeatureSource s) {
  return s == FeatureSource::continuous ? "continuous" : "discrete";
}

FeatureSource parse_source(std::string_view name) {
  if (name == "continuous") return FeatureSource::continuous;
  if (name == "discrete") return FeatureSource::discrete;
  throw std::invalid_argument("unknown feature source '" + std::string(name) + "'");
}

std::size_t Heatmap::argmax() const {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

LvlmModel::LvlmModel(const LvlmConfig& cfg) : cfg_(cfg) {
  if (cfg.vocab_size == 0) throw std::invalid_argument("lvlm: vocab_size must be set");
  nn::Rng rng(cfg.seed, "lvlm");
  proj1 = nn::Linear(cfg.feature_width, cfg.width, rng);
  proj2 = nn::Linear(cfg.width, cfg.width, rng);
  text_embed = nn::randn_param({cfg.vocab_size, cfg.width}, 1.0, rng);
  boi_embed = nn::randn_param({cfg.width}, 1.0, rng);
  eoi_embed = nn::randn_param({cfg.width}, 1.0, rng);
  pos_embed = nn::randn_param({cfg.max_positions, cfg.width}, 0.1, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) blocks.emplace_back(cfg.width, cfg.heads, cfg.layers, rng);
  ln_f = nn::LayerNorm(cfg.width);
  lm_head = nn::Linear(cfg.width, cfg.vocab_size, rng);
  // Drawn last so the discrete variant shares every other initial value.
  if (cfg.features == FeatureSource::discrete) {
    nn::Rng lift_rng(cfg.seed, "lvlm/lift");
    lift = nn::Linear(cfg.code_width, cfg.feature_width, lift_rng);
  }
}

Tensor LvlmModel::project(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != cfg_.feature_width) {
    throw ShapeError("project: features " + shape_str(z.shape()) + ", expected [m," +
                     std::to_string(cfg_.feature_width) + "]");
  }
  return proj2(gelu(proj1(z)));
}

Tensor LvlmModel::visual_embeddings(const Tensor& features) const {
  if (cfg_.features == FeatureSource::discrete) {
    if (features.rank() != 2 || features.dim(1) != cfg_.code_width) {
      throw ShapeError("discrete features " + shape_str(features.shape()) + ", expected [m," +
                       std::to_string(cfg_.code_width) + "]");
    }
    return project(lift(features));
  }
  return project(features);
}

SequenceLayout LvlmModel::assemble(const Tensor& visual, const std::vector<int>& prompt_ids,
                                   const std::vector<int>& response_ids) const {
  SequenceLayout out;
  out.visual_len = visual.defined() ? visual.dim(0) : 0;
  if (visual.defined() && (visual.rank() != 2 || visual.dim(1) != cfg_.width)) {
    throw ShapeError("assemble: visual rows " + shape_str(visual.shape()));
  }
  out.prompt_len = prompt_ids.size();
  out.input_ids = prompt_ids;
  out.input_ids.insert(out.input_ids.end(), response_ids.begin(), response_ids.end());
  out.targets_text = out.input_ids;
  for (int id : out.input_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
      throw std::out_of_range("assemble: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(cfg_.vocab_size));
    }
  }
  const std::size_t len = out.length();
  if (len > cfg_.max_positions) {
    throw std::invalid_argument("assemble: sequence of " + std::to_string(len) +
                                " exceeds max_positions " + std::to_string(cfg_.max_positions));
  }
  const int bos = data::Vocab::kBos;
  std::vector<Tensor> parts{embedding(text_embed, std::span<const int>(&bos, 1)),
                            reshape(boi_embed, {1, cfg_.width})};
  if (out.visual_len) parts.push_back(visual);
  parts.push_back(reshape(eoi_embed, {1, cfg_.width}));
  if (!out.input_ids.empty()) parts.push_back(embedding(text_embed, out.input_ids));
  out.embeddings = add(concat(parts, 0), slice(pos_embed, 0, 0, len));
  return out;
}

ForwardOutput LvlmModel::forward(const SequenceLayout& layout, bool keep_attention) const {
  ForwardOutput out;
  const std::size_t len = layout.length();
  if (layout.embeddings.dim(0) != len) {
    throw ShapeError("forward: layout has " + std::to_string(layout.embeddings.dim(0)) +
                     " rows, expected " + std::to_string(len));
  }
  const Mask mask = Mask::causal(len);
  Tensor x = layout.embeddings;
  for (const auto& b : blocks) {
    if (keep_attention) {
      out.attn.emplace_back();
      x = b(x, mask, &out.attn.back());
    } else {
      x = b(x, mask);
    }
  }
  out.hidden = ln_f(x);
  const std::size_t n = layout.text_len();
  out.slot_logits = lm_head(slice(out.hidden, 0, layout.eoi(), n + 1));
  out.boundary_logits = slice(out.slot_logits, 0, 0, 1);
  if (n) out.text_logits = slice(out.slot_logits, 0, 1, n);
  return out;
}

std::vector<int> LvlmModel::generate(const Tensor& features, const std::vector<int>& prompt_ids,
                                     int max_len) const {
  if (max_len <= 0) throw std::invalid_argument("generate: max_len must be positive");
  NoGradGuard guard;
  const Tensor visual = features.defined() ? visual_embeddings(features) : Tensor();
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_len) {
    SequenceLayout layout = assemble(visual, prompt_ids, out);
    ForwardOutput f = forward(layout);
    auto logits = f.slot_logits.data();
    const std::size_t v = cfg_.vocab_size;
    const double* last = logits.data() + layout.text_len() * v;
    const int next = static_cast<int>(std::max_element(last, last + v) - last);
    if (next == data::Vocab::kEos) break;
    out.push_back(next);
  }
  return out;
}

Heatmap LvlmModel::extract_attention(const SequenceLayout& layout, std::size_t layer,
                                     std::size_t query_pos) const {
  if (layout.visual_len == 0) throw std::invalid_argument("extract_attention: layout has no image");
  if (query_pos < layout.text_start() || query_pos >= layout.length()) {
    throw std::out_of_range("extract_attention: query position " + std::to_string(query_pos) +
                            " is not a text position");
  }
  if (layer >= blocks.size()) throw std::out_of_range("extract_attention: no layer " + std::to_string(layer));
  const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(layout.visual_len))));
  if (side * side != layout.visual_len) {
    throw std::invalid_argument("extract_attention: image rows do not form a square grid");
  }
  NoGradGuard guard;
  ForwardOutput f = forward(layout, true);
  const auto& maps = f.attn[layer];
  const std::size_t len = layout.length();
  Heatmap hm{side, side, std::vector<double>(layout.visual_len, 0.0)};
  for (const auto& head : maps) {
    for (std::size_t p = 0; p < layout.visual_len; ++p) {
      hm.values[p] += head[query_pos * len + SequenceLayout::kVisualStart + p];
    }
  }
  double total = 0.0;
  for (double v : hm.values) total += v;
  for (double& v : hm.values) v = total > 0.0 ? v / total : 1.0 / static_cast<double>(hm.values.size());
  return hm;
}

nn::ParamList LvlmModel::projector_params() const {
  nn::ParamList out;
  proj1.collect("lvlm/projector/fc1.", out);
  proj2.collect("lvlm/projector/fc2.", out);
  if (cfg_.features == FeatureSource::discrete) lift.collect("lvlm/projector/lift.", out);
  return out;
}

nn::ParamList LvlmModel::backbone_params() const {
  nn::ParamList out;
  out.push_back({"lvlm/backbone/pos", pos_embed});
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect("lvlm/backbone/block" + std::to_string(l) + ".", out);
  ln_f.collect("lvlm/backbone/ln_f.", out);
  return out;
}

nn::ParamList LvlmModel::text_embed_params() const { return {{"lvlm/text_embed", text_embed}}; }

nn::ParamList LvlmModel::marker_params() const {
  return {{"lvlm/markers/boi", boi_embed}, {"lvlm/markers/eoi", eoi_embed}};
}

nn::ParamList LvlmModel::lm_head_params() const {
  nn::ParamList out;
  lm_head.collect("lvlm/lm_head.", out);
  return out;
}

nn::ParamList LvlmModel::params() const {
  nn::ParamList out = projector_params();
  for (const nn::ParamList& group :
       {backbone_params(), text_embed_params(), marker_params(), lm_head_params()}) {
    out.insert(out.end(), group.begin(), group.end());
  }
  return out;
}

nn::ParamList LvlmModel::state() const {
  nn::ParamList out = params();
  out.push_back({"meta/vocab_fingerprint", Tensor::scalar(static_cast<double>(cfg_.vocab_fingerprint))});
  out.push_back({"meta/feature_source",
                 Tensor::scalar(cfg_.features == FeatureSource::discrete ? 1.0 : 0.0)});
  return out;
}

void LvlmModel::load_state(const nn::ParamList& saved) {
  const double fp = nn::find_param(saved, "meta/vocab_fingerprint").item();
  if (fp != static_cast<double>(cfg_.vocab_fingerprint)) {
    throw std::invalid_argument("checkpoint vocabulary does not match the corpus vocabulary");
  }
  const bool discrete = nn::find_param(saved, "meta/feature_source").item() == 1.0;
  if (discrete != (cfg_.features == FeatureSource::discrete)) {
    throw std::invalid_argument(std::string("checkpoint was trained on ") +
                                (discrete ? "discrete" : "continuous") + " features");
  }
  nn::assign_params(params(), saved);
}

}  // namespace asvr
