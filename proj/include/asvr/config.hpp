#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "asvr/data.hpp"
#include "asvr/encoder.hpp"
#include "asvr/eval.hpp"
#include "asvr/lvlm.hpp"
#include "asvr/training.hpp"
#include "asvr/visual_head.hpp"
#include "asvr/vq.hpp"
#include "json.hpp"

namespace asvr {

// Invalid or unknown configuration content.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AblationConfig {
  std::vector<train::Mode> modes{train::Mode::text_only, train::Mode::semantic,
                                 train::Mode::appearance, train::Mode::dual};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<FeatureSource> sources{FeatureSource::continuous};
  bool it_only = false;  // add the single-stage strategy rows
};

struct RunConfig {
  std::uint64_t seed = 1;  // model initialization and data order
  data::CorpusSpec data;
  std::size_t patch_px = 16;
  vq::TokenizerConfig tokenizer;
  vq::TokenizerKind tokenizer_kind = vq::TokenizerKind::semantic;
  encoder::EncoderConfig encoder;
  LvlmConfig lvlm;
  VisualHeadConfig visual_head;
  train::LossConfig loss;
  train::StageConfig stage1 = train::StageConfig::defaults(1);
  train::StageConfig stage2 = train::StageConfig::defaults(2);
  eval::EvalOptions eval;
  AblationConfig ablate;

  // Strict: unknown keys, wrong types and inconsistent sizes throw
  // ConfigError. Missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  // Every field, defaults included.
  nlohmann::ordered_json to_json() const;
  void validate() const;
};

void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path);

}  // namespace asvr
