#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "asvr/config.hpp"

namespace asvr::experiment {

using Logger = std::function<void(const std::string&)>;

// Module configs with the shared sizes (patch size, widths, K, D) filled in
// from the run config.
vq::TokenizerConfig tokenizer_config(const RunConfig& cfg);
encoder::EncoderConfig encoder_config(const RunConfig& cfg);
LvlmConfig lvlm_config(const RunConfig& cfg, const data::Vocab& vocab, FeatureSource source,
                       std::uint64_t seed);
VisualHeadConfig head_config(const RunConfig& cfg, std::uint64_t seed);

// Frozen inputs shared by every LVLM run.
struct Pretrained {
  vq::TokenizerModel semantic;
  vq::TokenizerModel appearance;
  encoder::EncoderModel encoder;
};

Pretrained pretrain(const data::Corpus& corpus, const RunConfig& cfg, const Logger& log = {});

// Fresh LVLM and heads on top of the pretrained models.
train::ModelBundle make_bundle(const data::Corpus& corpus, const Pretrained& pre, const RunConfig& cfg,
                               FeatureSource source, std::uint64_t seed);

enum class Strategy { pt_it, it_only };
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct RunResult {
  train::TrainLog stage1;
  train::TrainLog stage2;
  eval::MetricReport metrics;
};

// Stage 1, stage 2, evaluation. IT-only runs stage 1 without vision loss.
RunResult two_stage(const data::Corpus& corpus, train::ModelBundle& models, const RunConfig& cfg,
                    train::Mode mode, Strategy strategy, std::uint64_t seed, const Logger& log = {});

struct AblationRow {
  train::Mode mode = train::Mode::text_only;
  FeatureSource source = FeatureSource::continuous;
  Strategy strategy = Strategy::pt_it;
  std::string tokenizer;
  std::vector<std::uint64_t> seeds;
  std::vector<eval::MetricReport> runs;  // one per seed

  eval::MetricReport mean() const;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  const AblationRow* find(train::Mode mode, FeatureSource source, Strategy strategy) const;
  // Mean, min and max of every metric, one line per row.
  void write_csv(const std::filesystem::path& path) const;
  // One line per (row, seed).
  void write_runs_csv(const std::filesystem::path& path) const;
  // "mean ± half-range" table.
  std::string markdown() const;
};

// Every (mode, source, strategy) of cfg.ablate, each over every seed.
AblationReport ablate(const data::Corpus& corpus, const Pretrained& pre, const RunConfig& cfg,
                      const Logger& log = {});

}  // namespace asvr::experiment
