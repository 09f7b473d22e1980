#include <filesystem>
#include <fstream>

#include "asvr/experiment.hpp"
#include "doctest.h"

using namespace asvr;
using nlohmann::json;

TEST_CASE("empty config resolves to the defaults") {
  RunConfig c = RunConfig::from_json(json::object());
  CHECK(c.data.n_train == 5000);
  CHECK(c.data.n_eval == 1000);
  CHECK(c.tokenizer.codebook_size == 64);
  CHECK(c.tokenizer.depth == 3);
  CHECK(c.lvlm.width == 64);
  CHECK(c.encoder.width == 32);
  CHECK(c.loss.lambda_vision == 1.0);
  CHECK(c.loss.average_over_depth);
  CHECK(c.stage1.peak_lr() == 1e-3);
  CHECK(c.stage2.lr == 2e-5);
}

TEST_CASE("resolved config round trips through JSON") {
  json j = {{"seed", 4},
            {"data", {{"n_train", 50}, {"n_eval", 10}}},
            {"tokenizer", {{"K", 32}, {"kind", "appearance"}}},
            {"lvlm", {{"d", 32}, {"d_v", 16}, {"features", "discrete"}}},
            {"loss", {{"mode", "dual"}, {"lambda_vision", 0.5}, {"same_position", true}}},
            {"stage2", {{"lr_multiplier", 10.0}, {"max_examples", 7}}},
            {"eval", {{"attention_layer", 0}}},
            {"ablate", {{"modes", {"text", "semantic"}}, {"seeds", {5, 6}}, {"it_only", true}}}};
  RunConfig c = RunConfig::from_json(j);
  CHECK(c.seed == 4);
  CHECK(c.encoder.width == 16);
  CHECK(c.tokenizer_kind == vq::TokenizerKind::appearance);
  CHECK(c.lvlm.features == FeatureSource::discrete);
  CHECK(c.loss.mode == train::Mode::dual);
  CHECK(c.eval.attention_layer == 0);
  CHECK(c.ablate.seeds == std::vector<std::uint64_t>{5, 6});
  const auto dumped = c.to_json();
  RunConfig back = RunConfig::from_json(json::parse(dumped.dump()));
  CHECK(back.to_json() == dumped);
}

TEST_CASE("strict schema rejects unknown keys, wrong types and inconsistent sizes") {
  CHECK_THROWS_AS(RunConfig::from_json({{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"lvlm", {{"width", 64}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"n_train", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"n_train", -3}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"loss", {{"mode", "pixels"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"loss", {{"lambda_vision", -1.0}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"encoder", {{"d_v", 16}}}, {"lvlm", {{"d_v", 32}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"lvlm", {{"d", 30}, {"heads", 4}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"image_px", 50}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"stage1", {{"lr", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"ablate", {{"seeds", json::array()}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/asvr.json"), ConfigError);
}

TEST_CASE("ablation report has one row per requested combination") {
  RunConfig cfg;
  cfg.data = {7, 16, 6, 48};
  cfg.tokenizer.codebook_size = 8;
  cfg.tokenizer.depth = 2;
  cfg.tokenizer.code_dim = 4;
  cfg.tokenizer.hidden = 8;
  cfg.tokenizer.steps = 2;
  cfg.encoder.width = 8;
  cfg.encoder.layers = 1;
  cfg.encoder.heads = 2;
  cfg.encoder.steps = 2;
  cfg.lvlm.width = 8;
  cfg.lvlm.feature_width = 8;
  cfg.lvlm.layers = 1;
  cfg.lvlm.heads = 2;
  cfg.visual_head.width = 4;
  cfg.visual_head.layers = 1;
  cfg.stage1.max_examples = 8;
  cfg.stage2.max_examples = 8;
  cfg.eval.max_samples = 3;
  cfg.ablate.modes = {train::Mode::text_only, train::Mode::semantic};
  cfg.ablate.seeds = {1, 2};
  cfg.ablate.it_only = true;
  cfg.validate();
  const data::Corpus c = data::generate(cfg.data);
  const auto pre = experiment::pretrain(c, cfg);
  const auto report = experiment::ablate(c, pre, cfg);
  REQUIRE(report.rows.size() == 4);
  for (const auto& r : report.rows) CHECK(r.runs.size() == 2);
  // Without vision loss the strategy makes no difference.
  const auto* a = report.find(train::Mode::text_only, FeatureSource::continuous, experiment::Strategy::pt_it);
  const auto* b = report.find(train::Mode::text_only, FeatureSource::continuous, experiment::Strategy::it_only);
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->runs == b->runs);
  const std::string md = report.markdown();
  CHECK(md.find("toy_qa_exact_match") != std::string::npos);
  CHECK(std::count(md.begin(), md.end(), '\n') == 2 + 4);

  // Text-only runs ignore the tokenizer entirely.
  experiment::Pretrained other = pre;
  RunConfig weak = cfg;
  weak.tokenizer.steps = 1;
  other.semantic = vq::train_semantic_tokenizer(c, experiment::tokenizer_config(weak));
  other.appearance = vq::train_appearance_tokenizer(c, experiment::tokenizer_config(weak));
  train::ModelBundle mb = experiment::make_bundle(c, other, cfg, FeatureSource::continuous, 1);
  const auto r = experiment::two_stage(c, mb, cfg, train::Mode::text_only, experiment::Strategy::pt_it, 1);
  CHECK(r.metrics.qa_exact_match == a->runs[0].qa_exact_match);
  CHECK(r.metrics.attn_localization == a->runs[0].attn_localization);
}
