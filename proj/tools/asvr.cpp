#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "asvr/checkpoint.hpp"
#include "asvr/experiment.hpp"

namespace fs = std::filesystem;
using namespace asvr;

namespace {

// Precondition failures that are the caller's fault (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string data;
  std::string models;
};

class RunLog {
 public:
  explicit RunLog(const fs::path& path) : file_(path) {
    if (!file_) throw std::runtime_error("cannot write " + path.string());
  }
  void operator()(const std::string& line) {
    file_ << line << '\n';
    file_.flush();
    std::cout << line << '\n';
  }

 private:
  std::ofstream file_;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

data::Corpus corpus_for(const Options& o, const RunConfig& cfg) {
  if (!o.data.empty()) {
    data::Corpus c = data::load_corpus(o.data);
    if (!c.train.empty() && c.train.front().image.height != cfg.data.image_px) {
      throw UsageError("corpus image size does not match data.image_px");
    }
    return c;
  }
  return data::generate(cfg.data);
}

fs::path models_dir(const Options& o) { return o.models.empty() ? fs::path(o.out) : fs::path(o.models); }

nn::ParamList load_required(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError("missing " + what + " checkpoint " + path.string());
  return load_checkpoint(path);
}

experiment::Pretrained load_pretrained(const Options& o, const RunConfig& cfg) {
  const fs::path dir = models_dir(o);
  const auto tc = experiment::tokenizer_config(cfg);
  experiment::Pretrained p;
  p.semantic = vq::TokenizerModel(vq::TokenizerKind::semantic, tc, cfg.data.image_px);
  p.semantic.load_state(load_required(dir / "tokenizer-semantic.ckpt", "semantic tokenizer"));
  p.appearance = vq::TokenizerModel(vq::TokenizerKind::appearance, tc, cfg.data.image_px);
  p.appearance.load_state(load_required(dir / "tokenizer-appearance.ckpt", "appearance tokenizer"));
  p.encoder = encoder::EncoderModel(experiment::encoder_config(cfg), cfg.data.image_px);
  p.encoder.load_state(load_required(dir / "encoder.ckpt", "encoder"));
  return p;
}

bool have_pretrained(const Options& o) {
  const fs::path dir = models_dir(o);
  return fs::exists(dir / "tokenizer-semantic.ckpt") && fs::exists(dir / "tokenizer-appearance.ckpt") &&
         fs::exists(dir / "encoder.ckpt");
}

FeatureSource checkpoint_source(const nn::ParamList& saved) {
  return nn::find_param(saved, "meta/feature_source").item() == 1.0 ? FeatureSource::discrete
                                                                    : FeatureSource::continuous;
}

// Bundle restored from an LVLM checkpoint written by `train`.
train::ModelBundle load_bundle(const Options& o, const RunConfig& cfg, const data::Corpus& corpus,
                               const std::string& checkpoint) {
  const nn::ParamList saved = load_required(checkpoint, "LVLM");
  train::ModelBundle mb =
      experiment::make_bundle(corpus, load_pretrained(o, cfg), cfg, checkpoint_source(saved), cfg.seed);
  mb.load_lvlm_state(saved);
  return mb;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autoregressive semantic visual reconstruction lab"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Override the run seed");
  app.add_option("--out", o.out, "Output directory")->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");

  auto* tok = app.add_subcommand("train-tokenizer", "Train a residual-quantized tokenizer");
  std::string kind;
  tok->add_option("--kind", kind, "semantic or appearance")
      ->required()
      ->check(CLI::IsMember({"semantic", "appearance"}));

  auto* enc = app.add_subcommand("train-encoder", "Pretrain the vision encoder");

  auto* tr = app.add_subcommand("train", "Run one LVLM training stage");
  int stage = 1;
  std::string mode = "semantic", features = "continuous", init;
  bool from_scratch = false;
  tr->add_option("--stage", stage)->required()->check(CLI::IsMember({1, 2}));
  tr->add_option("--mode", mode)->check(CLI::IsMember({"text", "text_only", "semantic", "appearance", "dual"}))
      ->capture_default_str();
  tr->add_option("--features", features)->check(CLI::IsMember({"continuous", "discrete"}))->capture_default_str();
  tr->add_option("--init", init, "Stage-1 checkpoint to continue from");
  tr->add_flag("--from-scratch", from_scratch, "Stage 2 without a stage-1 checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate an LVLM checkpoint");
  std::string checkpoint;
  ev->add_option("--checkpoint", checkpoint)->required();

  auto* ab = app.add_subcommand("ablate", "Supervision-mode ablation over seeds");
  std::vector<std::string> modes;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> sources;
  bool it_only = false;
  ab->add_option("--modes", modes)->delimiter(',');
  ab->add_option("--seeds", seeds)->delimiter(',');
  ab->add_option("--sources", sources)->delimiter(',');
  ab->add_flag("--it-only", it_only, "Add IT-only strategy rows");

  auto* am = app.add_subcommand("attn-map", "Attention heatmap of a question over the image");
  std::string question;
  std::size_t sample = 0;
  int layer = -1;
  am->add_option("--question", question)->required();
  am->add_option("--checkpoint", checkpoint)->required();
  am->add_option("--sample", sample, "Eval image index")->capture_default_str();
  am->add_option("--layer", layer, "Backbone layer, -1 for the last")->capture_default_str();

  for (auto* sub : {gen, tok, enc, tr, ev, ab, am}) {
    sub->add_option("--data", o.data, "Corpus directory (default: generate from config)");
    sub->fallthrough();
  }
  for (auto* sub : {tr, ev, ab, am}) sub->add_option("--models", o.models, "Directory of pretrained checkpoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = resolve(o);
    const fs::path out = o.out;
    fs::create_directories(out);
    write_json(cfg.to_json(), out / "resolved-config.json");
    RunLog log(out / (app.get_subcommands().front()->get_name() + ".log"));
    experiment::Logger logger = [&log](const std::string& s) { log(s); };

    if (gen->parsed()) {
      const data::Corpus c = data::generate(cfg.data);
      const std::size_t n = data::write_corpus(c, out / "data");
      log("wrote " + std::to_string(n) + " records to " + (out / "data").string());
      return 0;
    }

    const data::Corpus corpus = corpus_for(o, cfg);
    log("corpus train=" + std::to_string(corpus.train.size()) + " eval=" + std::to_string(corpus.eval.size()));

    if (tok->parsed()) {
      const auto tc = experiment::tokenizer_config(cfg);
      const auto k = vq::parse_kind(kind);
      vq::TokenizerModel m = k == vq::TokenizerKind::semantic ? vq::train_semantic_tokenizer(corpus, tc)
                                                              : vq::train_appearance_tokenizer(corpus, tc);
      save_checkpoint(m.state(), out / ("tokenizer-" + kind + ".ckpt"));
      nlohmann::ordered_json metrics;
      const auto stats = vq::codebook_stats(m, corpus.eval);
      metrics["toy_utilization"] = stats.utilization;
      metrics["toy_perplexity"] = stats.perplexity;
      metrics["toy_quant_err_d1"] = vq::quantization_error(m, corpus.eval, 1);
      metrics["toy_quant_err_dmax"] = vq::quantization_error(m, corpus.eval, tc.depth);
      if (k == vq::TokenizerKind::semantic) {
        metrics["toy_label_retrieval"] = vq::label_retrieval_accuracy(m, corpus.eval);
        metrics["toy_retrieval_chance"] = vq::retrieval_chance(corpus.eval);
      } else {
        metrics["toy_recon_mse"] = vq::reconstruction_mse(m, corpus.eval);
        metrics["toy_mean_image_mse"] = vq::mean_image_mse(corpus.train, corpus.eval);
      }
      write_json(metrics, out / ("tokenizer-" + kind + "-metrics.json"));
      log("tokenizer " + kind + " " + metrics.dump());
      return 0;
    }

    if (enc->parsed()) {
      const auto m = encoder::pretrain_encoder(corpus, experiment::encoder_config(cfg));
      save_checkpoint(m.params(), out / "encoder.ckpt");
      log("encoder retrieval " + fmt("%.4f", encoder::retrieval_accuracy(m, corpus.eval)));
      return 0;
    }

    if (tr->parsed()) {
      const auto source = parse_source(features);
      train::ModelBundle mb = experiment::make_bundle(corpus, load_pretrained(o, cfg), cfg, source, cfg.seed);
      if (!init.empty()) {
        const nn::ParamList saved = load_required(init, "LVLM");
        if (checkpoint_source(saved) != source) throw UsageError("--init was trained with other features");
        mb.load_lvlm_state(saved);
      }
      train::StageConfig sc = stage == 1 ? cfg.stage1 : cfg.stage2;
      sc.stage = stage;
      sc.from_scratch = from_scratch;
      train::LossConfig loss = cfg.loss;
      loss.mode = train::parse_mode(mode);
      const fs::path ckpt = out / ("lvlm-stage" + std::to_string(stage) + ".ckpt");
      try {
        const train::TrainLog tl = train::run_stage(corpus, mb, sc, loss, cfg.seed);
        tl.write_jsonl(out / ("train-stage" + std::to_string(stage) + ".jsonl"));
        save_checkpoint(mb.lvlm_state(), ckpt);
        log("stage " + std::to_string(stage) + " steps=" + std::to_string(tl.steps.size()) +
            (tl.steps.empty() ? "" : fmt(" final_l_total=%.6f", tl.steps.back().l_total)));
      } catch (const train::DivergenceError& e) {
        save_checkpoint(mb.lvlm_state(), out / ("lvlm-stage" + std::to_string(stage) + "-last-good.ckpt"));
        log(std::string("diverged: ") + e.what());
        return 2;
      }
      return 0;
    }

    if (ev->parsed()) {
      const train::ModelBundle mb = load_bundle(o, cfg, corpus, checkpoint);
      const auto report = eval::evaluate(mb, corpus, cfg.eval);
      write_json(report.to_json(), out / "metrics.json");
      log("eval " + report.to_json().dump());
      return 0;
    }

    if (ab->parsed()) {
      if (!modes.empty()) {
        cfg.ablate.modes.clear();
        for (const auto& m : modes) cfg.ablate.modes.push_back(train::parse_mode(m));
      }
      if (!seeds.empty()) cfg.ablate.seeds = seeds;
      if (!sources.empty()) {
        cfg.ablate.sources.clear();
        for (const auto& s : sources) cfg.ablate.sources.push_back(parse_source(s));
      }
      if (it_only) cfg.ablate.it_only = true;
      cfg.validate();
      write_json(cfg.to_json(), out / "resolved-config.json");
      experiment::Pretrained pre;
      if (have_pretrained(o)) {
        pre = load_pretrained(o, cfg);
      } else {
        log("pretraining tokenizers and encoder");
        pre = experiment::pretrain(corpus, cfg, logger);
      }
      const auto report = experiment::ablate(corpus, pre, cfg, logger);
      report.write_csv(out / "ablation.csv");
      report.write_runs_csv(out / "ablation-runs.csv");
      std::ofstream(out / "ablation.md") << report.markdown();
      log(report.markdown());
      return 0;
    }

    if (am->parsed()) {
      if (sample >= corpus.eval.size()) throw UsageError("--sample out of range");
      const train::ModelBundle mb = load_bundle(o, cfg, corpus, checkpoint);
      const std::vector<int> q = corpus.vocab.tokenize(question);
      const std::size_t l = layer < 0 ? mb.lvlm.config().layers - 1 : static_cast<std::size_t>(layer);
      const Heatmap hm = eval::question_heatmap(mb, corpus.eval[sample].image, q, l);
      eval::write_heatmap_pgm(hm, out / "attn.pgm");
      eval::write_heatmap_csv(hm, out / "attn.csv");
      const std::size_t peak = hm.argmax();
      log("attn-map argmax row=" + std::to_string(peak / hm.cols) + " col=" + std::to_string(peak % hm.cols));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
