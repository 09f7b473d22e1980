#include "asvr/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace asvr::experiment {

namespace {

using Field = double eval::MetricReport::*;

struct Metric {
  const char* name;
  Field field;
};

constexpr Metric kMetrics[] = {
    {"toy_qa_exact_match", &eval::MetricReport::qa_exact_match},
    {"toy_count_acc", &eval::MetricReport::count_acc},
    {"toy_color_acc", &eval::MetricReport::color_acc},
    {"toy_existence_acc", &eval::MetricReport::existence_acc},
    {"toy_yes_bias", &eval::MetricReport::yes_bias},
    {"toy_attn_localization", &eval::MetricReport::attn_localization},
    {"toy_caption_token_acc", &eval::MetricReport::caption_token_acc},
    {"toy_count_format_rate", &eval::MetricReport::count_format_rate},
    {"toy_depth1_code_acc", &eval::MetricReport::depth1_code_acc},
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double window_mean(const std::vector<train::StepRecord>& steps, bool head, bool vision) {
  if (steps.empty()) return 0.0;
  const std::size_t n = std::min<std::size_t>(steps.size(), 20);
  const std::size_t begin = head ? 0 : steps.size() - n;
  double s = 0.0;
  for (std::size_t i = begin; i < begin + n; ++i) s += vision ? steps[i].l_vision : steps[i].l_text;
  return s / static_cast<double>(n);
}

void log_stage(const Logger& log, int stage, train::Mode mode, std::uint64_t seed, const train::TrainLog& tl) {
  if (!log) return;
  log("stage" + std::to_string(stage) + " mode=" + std::string(train::mode_name(mode)) +
      " seed=" + std::to_string(seed) + " steps=" + std::to_string(tl.steps.size()) +
      fmt(" l_text %.4f->%.4f l_vision %.4f->%.4f", window_mean(tl.steps, true, false),
          window_mean(tl.steps, false, false), window_mean(tl.steps, true, true),
          window_mean(tl.steps, false, true)));
}

std::string row_key(const AblationRow& r) {
  return std::string(train::mode_name(r.mode)) + "," + std::string(source_name(r.source)) + "," +
         std::string(strategy_name(r.strategy)) + "," + r.tokenizer;
}

}  // namespace

vq::TokenizerConfig tokenizer_config(const RunConfig& cfg) {
  vq::TokenizerConfig t = cfg.tokenizer;
  t.patch_px = cfg.patch_px;
  t.seed = cfg.seed;
  return t;
}

encoder::EncoderConfig encoder_config(const RunConfig& cfg) {
  encoder::EncoderConfig e = cfg.encoder;
  e.patch_px = cfg.patch_px;
  e.seed = cfg.seed;
  return e;
}

LvlmConfig lvlm_config(const RunConfig& cfg, const data::Vocab& vocab, FeatureSource source,
                       std::uint64_t seed) {
  LvlmConfig l = cfg.lvlm;
  l.feature_width = cfg.encoder.width;
  l.code_width = cfg.tokenizer.code_dim;
  l.vocab_size = static_cast<std::size_t>(vocab.size());
  l.vocab_fingerprint = vocab.fingerprint();
  l.features = source;
  l.seed = seed;
  return l;
}

VisualHeadConfig head_config(const RunConfig& cfg, std::uint64_t seed) {
  VisualHeadConfig h = cfg.visual_head;
  h.input_width = cfg.lvlm.width;
  h.codebook_size = cfg.tokenizer.codebook_size;
  h.depth = cfg.tokenizer.depth;
  h.seed = seed;
  return h;
}

Pretrained pretrain(const data::Corpus& corpus, const RunConfig& cfg, const Logger& log) {
  Pretrained p;
  const auto tc = tokenizer_config(cfg);
  p.semantic = vq::train_semantic_tokenizer(corpus, tc);
  if (log) log(fmt("tokenizer semantic retrieval %.4f (chance %.4f)",
                   vq::label_retrieval_accuracy(p.semantic, corpus.eval),
                   vq::retrieval_chance(corpus.eval)));
  p.appearance = vq::train_appearance_tokenizer(corpus, tc);
  if (log) log(fmt("tokenizer appearance mse %.5f (mean image %.5f)",
                   vq::reconstruction_mse(p.appearance, corpus.eval),
                   vq::mean_image_mse(corpus.train, corpus.eval)));
  p.encoder = encoder::pretrain_encoder(corpus, encoder_config(cfg));
  if (log) log(fmt("encoder retrieval %.4f", encoder::retrieval_accuracy(p.encoder, corpus.eval)));
  return p;
}

train::ModelBundle make_bundle(const data::Corpus& corpus, const Pretrained& pre, const RunConfig& cfg,
                               FeatureSource source, std::uint64_t seed) {
  train::ModelBundle mb;
  mb.encoder = pre.encoder;
  mb.semantic_tokenizer = pre.semantic;
  mb.appearance_tokenizer = pre.appearance;
  mb.lvlm = LvlmModel(lvlm_config(cfg, corpus.vocab, source, seed));
  mb.semantic_head = VisualHead(head_config(cfg, seed), "semantic");
  mb.appearance_head = VisualHead(head_config(cfg, seed), "appearance");
  return mb;
}

std::string_view strategy_name(Strategy s) { return s == Strategy::pt_it ? "pt_it" : "it_only"; }

Strategy parse_strategy(std::string_view name) {
  if (name == "pt_it") return Strategy::pt_it;
  if (name == "it_only") return Strategy::it_only;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "' (expected pt_it or it_only)");
}

RunResult two_stage(const data::Corpus& corpus, train::ModelBundle& models, const RunConfig& cfg,
                    train::Mode mode, Strategy strategy, std::uint64_t seed, const Logger& log) {
  RunResult r;
  train::LossConfig loss = cfg.loss;
  loss.mode = strategy == Strategy::it_only ? train::Mode::text_only : mode;
  train::StageConfig s1 = cfg.stage1;
  s1.stage = 1;
  r.stage1 = train::run_stage(corpus, models, s1, loss, seed);
  log_stage(log, 1, loss.mode, seed, r.stage1);
  loss.mode = mode;
  train::StageConfig s2 = cfg.stage2;
  s2.stage = 2;
  r.stage2 = train::run_stage(corpus, models, s2, loss, seed);
  log_stage(log, 2, loss.mode, seed, r.stage2);
  r.metrics = eval::evaluate(models, corpus, cfg.eval);
  if (log) log("eval " + r.metrics.to_json().dump());
  return r;
}

eval::MetricReport AblationRow::mean() const {
  eval::MetricReport m;
  if (runs.empty()) return m;
  for (const auto& metric : kMetrics) {
    double s = 0.0;
    for (const auto& r : runs) s += r.*(metric.field);
    m.*(metric.field) = s / static_cast<double>(runs.size());
  }
  m.n_questions = runs.front().n_questions;
  return m;
}

const AblationRow* AblationReport::find(train::Mode mode, FeatureSource source, Strategy strategy) const {
  for (const auto& r : rows)
    if (r.mode == mode && r.source == source && r.strategy == strategy) return &r;
  return nullptr;
}

void AblationReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "mode,source,strategy,tokenizer,seeds";
  for (const auto& m : kMetrics) out << ',' << m.name << "_mean," << m.name << "_min," << m.name << "_max";
  out << '\n';
  for (const auto& r : rows) {
    out << row_key(r) << ',' << r.runs.size();
    for (const auto& m : kMetrics) {
      double lo = 0.0, hi = 0.0;
      if (!r.runs.empty()) {
        lo = hi = r.runs.front().*(m.field);
        for (const auto& run : r.runs) {
          lo = std::min(lo, run.*(m.field));
          hi = std::max(hi, run.*(m.field));
        }
      }
      out << fmt(",%.6f,%.6f,%.6f", r.mean().*(m.field), lo, hi);
    }
    out << '\n';
  }
}

void AblationReport::write_runs_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "mode,source,strategy,tokenizer,seed";
  for (const auto& m : kMetrics) out << ',' << m.name;
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.runs.size(); ++i) {
      out << row_key(r) << ',' << r.seeds[i];
      for (const auto& m : kMetrics) out << fmt(",%.6f", r.runs[i].*(m.field));
      out << '\n';
    }
  }
}

std::string AblationReport::markdown() const {
  std::ostringstream out;
  out << "| mode | source | strategy | tokenizer | seeds |";
  for (const auto& m : kMetrics) out << ' ' << m.name << " |";
  out << "\n|---|---|---|---|---|";
  for (std::size_t i = 0; i < std::size(kMetrics); ++i) out << "---|";
  out << '\n';
  for (const auto& r : rows) {
    out << "| " << train::mode_name(r.mode) << " | " << source_name(r.source) << " | "
        << strategy_name(r.strategy) << " | " << r.tokenizer << " | " << r.runs.size() << " |";
    for (const auto& m : kMetrics) {
      double lo = 0.0, hi = 0.0;
      if (!r.runs.empty()) {
        lo = hi = r.runs.front().*(m.field);
        for (const auto& run : r.runs) {
          lo = std::min(lo, run.*(m.field));
          hi = std::max(hi, run.*(m.field));
        }
      }
      out << fmt(" %.3f ± %.3f |", r.mean().*(m.field), 0.5 * (hi - lo));
    }
    out << '\n';
  }
  return out.str();
}

AblationReport ablate(const data::Corpus& corpus, const Pretrained& pre, const RunConfig& cfg,
                      const Logger& log) {
  if (cfg.ablate.seeds.empty()) throw std::invalid_argument("ablate: no seeds");
  std::vector<Strategy> strategies{Strategy::pt_it};
  if (cfg.ablate.it_only) strategies.push_back(Strategy::it_only);
  const std::string tokenizer = "semantic-" + std::to_string(cfg.tokenizer.steps);
  AblationReport report;
  for (auto source : cfg.ablate.sources) {
    for (auto strategy : strategies) {
      for (auto mode : cfg.ablate.modes) {
        AblationRow row{mode, source, strategy, tokenizer, {}, {}};
        for (auto seed : cfg.ablate.seeds) {
          if (log) log("run mode=" + std::string(train::mode_name(mode)) + " source=" +
                       std::string(source_name(source)) + " strategy=" + std::string(strategy_name(strategy)) +
                       " seed=" + std::to_string(seed));
          train::ModelBundle mb = make_bundle(corpus, pre, cfg, source, seed);
          row.runs.push_back(two_stage(corpus, mb, cfg, mode, strategy, seed, log).metrics);
          row.seeds.push_back(seed);
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

}  // namespace asvr::experiment
