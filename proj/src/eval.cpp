#include "asvr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace asvr::eval {

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j{{"toy_qa_exact_match", qa_exact_match},
                           {"toy_caption_token_acc", caption_token_acc},
                           {"toy_count_acc", count_acc},
                           {"toy_color_acc", color_acc},
                           {"toy_existence_acc", existence_acc},
                           {"toy_yes_bias", yes_bias},
                           {"toy_attn_localization", attn_localization},
                           {"toy_count_format_rate", count_format_rate},
                           {"n_questions", n_questions}};
  if (depth1_code_acc >= 0.0) j["toy_depth1_code_acc"] = depth1_code_acc;
  return j;
}

namespace {

double ratio(std::size_t a, std::size_t b) {
  return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0;
}

std::size_t sample_limit(const std::vector<data::Sample>& samples, const EvalOptions& opts) {
  return opts.max_samples ? std::min(opts.max_samples, samples.size()) : samples.size();
}

// Cell of the queried shape in "what color is the <shape> ?".
int queried_cell(const data::Sample& s, const std::string& question) {
  for (const auto& o : s.scene.objects)
    if (question == "what color is the " + std::string(data::glyph_name(o.glyph)) + " ?") return o.cell;
  return -1;
}

}  // namespace

MetricReport score_qa(const std::vector<data::Sample>& samples, const data::Vocab& vocab,
                      const Answerer& answer) {
  MetricReport r;
  std::size_t hit = 0, total = 0, count_hit = 0, count_n = 0, count_fmt = 0, color_hit = 0,
              color_n = 0, exist_hit = 0, exist_n = 0, yes = 0;
  const std::vector<std::string> numbers{"one", "two", "three"};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    for (std::size_t q = 0; q < s.qa.size(); ++q) {
      const std::string predicted = vocab.detokenize(answer(i, s.qa_ids[q].question));
      const bool ok = predicted == s.qa[q].answer;
      hit += ok;
      ++total;
      switch (data::question_kind(s.qa[q].question)) {
        case data::QuestionKind::count:
          count_hit += ok;
          ++count_n;
          count_fmt += std::find(numbers.begin(), numbers.end(), predicted) != numbers.end();
          break;
        case data::QuestionKind::color:
          color_hit += ok;
          ++color_n;
          break;
        case data::QuestionKind::existence:
          exist_hit += ok;
          ++exist_n;
          yes += predicted == "yes";
          break;
      }
    }
  }
  r.qa_exact_match = ratio(hit, total);
  r.count_acc = ratio(count_hit, count_n);
  r.count_format_rate = ratio(count_fmt, count_n);
  r.color_acc = ratio(color_hit, color_n);
  r.existence_acc = ratio(exist_hit, exist_n);
  r.yes_bias = ratio(yes, exist_n);
  r.n_questions = total;
  return r;
}

Heatmap question_heatmap(const train::ModelBundle& models, const data::Image& image,
                         const std::vector<int>& question, std::size_t layer) {
  NoGradGuard guard;
  if (question.empty()) throw std::invalid_argument("heatmap: empty question");
  const LvlmModel& lvlm = models.lvlm;
  const Tensor features = lvlm.config().features == FeatureSource::discrete
                              ? encoder::quantized_features(image, models.semantic_tokenizer)
                              : models.encoder.encode_image(image);
  SequenceLayout layout = lvlm.assemble(lvlm.visual_embeddings(features), question, {});
  if (layer >= lvlm.blocks.size()) layer = lvlm.blocks.size() - 1;
  return lvlm.extract_attention(layout, layer, layout.text_start() + question.size() - 1);
}

MetricReport evaluate(const train::ModelBundle& models, const data::Corpus& corpus,
                      const EvalOptions& opts) {
  const LvlmModel& lvlm = models.lvlm;
  if (lvlm.config().vocab_fingerprint != corpus.vocab.fingerprint() ||
      lvlm.config().vocab_size != static_cast<std::size_t>(corpus.vocab.size())) {
    throw std::invalid_argument("model vocabulary does not match the corpus vocabulary");
  }
  NoGradGuard guard;
  const std::size_t n = sample_limit(corpus.eval, opts);
  const std::vector<data::Sample> samples(corpus.eval.begin(),
                                          corpus.eval.begin() + static_cast<std::ptrdiff_t>(n));
  const bool semantic_ok = models.semantic_tokenizer.positions() > 0;
  train::FeatureBank bank =
      train::build_features(models, samples, opts.depth_codes && semantic_ok, false);

  MetricReport r = score_qa(samples, corpus.vocab, [&](std::size_t i, const std::vector<int>& q) {
    return lvlm.generate(bank.features[i], q, opts.max_answer_len);
  });

  const std::size_t layer = std::min(opts.attention_layer, lvlm.blocks.size() - 1);
  std::size_t tok_hit = 0, tok_n = 0, loc_hit = 0, loc_n = 0, code_hit = 0, code_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    const Tensor visual = lvlm.visual_embeddings(bank.features[i]);
    std::vector<int> response = s.caption_ids;
    response.push_back(data::Vocab::kEos);
    SequenceLayout layout = lvlm.assemble(visual, {}, response);
    ForwardOutput out = lvlm.forward(layout);
    const auto v = static_cast<std::size_t>(corpus.vocab.size());
    auto logits = out.slot_logits.data();
    for (std::size_t t = 0; t < response.size(); ++t) {
      const double* row = logits.data() + t * v;
      tok_hit += static_cast<int>(std::max_element(row, row + v) - row) == response[t];
      ++tok_n;
    }
    if (opts.depth_codes && semantic_ok) {
      const VisualHead& head = models.semantic_head;
      const auto& codes = bank.semantic_codes[i];
      Tensor h = slice(out.hidden, 0, SequenceLayout::kBoi, layout.visual_len);
      Tensor dl = head.depth_logits(h, codes.codes);
      const std::size_t k = head.config().codebook_size, depth = head.config().depth;
      for (std::size_t p = 0; p < codes.positions; ++p) {
        const double* row = dl.data().data() + (p * depth) * k;
        code_hit += static_cast<int>(std::max_element(row, row + k) - row) == codes.at(p, 0);
        ++code_n;
      }
    }
    if (opts.attention) {
      for (std::size_t q = 0; q < s.qa.size(); ++q) {
        const int cell = queried_cell(s, s.qa[q].question);
        if (cell < 0) continue;
        const auto& question = s.qa_ids[q].question;
        SequenceLayout ql = lvlm.assemble(visual, question, {});
        Heatmap hm = lvlm.extract_attention(ql, layer, ql.text_start() + question.size() - 1);
        loc_hit += hm.argmax() == static_cast<std::size_t>(cell);
        ++loc_n;
      }
    }
  }
  r.caption_token_acc = ratio(tok_hit, tok_n);
  r.attn_localization = ratio(loc_hit, loc_n);
  if (code_n) r.depth1_code_acc = ratio(code_hit, code_n);
  return r;
}

void write_heatmap_pgm(const Heatmap& hm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << hm.cols << ' ' << hm.rows << "\n255\n";
  const double peak = hm.values.empty() ? 0.0 : *std::max_element(hm.values.begin(), hm.values.end());
  for (double v : hm.values) {
    const long level = peak > 0.0 ? std::lround(255.0 * v / peak) : 0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(level, 0L, 255L))));
  }
}

void write_heatmap_csv(const Heatmap& hm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t r = 0; r < hm.rows; ++r) {
    for (std::size_t c = 0; c < hm.cols; ++c) out << (c ? "," : "") << hm.values[r * hm.cols + c];
    out << '\n';
  }
}

}  // namespace asvr::eval
