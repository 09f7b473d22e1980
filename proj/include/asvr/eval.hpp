#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <limits>
#include <vector>

#include "asvr/data.hpp"
#include "asvr/lvlm.hpp"
#include "asvr/training.hpp"
#include "json.hpp"

namespace asvr::eval {

struct MetricReport {
  double qa_exact_match = 0.0;
  double caption_token_acc = 0.0;
  double count_acc = 0.0;
  double color_acc = 0.0;
  double existence_acc = 0.0;
  double yes_bias = 0.0;
  double attn_localization = 0.0;
  // Fraction of "how many shapes ?" answers that are a number word.
  double count_format_rate = 0.0;
  // Teacher-forced depth-1 accuracy of the semantic head; negative when
  // not measured.
  double depth1_code_acc = -1.0;
  std::size_t n_questions = 0;

  nlohmann::ordered_json to_json() const;
  bool operator==(const MetricReport&) const = default;
};

struct EvalOptions {
  int max_answer_len = 4;
  std::size_t attention_layer = std::numeric_limits<std::size_t>::max();  // max = last layer
  std::size_t max_samples = 0;  // 0 = whole split
  bool attention = true;
  bool depth_codes = true;
};

using Answerer = std::function<std::vector<int>(std::size_t sample, const std::vector<int>& question)>;

// QA fields only; `answer` maps (sample index, question ids) to answer ids.
MetricReport score_qa(const std::vector<data::Sample>& samples, const data::Vocab& vocab,
                      const Answerer& answer);

// Throws std::invalid_argument if the model was built for another vocabulary.
MetricReport evaluate(const train::ModelBundle& models, const data::Corpus& corpus,
                      const EvalOptions& opts = {});

// Heatmap of the last question token for one image and question.
Heatmap question_heatmap(const train::ModelBundle& models, const data::Image& image,
                         const std::vector<int>& question, std::size_t layer);

// P5 rescaled so the largest value maps to 255, and row-major CSV.
void write_heatmap_pgm(const Heatmap& hm, const std::filesystem::path& path);
void write_heatmap_csv(const Heatmap& hm, const std::filesystem::path& path);

}  // namespace asvr::eval
