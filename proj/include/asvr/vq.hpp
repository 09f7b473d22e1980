#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "asvr/data.hpp"
#include "asvr/nn.hpp"

namespace asvr::vq {

// K x d_c table whose entry 0 is the frozen zero vector.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::size_t size, std::size_t dim);
  // Throws unless entry 0 is exactly zero and every value is finite.
  Codebook(std::size_t size, std::size_t dim, std::vector<double> entries);

  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> entry(std::size_t k) const;
  // Entry 0 is read-only.
  void set_entry(std::size_t k, std::span<const double> value);
  const std::vector<double>& entries() const { return entries_; }
  Tensor table() const { return Tensor::from({size_, dim_}, entries_); }

 private:
  std::size_t size_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> entries_;
};

struct RqEncoding {
  std::vector<int> codes;                       // D entries
  std::vector<std::vector<double>> residuals;   // D + 1 entries, residuals[0] = f
};

// Greedy residual quantization against a shared codebook; ties resolve to
// the smallest index.
RqEncoding rq_encode(std::span<const double> f, const Codebook& codebook, std::size_t depth);
std::vector<double> rq_decode(std::span<const int> codes, const Codebook& codebook);

// m x D grid of code indices.
struct VisualCodes {
  std::size_t positions = 0;
  std::size_t depth = 0;
  std::vector<int> codes;

  int at(std::size_t p, std::size_t d) const { return codes[p * depth + d]; }
  std::span<const int> position(std::size_t p) const {
    return std::span<const int>(codes).subspan(p * depth, depth);
  }
  bool operator==(const VisualCodes&) const = default;
};

enum class TokenizerKind { appearance, semantic };
std::string_view kind_name(TokenizerKind kind);
TokenizerKind parse_kind(std::string_view name);

struct TokenizerConfig {
  std::size_t codebook_size = 64;
  std::size_t depth = 3;
  std::size_t code_dim = 16;
  std::size_t hidden = 64;
  std::size_t patch_px = 16;
  std::size_t steps = 1200;
  std::size_t batch_size = 16;
  double lr = 3e-4;
  double beta = 0.25;
  double ema_decay = 0.99;
  double temperature = 0.07;
  std::size_t restart_every = 50;
  std::uint64_t seed = 1;
};

class TokenizerModel {
 public:
  TokenizerModel() = default;
  TokenizerModel(TokenizerKind kind, const TokenizerConfig& cfg, std::size_t image_px);

  TokenizerKind kind() const { return kind_; }
  const TokenizerConfig& config() const { return cfg_; }
  std::size_t positions() const { return positions_; }

  // Per-patch encoder output f_p, [m, d_c].
  Tensor features(const data::Image& image) const;
  Tensor encode_patches(const Tensor& centered_patches) const;
  VisualCodes encode(const data::Image& image) const;
  VisualCodes encode(const data::Image& image, std::size_t depth) const;
  // Row-wise rq_decode(rq_encode(.)) of a feature matrix, no gradient.
  Tensor quantize(const Tensor& features, std::size_t depth, VisualCodes* codes = nullptr) const;
  // Appearance only: summed code embeddings -> patch pixels in [0, 1].
  Tensor decode_patches(const Tensor& quantized) const;
  // Semantic only: mean label embedding per row of class-id sets, [n, d_c].
  Tensor label_embeddings(const std::vector<std::vector<int>>& class_sets) const;

  const Codebook& codebook() const { return codebook_; }
  Codebook& codebook() { return codebook_; }

  nn::ParamList trainable() const;
  // Everything needed to restore the model, including the codebook, EMA
  // statistics and a "meta/tokenizer_kind" marker.
  nn::ParamList state() const;
  void load_state(const nn::ParamList& saved);

  std::vector<double> ema_count;
  std::vector<double> ema_sum;

 private:
  TokenizerKind kind_ = TokenizerKind::semantic;
  TokenizerConfig cfg_;
  std::size_t image_px_ = 48;
  std::size_t positions_ = 0;
  nn::Linear enc1_, enc2_;
  Codebook codebook_;
  nn::Linear dec1_, dec2_;
  Tensor label_table_;
};

// beta * mean over rows of ||f - sg(q)||^2.
Tensor commitment_loss(const Tensor& features, const Tensor& quantized, double beta);

// Symmetric InfoNCE over in-batch negatives with cosine similarity / tau;
// the mean of the two directions.
Tensor info_nce(const Tensor& image_emb, const Tensor& label_emb, double temperature);

// Rows of a [B, 16] matrix averaging each sample's class ids.
Tensor class_set_matrix(const std::vector<std::vector<int>>& class_sets);

// Averages each consecutive block of `group` rows: [B * group, d] -> [B, d].
Tensor pool_groups(const Tensor& rows, std::size_t group);

// EMA codebook update from (residual_{d-1}, code_d) pairs of a batch. Entry 0
// never moves.
void ema_update(TokenizerModel& model, const Tensor& features, double decay);

using StepLogger = std::function<void(std::size_t step, double loss)>;

// Throws std::runtime_error if the loss becomes non-finite.
TokenizerModel train_appearance_tokenizer(const data::Corpus& corpus, const TokenizerConfig& cfg,
                                          const StepLogger& log = {});
// Throws for batch_size < 2.
TokenizerModel train_semantic_tokenizer(const data::Corpus& corpus, const TokenizerConfig& cfg,
                                        const StepLogger& log = {});

// Mean per-pixel squared error of decoder(quantized) over the samples.
double reconstruction_mse(const TokenizerModel& model, const std::vector<data::Sample>& samples);
// MSE of always predicting the mean train image.
double mean_image_mse(const std::vector<data::Sample>& train, const std::vector<data::Sample>& eval);

// Mean ||f - rq_decode(rq_encode(f))|| over every patch at the given depth.
double quantization_error(const TokenizerModel& model, const std::vector<data::Sample>& samples,
                          std::size_t depth);

// For each image, the fraction of its distinct classes found among the top
// |classes| labels ranked by cosine against the pooled image embedding. On
// single-object images this is nearest-label accuracy.
double label_retrieval_accuracy(const std::function<Tensor(const data::Image&)>& pooled,
                                const Tensor& class_table,
                                const std::vector<data::Sample>& samples);
double label_retrieval_accuracy(const TokenizerModel& model, const std::vector<data::Sample>& samples);
// Expected label_retrieval_accuracy of a random ranking.
double retrieval_chance(const std::vector<data::Sample>& samples);

struct CodebookStats {
  double utilization = 0.0;
  double perplexity = 0.0;
  std::vector<double> residual_energy;  // mean ||residual_d||^2, d = 0..D
};

// Utilization and perplexity of a code-usage histogram of size K.
CodebookStats usage_stats(const std::vector<std::size_t>& histogram);
CodebookStats codebook_stats(const TokenizerModel& model, const std::vector<data::Sample>& samples);

}  // namespace asvr::vq
