#include "asvr/vq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "asvr/optim.hpp"

namespace asvr::vq {

Codebook::Codebook(std::size_t size, std::size_t dim)
    : size_(size), dim_(dim), entries_(size * dim, 0.0) {
  if (size == 0 || dim == 0) throw std::invalid_argument("codebook: empty shape");
}

Codebook::Codebook(std::size_t size, std::size_t dim, std::vector<double> entries)
    : size_(size), dim_(dim), entries_(std::move(entries)) {
  if (size == 0 || dim == 0 || entries_.size() != size * dim) {
    throw std::invalid_argument("codebook: " + std::to_string(entries_.size()) +
                                " values for a " + std::to_string(size) + "x" +
                                std::to_string(dim) + " table");
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (entries_[j] != 0.0) throw std::invalid_argument("codebook: entry 0 must be zero");
  }
  for (double v : entries_) {
    if (!std::isfinite(v)) throw std::invalid_argument("codebook: non-finite entry");
  }
}

std::span<const double> Codebook::entry(std::size_t k) const {
  if (k >= size_) throw std::out_of_range("codebook: index " + std::to_string(k));
  return std::span<const double>(entries_).subspan(k * dim_, dim_);
}

void Codebook::set_entry(std::size_t k, std::span<const double> value) {
  if (k == 0) throw std::logic_error("codebook: entry 0 is frozen");
  if (k >= size_) throw std::out_of_range("codebook: index " + std::to_string(k));
  if (value.size() != dim_) throw ShapeError("codebook: entry of wrong width");
  std::copy(value.begin(), value.end(), entries_.begin() + static_cast<std::ptrdiff_t>(k * dim_));
}

RqEncoding rq_encode(std::span<const double> f, const Codebook& codebook, std::size_t depth) {
  if (depth == 0) throw std::invalid_argument("rq_encode: depth must be >= 1");
  if (f.size() != codebook.dim()) {
    throw ShapeError("rq_encode: feature width " + std::to_string(f.size()) +
                     " vs code width " + std::to_string(codebook.dim()));
  }
  for (double v : f) {
    if (!std::isfinite(v)) throw std::invalid_argument("rq_encode: non-finite input");
  }
  RqEncoding out;
  out.residuals.emplace_back(f.begin(), f.end());
  const std::size_t dim = codebook.dim();
  const double* table = codebook.entries().data();
  for (std::size_t d = 0; d < depth; ++d) {
    const std::vector<double>& r = out.residuals.back();
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < codebook.size(); ++k) {
      const double* c = table + k * dim;
      double dist = 0.0;
      for (std::size_t j = 0; j < dim; ++j) dist += (r[j] - c[j]) * (r[j] - c[j]);
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    std::vector<double> next(dim);
    for (std::size_t j = 0; j < dim; ++j) next[j] = r[j] - table[best * dim + j];
    out.codes.push_back(static_cast<int>(best));
    out.residuals.push_back(std::move(next));
  }
  return out;
}

std::vector<double> rq_decode(std::span<const int> codes, const Codebook& codebook) {
  std::vector<double> out(codebook.dim(), 0.0);
  for (int c : codes) {
    if (c < 0 || static_cast<std::size_t>(c) >= codebook.size()) {
      throw std::out_of_range("rq_decode: code " + std::to_string(c) + " out of range [0," +
                              std::to_string(codebook.size()) + ")");
    }
    auto e = codebook.entry(static_cast<std::size_t>(c));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += e[j];
  }
  return out;
}

std::string_view kind_name(TokenizerKind kind) {
  return kind == TokenizerKind::appearance ? "appearance" : "semantic";
}

TokenizerKind parse_kind(std::string_view name) {
  if (name == "appearance") return TokenizerKind::appearance;
  if (name == "semantic") return TokenizerKind::semantic;
  throw std::invalid_argument("unknown tokenizer kind '" + std::string(name) + "'");
}

TokenizerModel::TokenizerModel(TokenizerKind kind, const TokenizerConfig& cfg, std::size_t image_px)
    : kind_(kind), cfg_(cfg), image_px_(image_px) {
  if (cfg.patch_px == 0 || image_px % cfg.patch_px != 0) {
    throw std::invalid_argument("tokenizer: image size not divisible by patch size");
  }
  if (cfg.depth == 0 || cfg.codebook_size < 2) {
    throw std::invalid_argument("tokenizer: need depth >= 1 and at least 2 codes");
  }
  const std::size_t side = image_px / cfg.patch_px;
  positions_ = side * side;
  const std::size_t patch_dim = cfg.patch_px * cfg.patch_px * 3;
  nn::Rng rng(cfg.seed, "tokenizer/" + std::string(kind_name(kind)));
  enc1_ = nn::Linear(patch_dim, cfg.hidden, rng);
  enc2_ = nn::Linear(cfg.hidden, cfg.code_dim, rng);
  codebook_ = Codebook(cfg.codebook_size, cfg.code_dim);
  ema_count.assign(cfg.codebook_size, 0.0);
  ema_sum.assign(cfg.codebook_size * cfg.code_dim, 0.0);
  if (kind == TokenizerKind::appearance) {
    dec1_ = nn::Linear(cfg.code_dim, cfg.hidden, rng);
    dec2_ = nn::Linear(cfg.hidden, patch_dim, rng);
  } else {
    label_table_ = nn::randn_param({static_cast<std::size_t>(data::kClasses), cfg.code_dim}, 1.0, rng);
  }
}

Tensor TokenizerModel::encode_patches(const Tensor& centered_patches) const {
  return enc2_(gelu(enc1_(centered_patches)));
}

Tensor TokenizerModel::features(const data::Image& image) const {
  return encode_patches(nn::patchify(image, cfg_.patch_px));
}

VisualCodes TokenizerModel::encode(const data::Image& image) const {
  return encode(image, cfg_.depth);
}

VisualCodes TokenizerModel::encode(const data::Image& image, std::size_t depth) const {
  NoGradGuard guard;
  VisualCodes codes;
  quantize(features(image), depth, &codes);
  return codes;
}

Tensor TokenizerModel::quantize(const Tensor& features, std::size_t depth, VisualCodes* codes) const {
  const std::size_t rows = features.dim(0), dim = features.dim(1);
  std::vector<double> out(rows * dim);
  if (codes) *codes = VisualCodes{rows, depth, {}};
  auto f = features.data();
  for (std::size_t r = 0; r < rows; ++r) {
    RqEncoding enc = rq_encode(f.subspan(r * dim, dim), codebook_, depth);
    auto q = rq_decode(enc.codes, codebook_);
    std::copy(q.begin(), q.end(), out.begin() + static_cast<std::ptrdiff_t>(r * dim));
    if (codes) codes->codes.insert(codes->codes.end(), enc.codes.begin(), enc.codes.end());
  }
  return Tensor::from({rows, dim}, std::move(out));
}

Tensor TokenizerModel::decode_patches(const Tensor& quantized) const {
  if (kind_ != TokenizerKind::appearance) {
    throw std::logic_error("decode_patches: semantic tokenizers have no pixel decoder");
  }
  return dec2_(gelu(dec1_(quantized)));
}

Tensor TokenizerModel::label_embeddings(const std::vector<std::vector<int>>& class_sets) const {
  if (kind_ != TokenizerKind::semantic) {
    throw std::logic_error("label_embeddings: appearance tokenizers have no label embedder");
  }
  return matmul(class_set_matrix(class_sets), label_table_);
}

nn::ParamList TokenizerModel::trainable() const {
  nn::ParamList out;
  enc1_.collect("tokenizer/enc1.", out);
  enc2_.collect("tokenizer/enc2.", out);
  if (kind_ == TokenizerKind::appearance) {
    dec1_.collect("tokenizer/dec1.", out);
    dec2_.collect("tokenizer/dec2.", out);
  } else {
    out.push_back({"tokenizer/label_table", label_table_});
  }
  return out;
}

nn::ParamList TokenizerModel::state() const {
  nn::ParamList out = trainable();
  out.push_back({"tokenizer/codebook", codebook_.table()});
  out.push_back({"tokenizer/ema_count", Tensor::from({ema_count.size()}, ema_count)});
  out.push_back({"tokenizer/ema_sum", Tensor::from({cfg_.codebook_size, cfg_.code_dim}, ema_sum)});
  out.push_back({"meta/tokenizer_kind",
                 Tensor::scalar(kind_ == TokenizerKind::semantic ? 1.0 : 0.0)});
  return out;
}

void TokenizerModel::load_state(const nn::ParamList& saved) {
  const double kind = nn::find_param(saved, "meta/tokenizer_kind").item();
  if ((kind == 1.0) != (kind_ == TokenizerKind::semantic)) {
    throw std::invalid_argument("tokenizer checkpoint holds a " +
                                std::string(kind == 1.0 ? "semantic" : "appearance") +
                                " tokenizer, expected " + std::string(kind_name(kind_)));
  }
  nn::assign_params(trainable(), saved);
  const Tensor& cb = nn::find_param(saved, "tokenizer/codebook");
  if (cb.shape() != Shape{cfg_.codebook_size, cfg_.code_dim}) {
    throw ShapeError("tokenizer: codebook " + shape_str(cb.shape()) + " does not match config");
  }
  codebook_ = Codebook(cfg_.codebook_size, cfg_.code_dim, cb.to_vector());
  ema_count = nn::find_param(saved, "tokenizer/ema_count").to_vector();
  ema_sum = nn::find_param(saved, "tokenizer/ema_sum").to_vector();
}

Tensor commitment_loss(const Tensor& features, const Tensor& quantized, double beta) {
  Tensor diff = sub(features, quantized.detach());
  const double rows = static_cast<double>(features.dim(0));
  return scale(sum(mul(diff, diff)), beta / rows);
}

Tensor info_nce(const Tensor& image_emb, const Tensor& label_emb, double temperature) {
  if (image_emb.rank() != 2 || image_emb.shape() != label_emb.shape()) {
    throw ShapeError("info_nce: " + shape_str(image_emb.shape()) + " vs " +
                     shape_str(label_emb.shape()));
  }
  const std::size_t b = image_emb.dim(0);
  if (b < 2) throw std::invalid_argument("info_nce: contrastive loss needs a batch of at least 2");
  Tensor logits = scale(matmul(l2_normalize_rows(image_emb), transpose(l2_normalize_rows(label_emb))),
                        1.0 / temperature);
  std::vector<int> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = static_cast<int>(i);
  Tensor i2l = mean(cross_entropy(logits, diag));
  Tensor l2i = mean(cross_entropy(transpose(logits), diag));
  return scale(add(i2l, l2i), 0.5);
}

Tensor class_set_matrix(const std::vector<std::vector<int>>& class_sets) {
  const std::size_t classes = static_cast<std::size_t>(data::kClasses);
  std::vector<double> m(class_sets.size() * classes, 0.0);
  for (std::size_t i = 0; i < class_sets.size(); ++i) {
    if (class_sets[i].empty()) throw std::invalid_argument("class_set_matrix: empty label set");
    const double w = 1.0 / static_cast<double>(class_sets[i].size());
    for (int c : class_sets[i]) {
      if (c < 0 || c >= data::kClasses) throw std::out_of_range("class id " + std::to_string(c));
      m[i * classes + static_cast<std::size_t>(c)] += w;
    }
  }
  return Tensor::from({class_sets.size(), classes}, std::move(m));
}

Tensor pool_groups(const Tensor& rows, std::size_t group) {
  if (group == 0 || rows.dim(0) % group != 0) {
    throw ShapeError("pool_groups: " + shape_str(rows.shape()) + " not in groups of " +
                     std::to_string(group));
  }
  const std::size_t b = rows.dim(0) / group;
  std::vector<double> avg(b * rows.dim(0), 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < group; ++j)
      avg[i * rows.dim(0) + i * group + j] = 1.0 / static_cast<double>(group);
  return matmul(Tensor::from({b, rows.dim(0)}, std::move(avg)), rows);
}

void ema_update(TokenizerModel& model, const Tensor& features, double decay) {
  const auto& cfg = model.config();
  const std::size_t k_count = cfg.codebook_size, dim = cfg.code_dim;
  std::vector<double> counts(k_count, 0.0);
  std::vector<double> sums(k_count * dim, 0.0);
  const std::size_t rows = features.dim(0);
  auto f = features.data();
  Codebook& cb = model.codebook();
  for (std::size_t r = 0; r < rows; ++r) {
    RqEncoding enc = rq_encode(f.subspan(r * dim, dim), cb, cfg.depth);
    for (std::size_t d = 0; d < cfg.depth; ++d) {
      const auto k = static_cast<std::size_t>(enc.codes[d]);
      if (k == 0) continue;
      counts[k] += 1.0;
      for (std::size_t j = 0; j < dim; ++j) sums[k * dim + j] += enc.residuals[d][j];
    }
  }
  for (std::size_t k = 1; k < k_count; ++k) {
    model.ema_count[k] = decay * model.ema_count[k] + (1.0 - decay) * counts[k];
    for (std::size_t j = 0; j < dim; ++j)
      model.ema_sum[k * dim + j] = decay * model.ema_sum[k * dim + j] + (1.0 - decay) * sums[k * dim + j];
    if (model.ema_count[k] > 1e-12) {
      std::vector<double> c(dim);
      for (std::size_t j = 0; j < dim; ++j) c[j] = model.ema_sum[k * dim + j] / model.ema_count[k];
      cb.set_entry(k, c);
    }
  }
}

namespace {

constexpr double kDeadCount = 0.03;

// Residual inputs r_{d-1} seen at every depth for each row.
std::vector<std::vector<double>> residual_pool(const TokenizerModel& model, const Tensor& features) {
  const std::size_t dim = model.config().code_dim;
  std::vector<std::vector<double>> pool;
  auto f = features.data();
  for (std::size_t r = 0; r < features.dim(0); ++r) {
    RqEncoding enc = rq_encode(f.subspan(r * dim, dim), model.codebook(), model.config().depth);
    for (std::size_t d = 0; d < model.config().depth; ++d) pool.push_back(enc.residuals[d]);
  }
  return pool;
}

void seed_entry(TokenizerModel& model, std::size_t k, const std::vector<double>& v, nn::Rng& rng) {
  const std::size_t dim = v.size();
  std::vector<double> c(dim);
  for (std::size_t j = 0; j < dim; ++j) c[j] = v[j] + rng.normal(1e-3);
  model.codebook().set_entry(k, c);
  model.ema_count[k] = 1.0;
  for (std::size_t j = 0; j < dim; ++j) model.ema_sum[k * dim + j] = c[j];
}

// Data-dependent initialization: every non-zero entry starts at a batch
// feature.
void init_codebook(TokenizerModel& model, const Tensor& features, nn::Rng& rng) {
  const std::size_t dim = model.config().code_dim;
  const std::size_t rows = features.dim(0);
  auto f = features.data();
  for (std::size_t k = 1; k < model.config().codebook_size; ++k) {
    const std::size_t r = rng.below(rows);
    seed_entry(model, k, std::vector<double>(f.begin() + static_cast<std::ptrdiff_t>(r * dim),
                                             f.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim)),
               rng);
  }
}

void restart_dead(TokenizerModel& model, const Tensor& features, nn::Rng& rng) {
  std::vector<std::vector<double>> pool;
  for (std::size_t k = 1; k < model.config().codebook_size; ++k) {
    if (model.ema_count[k] >= kDeadCount) continue;
    if (pool.empty()) pool = residual_pool(model, features);
    seed_entry(model, k, pool[rng.below(pool.size())], rng);
  }
}

struct Batch {
  Tensor centered;  // [B * m, patch_dim]
  Tensor raw;
  std::vector<std::vector<int>> classes;
};

Batch draw_batch(const std::vector<data::Sample>& samples, std::size_t batch, std::size_t patch_px,
                 nn::Rng& rng, bool want_raw) {
  std::vector<Tensor> c, r;
  Batch out;
  for (std::size_t i = 0; i < batch; ++i) {
    const data::Sample& s = samples[rng.below(samples.size())];
    c.push_back(nn::patchify(s.image, patch_px, true));
    if (want_raw) r.push_back(nn::patchify(s.image, patch_px, false));
    out.classes.push_back(s.scene.class_ids());
  }
  out.centered = concat(c, 0);
  if (want_raw) out.raw = concat(r, 0);
  return out;
}

void check_finite(double loss, std::size_t step, std::string_view what) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error(std::string(what) + " diverged at step " + std::to_string(step) +
                             " (loss " + std::to_string(loss) + ")");
  }
}

TokenizerModel train_tokenizer(TokenizerKind kind, const data::Corpus& corpus,
                               const TokenizerConfig& cfg, const StepLogger& log) {
  if (corpus.train.empty()) throw std::invalid_argument("tokenizer training: empty corpus");
  if (kind == TokenizerKind::semantic && cfg.batch_size < 2) {
    throw std::invalid_argument("semantic tokenizer: contrastive loss needs batch_size >= 2");
  }
  TokenizerModel model(kind, cfg, corpus.image_px);
  nn::Rng rng(cfg.seed, "tokenizer/" + std::string(kind_name(kind)) + "/batches");
  AdamW opt(model.trainable());
  const std::size_t m = model.positions();
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Batch b = draw_batch(corpus.train, cfg.batch_size, cfg.patch_px, rng,
                         kind == TokenizerKind::appearance);
    Tensor f = model.encode_patches(b.centered);
    if (step == 1) init_codebook(model, f, rng);
    Tensor q = model.quantize(f, cfg.depth);
    Tensor q_st = straight_through(f, q);
    Tensor task;
    if (kind == TokenizerKind::appearance) {
      Tensor diff = sub(model.decode_patches(q_st), b.raw);
      task = mean(mul(diff, diff));
    } else {
      task = info_nce(pool_groups(q_st, m), model.label_embeddings(b.classes), cfg.temperature);
    }
    Tensor loss = add(task, commitment_loss(f, q, cfg.beta));
    check_finite(loss.item(), step, std::string(kind_name(kind)) + " tokenizer");
    opt.zero_grad();
    loss.backward();
    opt.step(warmup_cosine_lr(static_cast<std::int64_t>(step), static_cast<std::int64_t>(cfg.steps),
                              cfg.lr, 0.03));
    Tensor f_now = f.detach();
    ema_update(model, f_now, cfg.ema_decay);
    if (cfg.restart_every && step % cfg.restart_every == 0 && step < cfg.steps) {
      restart_dead(model, f_now, rng);
    }
    if (log) log(step, loss.item());
  }
  return model;
}

}  // namespace

TokenizerModel train_appearance_tokenizer(const data::Corpus& corpus, const TokenizerConfig& cfg,
                                          const StepLogger& log) {
  return train_tokenizer(TokenizerKind::appearance, corpus, cfg, log);
}

TokenizerModel train_semantic_tokenizer(const data::Corpus& corpus, const TokenizerConfig& cfg,
                                        const StepLogger& log) {
  return train_tokenizer(TokenizerKind::semantic, corpus, cfg, log);
}

double reconstruction_mse(const TokenizerModel& model, const std::vector<data::Sample>& samples) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    Tensor raw = nn::patchify(s.image, model.config().patch_px, false);
    Tensor recon = model.decode_patches(model.quantize(model.features(s.image), model.config().depth));
    auto a = recon.data();
    auto b = raw.data();
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
    count += a.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double mean_image_mse(const std::vector<data::Sample>& train, const std::vector<data::Sample>& eval) {
  if (train.empty() || eval.empty()) throw std::invalid_argument("mean_image_mse: empty split");
  std::vector<double> mu(train.front().image.pixels.size(), 0.0);
  for (const auto& s : train)
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += s.image.pixels[i];
  for (auto& v : mu) v /= static_cast<double>(train.size());
  double total = 0.0;
  for (const auto& s : eval)
    for (std::size_t i = 0; i < mu.size(); ++i)
      total += (s.image.pixels[i] - mu[i]) * (s.image.pixels[i] - mu[i]);
  return total / static_cast<double>(eval.size() * mu.size());
}

double quantization_error(const TokenizerModel& model, const std::vector<data::Sample>& samples,
                          std::size_t depth) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    Tensor f = model.features(s.image);
    Tensor q = model.quantize(f, depth);
    const std::size_t dim = f.dim(1);
    for (std::size_t r = 0; r < f.dim(0); ++r) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double e = f.data()[r * dim + j] - q.data()[r * dim + j];
        sq += e * e;
      }
      total += std::sqrt(sq);
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double label_retrieval_accuracy(const std::function<Tensor(const data::Image&)>& pooled,
                                const Tensor& class_table,
                                const std::vector<data::Sample>& samples) {
  NoGradGuard guard;
  Tensor labels = l2_normalize_rows(class_table);
  double hits = 0.0;
  for (const auto& s : samples) {
    auto ids = s.scene.class_ids();
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Tensor sims = matmul(l2_normalize_rows(pooled(s.image)), transpose(labels));
    auto v = sims.data();
    std::vector<int> order(v.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[a] > v[b]; });
    std::size_t found = 0;
    for (std::size_t k = 0; k < ids.size(); ++k)
      found += std::binary_search(ids.begin(), ids.end(), order[k]);
    hits += static_cast<double>(found) / static_cast<double>(ids.size());
  }
  return samples.empty() ? 0.0 : hits / static_cast<double>(samples.size());
}

double retrieval_chance(const std::vector<data::Sample>& samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    auto ids = s.scene.class_ids();
    std::sort(ids.begin(), ids.end());
    total += static_cast<double>(std::unique(ids.begin(), ids.end()) - ids.begin()) / data::kClasses;
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

double label_retrieval_accuracy(const TokenizerModel& model, const std::vector<data::Sample>& samples) {
  NoGradGuard guard;
  std::vector<std::vector<int>> all;
  for (int c = 0; c < data::kClasses; ++c) all.push_back({c});
  Tensor table = model.label_embeddings(all);
  return label_retrieval_accuracy(
      [&](const data::Image& img) {
        return mean_rows(model.quantize(model.features(img), model.config().depth));
      },
      table, samples);
}

CodebookStats usage_stats(const std::vector<std::size_t>& histogram) {
  CodebookStats st;
  std::size_t total = 0, used = 0;
  for (auto h : histogram) {
    total += h;
    used += h > 0;
  }
  if (histogram.empty() || total == 0) return st;
  st.utilization = static_cast<double>(used) / static_cast<double>(histogram.size());
  double entropy = 0.0;
  for (auto h : histogram) {
    if (!h) continue;
    const double p = static_cast<double>(h) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  st.perplexity = std::exp(entropy);
  return st;
}

CodebookStats codebook_stats(const TokenizerModel& model, const std::vector<data::Sample>& samples) {
  NoGradGuard guard;
  const auto& cfg = model.config();
  std::vector<std::size_t> hist(cfg.codebook_size, 0);
  std::vector<double> energy(cfg.depth + 1, 0.0);
  std::size_t rows = 0;
  for (const auto& s : samples) {
    Tensor f = model.features(s.image);
    auto fv = f.data();
    for (std::size_t r = 0; r < f.dim(0); ++r) {
      RqEncoding enc = rq_encode(fv.subspan(r * cfg.code_dim, cfg.code_dim), model.codebook(), cfg.depth);
      for (int c : enc.codes) ++hist[static_cast<std::size_t>(c)];
      for (std::size_t d = 0; d <= cfg.depth; ++d) {
        double sq = 0.0;
        for (double v : enc.residuals[d]) sq += v * v;
        energy[d] += sq;
      }
      ++rows;
    }
  }
  CodebookStats st = usage_stats(hist);
  for (auto& e : energy) e /= static_cast<double>(std::max<std::size_t>(rows, 1));
  st.residual_energy = std::move(energy);
  return st;
}

}  // namespace asvr::vq
