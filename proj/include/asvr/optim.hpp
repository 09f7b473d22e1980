#pragma once

#include <cstdint>

#include "asvr/nn.hpp"

namespace asvr {

// Adaptive moments with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW() = default;
  AdamW(nn::ParamList params, Options opts);
  explicit AdamW(nn::ParamList params) : AdamW(std::move(params), Options{}) {}

  // Parameters without a gradient buffer are treated as having zero grad.
  void step(double lr);
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }
  const nn::ParamList& params() const { return params_; }

  // Moment buffers as named tensors ("<prefix>m/<name>", "<prefix>v/<name>",
  // "<prefix>t").
  nn::ParamList state(const std::string& prefix) const;
  void load_state(const nn::ParamList& saved, const std::string& prefix);

 private:
  nn::ParamList params_;
  Options opts_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

// Global L2 norm of the gradients; rescales them when above max_norm > 0.
double clip_grad_norm(const nn::ParamList& params, double max_norm);

// Linear warmup over ceil(warmup_ratio * total) steps then cosine decay to 0.
// Steps are 1-based; step 1 of warmup gets peak / warmup_steps.
double warmup_cosine_lr(std::int64_t step, std::int64_t total, double peak,
                        double warmup_ratio);

}  // namespace asvr
