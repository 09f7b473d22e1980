#include "asvr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace asvr {

AdamW::AdamW(nn::ParamList params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].tensor;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * gk;
      v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * w[k]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

nn::ParamList AdamW::state(const std::string& prefix) const {
  nn::ParamList out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({prefix + "m/" + params_[i].name, Tensor::from(params_[i].tensor.shape(), m_[i])});
    out.push_back({prefix + "v/" + params_[i].name, Tensor::from(params_[i].tensor.shape(), v_[i])});
  }
  out.push_back({prefix + "t", Tensor::scalar(static_cast<double>(t_))});
  return out;
}

void AdamW::load_state(const nn::ParamList& saved, const std::string& prefix) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& m = nn::find_param(saved, prefix + "m/" + params_[i].name);
    const Tensor& v = nn::find_param(saved, prefix + "v/" + params_[i].name);
    m_[i].assign(m.data().begin(), m.data().end());
    v_[i].assign(v.data().begin(), v.data().end());
  }
  t_ = static_cast<std::int64_t>(nn::find_param(saved, prefix + "t").item());
}

double clip_grad_norm(const nn::ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      if (!t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= s;
    }
  }
  return norm;
}

double warmup_cosine_lr(std::int64_t step, std::int64_t total, double peak,
                        double warmup_ratio) {
  if (total <= 0) return 0.0;
  step = std::clamp<std::int64_t>(step, 1, total);
  const auto warmup = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::ceil(warmup_ratio * static_cast<double>(total))));
  if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total - warmup));
  const double progress = static_cast<double>(step - warmup) / span;
  return std::max(0.0, 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace asvr
