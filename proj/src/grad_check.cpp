#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "asvr/tensor.hpp"

namespace asvr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double rel_err(double analytic, double numeric) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) return kInf;
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

double eval_scalar(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  return loss_fn().item();
}

// Probes the listed coordinates of `p` by central differences.
double probe(const std::function<Tensor()>& loss_fn, Tensor& p,
             std::span<const double> analytic,
             const std::vector<std::size_t>& coords, double eps) {
  double worst = 0.0;
  auto values = p.mutable_data();
  for (std::size_t i : coords) {
    const double orig = values[i];
    values[i] = orig + eps;
    const double up = eval_scalar(loss_fn);
    values[i] = orig - eps;
    const double down = eval_scalar(loss_fn);
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[i], numeric));
    if (worst == kInf) break;
  }
  return worst;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps) {
  Tensor param = x.clone(true);
  std::vector<Tensor> params{param};
  return grad_check_params([&] { return f(param); }, params, eps);
}

double grad_check_params(const std::function<Tensor()>& loss_fn,
                         std::span<Tensor> params, double eps,
                         std::size_t max_entries, std::uint64_t seed) {
  for (auto& p : params) {
    if (!p.is_leaf()) throw std::invalid_argument("grad_check: non-leaf parameter");
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) return kInf;
  loss.backward();

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_entries && coords.size() > max_entries) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_entries);
      std::sort(coords.begin(), coords.end());
    }
    worst = std::max(worst, probe(loss_fn, p, analytic, coords, eps));
    if (worst == kInf) break;
  }
  return worst;
}

}  // namespace asvr
