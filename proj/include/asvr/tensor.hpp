#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace asvr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Raised for any operand-shape disagreement; the message names the op and
// both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

// Dense row-major float64 tensor. Copies share the underlying node, so a
// Tensor behaves like a handle into the differentiation graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Only leaves may be written; graph-recorded values are immutable.
  std::span<double> mutable_data();
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse pass from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  // Same values, no history, no gradient.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;
  const std::string& op_name() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Boolean attention pattern: allow[i * cols + j] != 0 means query i may see
// key j.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allow;

  static Mask full(std::size_t n);
  static Mask causal(std::size_t n);
  // Causal within consecutive groups of `group` positions, no cross-group
  // visibility.
  static Mask block_causal(std::size_t groups, std::size_t group);
};

// ---- op suite ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// b may match a's shape or a trailing suffix of it (leading-axis broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor gelu(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor masked_softmax(const Tensor& a, const Mask& mask);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-9);
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [n, d] -> [1, d]
Tensor mean_rows(const Tensor& a);
// [n, V] logits, n targets -> [n] per-row losses.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
Tensor l2_normalize_rows(const Tensor& a);
// Forward value is `quantized`; the gradient flows to `features` unchanged.
Tensor straight_through(const Tensor& features, const Tensor& quantized);

// ---- gradient verification ----

// max over entries of |analytic - numeric| / max(1, |numeric|), central
// differences. Returns +inf if any value is non-finite.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-5);

// Same measure over a set of leaf parameters of a closure. At most
// `max_entries` coordinates per tensor are probed (0 = all), chosen by `seed`.
double grad_check_params(const std::function<Tensor()>& loss_fn,
                         std::span<Tensor> params, double eps = 1e-5,
                         std::size_t max_entries = 0,
                         std::uint64_t seed = 0);

}  // namespace asvr
