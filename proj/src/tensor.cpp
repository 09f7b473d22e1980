#include "asvr/tensor.hpp"

#include "tensor_node.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace asvr {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   std::vector<std::shared_ptr<Node>> parents,
                   BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

using detail::Node;

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->op = "leaf";
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) {
    throw std::logic_error("mutable_data: '" + node_->op +
                           "' result is recorded in a graph");
  }
  return node_->data;
}

double Tensor::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item: expected one element, shape " +
                     shape_str(node_->shape));
  }
  return node_->data[0];
}

std::vector<double> Tensor::to_vector() const { return node_->data; }

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw std::logic_error("set_requires_grad: not a leaf");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_->leaf; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const std::string& Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return from(node_->shape, node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const {
  return from(node_->shape, node_->data, requires_grad);
}

void Tensor::backward() const {
  if (node_->data.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

Mask Mask::full(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 1)};
  return m;
}

Mask Mask::causal(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.allow[i * n + j] = 1;
  return m;
}

Mask Mask::block_causal(std::size_t groups, std::size_t group) {
  const std::size_t n = groups * group;
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < group; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        m.allow[(g * group + i) * n + g * group + j] = 1;
  return m;
}

}  // namespace asvr
