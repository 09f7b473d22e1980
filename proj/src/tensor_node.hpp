#pragma once

#include "asvr/tensor.hpp"

namespace asvr::detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  std::string op;
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  BackwardFn backward;

  void ensure_grad();
};

// Records a graph node only when grad mode is on and some parent requires
// grad; otherwise returns a detached leaf.
Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   std::vector<std::shared_ptr<Node>> parents,
                   BackwardFn backward);

}  // namespace asvr::detail
