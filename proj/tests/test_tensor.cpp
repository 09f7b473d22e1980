#include <cmath>
#include <numbers>

#include "asvr/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace asvr;
using asvr::testing::random_dim;
using asvr::testing::random_tensor;
using asvr::testing::readout;

TEST_CASE("matmul by identity returns the input") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(a, eye).to_vector() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor y = softmax(Tensor::from({2}, {0, 0}));
  CHECK(y.data()[0] == 0.5);
  CHECK(y.data()[1] == 0.5);
}

TEST_CASE("cross entropy of uniform two-way logits is ln 2") {
  std::vector<int> t{0};
  Tensor l = cross_entropy(Tensor::from({1, 2}, {0, 0}), t);
  CHECK(l.data()[0] == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
}

TEST_CASE("backward of x*x at 3 is 6") {
  Tensor x = Tensor::scalar(3.0, true);
  mul(x, x).backward();
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("softmax cross entropy gradient on [0,0]") {
  Tensor x = Tensor::from({1, 2}, {0, 0}, true);
  std::vector<int> t{0};
  sum(cross_entropy(x, t)).backward();
  CHECK(x.grad()[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("diamond graph sums both paths") {
  Tensor x = Tensor::scalar(1.7, true);
  add(x, x).backward();
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("repeated backward accumulates leaf gradients") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  CHECK(x.grad()[2] == 12.0);
  x.zero_grad();
  loss.backward();
  CHECK(x.grad()[2] == 6.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(scale(x, 2.0).backward(), ShapeError);
}

TEST_CASE("shape errors name the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), ShapeError);
  CHECK_NOTHROW(add(a, Tensor::zeros({3})));
  CHECK_THROWS_AS(concat({a, b}, 0), ShapeError);
}

TEST_CASE("embedding rejects out-of-range ids") {
  Tensor table = Tensor::zeros({4, 2});
  std::vector<int> bad{1, 4};
  CHECK_THROWS_AS(embedding(table, bad), std::out_of_range);
  std::vector<int> neg{-1};
  CHECK_THROWS_AS(embedding(table, neg), std::out_of_range);
}

TEST_CASE("graph-recorded values are immutable") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = scale(x, 2.0);
  CHECK_THROWS(y.mutable_data());
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(11);
  for (int seed = 0; seed < 20; ++seed) {
    Tensor x = random_tensor({5, 7}, rng, 4.0);
    Tensor y = softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += y.data()[r * 7 + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("masked softmax zeroes hidden entries") {
  Tensor x = Tensor::from({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor y = masked_softmax(x, Mask::causal(3));
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 0.0);
  CHECK(y.data()[5] == 0.0);
  CHECK(y.data()[0] == 1.0);
}

TEST_CASE("layer norm standardizes rows") {
  std::mt19937_64 rng(5);
  Tensor g = Tensor::full({8}, 1.0);
  Tensor b = Tensor::zeros({8});
  for (int seed = 0; seed < 20; ++seed) {
    Tensor x = random_tensor({4, 8}, rng, 3.0);
    Tensor y = layer_norm(x, g, b);
    for (std::size_t r = 0; r < 4; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 8; ++j) mu += y.data()[r * 8 + j];
      mu /= 8;
      for (std::size_t j = 0; j < 8; ++j)
        var += (y.data()[r * 8 + j] - mu) * (y.data()[r * 8 + j] - mu);
      var /= 8;
      CHECK(std::abs(mu) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-8);
    }
  }
}

TEST_CASE("concat and slice along inner axes") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {5, 6});
  Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.to_vector() == std::vector<double>{1, 2, 5, 3, 4, 6});
  Tensor s = slice(c, 1, 1, 2);
  CHECK(s.to_vector() == std::vector<double>{2, 5, 4, 6});
}

TEST_CASE("grad_check: sum of squares is exact to rounding") {
  Tensor x = Tensor::from({3}, {1, 2, 3});
  double err = grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check: 3x4 matmul chain within 1e-6") {
  std::mt19937_64 rng(3);
  Tensor w1 = random_tensor({4, 5}, rng);
  Tensor w2 = random_tensor({5, 2}, rng);
  Tensor x = random_tensor({3, 4}, rng);
  double err = grad_check(
      [&](const Tensor& t) { return readout(matmul(matmul(t, w1), w2), 1); }, x,
      1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check: layer norm then sum within 1e-5") {
  std::mt19937_64 rng(4);
  Tensor g = random_tensor({8}, rng);
  Tensor b = random_tensor({8}, rng);
  Tensor x = random_tensor({2, 8}, rng);
  // Plain sum of a normalized row is independent of x, so weight it.
  double err = grad_check(
      [&](const Tensor& t) { return sum(mul(layer_norm(t, g, b), layer_norm(t, g, b))); },
      x, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("grad_check: non-finite values fail the check") {
  Tensor x = Tensor::from({1}, {1.0});
  double err = grad_check(
      [](const Tensor& t) { return sum(scale(t, std::numeric_limits<double>::infinity())); },
      x);
  CHECK(std::isinf(err));
}

// Every op in the suite, random shapes (dims <= 8), 20 seeds each.
TEST_CASE("grad_check over the op suite") {
  constexpr double tol = 1e-4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = random_dim(rng), k = random_dim(rng), m = random_dim(rng);
    Tensor a = random_tensor({n, k}, rng);
    Tensor b = random_tensor({k, m}, rng);
    Tensor c = random_tensor({n, k}, rng);
    Tensor row = random_tensor({k}, rng);
    CAPTURE(seed);

    CHECK(grad_check([&](const Tensor& t) { return readout(matmul(t, b), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(matmul(a, t), seed); }, b) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(transpose(t), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(add(t, c), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(add(c, t), seed); }, row) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(sub(c, t), seed); }, row) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(mul(t, c), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(mul(c, t), seed); }, row) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(scale(t, -1.7), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(gelu(t), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(softmax(t), seed); }, a) < tol);
    if (n == k) {
      Mask mask = Mask::causal(n);
      CHECK(grad_check([&](const Tensor& t) { return readout(masked_softmax(t, mask), seed); }, a) < tol);
    }
    Tensor gain = random_tensor({k}, rng);
    Tensor bias = random_tensor({k}, rng);
    if (k > 1) {
      CHECK(grad_check([&](const Tensor& t) { return readout(layer_norm(t, gain, bias), seed); }, a) < tol);
      CHECK(grad_check([&](const Tensor& t) { return readout(layer_norm(a, t, bias), seed); }, gain) < tol);
      CHECK(grad_check([&](const Tensor& t) { return readout(layer_norm(a, gain, t), seed); }, bias) < tol);
    }
    std::vector<int> ids;
    for (std::size_t i = 0; i < m; ++i)
      ids.push_back(static_cast<int>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)));
    CHECK(grad_check([&](const Tensor& t) { return readout(embedding(t, ids), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(concat({t, c}, 0), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(concat({c, t}, 1), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(slice(t, 1, k / 2, k - k / 2), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(reshape(t, {k, n}), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return mul(mean(t), sum(t)); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(mean_rows(t), seed); }, a) < tol);
    std::vector<int> targets;
    for (std::size_t i = 0; i < n; ++i)
      targets.push_back(static_cast<int>(std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)));
    CHECK(grad_check([&](const Tensor& t) { return readout(cross_entropy(t, targets), seed); }, a) < tol);
    CHECK(grad_check([&](const Tensor& t) { return readout(l2_normalize_rows(t), seed); }, a) < tol);
  }
}

TEST_CASE("straight-through passes the quantized-path gradient to the features") {
  std::mt19937_64 rng(8);
  Tensor f = random_tensor({3, 4}, rng).clone(true);
  Tensor q = random_tensor({3, 4}, rng).clone(true);
  Tensor y = straight_through(f, q.detach());
  CHECK(y.to_vector() == q.to_vector());
  readout(y, 2).backward();
  readout(q, 2).backward();
  for (std::size_t i = 0; i < 12; ++i) CHECK(f.grad()[i] == q.grad()[i]);
}
