#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <functional>

#include "cgp/autodiff.hpp"
#include "support/oracles.hpp"

using namespace cgp;
using Catch::Approx;

namespace {

// Central difference of a rebuildable scalar function w.r.t. one coordinate.
double fd(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double fp = f();
  x = saved - h;
  const double fm = f();
  x = saved;
  return (fp - fm) / (2.0 * h);
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// max relative FD error over every coordinate of every leaf.
double max_fd_err(const std::vector<ad::NodePtr>& leaves,
                  const std::function<ad::NodePtr()>& make_loss) {
  ad::NodePtr root = make_loss();
  ad::backward(root);
  std::vector<Tensor> analytic;
  for (const auto& l : leaves) analytic.push_back(l->grad);
  double worst = 0.0;
  const auto value = [&] { return make_loss()->value.item(); };
  for (std::size_t k = 0; k < leaves.size(); ++k)
    for (std::size_t i = 0; i < leaves[k]->value.size(); ++i) {
      const double n = fd(value, leaves[k]->value[i]);
      const double a = analytic[k][i];
      worst = std::max(worst, std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-4}));
    }
  return worst;
}

}  // namespace

TEST_CASE("tanh at the origin is zero") {
  auto x = ad::leaf(Tensor::scalar(0.0));
  CHECK(ad::tanh(x)->value.item() == 0.0);
}

TEST_CASE("softmax of a constant row is uniform") {
  auto x = ad::leaf(Tensor::full(1, 4, 3.7));
  auto y = ad::softmax(x);
  for (int j = 0; j < 4; ++j) CHECK(y->value(0, j) == Approx(0.25).margin(1e-15));
}

TEST_CASE("matmul matches the triple-loop reference") {
  auto a = ad::leaf(Tensor(2, 3, {1, 2, 3, 4, 5, 6}));
  auto b = ad::leaf(Tensor(3, 1, {7, 8, 9}));
  auto c = ad::matmul(a, b);
  const Tensor ref = oracle::matmul_ref(a->value, b->value);
  REQUIRE(c->value.rows() == 2);
  REQUIRE(c->value.cols() == 1);
  CHECK(c->value(0, 0) == ref(0, 0));
  CHECK(c->value(1, 0) == ref(1, 0));

  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
    auto x = ad::leaf(random_tensor(m, k, rng));
    auto y = ad::leaf(random_tensor(k, n, rng));
    const Tensor got = ad::matmul(x, y)->value;
    const Tensor want = oracle::matmul_ref(x->value, y->value);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == Approx(want[i]).margin(1e-12));
  }
}

TEST_CASE("shape mismatches are rejected with both shapes in the message") {
  auto a = ad::leaf(Tensor(2, 3));
  auto b = ad::leaf(Tensor(4, 1));
  CHECK_THROWS_WITH(ad::matmul(a, b), Catch::Matchers::ContainsSubstring("2x3") &&
                                          Catch::Matchers::ContainsSubstring("4x1"));
  CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::mul(a, b), std::invalid_argument);
}

TEST_CASE("backward requires a scalar root") {
  auto x = ad::leaf(Tensor(2, 2));
  CHECK_THROWS_AS(ad::backward(ad::tanh(x)), std::invalid_argument);
}

TEST_CASE("gradient of a plain sum is all ones") {
  Rng rng(3);
  auto x = ad::leaf(random_tensor(3, 4, rng));
  ad::backward(ad::sum(x));
  for (std::size_t i = 0; i < x->grad.size(); ++i) CHECK(x->grad[i] == 1.0);
}

TEST_CASE("log-softmax pick gradient is onehot minus softmax") {
  Rng rng(5);
  auto z = ad::leaf(random_tensor(1, 5, rng));
  const int k = 2;
  const auto make_loss = [&] { return ad::slice(ad::log_softmax(z), k, 1); };
  ad::backward(make_loss());
  const Tensor sm = ad::softmax(z)->value;
  for (int j = 0; j < 5; ++j) {
    const double expected = (j == k ? 1.0 : 0.0) - sm(0, j);
    CHECK(z->grad(0, j) == Approx(expected).margin(1e-12));
    const double numeric = fd([&] { return make_loss()->value.item(); }, z->value[j]);
    CHECK(z->grad(0, j) == Approx(numeric).margin(1e-7));
  }
}

TEST_CASE("gradient of exp at zero is one") {
  auto x = ad::leaf(Tensor::scalar(0.0));
  ad::backward(ad::exp(x));
  CHECK(x->grad[0] == 1.0);
}

TEST_CASE("a node feeding two consumers accumulates both paths") {
  auto x = ad::leaf(Tensor::scalar(0.7));
  // y = x*x + x  =>  dy/dx = 2x + 1
  ad::backward(ad::add(ad::mul(x, x), x));
  CHECK(x->grad[0] == Approx(2.0 * 0.7 + 1.0).margin(1e-14));

  // shared subgraph: s = tanh(x); y = s*s + 3*s
  auto x2 = ad::leaf(Tensor::scalar(-0.4));
  auto s = ad::tanh(x2);
  ad::backward(ad::add(ad::mul(s, s), ad::scale(s, 3.0)));
  const double sv = std::tanh(-0.4);
  const double expected = (2.0 * sv + 3.0) * (1.0 - sv * sv);
  CHECK(x2->grad[0] == Approx(expected).margin(1e-14));
}

TEST_CASE("every op matches central finite differences", "[fd]") {
  Rng rng(17);
  const auto weighted_sum = [&](const ad::NodePtr& y, const ad::NodePtr& w) {
    return ad::sum(ad::mul(y, w));
  };

  SECTION("elementwise unary") {
    auto x = ad::leaf(random_tensor(3, 4, rng, -1.5, 1.5));
    auto w = ad::constant(random_tensor(3, 4, rng));
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::tanh(x), w); }) < 1e-6);
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::sigmoid(x), w); }) < 1e-6);
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::exp(x), w); }) < 1e-6);
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::scale(x, -2.5), w); }) < 1e-6);
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::add_scalar(x, 0.3), w); }) < 1e-6);
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::clamp(x, -10.0, 10.0), w); }) < 1e-6);
  }

  SECTION("log on positive inputs") {
    auto x = ad::leaf(random_tensor(3, 4, rng, 0.5, 3.0));
    auto w = ad::constant(random_tensor(3, 4, rng));
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::log(x), w); }) < 1e-6);
  }

  SECTION("binary") {
    auto a = ad::leaf(random_tensor(3, 4, rng));
    auto b = ad::leaf(random_tensor(3, 4, rng, 0.5, 2.0));
    auto w = ad::constant(random_tensor(3, 4, rng));
    CHECK(max_fd_err({a, b}, [&] { return weighted_sum(ad::add(a, b), w); }) < 1e-6);
    CHECK(max_fd_err({a, b}, [&] { return weighted_sum(ad::sub(a, b), w); }) < 1e-6);
    CHECK(max_fd_err({a, b}, [&] { return weighted_sum(ad::mul(a, b), w); }) < 1e-6);
    CHECK(max_fd_err({a, b}, [&] { return weighted_sum(ad::div(a, b), w); }) < 1e-6);
  }

  SECTION("row-broadcast add") {
    auto a = ad::leaf(random_tensor(3, 4, rng));
    auto bias = ad::leaf(random_tensor(1, 4, rng));
    auto w = ad::constant(random_tensor(3, 4, rng));
    CHECK(max_fd_err({a, bias}, [&] { return weighted_sum(ad::add(a, bias), w); }) < 1e-6);
  }

  SECTION("softmax family") {
    auto x = ad::leaf(random_tensor(3, 5, rng));
    auto w = ad::constant(random_tensor(3, 5, rng));
    auto w1 = ad::constant(random_tensor(3, 1, rng));
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::softmax(x), w); }) < 1e-6);
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::log_softmax(x), w); }) < 1e-6);
    CHECK(max_fd_err({x}, [&] { return weighted_sum(ad::logsumexp(x), w1); }) < 1e-6);
  }

  SECTION("shape ops") {
    auto a = ad::leaf(random_tensor(3, 2, rng));
    auto b = ad::leaf(random_tensor(3, 3, rng));
    auto w = ad::constant(random_tensor(3, 5, rng));
    auto ws = ad::constant(random_tensor(3, 2, rng));
    CHECK(max_fd_err({a, b}, [&] { return weighted_sum(ad::concat({a, b}), w); }) < 1e-6);
    CHECK(max_fd_err({b}, [&] { return weighted_sum(ad::slice(b, 1, 2), ws); }) < 1e-6);
  }

  SECTION("matmul") {
    auto a = ad::leaf(random_tensor(3, 4, rng));
    auto b = ad::leaf(random_tensor(4, 2, rng));
    auto w = ad::constant(random_tensor(3, 2, rng));
    CHECK(max_fd_err({a, b}, [&] { return weighted_sum(ad::matmul(a, b), w); }) < 1e-6);
  }
}

TEST_CASE("forward values are bit-identical across repeated runs") {
  Rng rng(23);
  const Tensor xv = random_tensor(4, 6, rng);
  const Tensor wv = random_tensor(6, 3, rng);
  const auto run = [&] {
    auto x = ad::leaf(xv);
    auto w = ad::leaf(wv);
    return ad::softmax(ad::tanh(ad::matmul(x, w)))->value;
  };
  const Tensor a = run();
  const Tensor b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("gradient_check on a small affine-tanh model") {
  Rng rng(31);
  std::vector<ad::Parameter> params{{"w", ad::leaf(random_tensor(2, 3, rng))},
                                    {"b", ad::leaf(random_tensor(1, 3, rng))}};
  auto x = ad::constant(random_tensor(4, 2, rng));
  auto c = ad::constant(random_tensor(4, 3, rng));
  const auto make_loss = [&] {
    return ad::sum(
        ad::mul(ad::tanh(ad::add(ad::matmul(x, params[0].node), params[1].node)), c));
  };
  Rng check_rng(1);
  const auto report = ad::gradient_check(params, make_loss, 1e-5, 1e-4, check_rng);
  CHECK(report.pass);
  CHECK(report.checked == 9);  // all coordinates of both parameters
}

TEST_CASE("gradient_check degenerate case: zero weights, zero input") {
  std::vector<ad::Parameter> params{{"w", ad::leaf(Tensor(2, 3))},
                                    {"b", ad::leaf(Tensor(1, 3))}};
  auto x = ad::constant(Tensor(4, 2));
  const auto make_loss = [&] {
    return ad::sum(ad::tanh(ad::add(ad::matmul(x, params[0].node), params[1].node)));
  };
  Rng check_rng(2);
  const auto report = ad::gradient_check(params, make_loss, 1e-5, 1e-4, check_rng);
  CHECK(report.pass);
  // The weight gradients vanish identically (zero input); the analytic values
  // are exactly zero and so are the central differences.
  ad::backward(make_loss());
  for (std::size_t i = 0; i < params[0].node->grad.size(); ++i)
    CHECK(params[0].node->grad[i] == 0.0);
}

TEST_CASE("gradient_check rejects a non-finite loss") {
  std::vector<ad::Parameter> params{{"w", ad::leaf(Tensor::scalar(0.0))}};
  const auto make_loss = [&] { return ad::log(params[0].node); };  // log(0) = -inf
  Rng check_rng(3);
  CHECK_THROWS_WITH(ad::gradient_check(params, make_loss, 1e-5, 1e-4, check_rng),
                    Catch::Matchers::ContainsSubstring("not finite"));
}
