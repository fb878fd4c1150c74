#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cresnet/gradcheck.hpp"
#include "cresnet/tensor.hpp"
#include "support/reference_ops.hpp"

// Every check funnels the op under test into a scalar through
// global_avg_pool + linear + cross entropy, which gives each element a
// distinct upstream gradient.

TEST_CASE("grad check: conv2d inputs and weights") {
  auto x = refops::random_tensor<double>({2, 3, 6, 6}, 101);
  auto w = refops::random_tensor<double>({4, 3, 3, 3}, 102);
  auto fcw = refops::random_tensor<double>({3, 4}, 103);
  auto fcb = refops::random_tensor<double>({3}, 104);
  auto loss = [&]() {
    auto y = cresnet::conv2d(x, w, 2, 1);
    auto pooled = cresnet::global_avg_pool(y);
    auto logits = cresnet::linear(pooled, fcw, fcb);
    return cresnet::softmax_cross_entropy(logits, {0, 2});
  };
  auto report = cresnet::grad_check<double>(loss, {x, w, fcw, fcb});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("grad check: conv2d stride 1 no padding") {
  auto x = refops::random_tensor<double>({1, 2, 5, 5}, 111);
  auto w = refops::random_tensor<double>({2, 2, 3, 3}, 112);
  auto fcw = refops::random_tensor<double>({2, 2}, 113);
  auto fcb = refops::random_tensor<double>({2}, 114);
  auto loss = [&]() {
    auto y = cresnet::conv2d(x, w, 1, 0);
    auto logits = cresnet::linear(cresnet::global_avg_pool(y), fcw, fcb);
    return cresnet::softmax_cross_entropy(logits, {1});
  };
  auto report = cresnet::grad_check<double>(loss, {x, w});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("grad check: batchnorm2d training mode through batch statistics") {
  auto x = refops::random_tensor<double>({3, 2, 4, 4}, 121);
  auto gamma = cresnet::Tensor<double>::from_data({2}, {1.3, 0.7});
  auto beta = cresnet::Tensor<double>::from_data({2}, {0.2, -0.4});
  auto fcw = refops::random_tensor<double>({2, 2}, 122);
  auto fcb = refops::random_tensor<double>({2}, 123);
  auto loss = [&]() {
    cresnet::BnState<double> state(2);  // fresh per call; stats must not leak into the value
    auto y = cresnet::batchnorm2d(x, gamma, beta, state, true);
    auto logits = cresnet::linear(cresnet::global_avg_pool(y), fcw, fcb);
    return cresnet::softmax_cross_entropy(logits, {0, 1, 0});
  };
  auto report = cresnet::grad_check<double>(loss, {x, gamma, beta});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("grad check: batchnorm2d eval mode is a per-channel affine map") {
  auto x = refops::random_tensor<double>({2, 2, 3, 3}, 131);
  auto gamma = cresnet::Tensor<double>::from_data({2}, {0.9, 1.1});
  auto beta = cresnet::Tensor<double>::from_data({2}, {0.0, 0.5});
  cresnet::BnState<double> state(2);
  state.running_mean = {0.1, -0.2};
  state.running_var = {1.5, 0.8};
  auto fcw = refops::random_tensor<double>({2, 2}, 132);
  auto fcb = refops::random_tensor<double>({2}, 133);
  auto loss = [&]() {
    auto y = cresnet::batchnorm2d(x, gamma, beta, state, false);
    auto logits = cresnet::linear(cresnet::global_avg_pool(y), fcw, fcb);
    return cresnet::softmax_cross_entropy(logits, {1, 0});
  };
  auto report = cresnet::grad_check<double>(loss, {x, gamma, beta});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("grad check: relu away from the kink") {
  auto x = refops::random_tensor<double>({2, 2, 4, 4}, 141);
  // Push values away from zero so finite differences never cross the kink.
  for (std::int64_t i = 0; i < x.size(); ++i)
    x.data()[i] += x.data()[i] >= 0 ? 0.25 : -0.25;
  auto fcw = refops::random_tensor<double>({2, 2}, 142);
  auto fcb = refops::random_tensor<double>({2}, 143);
  auto loss = [&]() {
    auto logits = cresnet::linear(cresnet::global_avg_pool(cresnet::relu(x)), fcw, fcb);
    return cresnet::softmax_cross_entropy(logits, {0, 1});
  };
  auto report = cresnet::grad_check<double>(loss, {x});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("grad check: add fans gradients to both branches") {
  auto a = refops::random_tensor<double>({2, 3, 4, 4}, 151);
  auto b = refops::random_tensor<double>({2, 3, 4, 4}, 152);
  auto fcw = refops::random_tensor<double>({2, 3}, 153);
  auto fcb = refops::random_tensor<double>({2}, 154);
  auto loss = [&]() {
    auto logits = cresnet::linear(cresnet::global_avg_pool(cresnet::add(a, b)), fcw, fcb);
    return cresnet::softmax_cross_entropy(logits, {1, 1});
  };
  auto report = cresnet::grad_check<double>(loss, {a, b});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("grad check: linear and cross entropy") {
  auto x = refops::random_tensor<double>({3, 5}, 161);
  auto w = refops::random_tensor<double>({4, 5}, 162);
  auto b = refops::random_tensor<double>({4}, 163);
  auto loss = [&]() {
    return cresnet::softmax_cross_entropy(cresnet::linear(x, w, b), {3, 0, 2});
  };
  auto report = cresnet::grad_check<double>(loss, {x, w, b});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("grad check: composed conv-bn-relu unit with a dashed shortcut") {
  auto x = refops::random_tensor<double>({2, 2, 6, 6}, 171);
  auto w1 = refops::random_tensor<double>({3, 2, 3, 3}, 172);
  auto g1 = cresnet::Tensor<double>::from_data({3}, {1.0, 1.2, 0.8});
  auto b1 = cresnet::Tensor<double>::zeros({3});
  auto jw = refops::random_tensor<double>({3, 2, 1, 1}, 173);
  auto fcw = refops::random_tensor<double>({2, 3}, 174);
  auto fcb = refops::random_tensor<double>({2}, 175);
  auto loss = [&]() {
    cresnet::BnState<double> bn(3);
    auto main = cresnet::relu(
        cresnet::batchnorm2d(cresnet::conv2d(x, w1, 2, 1), g1, b1, bn, true));
    auto shortcut = cresnet::conv2d(x, jw, 2, 0);
    auto out = cresnet::add(main, shortcut);
    auto logits = cresnet::linear(cresnet::global_avg_pool(out), fcw, fcb);
    return cresnet::softmax_cross_entropy(logits, {0, 1});
  };
  auto report = cresnet::grad_check<double>(loss, {x, w1, g1, b1, jw, fcw, fcb});
  CAPTURE(report.worst);
  REQUIRE(report.max_rel_error < 1e-3);
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  auto x = cresnet::Tensor<double>::from_data({1, 2}, {0.3, -0.6});
  x.set_requires_grad(true);
  auto y = cresnet::add(x, x);
  auto loss = cresnet::softmax_cross_entropy(y, {0});
  loss.backward();
  // d loss / d y = (p - onehot); each copy of x receives it once.
  const double p0 = 1.0 / (1.0 + std::exp(-(2 * 0.3 - 2 * -0.6)));
  REQUIRE(x.grad()[0] == Catch::Approx(2 * (p0 - 1)).epsilon(1e-9));
  REQUIRE(x.grad()[1] == Catch::Approx(2 * (1 - p0)).epsilon(1e-9));
}

TEST_CASE("backward accumulates across calls until zero_grad") {
  auto x = cresnet::Tensor<double>::from_data({1, 2}, {0.1, 0.2});
  x.set_requires_grad(true);
  auto run = [&]() {
    auto loss = cresnet::softmax_cross_entropy(x, {0});
    loss.backward();
  };
  run();
  const auto once = x.grad();
  run();
  REQUIRE(x.grad()[0] == Catch::Approx(2 * once[0]).epsilon(1e-12));
  x.zero_grad();
  REQUIRE(x.grad()[0] == 0.0);
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  auto x = refops::random_tensor<double>({1, 2}, 181);
  x.set_requires_grad(true);
  {
    cresnet::NoGradGuard guard;
    auto loss = cresnet::softmax_cross_entropy(x, {0});
    REQUIRE_FALSE(loss.tracked());
    REQUIRE_THROWS_AS(loss.backward(), cresnet::GraphError);
  }
  auto loss = cresnet::softmax_cross_entropy(x, {0});
  REQUIRE(loss.tracked());
  REQUIRE_NOTHROW(loss.backward());
}

TEST_CASE("backward rejects non-scalar roots and detached tensors") {
  auto x = refops::random_tensor<double>({2, 2}, 191);
  x.set_requires_grad(true);
  auto y = cresnet::relu(x);
  REQUIRE_THROWS_AS(y.backward(), cresnet::GraphError);
  auto plain = cresnet::Tensor<double>::ones({1});
  REQUIRE_THROWS_AS(plain.backward(), cresnet::GraphError);
}

TEST_CASE("detach cuts the graph") {
  auto x = refops::random_tensor<double>({1, 3}, 201);
  x.set_requires_grad(true);
  auto d = cresnet::relu(x).detach();
  REQUIRE_FALSE(d.tracked());
  auto loss = cresnet::softmax_cross_entropy(d, {0});
  REQUIRE_FALSE(loss.tracked());
}

TEST_CASE("backward tears the graph down; leaves keep only their own handle") {
  auto x = refops::random_tensor<double>({4, 3, 5, 5}, 211);
  x.set_requires_grad(true);
  std::mt19937 rng(7);
  auto w = cresnet::Tensor<double>::randn({3, 3, 3, 3}, rng, 0.2);
  w.set_requires_grad(true);
  auto pooled = cresnet::global_avg_pool(cresnet::relu(cresnet::conv2d(x, w, 1, 1)));
  auto loss = cresnet::softmax_cross_entropy(pooled, {0, 1, 2, 0});
  // An op node must not own itself through its backprop closure, or the
  // graph outlives every handle and training leaks a full graph per step.
  REQUIRE(loss.use_count() == 1);
  loss.backward();
  REQUIRE(x.use_count() == 1);
  REQUIRE(w.use_count() == 1);
  REQUIRE(loss.use_count() == 1);
  REQUIRE(x.has_grad());
  REQUIRE(w.has_grad());
}
