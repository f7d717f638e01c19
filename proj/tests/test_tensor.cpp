#include <doctest.h>

#include <cmath>
#include <random>

#include "cacs/tensor.hpp"
#include "test_util.hpp"

using namespace cacs;
using cacs::test::allclose;
using cacs::test::grad_matches_fd;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("add with zeros is identity") {
  std::mt19937_64 rng(1);
  Tensor x = Tensor::randn({3, 4}, rng);
  Tensor y = add(x, Tensor::zeros({3, 4}));
  CHECK(allclose(y.values(), x.values(), 0, 0));
}

TEST_CASE("log gradient at 2 is 0.5") {
  Tensor x = Tensor::full({1}, 2.0).set_requires_grad(true);
  backward(sum(log(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("mul backward with upstream ones gives (y, x)") {
  Tensor x = Tensor::from_values({2}, std::vector<double>{2.0, 3.0}).set_requires_grad(true);
  Tensor y = Tensor::from_values({2}, std::vector<double>{5.0, 7.0}).set_requires_grad(true);
  backward(sum(mul(x, y)));
  CHECK(x.grad()[0] == 5.0);
  CHECK(x.grad()[1] == 7.0);
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 3.0);
}

TEST_CASE("sum of ones(3,4) is 12; mean backward distributes 1/N") {
  CHECK(sum(Tensor::ones({3, 4})).value() == 12.0);
  Tensor x = Tensor::ones({3, 4}).set_requires_grad(true);
  backward(mean(x));
  for (Index i = 0; i < 12; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0 / 12).epsilon(1e-12));
}

TEST_CASE("max ties route gradient to the lowest flat index") {
  Tensor x = Tensor::from_values({3}, std::vector<double>{1.0, 3.0, 3.0}).set_requires_grad(true);
  Tensor m = max(x);
  CHECK(m.value() == 3.0);
  backward(m);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("max over axes") {
  Tensor x = Tensor::from_values({2, 3}, std::vector<double>{1, 5, 2, 4, 0, 4});
  Tensor m = max(x, {1});
  REQUIRE(m.shape() == Shape{2});
  CHECK(m.at(0) == 5.0);
  CHECK(m.at(1) == 4.0);
}

TEST_CASE("identity matmul returns input") {
  std::mt19937_64 rng(2);
  Tensor x = Tensor::randn({3, 3}, rng);
  Tensor eye = Tensor::zeros({3, 3});
  for (Index i = 0; i < 3; ++i) eye.values()[i * 3 + i] = 1.0;
  CHECK(allclose(matmul(x, eye).values(), x.values(), 0, 0));
}

TEST_CASE("slice of concat recovers the first part") {
  std::mt19937_64 rng(3);
  Tensor a = Tensor::randn({2, 3, 2, 2}, rng);
  Tensor b = Tensor::randn({2, 2, 2, 2}, rng);
  Tensor c = concat(std::vector<Tensor>{a, b}, 1);
  REQUIRE(c.shape() == Shape{2, 5, 2, 2});
  Tensor s = slice(c, 1, 0, 3);
  CHECK(allclose(s.values(), a.values(), 0, 0));
}

TEST_CASE("concat backward splits upstream gradient by channel range") {
  Tensor a = Tensor::ones({1, 2, 2, 2}).set_requires_grad(true);
  Tensor b = Tensor::ones({1, 1, 2, 2}).set_requires_grad(true);
  Tensor c = concat(std::vector<Tensor>{a, b}, 1);
  Tensor w = Tensor::zeros({1, 3, 2, 2});
  for (Index i = 0; i < 12; ++i) w.values()[i] = static_cast<double>(i);
  backward(sum(mul(c, w)));
  for (Index i = 0; i < 8; ++i) CHECK(a.grad()[i] == static_cast<double>(i));
  for (Index i = 0; i < 4; ++i) CHECK(b.grad()[i] == static_cast<double>(8 + i));
}

TEST_CASE("backward basics and accumulation") {
  Tensor x = Tensor::from_values({2}, std::vector<double>{1.0, 2.0}).set_requires_grad(true);
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);

  // a second sweep of the same graph accumulates
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == 8.0);

  x.zero_grad();
  backward(sum(x));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("diamond graph counts each path once") {
  Tensor x = Tensor::from_values({1}, std::vector<double>{3.0}).set_requires_grad(true);
  Tensor y = mul(x, x);      // x^2
  Tensor z = add(y, y);      // 2 x^2, reuses y twice
  backward(sum(z));
  CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("backward linearity") {
  std::mt19937_64 rng(4);
  Tensor x0 = Tensor::randn({5}, rng);
  auto f = [](const Tensor& t) { return sum(mul(t, t)); };
  auto g = [](const Tensor& t) { return sum(exp(t)); };

  Tensor xa = Tensor::from_array({5}, x0.values()).set_requires_grad(true);
  backward(add(mul(f(xa), Tensor::scalar(2.0)), mul(g(xa), Tensor::scalar(-3.0))));

  Tensor xf = Tensor::from_array({5}, x0.values()).set_requires_grad(true);
  backward(f(xf));
  Tensor xg = Tensor::from_array({5}, x0.values()).set_requires_grad(true);
  backward(g(xg));

  Array expect = 2.0 * xf.grad() - 3.0 * xg.grad();
  CHECK(allclose(xa.grad(), expect, 1e-12, 1e-12));
}

TEST_CASE("finite differences: sum and sum of squares") {
  Tensor x = Tensor::from_values({3}, std::vector<double>{1.0, -2.0, 0.5});
  Tensor g1 = finite_diff_grad([](const Tensor& t) { return sum(t); }, x, 1e-5);
  for (Index i = 0; i < 3; ++i) CHECK(g1.at(i) == doctest::Approx(1.0).epsilon(1e-9));

  Tensor x3 = Tensor::from_values({1}, std::vector<double>{3.0});
  Tensor g2 = finite_diff_grad([](const Tensor& t) { return sum(mul(t, t)); }, x3, 1e-5);
  CHECK(std::abs(g2.at(0) - 6.0) < 1e-6);
}

TEST_CASE("broadcasting forward and backward") {
  // [2,3] + [3] broadcasts over rows
  Tensor a = Tensor::from_values({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}).set_requires_grad(true);
  Tensor b = Tensor::from_values({3}, std::vector<double>{10, 20, 30}).set_requires_grad(true);
  Tensor c = add(a, b);
  CHECK(c.at(0) == 11.0);
  CHECK(c.at(5) == 36.0);
  backward(sum(c));
  for (Index i = 0; i < 6; ++i) CHECK(a.grad()[i] == 1.0);
  for (Index i = 0; i < 3; ++i) CHECK(b.grad()[i] == 2.0);  // reduced over the broadcast axis

  // interior broadcast [2,3,2,2] * [2,3,1,1]
  std::mt19937_64 rng(5);
  Tensor x = Tensor::randn({2, 3, 2, 2}, rng);
  Tensor gate = Tensor::randn({2, 3, 1, 1}, rng).set_requires_grad(true);
  backward(sum(mul(x, gate)));
  for (Index n = 0; n < 2; ++n) {
    for (Index ch = 0; ch < 3; ++ch) {
      double expect = 0;
      for (Index i = 0; i < 4; ++i) expect += x.values()[(n * 3 + ch) * 4 + i];
      CHECK(gate.grad()[n * 3 + ch] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("analytic gradients match finite differences across ops") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::randn({2, 3, 4}, rng);
    Tensor other = Tensor::randn({3, 4}, rng);
    Tensor proj = Tensor::randn({2, 3, 4}, rng);

    auto weighted = [&proj](const Tensor& t) { return sum(mul(t, proj)); };

    CHECK(grad_matches_fd([&](const Tensor& t) { return weighted(add(t, other)); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return weighted(sub(t, other)); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return weighted(mul(t, other)); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(exp(mul(t, Tensor::scalar(0.3)))); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return weighted(sigmoid(t)); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(mean(t, {0, 2})); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(mul(sum(t, {1}, true), Tensor::scalar(0.5))); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return weighted(maximum(t, other)); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(pad_replicate(t, 1, 2, 0, 1)); }, x));
    CHECK(grad_matches_fd([&](const Tensor& t) { return weighted(reshape(reshape(t, {6, 4}), {2, 3, 4})); }, x));
  }

  // ops that need positive inputs
  for (int trial = 0; trial < 5; ++trial) {
    Tensor p = Tensor::rand_uniform({6}, rng, 0.2, 3.0);
    CHECK(grad_matches_fd([](const Tensor& t) { return sum(log(t)); }, p));
    CHECK(grad_matches_fd([](const Tensor& t) { return sum(sqrt(t)); }, p));
    Tensor q = Tensor::rand_uniform({6}, rng, 0.5, 2.0);
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(div(t, q)); }, p));
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(div(q, t)); }, p));
  }

  // matmul
  for (int trial = 0; trial < 3; ++trial) {
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng);
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(matmul(t, b)); }, a));
    CHECK(grad_matches_fd([&](const Tensor& t) { return sum(matmul(a, t)); }, b));
  }

  // clip: keep values away from the bounds so FD stays one-sided
  Tensor c = Tensor::from_values({4}, std::vector<double>{-2.0, -0.4, 0.3, 1.8});
  CHECK(grad_matches_fd([](const Tensor& t) { return sum(clip(t, -1.0, 1.0)); }, c));

  // relu: keep values away from the kink
  Tensor r = Tensor::from_values({4}, std::vector<double>{-1.5, -0.2, 0.4, 2.0});
  CHECK(grad_matches_fd([](const Tensor& t) { return sum(relu(t)); }, r));

  // reduce max with distinct values
  Tensor m = Tensor::from_values({2, 3}, std::vector<double>{1, 5, 2, 4, 0, 3});
  CHECK(grad_matches_fd([](const Tensor& t) { return sum(max(t, {1})); }, m));
}

TEST_CASE("error paths") {
  CHECK_THROWS_AS(add(Tensor::ones({2, 3}), Tensor::ones({4})), ValidationError);
  CHECK_THROWS_AS(div(Tensor::ones({2}), Tensor::zeros({2})), ValidationError);
  CHECK_THROWS_AS(log(Tensor::zeros({2})), ValidationError);
  CHECK_THROWS_AS(sqrt(Tensor::full({2}, -1.0)), ValidationError);
  CHECK_THROWS_AS(backward(Tensor::ones({3})), ValidationError);  // non-scalar root
  CHECK_THROWS_AS(matmul(Tensor::ones({2, 3}), Tensor::ones({2, 3})), ValidationError);
  CHECK_THROWS_AS(sum(Tensor::ones({2}), {3}), ValidationError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), ValidationError);
}

TEST_CASE("relu and sigmoid point values") {
  CHECK(relu(Tensor::full({1}, -1.0)).value() == 0.0);
  CHECK(sigmoid(Tensor::full({1}, 0.0)).value() == 0.5);
  Tensor x = Tensor::full({1}, 0.0).set_requires_grad(true);
  backward(sum(sigmoid(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_SUITE_END();
