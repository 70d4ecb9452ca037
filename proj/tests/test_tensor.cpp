#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "orchard/rng.hpp"
#include "orchard/tensor.hpp"
#include "oracles.hpp"

using namespace orchard;

namespace {

std::vector<float> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> to_vecd(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

// All shapes with rank <= 3 and extents <= 3 (rank 0 = scalar included).
std::vector<Shape> small_shapes() {
  std::vector<Shape> shapes{{}};
  for (std::size_t a = 1; a <= 3; ++a) {
    shapes.push_back({a});
    for (std::size_t b = 1; b <= 3; ++b) {
      shapes.push_back({a, b});
      for (std::size_t c = 1; c <= 3; ++c) shapes.push_back({a, b, c});
    }
  }
  return shapes;
}

}  // namespace

TEST_CASE("construction enforces shape/data agreement") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.f, 2.f, 3.f}), shape_error);
  const Tensor s = Tensor::scalar(4.f);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 4.f);
  const Tensor z = Tensor::zeros({2, 0, 3});
  CHECK(z.numel() == 0);
}

TEST_CASE("elementwise add identity") {
  const Tensor a = Tensor::from_data({3}, {1.f, 2.f, 3.f});
  CHECK(to_vec(add(a, 0.f)) == std::vector<float>{1.f, 2.f, 3.f});
}

TEST_CASE("elementwise broadcast mul matches hand value") {
  const Tensor a = Tensor::from_data({2, 1}, {1.f, 2.f});
  const Tensor b = Tensor::from_data({1, 3}, {10.f, 20.f, 30.f});
  const Tensor c = mul(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(to_vec(c) == std::vector<float>{10.f, 20.f, 30.f, 20.f, 40.f, 60.f});
}

TEST_CASE("elementwise max against scalar is the relu building block") {
  const Tensor a = Tensor::from_data({3}, {-1.f, 0.f, 2.f});
  CHECK(to_vec(maximum(a, 0.f)) == std::vector<float>{0.f, 0.f, 2.f});
}

TEST_CASE("elementwise errors") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), shape_error);
  const Tensor num = Tensor::ones({2});
  const Tensor den = Tensor::from_data({2}, {1.f, 0.f});
  CHECK_THROWS_AS(div(num, den), arithmetic_error);
}

TEST_CASE("broadcasting equals materialize-then-loop oracle on all small shape pairs") {
  auto shapes = small_shapes();
  Rng rng(20240517);
  std::size_t compatible_pairs = 0;
  for (const Shape& sa : shapes) {
    for (const Shape& sb : shapes) {
      Shape expect_shape;
      try {
        expect_shape = oracle::naive_broadcast_shape(sa, sb);
      } catch (const std::exception&) {
        CHECK_THROWS_AS(broadcast_shape(sa, sb), shape_error);
        continue;
      }
      ++compatible_pairs;
      const TensorD a = oracle::rand_tensor(sa, rng);
      const TensorD b = oracle::rand_tensor(sb, rng, 0.5, 2.0);  // keep divisors away from zero
      const auto av = to_vecd(a);
      const auto bv = to_vecd(b);

      const TensorD s = add(a, b);
      CHECK(s.shape() == expect_shape);
      CHECK(to_vecd(s) == oracle::broadcast_elementwise(sa, av, sb, bv,
                                                        [](double x, double y) { return x + y; }));
      CHECK(to_vecd(sub(a, b)) == oracle::broadcast_elementwise(sa, av, sb, bv,
                                                                [](double x, double y) { return x - y; }));
      CHECK(to_vecd(mul(a, b)) == oracle::broadcast_elementwise(sa, av, sb, bv,
                                                                [](double x, double y) { return x * y; }));
      CHECK(to_vecd(div(a, b)) == oracle::broadcast_elementwise(sa, av, sb, bv,
                                                                [](double x, double y) { return x / y; }));
      CHECK(to_vecd(maximum(a, b)) ==
            oracle::broadcast_elementwise(sa, av, sb, bv,
                                          [](double x, double y) { return x >= y ? x : y; }));
    }
  }
  CHECK(compatible_pairs > 100);
}

TEST_CASE("matmul identity, hand value, annihilator, mismatch") {
  const Tensor eye = Tensor::from_data({2, 2}, {1.f, 0.f, 0.f, 1.f});
  const Tensor m = Tensor::from_data({2, 2}, {5.f, 6.f, 7.f, 8.f});
  CHECK(to_vec(matmul(eye, m)) == to_vec(m));

  const Tensor a = Tensor::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f});
  CHECK(to_vec(matmul(a, m)) == std::vector<float>{19.f, 22.f, 43.f, 50.f});
  CHECK(to_vec(matmul(a, m)) == oracle::naive_matmul(to_vec(a), to_vec(m), 2, 2, 2));

  const Tensor z = Tensor::zeros({2, 4});
  for (float v : to_vec(matmul(a, z))) CHECK(v == 0.f);

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), shape_error);
}

TEST_CASE("matmul equals triple-loop oracle on random shapes") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.uniform_below(5);
    const std::size_t k = 1 + rng.uniform_below(5);
    const std::size_t n = 1 + rng.uniform_below(5);
    const TensorD a = oracle::rand_tensor({m, k}, rng);
    const TensorD b = oracle::rand_tensor({k, n}, rng);
    const auto got = to_vecd(matmul(a, b));
    const auto want = oracle::naive_matmul(to_vecd(a), to_vecd(b), m, k, n);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == Catch::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul associativity within 1e-5 at 32-bit") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.uniform_below(4);
    const std::size_t k = 1 + rng.uniform_below(4);
    const std::size_t p = 1 + rng.uniform_below(4);
    const std::size_t n = 1 + rng.uniform_below(4);
    auto randf = [&](Shape s) {
      std::vector<float> d(shape_numel(s));
      for (float& v : d) v = static_cast<float>(rng.uniform(-1, 1));
      return Tensor::from_data(s, std::move(d));
    };
    const Tensor a = randf({m, k}), b = randf({k, p}), c = randf({p, n});
    const auto lhs = to_vec(matmul(matmul(a, b), c));
    const auto rhs = to_vec(matmul(a, matmul(b, c)));
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      CHECK(lhs[i] == Catch::Approx(rhs[i]).epsilon(1e-5).margin(1e-6));
    }
  }
}

TEST_CASE("reductions match naive loops") {
  const Tensor t = Tensor::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f});
  CHECK(sum(t).item() == 10.f);
  CHECK(mean(Tensor::ones({4, 4})).item() == 1.f);
  CHECK(reduce_max(Tensor::from_data({3}, {-5.f, -2.f, -9.f})).item() == -2.f);

  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const TensorD x = oracle::rand_tensor({2, 3, 2}, rng);
    CHECK(sum(x).item() == Catch::Approx(oracle::naive_sum(to_vecd(x))).epsilon(1e-12));
    CHECK(reduce_max(x).item() == oracle::naive_max(to_vecd(x)));
    CHECK(mean(x).item() == Catch::Approx(oracle::naive_sum(to_vecd(x)) / 12.0).epsilon(1e-12));
  }
}

TEST_CASE("reduction over axes keeps or drops dims") {
  const Tensor t = Tensor::from_data({2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
  const Tensor s0 = sum(t, {0});
  CHECK(s0.shape() == Shape{3});
  CHECK(to_vec(s0) == std::vector<float>{5.f, 7.f, 9.f});
  const Tensor s1 = sum(t, {1}, /*keepdims=*/true);
  CHECK(s1.shape() == Shape{2, 1});
  CHECK(to_vec(s1) == std::vector<float>{6.f, 15.f});
  CHECK_THROWS_AS(sum(t, {2}), index_error);
  CHECK_THROWS_AS(reduce_max(Tensor::zeros({0})), contract_error);
}

TEST_CASE("backward through sum gives ones") {
  Tensor x = Tensor::from_data({3}, {1.f, 2.f, 3.f}, /*requires_grad=*/true);
  sum(x).backward();
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{1.f, 1.f, 1.f});
}

TEST_CASE("backward through square doubles the input") {
  Tensor x = Tensor::from_data({1}, {3.f}, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == 6.f);
}

TEST_CASE("fan-out gradients add across paths") {
  Tensor x = Tensor::from_data({2}, {1.f, 2.f}, true);
  const Tensor a = Tensor::from_data({2}, {3.f, 4.f});
  const Tensor b = Tensor::from_data({2}, {5.f, 6.f});
  sum(add(mul(x, a), mul(x, b))).backward();  // d/dx = a + b
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{8.f, 10.f});
}

TEST_CASE("backward contract violations") {
  Tensor x = Tensor::from_data({2}, {1.f, 2.f}, true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), contract_error);  // non-scalar loss

  Tensor loss = sum(y);
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), state_error);  // consumed tape

  // Reusing a consumed intermediate in a fresh graph is also a state error.
  Tensor loss2 = sum(mul(y, y));
  CHECK_THROWS_AS(loss2.backward(), state_error);
}

TEST_CASE("grad accumulates across independent passes until zeroed") {
  Tensor x = Tensor::from_data({2}, {1.f, 2.f}, true);
  sum(mul(x, 2.f)).backward();
  sum(mul(x, 3.f)).backward();
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{5.f, 5.f});
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("overflow raises instead of propagating inf") {
  const Tensor big = Tensor::full({2}, 3e38f);
  CHECK_THROWS_AS(mul(big, big), arithmetic_error);
  CHECK_THROWS_AS(add(big, big), arithmetic_error);
}

TEST_CASE("no-grad guard suppresses the tape") {
  Tensor x = Tensor::from_data({2}, {1.f, 2.f}, true);
  autograd::NoGradGuard ng;
  Tensor y = sum(mul(x, x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("reshape copies values and routes gradients back") {
  Tensor x = Tensor::from_data({2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f}, true);
  Tensor r = reshape(x, {3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(to_vec(r) == to_vec(x));
  CHECK_THROWS_AS(reshape(x, Shape{4, 2}), shape_error);
  sum(mul(r, r)).backward();
  CHECK(x.grad()[0] == 2.f);
  CHECK(x.grad()[5] == 12.f);
}

TEST_CASE("gradients of every primitive match central finite differences") {
  Rng rng(101);
  const int trials = 100;

  SECTION("add/sub/mul/div with broadcasting") {
    for (int t = 0; t < trials; ++t) {
      const Shape sa = {2, 1, 3};
      const Shape sb = {1 + rng.uniform_below(2), 1, 3};
      const TensorD a = oracle::rand_tensor(sa, rng);
      const TensorD b = oracle::rand_tensor(sb, rng, 0.5, 1.5);
      const TensorD w = oracle::rand_tensor(broadcast_shape(sa, sb), rng);
      for (auto op : {BinaryOp::add, BinaryOp::sub, BinaryOp::mul, BinaryOp::div}) {
        oracle::check_gradients(
            [&, op](const std::vector<TensorD>& in) {
              return sum(mul(elementwise(op, in[0], in[1]), w));
            },
            {a, b});
      }
    }
  }

  SECTION("elementwise max away from ties") {
    for (int t = 0; t < trials; ++t) {
      const TensorD a = oracle::rand_tensor_distinct({2, 3}, rng, -1, 1, 1e-3);
      const TensorD b = oracle::rand_tensor_distinct({2, 3}, rng, -1, 1, 1e-3);
      const TensorD w = oracle::rand_tensor({2, 3}, rng);
      oracle::check_gradients(
          [&](const std::vector<TensorD>& in) { return sum(mul(maximum(in[0], in[1]), w)); }, {a, b});
    }
  }

  SECTION("matmul") {
    for (int t = 0; t < trials; ++t) {
      const std::size_t m = 1 + rng.uniform_below(3);
      const std::size_t k = 1 + rng.uniform_below(3);
      const std::size_t n = 1 + rng.uniform_below(3);
      const TensorD a = oracle::rand_tensor({m, k}, rng);
      const TensorD b = oracle::rand_tensor({k, n}, rng);
      const TensorD w = oracle::rand_tensor({m, n}, rng);
      oracle::check_gradients(
          [&](const std::vector<TensorD>& in) { return sum(mul(matmul(in[0], in[1]), w)); }, {a, b});
    }
  }

  SECTION("reductions") {
    for (int t = 0; t < trials; ++t) {
      const TensorD x = oracle::rand_tensor_distinct({2, 3}, rng, -1, 1, 1e-3);
      const TensorD w0 = oracle::rand_tensor({3}, rng);
      oracle::check_gradients(
          [&](const std::vector<TensorD>& in) { return sum(mul(sum(in[0], {0}), w0)); }, {x});
      oracle::check_gradients(
          [&](const std::vector<TensorD>& in) { return sum(mul(mean(in[0], {0}), w0)); }, {x});
      oracle::check_gradients(
          [&](const std::vector<TensorD>& in) { return sum(mul(reduce_max(in[0], {0}), w0)); }, {x});
    }
  }

  SECTION("exp and transpose") {
    for (int t = 0; t < trials; ++t) {
      const TensorD x = oracle::rand_tensor({2, 3}, rng);
      const TensorD w = oracle::rand_tensor({3, 2}, rng);
      oracle::check_gradients(
          [&](const std::vector<TensorD>& in) { return sum(mul(transpose2d(exp(in[0])), w)); }, {x});
    }
  }

  SECTION("arbitrary op chain") {
    for (int t = 0; t < trials; ++t) {
      const TensorD x = oracle::rand_tensor({2, 2}, rng, 0.1, 1.0);
      const TensorD y = oracle::rand_tensor({2, 2}, rng, 0.5, 1.5);
      oracle::check_gradients(
          [&](const std::vector<TensorD>& in) {
            TensorD h = matmul(in[0], in[1]);
            h = div(h, add(in[1], 1.0));
            return mean(mul(h, h));
          },
          {x, y});
    }
  }
}
