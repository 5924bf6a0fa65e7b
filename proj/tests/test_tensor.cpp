#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dancer/grad_check.hpp"
#include "dancer/nn.hpp"
#include "dancer/tensor.hpp"

using namespace dancer;

using Td = TensorT<double>;

TEST_CASE("shape helpers and construction", "[tensor]") {
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.dim(0) == 2);
  REQUIRE(t.dim(1) == 3);
  REQUIRE(t.at(4) == 5.0f);
  REQUIRE_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  REQUIRE(shape_str({2, 3}) == "[2,3]");
}

TEST_CASE("elementwise forward oracles", "[tensor]") {
  auto a = Tensor::from({4}, {1, -2, 3, 0.5f});
  auto b = Tensor::from({4}, {2, 2, -1, 4});
  auto s = add(a, b);
  auto d = sub(a, b);
  auto m = mul(a, b);
  const float es[] = {3, 0, 2, 4.5f};
  const float ed[] = {-1, -4, 4, -3.5f};
  const float em[] = {2, -4, -3, 2};
  for (int i = 0; i < 4; ++i) {
    REQUIRE(s.at(i) == Catch::Approx(es[i]));
    REQUIRE(d.at(i) == Catch::Approx(ed[i]));
    REQUIRE(m.at(i) == Catch::Approx(em[i]));
  }
  REQUIRE_THROWS_AS(add(a, Tensor::from({3}, {1, 2, 3})), DimensionError);
  REQUIRE(mul_scalar(a, 2.0f).at(1) == Catch::Approx(-4.0f));
  REQUIRE(add_scalar(a, 1.0f).at(1) == Catch::Approx(-1.0f));
  REQUIRE(square(a).at(2) == Catch::Approx(9.0f));
  REQUIRE(exp_t(Tensor::from({1}, {0.0f})).value() == Catch::Approx(1.0f));
  REQUIRE(sigmoid(Tensor::from({1}, {0.0f})).value() == Catch::Approx(0.5f));
}

TEST_CASE("matmul2d forward oracle", "[tensor]") {
  // [[1,2,3],[4,5,6]] @ [[7,8],[9,10],[11,12]] = [[58,64],[139,154]]
  auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul2d(a, b);
  REQUIRE(c.dim(0) == 2);
  REQUIRE(c.dim(1) == 2);
  REQUIRE(c.at(0) == Catch::Approx(58));
  REQUIRE(c.at(1) == Catch::Approx(64));
  REQUIRE(c.at(2) == Catch::Approx(139));
  REQUIRE(c.at(3) == Catch::Approx(154));
  REQUIRE_THROWS_AS(matmul2d(a, a), DimensionError);
}

TEST_CASE("matmul_nt matches matmul2d against transposed operand", "[tensor]") {
  Rng rng(11);
  auto a = Tensor::randn({3, 5}, rng);
  auto b = Tensor::randn({4, 5}, rng);  // logical B^T
  auto bt = Tensor::zeros({5, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) bt.at(static_cast<std::size_t>(j) * 4 + i) = b.at(static_cast<std::size_t>(i) * 5 + j);
  auto y1 = matmul_nt(a, b);
  auto y2 = matmul2d(a, bt);
  for (std::size_t i = 0; i < y1.numel(); ++i)
    REQUIRE(y1.at(i) == Catch::Approx(y2.at(i)).margin(1e-5));
}

TEST_CASE("backward on hand-solved composite", "[tensor]") {
  // f(a, b) = mean((a*b + a)^2), a=[1,2], b=[3,-1].
  // e = a*(b+1) = [4, 0]; f = (16+0)/2 = 8
  // df/da_i = (b_i+1)^2 * a_i ; df/db_i = a_i^2 * (b_i+1)
  auto a = Tensor::from({2}, {1, 2});
  auto b = Tensor::from({2}, {3, -1});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto f = mean_all(square(add(mul(a, b), a)));
  REQUIRE(f.value() == Catch::Approx(8.0f));
  backward(f);
  REQUIRE((*a.grad)[0] == Catch::Approx(16.0f));  // (3+1)^2 * 1
  REQUIRE((*a.grad)[1] == Catch::Approx(0.0f));
  REQUIRE((*b.grad)[0] == Catch::Approx(4.0f));  // 1^2 * (3+1)
  REQUIRE((*b.grad)[1] == Catch::Approx(0.0f));
}

TEST_CASE("gradient accumulates across reuse", "[tensor]") {
  auto x = Tensor::from({1}, {3});
  x.set_requires_grad(true);
  auto y = sum_all(add(x, x));
  backward(y);
  REQUIRE((*x.grad)[0] == Catch::Approx(2.0f));
}

TEST_CASE("sum(x^2) gradient check at 64-bit", "[tensor][gradcheck]") {
  ParamStoreT<double> ps;
  Rng rng(1);
  auto x = ps.create("x", {8}, Init::kZero, rng);
  for (auto& v : *x.data) v = 1.0;
  auto res = grad_check<double>(ps, [&] { return sum_all(square(ps.get("x"))); });
  // Analytic gradient is exactly 2 per coordinate.
  REQUIRE(res.max_rel_err < 1e-6);
  REQUIRE(res.coords_checked == 8);
}

TEST_CASE("reductions accumulate in double", "[tensor]") {
  // Summing 1e6 copies of 0.1f in float drifts well above 1e-2;
  // double accumulation keeps the total tight.
  const std::size_t n = 1000000;
  auto x = Tensor::full({static_cast<int>(n)}, 0.1f);
  const double total = static_cast<double>(sum_all(x).value());
  const double expect = static_cast<double>(n) * static_cast<double>(0.1f);
  REQUIRE(std::abs(total - expect) / expect < 1e-4);
  REQUIRE(mean_all(x).value() == Catch::Approx(0.1).epsilon(1e-5));
}

TEST_CASE("concat and slice are inverse and route gradients", "[tensor]") {
  Rng rng(5);
  auto a = Td::randn({2, 3}, rng);
  auto b = Td::randn({2, 2}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto cat = concat<double>({a, b}, 1);
  REQUIRE(cat.dim(1) == 5);
  auto back_a = slice(cat, 1, 0, 3);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(back_a.at(i) == a.at(i));

  // d/da of sum(slice(cat(a,b), picks only b's half)) must be zero in a.
  auto only_b = slice(cat, 1, 3, 2);
  auto loss = sum_all(only_b);
  backward(loss);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE((*a.grad)[i] == 0.0);
  for (std::size_t i = 0; i < b.numel(); ++i) REQUIRE((*b.grad)[i] == 1.0);
  REQUIRE_THROWS_AS(slice(cat, 1, 4, 3), DimensionError);
  REQUIRE_THROWS_AS(concat<double>({a, Td::zeros({3, 3})}, 1), DimensionError);
}

TEST_CASE("permute roundtrip and gradient", "[tensor]") {
  Rng rng(7);
  auto x = Td::randn({2, 3, 4}, rng);
  x.set_requires_grad(true);
  auto p = permute(x, {2, 0, 1});  // [4,2,3]
  REQUIRE(p.shape == Shape({4, 2, 3}));
  auto back = permute(p, {1, 2, 0});
  for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(back.at(i) == x.at(i));

  // Forward oracle on one element: p[k,i,j] == x[i,j,k].
  REQUIRE(p.at((3 * 2 + 1) * 3 + 2) == x.at((1 * 3 + 2) * 4 + 3));

  auto loss = sum_all(square(p));
  backward(loss);
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE((*x.grad)[i] == Catch::Approx(2.0 * x.at(i)));
  REQUIRE_THROWS_AS(permute(x, {0, 0, 1}), DimensionError);
}

TEST_CASE("broadcast_axis0 and mean_axis0 are adjoint-consistent", "[tensor][gradcheck]") {
  ParamStoreT<double> ps;
  Rng rng(9);
  auto x = ps.create("x", {1, 4}, Init::kKaimingUniform, rng, 4);
  auto res = grad_check<double>(ps, [&] {
    auto big = broadcast_axis0(ps.get("x"), 5);  // [5,4]
    auto m = mean_axis0(square(big));            // [1,4]
    return sum_all(m);
  });
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("reshape is a view with gradient passthrough", "[tensor]") {
  auto x = Td::from({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  auto r = reshape(x, {3, 2});
  REQUIRE(r.data.get() == x.data.get());
  auto loss = sum_all(square(r));
  backward(loss);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE((*x.grad)[i] == Catch::Approx(2.0 * x.at(i)));
  REQUIRE_THROWS_AS(reshape(x, {4, 2}), DimensionError);
}

TEST_CASE("NoGradGuard suppresses tape construction", "[tensor]") {
  auto x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard ng;
    auto y = square(x);
    REQUIRE(!y.node);
    REQUIRE(!y.requires_grad);
  }
  auto y2 = square(x);
  REQUIRE(static_cast<bool>(y2.node));
}

TEST_CASE("matmul gradients against finite differences", "[tensor][gradcheck]") {
  ParamStoreT<double> ps;
  Rng rng(13);
  ps.create("a", {3, 4}, Init::kKaimingUniform, rng, 4);
  ps.create("b", {4, 2}, Init::kKaimingUniform, rng, 4);
  ps.create("c", {5, 4}, Init::kKaimingUniform, rng, 4);
  auto res = grad_check<double>(ps, [&] {
    auto y = matmul2d(ps.get("a"), ps.get("b"));   // [3,2]
    auto z = matmul_nt(ps.get("a"), ps.get("c"));  // [3,5]
    return add(sum_all(square(y)), sum_all(square(z)));
  });
  REQUIRE(res.max_rel_err < 1e-7);
}
