#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "chaosemu/diff/checkpoint.hpp"
#include "chaosemu/diff/fft.hpp"
#include "chaosemu/diff/ops.hpp"
#include "chaosemu/diff/optim.hpp"
#include "chaosemu/error.hpp"
#include "../support/gradcheck.hpp"

using namespace chaosemu;
using namespace chaosemu::diff;
using testsupport::grad_check;
using testsupport::randn;
using testsupport::weighted_sum;

namespace {

constexpr double kTol = 1e-5;

void check_unary(const char* name, const std::function<Var(const Var&)>& op, Tensor x) {
  CAPTURE(name);
  auto r = grad_check([&](const std::vector<Var>& v) { return weighted_sum(op(v[0])); }, {std::move(x)});
  CHECK(r.probes >= 20);
  CHECK(r.max_rel_error < kTol);
}

void check_binary(const char* name, const std::function<Var(const Var&, const Var&)>& op, Tensor a, Tensor b) {
  CAPTURE(name);
  auto r = grad_check([&](const std::vector<Var>& v) { return weighted_sum(op(v[0], v[1])); },
                      {std::move(a), std::move(b)});
  CHECK(r.probes >= 20);
  CHECK(r.max_rel_error < kTol);
}

}  // namespace

TEST_CASE("sum backward gives ones") {
  auto x = Var::parameter(Tensor({3, 4}, 2.5), "x");
  backward(sum(x));
  for (double g : x.grad().data()) CHECK(g == 1.0);
}

TEST_CASE("fft round trip and Parseval") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {8u, 40u, 256u, 7u}) {
    auto x = randn({n}, rng);
    std::vector<fft::Complex> X(fft::half_size(n));
    fft::rfft(x.data(), X);
    std::vector<double> back(n);
    fft::irfft(X, back);
    double e = 0, energy = 0, spec = 0;
    for (std::size_t i = 0; i < n; ++i) {
      e = std::max(e, std::abs(back[i] - x[i]));
      energy += x[i] * x[i];
    }
    for (std::size_t k = 0; k < X.size(); ++k) {
      const bool self_conj = k == 0 || (n % 2 == 0 && k == n / 2);
      spec += (self_conj ? 1.0 : 2.0) * std::norm(X[k]);
    }
    CHECK(e < 1e-12);
    CHECK(std::abs(energy - spec / static_cast<double>(n)) < 1e-10 * std::max(1.0, energy));
  }
  auto x = Var::constant(randn({2, 3, 16}, rng));
  auto y = irfft(rfft(x), 16);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y.value()[i] - x.value()[i]) < 1e-12);
}

TEST_CASE("elementwise gradients") {
  std::mt19937_64 rng(2);
  Shape s{3, 5};
  check_binary("add", [](auto& a, auto& b) { return add(a, b); }, randn(s, rng), randn(s, rng));
  check_binary("sub", [](auto& a, auto& b) { return sub(a, b); }, randn(s, rng), randn(s, rng));
  check_binary("mul", [](auto& a, auto& b) { return mul(a, b); }, randn(s, rng), randn(s, rng));
  check_binary("div", [](auto& a, auto& b) { return div(a, b); }, randn(s, rng), testsupport::uniform(s, rng, 0.5, 2.0));
  check_unary("add_scalar", [](auto& a) { return add_scalar(a, 1.5); }, randn(s, rng));
  check_unary("scale", [](auto& a) { return scale(a, -0.7); }, randn(s, rng));
  check_unary("neg", [](auto& a) { return neg(a); }, randn(s, rng));
  check_unary("square", [](auto& a) { return square(a); }, randn(s, rng));
  check_unary("exp", [](auto& a) { return exp(a); }, randn(s, rng));
  check_unary("log", [](auto& a) { return log(a); }, testsupport::uniform(s, rng, 0.2, 3.0));
  check_unary("gelu", [](auto& a) { return gelu(a); }, randn(s, rng, 2.0));
}

TEST_CASE("reduction gradients") {
  std::mt19937_64 rng(3);
  Shape s{2, 3, 4};
  check_unary("sum", [](auto& a) { return sum(a); }, randn(s, rng));
  check_unary("mean", [](auto& a) { return mean(a); }, randn(s, rng));
  for (std::size_t ax = 0; ax < 3; ++ax) {
    check_unary("sum_axis", [ax](auto& a) { return sum_axis(a, ax); }, randn(s, rng));
    check_unary("mean_axis", [ax](auto& a) { return mean_axis(a, ax); }, randn(s, rng));
  }
  check_unary("l2_norm", [](auto& a) { return l2_norm(a); }, randn(s, rng));
}

TEST_CASE("structural gradients") {
  std::mt19937_64 rng(4);
  Shape s{3, 4, 5};
  check_unary("reshape", [](auto& a) { return reshape(a, {12, 5}); }, randn(s, rng));
  check_unary("slice", [](auto& a) { return slice(a, 1, 1, 3); }, randn(s, rng));
  std::vector<std::size_t> idx{4, 0, 0, 2};
  check_unary("gather", [&](auto& a) { return gather(a, 2, idx); }, randn(s, rng));
  check_binary("concat", [](auto& a, auto& b) { std::vector<Var> p{a, b}; return concat(p, 1); }, randn(s, rng),
               randn({3, 2, 5}, rng));
  check_binary("stack", [](auto& a, auto& b) { std::vector<Var> p{a, b}; return stack(p, 1); }, randn(s, rng),
               randn(s, rng));
}

TEST_CASE("linear algebra gradients") {
  std::mt19937_64 rng(5);
  check_binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, randn({4, 3}, rng), randn({3, 5}, rng));
  check_binary("matmul_t", [](auto& a, auto& b) { return matmul(a, b, true); }, randn({4, 3}, rng), randn({6, 3}, rng));
  auto r = grad_check([](const std::vector<Var>& v) { return weighted_sum(channel_linear(v[0], v[1], v[2])); },
                      {randn({2, 3, 7}, rng), randn({4, 3}, rng), randn({4}, rng)});
  CHECK(r.max_rel_error < kTol);
  r = grad_check([](const std::vector<Var>& v) { return weighted_sum(conv2d(v[0], v[1], v[2], 2, 1)); },
                 {randn({2, 2, 7, 6}, rng), randn({3, 2, 3, 3}, rng), randn({3}, rng)});
  CHECK(r.max_rel_error < kTol);
  r = grad_check([](const std::vector<Var>& v) { return weighted_sum(conv1d(v[0], v[1], v[2], 1, 2)); },
                 {randn({2, 2, 9}, rng), randn({3, 2, 5}, rng), randn({3}, rng)});
  CHECK(r.max_rel_error < kTol);
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(6);
  auto x = randn({1, 2, 5, 6}, rng), w = randn({3, 2, 3, 3}, rng), b = randn({3}, rng);
  auto y = conv2d(Var::constant(x), Var::constant(w), Var::constant(b), 2, 1).value();
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t q = 0; q < 3; ++q) {
              const long r = static_cast<long>(2 * i + a) - 1, s = static_cast<long>(2 * j + q) - 1;
              if (r < 0 || r >= 5 || s < 0 || s >= 6) continue;
              acc += w[((o * 2 + c) * 3 + a) * 3 + q] * x[(c * 5 + static_cast<std::size_t>(r)) * 6 + static_cast<std::size_t>(s)];
            }
        CHECK(y[(o * 3 + i) * 3 + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("spectral gradients") {
  std::mt19937_64 rng(7);
  check_unary("rfft", [](auto& a) { return rfft(a); }, randn({2, 3, 10}, rng));
  check_unary("rfft_odd", [](auto& a) { return rfft(a); }, randn({2, 9}, rng));
  check_unary("irfft", [](auto& a) { return irfft(a, 12); }, randn({2, 7, 2}, rng));
  check_binary("spectral_mix", [](auto& a, auto& b) { return spectral_mix(a, b); }, randn({2, 3, 9, 2}, rng),
               randn({5, 3, 4, 2}, rng));
  std::vector<std::complex<double>> f{{1, 0}, {0, 2}, {-1, 0.5}, {0.3, -0.2}, {2, 0}};
  check_unary("complex_scale", [&](auto& a) { return complex_scale(a, f); }, randn({3, 5, 2}, rng));
}

TEST_CASE("normalisation gradients") {
  std::mt19937_64 rng(8);
  check_unary("softmax", [](auto& a) { return softmax(a); }, randn({3, 6}, rng));
  check_binary("cosine_similarity", [](auto& a, auto& b) { return cosine_similarity(a, b, 1); }, randn({3, 4, 5}, rng),
               randn({3, 4, 5}, rng));
  check_unary("normalize", [](auto& a) { return normalize(a, 0); }, randn({4, 3}, rng));
  std::vector<double> shift{0.5, -1, 2}, sc{2, 0.5, 3};
  check_unary("affine_lastdim", [&](auto& a) { return affine_lastdim(a, shift, sc); }, randn({4, 3}, rng));
}

TEST_CASE("random composite expression") {
  std::mt19937_64 rng(9);
  auto r = grad_check(
      [](const std::vector<Var>& v) {
        auto h = gelu(matmul(v[0], v[1]));
        auto s = softmax(h * 0.5);
        return sum(log(s + 1.0)) + mean(square(exp(scale(h, 0.1))));
      },
      {randn({3, 4}, rng), randn({4, 5}, rng)}, 40);
  CHECK(r.max_rel_error < kTol);
}

TEST_CASE("shape errors name the primitive") {
  auto a = Var::constant(Tensor({2, 3})), b = Var::constant(Tensor({3, 2}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(10);
  auto x0 = randn({4, 8}, rng);
  auto run = [&] {
    auto x = Var::parameter(x0, "x");
    backward(sum(gelu(irfft(rfft(x), 8))));
    return x.grad();
  };
  CHECK(run() == run());
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient without weight decay leaves parameters unchanged") {
    std::vector<Var> p{Var::parameter(Tensor({3}, 1.5), "w")};
    AdamW opt({.learning_rate = 0.1, .weight_decay = 0.0});
    for (int i = 0; i < 5; ++i) {
      backward(sum(p[0] * 0.0));
      opt.step(p);
      zero_grad(p);
    }
    for (double x : p[0].value().data()) CHECK(x == 1.5);
  }
  SUBCASE("weight decay alone decays geometrically") {
    std::vector<Var> p{Var::parameter(Tensor({2}, 1.0), "w")};
    AdamW opt({.learning_rate = 0.1, .weight_decay = 0.5});
    for (int i = 0; i < 10; ++i) {
      backward(sum(p[0] * 0.0));
      opt.step(p);
      zero_grad(p);
    }
    CHECK(p[0].value()[0] == doctest::Approx(std::pow(1.0 - 0.05, 10)).epsilon(1e-12));
  }
  SUBCASE("quadratic bowl converges") {
    std::mt19937_64 rng(11);
    auto w0 = randn({10}, rng);
    double n0 = 0;
    for (double x : w0.data()) n0 += x * x;
    for (double& x : w0.data()) x /= std::sqrt(n0);
    std::vector<Var> p{Var::parameter(w0, "w")};
    AdamW opt({.learning_rate = 1e-2, .weight_decay = 0.0});
    for (int i = 0; i < 500; ++i) {
      backward(sum(square(p[0])));
      opt.step(p);
      zero_grad(p);
    }
    double n = 0;
    for (double x : p[0].value().data()) n += x * x;
    CHECK(std::sqrt(n) < 1e-3);
  }
  SUBCASE("missing gradient names the parameter") {
    std::vector<Var> p{Var::parameter(Tensor({2}, 1.0), "lonely")};
    AdamW opt;
    try {
      opt.step(p);
      FAIL("expected MissingGradientError");
    } catch (const MissingGradientError& e) {
      CHECK(std::string(e.what()).find("lonely") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  auto dir = std::filesystem::temp_directory_path() / "chaosemu_ckpt_test";
  std::filesystem::remove_all(dir);
  std::mt19937_64 rng(12);
  std::vector<Var> p{Var::parameter(randn({3, 4}, rng), "a"), Var::parameter(randn({5}, rng), "b")};
  save_checkpoint(dir, "toy", {{"width", 4}}, p);
  auto ck = load_checkpoint(dir);
  CHECK(ck.kind == "toy");
  CHECK(ck.architecture["width"] == 4);
  std::vector<Var> q{Var::parameter(Tensor({3, 4}), "a"), Var::parameter(Tensor({5}), "b")};
  assign_parameters(ck, q);
  CHECK(q[0].value() == p[0].value());
  CHECK(q[1].value() == p[1].value());
  std::vector<Var> bad{Var::parameter(Tensor({4, 3}), "a")};
  CHECK_THROWS_AS(assign_parameters(ck, bad), ShapeMismatchError);
  std::filesystem::remove_all(dir);
}
