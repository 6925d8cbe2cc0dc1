#include <cmath>

#include "doctest.h"
#include "mmfuse/autograd.hpp"
#include "mmfuse/errors.hpp"
#include "test_support.hpp"

using namespace mmfuse;
using ag::Var;
using testing::check_gradients;
using testing::random_tensor;

namespace {

// Direct nested-loop cross-correlation, written independently of im2col.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int dilation,
                  int padding) {
  const int k = w.h();
  const int ho = x.h() + 2 * padding - dilation * (k - 1);
  const int wo = x.w() + 2 * padding - dilation * (k - 1);
  Tensor out(Shape{x.n(), w.n(), ho, wo});
  for (int n = 0; n < x.n(); ++n)
    for (int co = 0; co < w.n(); ++co)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double s = b.empty() ? 0.0 : b.at(0, co, 0, 0);
          for (int ci = 0; ci < x.c(); ++ci)
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j) {
                const int sy = y - padding + i * dilation;
                const int sx = xx - padding + j * dilation;
                if (sy >= 0 && sy < x.h() && sx >= 0 && sx < x.w()) {
                  s += w.at(co, ci, i, j) * x.at(n, ci, sy, sx);
                }
              }
          out.at(n, co, y, xx) = s;
        }
  return out;
}

// Scalar objective that weights every output element differently, so
// gradient errors cannot cancel.
Var weighted_sum(const Var& y, std::uint64_t seed) {
  const Var target(random_tensor(y.shape(), seed));
  return ag::mse(y, target);
}

}  // namespace

TEST_CASE("conv2d forward matches a direct loop for dilated and pointwise kernels") {
  const Tensor x = random_tensor({2, 3, 9, 7}, 1);
  for (auto [k, dilation, padding] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 2},
                                      std::tuple{3, 3, 0}, std::tuple{1, 1, 0}}) {
    const Tensor w = random_tensor({4, 3, k, k}, 2);
    const Tensor b = random_tensor({1, 4, 1, 1}, 3);
    const Tensor got = ag::conv2d(Var(x), Var(w), Var(b), dilation, padding).value();
    const Tensor want = naive_conv(x, w, b, dilation, padding);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d without bias and with channel mismatch") {
  const Tensor x = random_tensor({1, 2, 5, 5}, 4);
  const Tensor w = random_tensor({3, 2, 3, 3}, 5);
  const Tensor got = ag::conv2d(Var(x), Var(w), Var(), 1, 1).value();
  const Tensor want = naive_conv(x, w, Tensor(), 1, 1);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]));
  CHECK_THROWS_AS(ag::conv2d(Var(random_tensor({1, 3, 5, 5}, 6)), Var(w), Var(), 1, 1),
                  ShapeError);
}

TEST_CASE("conv2d gradients match central differences") {
  Var x(random_tensor({2, 2, 6, 6}, 7), true);
  Var w(random_tensor({3, 2, 3, 3}, 8), true);
  Var b(random_tensor({1, 3, 1, 1}, 9), true);
  for (int dilation : {1, 2}) {
    const auto r = check_gradients(
        [&] { return weighted_sum(ag::conv2d(x, w, b, dilation, dilation), 10); }, {x, w, b});
    CHECK(r.checked > 100);
    CHECK(r.worst_relative < 1e-5);
  }
  Var w1(random_tensor({4, 2, 1, 1}, 11), true);
  const auto r = check_gradients([&] { return weighted_sum(ag::conv2d(x, w1, Var(), 1, 0), 12); },
                                 {x, w1});
  CHECK(r.worst_relative < 1e-5);
}

TEST_CASE("elementwise ops and their gradients") {
  Var a(random_tensor({1, 2, 4, 4}, 13), true);
  Var b(random_tensor({1, 2, 4, 4}, 14), true);
  const std::vector<std::function<Var()>> fns = {
      [&] { return weighted_sum(a + b, 1); },
      [&] { return weighted_sum(a - b, 2); },
      [&] { return weighted_sum(a * b, 3); },
      [&] { return weighted_sum(2.5 * a, 4); },
      [&] { return weighted_sum(ag::leaky_relu(a, 0.2), 5); },
      [&] { return weighted_sum(ag::sigmoid(a), 6); },
      [&] { return weighted_sum(ag::abs(a), 7); },
  };
  for (const auto& f : fns) CHECK(check_gradients(f, {a, b}).worst_relative < 1e-5);

  const Tensor v = ag::leaky_relu(Var(Tensor(Shape{1, 1, 1, 2}, std::vector<double>{-2.0, 3.0})), 0.2).value();
  CHECK(v[0] == doctest::Approx(-0.4));
  CHECK(v[1] == doctest::Approx(3.0));
  CHECK(ag::sigmoid(Var(Tensor::scalar(0.0))).value().item() == doctest::Approx(0.5));
}

TEST_CASE("pooling forward values") {
  const Tensor x(Shape{1, 1, 2, 4}, std::vector<double>{1, 2, 5, 6, 3, 4, 7, 9});
  const Tensor avg = ag::avg_pool2d(Var(x), 2).value();
  CHECK(avg[0] == doctest::Approx(2.5));
  CHECK(avg[1] == doctest::Approx(6.75));
  const Tensor mx = ag::max_pool2d(Var(x), 2).value();
  CHECK(mx[0] == 4);
  CHECK(mx[1] == 9);
  CHECK_THROWS_AS(ag::avg_pool2d(Var(Tensor(Shape{1, 1, 3, 4})), 2), ShapeError);
  // Floor semantics drop the trailing row.
  CHECK(ag::max_pool2d(Var(Tensor(Shape{1, 1, 5, 4})), 2).shape() == Shape{1, 1, 2, 2});
}

TEST_CASE("bilinear upsampling uses half-pixel centers with edge clamping") {
  const Tensor x(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 4.0});
  const Tensor y = ag::upsample_bilinear(Var(x), 2).value();
  REQUIRE(y.shape() == Shape{1, 1, 2, 4});
  const double want[4] = {0.0, 1.0, 3.0, 4.0};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) CHECK(y.at(0, 0, r, c) == doctest::Approx(want[c]));
}

TEST_CASE("pooling and upsampling gradients") {
  Var x(random_tensor({1, 2, 6, 6}, 15), true);
  CHECK(check_gradients([&] { return weighted_sum(ag::avg_pool2d(x, 2), 1); }, {x}).worst_relative < 1e-5);
  CHECK(check_gradients([&] { return weighted_sum(ag::max_pool2d(x, 2), 2); }, {x}).worst_relative < 1e-5);
  CHECK(check_gradients([&] { return weighted_sum(ag::upsample_bilinear(x, 2), 3); }, {x}).worst_relative < 1e-5);
}

TEST_CASE("Sobel responses on a horizontal ramp with replicate padding") {
  Tensor ramp(Shape{1, 1, 5, 5});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) ramp.at(0, 0, y, x) = x;
  const Tensor gx = ag::sobel_x(Var(ramp)).value();
  const Tensor gy = ag::sobel_y(Var(ramp)).value();
  for (int y = 0; y < 5; ++y) {
    CHECK(gx.at(0, 0, y, 0) == doctest::Approx(4.0));  // replicated left edge
    for (int x = 1; x < 4; ++x) CHECK(gx.at(0, 0, y, x) == doctest::Approx(8.0));
    CHECK(gx.at(0, 0, y, 4) == doctest::Approx(4.0));
    for (int x = 0; x < 5; ++x) CHECK(gy.at(0, 0, y, x) == doctest::Approx(0.0));
  }
  Var v(random_tensor({1, 2, 5, 6}, 16), true);
  CHECK(check_gradients([&] { return weighted_sum(ag::sobel_x(v), 1); }, {v}).worst_relative < 1e-5);
  CHECK(check_gradients([&] { return weighted_sum(ag::sobel_y(v), 2); }, {v}).worst_relative < 1e-5);
}

TEST_CASE("channel manipulation") {
  Var a(random_tensor({2, 1, 3, 3}, 17), true);
  Var b(random_tensor({2, 2, 3, 3}, 18), true);
  const std::vector<Var> parts{a, b};
  const Tensor cat = ag::concat_channels(parts).value();
  REQUIRE(cat.shape() == Shape{2, 3, 3, 3});
  CHECK(cat.at(1, 0, 2, 1) == a.value().at(1, 0, 2, 1));
  CHECK(cat.at(1, 2, 0, 2) == b.value().at(1, 1, 0, 2));
  CHECK(check_gradients([&] { return weighted_sum(ag::concat_channels(parts), 1); }, {a, b}).worst_relative < 1e-5);

  const Tensor rep = ag::repeat_channels(a, 3).value();
  CHECK(rep.at(1, 2, 1, 1) == a.value().at(1, 0, 1, 1));
  CHECK(check_gradients([&] { return weighted_sum(ag::repeat_channels(a, 3), 2); }, {a}).worst_relative < 1e-5);

  const Tensor aff = ag::channel_affine(b, {2.0, -1.0}, {0.5, 1.0}).value();
  CHECK(aff.at(0, 1, 1, 1) == doctest::Approx(-b.value().at(0, 1, 1, 1) + 1.0));
  CHECK(check_gradients([&] { return weighted_sum(ag::channel_affine(b, {2.0, -1.0}, {0.5, 1.0}), 3); }, {b}).worst_relative < 1e-5);
}

TEST_CASE("mse and sum_scalars") {
  const Var zero(Tensor(Shape{1, 1, 2, 2}, 0.0));
  const Var half(Tensor(Shape{1, 1, 2, 2}, 0.5));
  CHECK(ag::mse(zero, half).value().item() == doctest::Approx(0.25));
  const std::vector<Var> terms{Var(Tensor::scalar(1.5)), Var(Tensor::scalar(2.0))};
  CHECK(ag::sum_scalars(terms).value().item() == doctest::Approx(3.5));
  CHECK_THROWS_AS(ag::mse(zero, Var(Tensor(Shape{1, 1, 2, 3}))), ShapeError);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Var x(Tensor::scalar(3.0), true);
  const Var y = x * x + x;  // dy/dx = 2x + 1
  y.backward();
  CHECK(x.grad().item() == doctest::Approx(7.0));
}

TEST_CASE("backward requires a scalar root") {
  Var x(random_tensor({1, 1, 2, 2}, 19), true);
  CHECK_THROWS_AS((x * x).backward(), ShapeError);
}

TEST_CASE("NoGradGuard records no graph") {
  Var x(random_tensor({1, 1, 4, 4}, 20), true);
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    const Var y = ag::sobel_x(x) * x;
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
  }
  CHECK(ag::grad_enabled());
  CHECK(ag::sobel_x(x).requires_grad());
}
