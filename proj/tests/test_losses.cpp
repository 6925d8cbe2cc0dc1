#include <filesystem>

#include "doctest.h"
#include "mmfuse/checkpoint.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/losses.hpp"
#include "test_support.hpp"

using namespace mmfuse;
using namespace mmfuse::loss;
using testing::check_gradients;
using testing::random_tensor;

namespace {

const PerceptualExtractor& extractor() {
  static const PerceptualExtractor e = PerceptualExtractor::random(8, 1234);
  return e;
}

Tensor column_ramp(int n) {
  Tensor t(Shape{1, 1, n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) t.at(0, 0, y, x) = x;
  return t;
}

Tensor plus(const Tensor& t, double c) {
  Tensor out = t;
  for (double& v : out.values()) v += c;
  return out;
}

}  // namespace

TEST_CASE("pixel loss") {
  const Var zero(Tensor(Shape{1, 1, 4, 4}, 0.0));
  const Var half(Tensor(Shape{1, 1, 4, 4}, 0.5));
  CHECK(pixel_loss(zero, half).value().item() == doctest::Approx(0.25));
  const Var a(random_tensor({2, 1, 8, 8}, 1));
  const Var b(random_tensor({2, 1, 8, 8}, 2));
  CHECK(pixel_loss(a, b).value().item() == doctest::Approx(pixel_loss(b, a).value().item()));
  CHECK(pixel_loss(a, a).value().item() == 0.0);
}

TEST_CASE("Sobel gradient loss on a ramp against a constant") {
  // Replicate padding: Gx per row is 4, 8, 8, 8, 4 and Gy is 0.
  const double want = (16.0 + 64.0 * 3 + 16.0) / 5.0;
  const Var ramp(column_ramp(5));
  const Var flat(Tensor(Shape{1, 1, 5, 5}, 0.0));
  CHECK(gradient_loss(ramp, flat).value().item() == doctest::Approx(want));
  CHECK(gradient_loss(flat, ramp).value().item() == doctest::Approx(want));
}

TEST_CASE("forward-difference gradient loss on a ramp against a constant") {
  // x[i+1] - x[i] is 1 except in the last column, where replication gives 0.
  const Var ramp(column_ramp(5));
  const Var flat(Tensor(Shape{1, 1, 5, 5}, 0.0));
  CHECK(gradient_loss(ramp, flat, GradientOperator::kForwardDifference).value().item() ==
        doctest::Approx(4.0 / 5.0));
}

TEST_CASE("gradient loss is zero on constants and invariant to a shared offset") {
  const Var c1(Tensor(Shape{1, 1, 8, 8}, 0.2));
  const Var c2(Tensor(Shape{1, 1, 8, 8}, 0.9));
  CHECK(gradient_loss(c1, c2).value().item() == doctest::Approx(0.0));
  const Tensor x = random_tensor({2, 1, 8, 8}, 3);
  const Tensor y = random_tensor({2, 1, 8, 8}, 4);
  for (auto op : {GradientOperator::kSobel, GradientOperator::kForwardDifference}) {
    const double base = gradient_loss(Var(x), Var(y), op).value().item();
    CHECK(base > 0.0);
    for (double c : {-0.7, 0.3, 5.0}) {
      CHECK(gradient_loss(Var(plus(x, c)), Var(plus(y, c)), op).value().item() ==
            doctest::Approx(base).epsilon(1e-10));
    }
  }
}

TEST_CASE("perceptual loss is non-negative and zero on identical inputs") {
  const Var x(random_tensor({2, 1, 16, 16}, 5, 0.0, 1.0));
  const Var y(random_tensor({2, 1, 16, 16}, 6, 0.0, 1.0));
  for (const auto& layers : {std::vector<std::string>{"relu4_3"},
                             std::vector<std::string>{"relu1_2", "relu3_3"}}) {
    CHECK(perceptual_loss(extractor(), x, x, layers).value().item() == 0.0);
    CHECK(perceptual_loss(extractor(), x, y, layers).value().item() > 0.0);
  }
  CHECK_THROWS_AS(perceptual_loss(extractor(), x, y, {"relu5_3"}), ConfigError);
  CHECK_FALSE(extractor().pretrained());
  CHECK(extractor().description() == "vgg16-random-fallback(width/8)");
}

TEST_CASE("perceptual features follow the VGG16 stage layout") {
  const Var x(random_tensor({1, 1, 16, 16}, 7, 0.0, 1.0));
  const auto f = extractor().features(x, {"relu1_1", "relu2_2", "relu3_3", "relu4_3"});
  REQUIRE(f.size() == 4);
  CHECK(f[0].shape() == Shape{1, 8, 16, 16});
  CHECK(f[1].shape() == Shape{1, 16, 8, 8});
  CHECK(f[2].shape() == Shape{1, 32, 4, 4});
  CHECK(f[3].shape() == Shape{1, 64, 2, 2});
  CHECK(PerceptualExtractor::layer_names().size() == 10);
}

TEST_CASE("extractor archives must provide every layer") {
  const auto path = std::filesystem::temp_directory_path() / "mmfuse_test_vgg.mmf";
  io::Archive empty;
  io::write_archive(path, empty);
  CHECK_THROWS_AS(PerceptualExtractor::load(path), IoError);
  LossConfig cfg;
  cfg.extractor_weights = "/nonexistent/vgg16.mmf";
  CHECK_FALSE(PerceptualExtractor::from_config(cfg).pretrained());
  std::filesystem::remove(path);
}

TEST_CASE("total loss weighting") {
  LossConfig cfg;
  CHECK(cfg.lambda_grad == 0.5);
  CHECK(cfg.lambda_perp == 0.5);
  CHECK(total_loss(cfg, 1.0, 2.0, 4.0) == doctest::Approx(4.0));
  LossConfig none = cfg;
  none.lambda_grad = 0.0;
  none.lambda_perp = 0.0;
  CHECK(total_loss(none, 1.25, 2.0, 4.0) == 1.25);

  const Var x(random_tensor({1, 1, 16, 16}, 8, 0.0, 1.0));
  const Var y(random_tensor({1, 1, 16, 16}, 9, 0.0, 1.0));
  const LossTerms t = reconstruction_loss(cfg, extractor(), x, y);
  CHECK(t.total.value().item() == doctest::Approx(total_loss(cfg, t.pixel, t.gradient, t.perceptual)));
  const LossTerms same = reconstruction_loss(cfg, extractor(), x, x);
  CHECK(same.total.value().item() == 0.0);

  const LossTerms no_grad = reconstruction_loss(cfg, extractor(), x, y, false);
  CHECK(no_grad.gradient == 0.0);
  CHECK(no_grad.total.value().item() ==
        doctest::Approx(t.pixel + cfg.lambda_perp * t.perceptual));
}

TEST_CASE("total loss gradients on a two-layer model match finite differences") {
  Var w1(random_tensor({4, 1, 3, 3}, 10, -0.5, 0.5), true);
  Var b1(random_tensor({1, 4, 1, 1}, 11, -0.1, 0.1), true);
  Var w2(random_tensor({1, 4, 3, 3}, 12, -0.5, 0.5), true);
  Var b2(random_tensor({1, 1, 1, 1}, 13, -0.1, 0.1), true);
  const Var x(random_tensor({1, 1, 8, 8}, 14, 0.0, 1.0));
  const LossConfig cfg;
  // A smooth hidden activation keeps the eps = 1e-3 differences away from
  // activation kinks; the extractor's own ReLU and max-pool kinks remain.
  const auto loss = [&] {
    const Var h = ag::sigmoid(ag::conv2d(x, w1, b1, 1, 1));
    const Var x_hat = ag::conv2d(h, w2, b2, 1, 1);
    return reconstruction_loss(cfg, extractor(), x, x_hat).total;
  };
  const auto r = check_gradients(loss, {w1, b1, w2, b2});
  CHECK(r.checked >= 70);
  CHECK(r.worst_relative < 1e-2);

  // Every perceptual layer on its own, with a step small enough to stay
  // within one linear piece of the extractor.
  for (const auto& layer : PerceptualExtractor::layer_names()) {
    const auto perceptual = [&] {
      const Var h = ag::sigmoid(ag::conv2d(x, w1, b1, 1, 1));
      return perceptual_loss(extractor(), x, ag::conv2d(h, w2, b2, 1, 1), {layer});
    };
    CHECK_MESSAGE(check_gradients(perceptual, {w1, b1, w2, b2}, 1e-5).worst_relative < 1e-4, layer);
  }
}

TEST_CASE("loss config JSON") {
  LossConfig cfg;
  cfg.lambda_grad = 0.25;
  cfg.perceptual_layers = {"relu2_2"};
  cfg.gradient_operator = GradientOperator::kForwardDifference;
  const nlohmann::json j = cfg;
  CHECK(j.at("gradient_operator") == "forward_difference");
  const auto back = j.get<LossConfig>();
  CHECK(back.lambda_grad == 0.25);
  CHECK(back.perceptual_layers == cfg.perceptual_layers);
  CHECK(back.gradient_operator == GradientOperator::kForwardDifference);
  CHECK_THROWS_AS((nlohmann::json{{"lambda_grd", 1}}.get<LossConfig>()), ConfigError);
  CHECK_THROWS_AS((nlohmann::json{{"gradient_operator", "prewitt"}}.get<LossConfig>()), ConfigError);
  LossConfig bad;
  bad.lambda_perp = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
