#include "mmfuse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/errors.hpp"

namespace mmfuse::loss {
namespace {

// VGG16 convolution stages up to conv4_3.
constexpr int kStageWidths[4] = {64, 128, 256, 512};
constexpr int kStageDepths[4] = {2, 2, 3, 3};

const std::vector<double> kImagenetMean{0.485, 0.456, 0.406};
const std::vector<double> kImagenetStd{0.229, 0.224, 0.225};

constexpr ag::Stencil3 kForwardDiffX{{{0, 0, 0}, {0, -1, 1}, {0, 0, 0}}};
constexpr ag::Stencil3 kForwardDiffY{{{0, 0, 0}, {0, -1, 0}, {0, 1, 0}}};

std::string to_string(GradientOperator op) {
  return op == GradientOperator::kSobel ? "sobel" : "forward_difference";
}

GradientOperator operator_from_string(const std::string& s) {
  if (s == "sobel") return GradientOperator::kSobel;
  if (s == "forward_difference") return GradientOperator::kForwardDifference;
  throw ConfigError("unknown gradient operator '" + s +
                    "' (expected sobel or forward_difference)");
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda_grad >= 0.0) || !(lambda_perp >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (extractor_width_divisor < 1) {
    throw ConfigError("extractor_width_divisor must be >= 1");
  }
  const auto& names = PerceptualExtractor::layer_names();
  for (const std::string& l : perceptual_layers) {
    if (std::find(names.begin(), names.end(), l) == names.end()) {
      throw ConfigError("unknown perceptual layer '" + l + "'");
    }
  }
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"lambda_grad", c.lambda_grad},
       {"lambda_perp", c.lambda_perp},
       {"perceptual_layers", c.perceptual_layers},
       {"gradient_operator", to_string(c.gradient_operator)},
       {"extractor_weights", c.extractor_weights},
       {"extractor_width_divisor", c.extractor_width_divisor},
       {"extractor_seed", c.extractor_seed}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  c.lambda_grad = j.value("lambda_grad", d.lambda_grad);
  c.lambda_perp = j.value("lambda_perp", d.lambda_perp);
  c.perceptual_layers = j.value("perceptual_layers", d.perceptual_layers);
  c.gradient_operator = operator_from_string(
      j.value("gradient_operator", to_string(d.gradient_operator)));
  c.extractor_weights = j.value("extractor_weights", d.extractor_weights);
  c.extractor_width_divisor =
      j.value("extractor_width_divisor", d.extractor_width_divisor);
  c.extractor_seed = j.value("extractor_seed", d.extractor_seed);
  for (const auto& [key, _] : j.items()) {
    if (!nlohmann::json(d).contains(key)) {
      throw ConfigError("unknown loss config key '" + key + "'");
    }
  }
}

Var pixel_loss(const Var& x, const Var& x_hat) { return ag::mse(x, x_hat); }

Var image_gradient_x(const Var& x, GradientOperator op) {
  return op == GradientOperator::kSobel ? ag::sobel_x(x)
                                        : ag::stencil3x3(x, kForwardDiffX);
}

Var image_gradient_y(const Var& x, GradientOperator op) {
  return op == GradientOperator::kSobel ? ag::sobel_y(x)
                                        : ag::stencil3x3(x, kForwardDiffY);
}

Var gradient_loss(const Var& x, const Var& x_hat, GradientOperator op) {
  if (x.shape() != x_hat.shape()) {
    throw ShapeError("gradient_loss: shape mismatch " + x.shape().str() +
                     " vs " + x_hat.shape().str());
  }
  return ag::mse(image_gradient_x(x, op), image_gradient_x(x_hat, op)) +
         ag::mse(image_gradient_y(x, op), image_gradient_y(x_hat, op));
}

// --- perceptual extractor ---------------------------------------------------

const std::vector<std::string>& PerceptualExtractor::layer_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (int s = 0; s < 4; ++s) {
      for (int i = 0; i < kStageDepths[s]; ++i) {
        n.push_back("relu" + std::to_string(s + 1) + "_" + std::to_string(i + 1));
      }
    }
    return n;
  }();
  return names;
}

int PerceptualExtractor::layer_index(const std::string& id) {
  const auto& names = layer_names();
  auto it = std::find(names.begin(), names.end(), id);
  if (it == names.end()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown perceptual layer '" + id + "'; known: " + known);
  }
  return static_cast<int>(it - names.begin());
}

PerceptualExtractor PerceptualExtractor::random(int width_divisor,
                                                std::uint64_t seed) {
  if (width_divisor < 1) throw ConfigError("width divisor must be >= 1");
  PerceptualExtractor ex;
  ex.width_divisor_ = width_divisor;
  std::mt19937_64 rng(seed);
  int cin = 3;
  for (int s = 0; s < 4; ++s) {
    const int cout = std::max(1, kStageWidths[s] / width_divisor);
    for (int i = 0; i < kStageDepths[s]; ++i) {
      const double std_dev = std::sqrt(2.0 / (cin * 9.0));
      std::normal_distribution<double> dist(0.0, std_dev);
      Tensor w(Shape{cout, cin, 3, 3});
      for (double& v : w.values()) v = dist(rng);
      ex.convs_.push_back({"conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1),
                           Var(std::move(w)), Var(Tensor(Shape{1, cout, 1, 1}, 0.0))});
      cin = cout;
    }
  }
  return ex;
}

PerceptualExtractor PerceptualExtractor::load(const std::filesystem::path& path) {
  const io::Archive archive = io::read_archive(path);
  PerceptualExtractor ex;
  ex.pretrained_ = true;
  int cin = 3;
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < kStageDepths[s]; ++i) {
      const std::string name =
          "conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1);
      const Tensor* w = archive.find(name + ".weight");
      const Tensor* b = archive.find(name + ".bias");
      if (!w || !b) throw IoError(path.string() + " lacks " + name);
      if (w->c() != cin || w->h() != 3 || w->w() != 3 ||
          b->shape() != Shape{1, w->n(), 1, 1}) {
        throw ShapeError(path.string() + ": " + name + " has shape " +
                         w->shape().str());
      }
      ex.convs_.push_back({name, Var(*w), Var(*b)});
      cin = w->n();
    }
  }
  return ex;
}

PerceptualExtractor PerceptualExtractor::from_config(const LossConfig& cfg) {
  if (!cfg.extractor_weights.empty() &&
      std::filesystem::exists(cfg.extractor_weights)) {
    return load(cfg.extractor_weights);
  }
  return random(cfg.extractor_width_divisor, cfg.extractor_seed);
}

std::string PerceptualExtractor::description() const {
  if (pretrained_) return "vgg16-pretrained";
  return "vgg16-random-fallback(width/" + std::to_string(width_divisor_) + ")";
}

std::vector<Var> PerceptualExtractor::features(
    const Var& gray, const std::vector<std::string>& layers) const {
  if (gray.shape().c != 1) {
    throw ShapeError("perceptual extractor expects single-channel input");
  }
  std::vector<int> wanted;
  for (const auto& l : layers) wanted.push_back(layer_index(l));
  if (wanted.empty()) return {};
  const int deepest = *std::max_element(wanted.begin(), wanted.end());

  std::vector<double> scale(3);
  std::vector<double> shift(3);
  for (int c = 0; c < 3; ++c) {
    scale[c] = 1.0 / kImagenetStd[c];
    shift[c] = -kImagenetMean[c] / kImagenetStd[c];
  }
  Var t = ag::channel_affine(ag::repeat_channels(gray, 3), scale, shift);

  std::vector<Var> taps(static_cast<std::size_t>(deepest) + 1);
  int index = 0;
  for (int s = 0; s < 4 && index <= deepest; ++s) {
    if (s > 0) t = ag::max_pool2d(t, 2);
    for (int i = 0; i < kStageDepths[s] && index <= deepest; ++i, ++index) {
      const ConvLayer& c = convs_[index];
      t = ag::relu(ag::conv2d(t, c.weight, c.bias, 1, 1));
      taps[index] = t;
    }
  }
  std::vector<Var> out;
  for (int w : wanted) out.push_back(taps[w]);
  return out;
}

Var PerceptualExtractor::loss(const Var& x, const Var& x_hat,
                              const std::vector<std::string>& layers) const {
  if (x.shape() != x_hat.shape()) {
    throw ShapeError("perceptual_loss: shape mismatch " + x.shape().str() +
                     " vs " + x_hat.shape().str());
  }
  const std::vector<Var> fx = features(x, layers);
  const std::vector<Var> fy = features(x_hat, layers);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    terms.push_back(ag::mse(fx[i], fy[i]));
  }
  return ag::sum_scalars(terms);
}

Var perceptual_loss(const PerceptualExtractor& extractor, const Var& x,
                    const Var& x_hat, const std::vector<std::string>& layers) {
  return extractor.loss(x, x_hat, layers);
}

double total_loss(const LossConfig& cfg, double pixel, double gradient,
                  double perceptual) {
  return pixel + cfg.lambda_grad * gradient + cfg.lambda_perp * perceptual;
}

Var total_loss(const LossConfig& cfg, const Var& pixel, const Var& gradient,
               const Var& perceptual) {
  return pixel + ag::scale(gradient, cfg.lambda_grad) +
         ag::scale(perceptual, cfg.lambda_perp);
}

LossTerms reconstruction_loss(const LossConfig& cfg,
                              const PerceptualExtractor& extractor,
                              const Var& x, const Var& x_hat,
                              bool include_gradient) {
  LossTerms terms;
  Var pixel = pixel_loss(x, x_hat);
  Var grad = include_gradient ? gradient_loss(x, x_hat, cfg.gradient_operator)
                              : Var(Tensor::scalar(0.0));
  Var perp = cfg.perceptual_layers.empty()
                 ? Var(Tensor::scalar(0.0))
                 : perceptual_loss(extractor, x, x_hat, cfg.perceptual_layers);
  terms.pixel = pixel.value().item();
  terms.gradient = grad.value().item();
  terms.perceptual = perp.value().item();
  terms.total = total_loss(cfg, pixel, grad, perp);
  return terms;
}

}  // namespace mmfuse::loss
