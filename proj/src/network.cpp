#include "mmfuse/network.hpp"

#include <cmath>
#include <map>

#include "mmfuse/errors.hpp"
#include "mmfuse/hashing.hpp"

namespace mmfuse::nn {

void EncoderConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(shallow_channels, "shallow_channels");
  positive(branch_channels, "branch_channels");
  positive(pyramid_channels, "pyramid_channels");
  positive(attention_downsample_factor, "attention_downsample_factor");
  positive(residual_trunk_depth, "residual_trunk_depth");
  positive(latent_channels, "latent_channels");
  if (residual_stages < 0 || pyramid_stages < 1) {
    throw ConfigError("need residual_stages >= 0 and pyramid_stages >= 1");
  }
  if (dilation_rates.empty()) throw ConfigError("dilation_rates is empty");
  for (int r : dilation_rates) positive(r, "dilation rate");
  if (pyramid_depths.empty()) throw ConfigError("pyramid_depths is empty");
  for (int d : pyramid_depths) positive(d, "pyramid depth");
  if (decoder_channels.size() != 2) {
    throw ConfigError("decoder has exactly three convolutions: give two hidden widths");
  }
  for (int c : decoder_channels) positive(c, "decoder width");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
    throw ConfigError("leaky_slope must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"shallow_channels", c.shallow_channels},
       {"branch_channels", c.branch_channels},
       {"dilation_rates", c.dilation_rates},
       {"pyramid_depths", c.pyramid_depths},
       {"pyramid_channels", c.pyramid_channels},
       {"attention_downsample_factor", c.attention_downsample_factor},
       {"residual_trunk_depth", c.residual_trunk_depth},
       {"residual_stages", c.residual_stages},
       {"pyramid_stages", c.pyramid_stages},
       {"leaky_slope", c.leaky_slope},
       {"latent_channels", c.latent_channels},
       {"decoder_channels", c.decoder_channels},
       {"use_drgo", c.use_drgo}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  // Absent keys keep their defaults so partial config files work.
  EncoderConfig d;
  c.shallow_channels = j.value("shallow_channels", d.shallow_channels);
  c.branch_channels = j.value("branch_channels", d.branch_channels);
  c.dilation_rates = j.value("dilation_rates", d.dilation_rates);
  c.pyramid_depths = j.value("pyramid_depths", d.pyramid_depths);
  c.pyramid_channels = j.value("pyramid_channels", d.pyramid_channels);
  c.attention_downsample_factor =
      j.value("attention_downsample_factor", d.attention_downsample_factor);
  c.residual_trunk_depth = j.value("residual_trunk_depth", d.residual_trunk_depth);
  c.residual_stages = j.value("residual_stages", d.residual_stages);
  c.pyramid_stages = j.value("pyramid_stages", d.pyramid_stages);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.latent_channels = j.value("latent_channels", d.latent_channels);
  c.decoder_channels = j.value("decoder_channels", d.decoder_channels);
  c.use_drgo = j.value("use_drgo", d.use_drgo);
  for (const auto& [key, _] : j.items()) {
    if (!nlohmann::json(d).contains(key)) {
      throw ConfigError("unknown encoder config key '" + key + "'");
    }
  }
}

std::string config_hash(const EncoderConfig& c) {
  return hex64(fnv1a64(nlohmann::json(c).dump()));
}

// --- parameters --------------------------------------------------------------

Var& ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (find(name)) throw ConfigError("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), Var(std::move(value), trainable));
  return entries_.back().second;
}

const Var* ParameterSet::find(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return &v;
  }
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) {
    if (v.requires_grad()) n += v.value().size();
  }
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, v] : entries_) v.zero_grad();
}

Tensor Initializer::kaiming(Shape shape, double slope) {
  const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// --- layers --------------------------------------------------------------------

Conv2d Conv2d::create(ParameterSet& params, const std::string& name, int cin,
                      int cout, int kernel, int dilation, double init_slope,
                      Initializer& init) {
  Conv2d c;
  c.weight = params.add(name + ".weight",
                        init.kaiming(Shape{cout, cin, kernel, kernel}, init_slope));
  c.bias = params.add(name + ".bias", Tensor(Shape{1, cout, 1, 1}, 0.0));
  c.dilation = dilation;
  c.padding = dilation * (kernel - 1) / 2;
  return c;
}

Var Conv2d::operator()(const Var& x) const {
  return ag::conv2d(x, weight, bias, dilation, padding);
}

Var sobel_magnitude(const Var& x) {
  return ag::abs(ag::sobel_x(x)) + ag::abs(ag::sobel_y(x));
}

Var DilatedBranches::operator()(const Var& shallow) const {
  std::vector<Var> outs;
  outs.reserve(convs.size());
  for (const Conv2d& c : convs) outs.push_back(ag::leaky_relu(c(shallow), slope));
  return ag::concat_channels(outs);
}

Var ResidualAttentionBlock::mask_weights(const Var& x) const {
  const Shape& s = x.shape();
  if (s.h % downsample != 0 || s.w % downsample != 0) {
    throw ShapeError("attention mask: " + std::to_string(s.h) + "x" +
                     std::to_string(s.w) + " not divisible by " +
                     std::to_string(downsample));
  }
  Var m = ag::avg_pool2d(x, downsample);
  m = mask(m);
  m = ag::upsample_bilinear(m, downsample);
  return ag::sigmoid(m);
}

Var ResidualAttentionBlock::operator()(const Var& x) const {
  Var weights = mask_weights(x);
  Var t = x;
  for (const Conv2d& c : trunk) t = ag::leaky_relu(c(t), slope);
  return t * weights + x;
}

Var PyramidAttentionBlock::operator()(const Var& x) const {
  std::vector<Var> outs;
  outs.reserve(stacks.size());
  for (const auto& stack : stacks) {
    Var t = x;
    for (const Conv2d& c : stack) t = ag::leaky_relu(c(t), slope);
    outs.push_back(t);
  }
  return projection(ag::concat_channels(outs));
}

std::vector<int> PyramidAttentionBlock::receptive_fields() const {
  std::vector<int> fields;
  for (const auto& stack : stacks) {
    int rf = 1;
    for (const Conv2d& c : stack) {
      rf += (c.weight.shape().h - 1) * c.dilation;
    }
    fields.push_back(rf);
  }
  return fields;
}

Var GradientOperatorBranch::gradient_path(const Var& shallow) const {
  return gradient_projection(sobel_magnitude(shallow));
}

Var GradientOperatorBranch::operator()(const Var& shallow) const {
  Var conv = conv_b(ag::leaky_relu(conv_a(shallow), slope)) + shallow;
  return output_projection(conv + gradient_path(shallow));
}

Var Decoder::operator()(const Var& latent) const {
  Var t = latent;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    t = layers[i](t);
    if (i + 1 < layers.size()) t = ag::leaky_relu(t, slope);
  }
  return t;
}

std::size_t param_count(const ModelWeights& weights) {
  std::size_t n = 0;
  for (const auto& [_, t] : weights.tensors) n += t.size();
  return n;
}

// --- autoencoder ------------------------------------------------------------

Autoencoder::Autoencoder(const EncoderConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Initializer init{std::mt19937_64(seed)};
  build(init);
}

Autoencoder::Autoencoder(const ModelWeights& weights) : config_(weights.config) {
  config_.validate();
  Initializer init{std::mt19937_64(0)};
  build(init);
  load_weights(weights);
}

void Autoencoder::build(Initializer& init) {
  const EncoderConfig& c = config_;
  const double slope = c.leaky_slope;
  stem_ = Conv2d::create(params_, "stem", 1, c.shallow_channels, 3, 1, slope, init);

  dilated_.slope = slope;
  for (int r : c.dilation_rates) {
    dilated_.convs.push_back(Conv2d::create(params_, "dilated.r" + std::to_string(r),
                                            c.shallow_channels, c.branch_channels,
                                            3, r, slope, init));
  }
  const int concat = c.branch_channels * static_cast<int>(c.dilation_rates.size());

  for (int s = 0; s < c.residual_stages; ++s) {
    ResidualAttentionBlock block;
    block.downsample = c.attention_downsample_factor;
    block.slope = slope;
    const std::string prefix = "residual" + std::to_string(s);
    for (int d = 0; d < c.residual_trunk_depth; ++d) {
      block.trunk.push_back(Conv2d::create(params_, prefix + ".trunk" + std::to_string(d),
                                           concat, concat, 3, 1, slope, init));
    }
    block.mask = Conv2d::create(params_, prefix + ".mask", concat, concat, 3, 1, 1.0, init);
    residual_.push_back(std::move(block));
  }

  int in = concat;
  for (int s = 0; s < c.pyramid_stages; ++s) {
    PyramidAttentionBlock block;
    block.slope = slope;
    const std::string prefix = "pyramid" + std::to_string(s);
    for (std::size_t b = 0; b < c.pyramid_depths.size(); ++b) {
      std::vector<Conv2d> stack;
      int cin = in;
      for (int d = 0; d < c.pyramid_depths[b]; ++d) {
        stack.push_back(Conv2d::create(
            params_, prefix + ".stack" + std::to_string(b) + ".conv" + std::to_string(d),
            cin, c.pyramid_channels, 3, 1, slope, init));
        cin = c.pyramid_channels;
      }
      block.stacks.push_back(std::move(stack));
    }
    block.projection = Conv2d::create(
        params_, prefix + ".projection",
        c.pyramid_channels * static_cast<int>(c.pyramid_depths.size()),
        c.latent_channels, 1, 1, 1.0, init);
    pyramid_.push_back(std::move(block));
    in = c.latent_channels;
  }

  if (c.use_drgo) {
    GradientOperatorBranch g;
    g.slope = slope;
    const int s = c.shallow_channels;
    g.conv_a = Conv2d::create(params_, "drgo.conv_a", s, s, 3, 1, slope, init);
    g.conv_b = Conv2d::create(params_, "drgo.conv_b", s, s, 3, 1, 1.0, init);
    g.gradient_projection =
        Conv2d::create(params_, "drgo.gradient_projection", s, s, 1, 1, 1.0, init);
    g.output_projection = Conv2d::create(params_, "drgo.output_projection", s,
                                         c.latent_channels, 1, 1, 1.0, init);
    drgo_ = std::move(g);
  }

  decoder_.slope = slope;
  const std::vector<int> widths{c.latent_channels, c.decoder_channels[0],
                                c.decoder_channels[1], 1};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    decoder_.layers.push_back(Conv2d::create(params_, "decoder.conv" + std::to_string(i),
                                             widths[i], widths[i + 1], 3, 1,
                                             last ? 1.0 : slope, init));
  }
}

void Autoencoder::check_input_shape(const Shape& s) const {
  if (s.c != 1) {
    throw ShapeError("encoder expects 1 input channel, got " + std::to_string(s.c));
  }
  const int f = config_.attention_downsample_factor;
  if (config_.residual_stages > 0 && (s.h % f != 0 || s.w % f != 0)) {
    throw ShapeError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " not divisible by attention downsample factor " +
                     std::to_string(f));
  }
  if (s.h < 2 || s.w < 2) throw ShapeError("input too small: " + s.str());
}

Var Autoencoder::shallow(const Var& x) const {
  return ag::leaky_relu(stem_(x), config_.leaky_slope);
}

Var Autoencoder::encode(const Var& x) const {
  check_input_shape(x.shape());
  Var s = shallow(x);
  Var t = dilated_(s);
  for (const auto& block : residual_) t = block(t);
  for (const auto& block : pyramid_) t = block(t);
  if (drgo_) t = t + (*drgo_)(s);
  return t;
}

Var Autoencoder::decode(const Var& latent) const {
  if (latent.shape().c != config_.latent_channels) {
    throw ShapeError("decoder expects " + std::to_string(config_.latent_channels) +
                     " latent channels, got " + std::to_string(latent.shape().c));
  }
  return decoder_(latent);
}

Tensor Autoencoder::encode_image(const imaging::GrayImage& img) const {
  ag::NoGradGuard guard;
  return encode(Var(img.to_tensor())).value();
}

imaging::GrayImage Autoencoder::decode_to_image(const Tensor& latent) const {
  ag::NoGradGuard guard;
  if (latent.n() != 1) throw ShapeError("decode_to_image expects batch 1");
  return imaging::GrayImage::from_tensor_clamped(decode(Var(latent)).value());
}

ModelWeights Autoencoder::weights() const {
  ModelWeights w;
  w.config = config_;
  for (const auto& [name, v] : params_.entries()) {
    w.tensors.emplace_back(name, v.value());
  }
  return w;
}

void Autoencoder::load_weights(const ModelWeights& weights) {
  if (!(weights.config == config_)) {
    throw ConfigError("weights were built for config " + config_hash(weights.config) +
                      ", model uses " + config_hash(config_));
  }
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : weights.tensors) by_name[name] = &t;
  if (by_name.size() != params_.entries().size()) {
    throw ConfigError("weights hold " + std::to_string(by_name.size()) +
                      " tensors, model has " +
                      std::to_string(params_.entries().size()));
  }
  for (auto& [name, v] : params_.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("weights missing '" + name + "'");
    if (it->second->shape() != v.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " +
                       it->second->shape().str() + ", expected " + v.shape().str());
    }
    v.mutable_value() = *it->second;
  }
}

}  // namespace mmfuse::nn
