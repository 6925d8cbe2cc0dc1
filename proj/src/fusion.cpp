#include "mmfuse/fusion.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfuse/errors.hpp"

namespace mmfuse::fusion {
namespace {

void require_single_map(const Tensor& f, const char* what) {
  if (f.n() != 1 || f.c() < 1 || f.h() < 1 || f.w() < 1) {
    throw ShapeError(std::string(what) + ": expected a (1, C, H, W) map, got " +
                     f.shape().str());
  }
}

double reduce(const std::vector<double>& n, Reduction phi) {
  switch (phi) {
    case Reduction::kMax:
      return *std::max_element(n.begin(), n.end());
    case Reduction::kMean:
      return std::accumulate(n.begin(), n.end(), 0.0) /
             static_cast<double>(n.size());
    case Reduction::kSum:
      return std::accumulate(n.begin(), n.end(), 0.0);
    case Reduction::kIdentity:
      break;
  }
  throw InputError("identity reduction has no scalar form");
}

std::pair<double, double> normalize(double a, double b, int channel) {
  const double total = a + b;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError("degenerate fusion weights (" + std::to_string(a) +
                         ", " + std::to_string(b) + ")" +
                         (channel >= 0 ? " at channel " + std::to_string(channel)
                                       : std::string()));
  }
  const double wa = a / total;
  return {wa, 1.0 - wa};
}

}  // namespace

std::string to_string(Reduction phi) {
  switch (phi) {
    case Reduction::kMax: return "max";
    case Reduction::kMean: return "mean";
    case Reduction::kSum: return "sum";
    case Reduction::kIdentity: return "identity";
  }
  return "?";
}

Tensor channel_softmax(const Tensor& f) {
  require_single_map(f, "channel_softmax");
  const int channels = f.c();
  const std::size_t plane = f.shape().plane();
  Tensor out(f.shape());
  const double* in = f.data();
  double* o = out.data();
  for (std::size_t p = 0; p < plane; ++p) {
    double peak = in[p];
    for (int c = 1; c < channels; ++c) peak = std::max(peak, in[c * plane + p]);
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double e = std::exp(in[c * plane + p] - peak);
      o[c * plane + p] = e;
      total += e;
    }
    for (int c = 0; c < channels; ++c) o[c * plane + p] /= total;
  }
  return out;
}

double nuclear_norm(const double* data, int rows, int cols) {
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Matrix> m(data, rows, cols);
  if (!m.allFinite()) throw NumericalError("nuclear_norm: non-finite matrix entry");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  if (svd.info() != Eigen::Success) {
    throw NumericalError("nuclear_norm: SVD did not converge");
  }
  return svd.singularValues().sum();
}

std::vector<double> channel_nuclear_norms(const Tensor& f) {
  require_single_map(f, "channel_nuclear_norms");
  std::vector<double> norms(static_cast<std::size_t>(f.c()));
  for (int c = 0; c < f.c(); ++c) {
    try {
      norms[c] = nuclear_norm(f.plane(0, c), f.h(), f.w());
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (channel " +
                           std::to_string(c) + ")");
    }
  }
  return norms;
}

FusionWeights weights_from_norms(const std::vector<double>& n_a,
                                 const std::vector<double>& n_b,
                                 Reduction phi) {
  if (n_a.size() != n_b.size() || n_a.empty()) {
    throw ShapeError("fusion weights need equally sized non-empty norm vectors");
  }
  FusionWeights w;
  if (phi == Reduction::kIdentity) {
    for (std::size_t c = 0; c < n_a.size(); ++c) {
      const auto [wa, wb] = normalize(n_a[c], n_b[c], static_cast<int>(c));
      w.w_a.push_back(wa);
      w.w_b.push_back(wb);
    }
    return w;
  }
  const auto [wa, wb] = normalize(reduce(n_a, phi), reduce(n_b, phi), -1);
  w.w_a = {wa};
  w.w_b = {wb};
  return w;
}

FusionWeights sfnn_weights(const Tensor& f_a, const Tensor& f_b, Reduction phi) {
  if (f_a.shape() != f_b.shape()) {
    throw ShapeError("sfnn_weights: shapes differ " + f_a.shape().str() + " vs " +
                     f_b.shape().str());
  }
  return weights_from_norms(channel_nuclear_norms(channel_softmax(f_a)),
                            channel_nuclear_norms(channel_softmax(f_b)), phi);
}

Tensor apply_weights(const Tensor& f_a, const Tensor& f_b,
                     const FusionWeights& w) {
  if (f_a.shape() != f_b.shape()) {
    throw ShapeError("fuse: shapes differ " + f_a.shape().str() + " vs " +
                     f_b.shape().str());
  }
  const bool per_channel = w.w_a.size() > 1;
  if (per_channel && w.w_a.size() != static_cast<std::size_t>(f_a.c())) {
    throw ShapeError("fuse: per-channel weights do not match channel count");
  }
  Tensor out(f_a.shape());
  const std::size_t plane = f_a.shape().plane();
  for (int n = 0; n < f_a.n(); ++n) {
    for (int c = 0; c < f_a.c(); ++c) {
      const double wa = w.w_a[per_channel ? c : 0];
      const double wb = w.w_b[per_channel ? c : 0];
      const double* a = f_a.plane(n, c);
      const double* b = f_b.plane(n, c);
      double* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = wa * a[i] + wb * b[i];
    }
  }
  return out;
}

std::string SfnnStrategy::name() const { return "sfnn-" + to_string(phi_); }

FusionWeights SfnnStrategy::weights(const Tensor& f_a, const Tensor& f_b) const {
  return sfnn_weights(f_a, f_b, phi_);
}

Tensor SfnnStrategy::fuse(const Tensor& f_a, const Tensor& f_b) const {
  return apply_weights(f_a, f_b, weights(f_a, f_b));
}

Tensor fuse(const Tensor& f_a, const Tensor& f_b, Reduction phi) {
  return SfnnStrategy(phi).fuse(f_a, f_b);
}

StrategyRegistry::StrategyRegistry() {
  for (Reduction phi : {Reduction::kMax, Reduction::kMean, Reduction::kSum,
                        Reduction::kIdentity}) {
    const SfnnStrategy proto(phi);
    add(proto.name(), [phi] { return std::make_unique<SfnnStrategy>(phi); });
  }
}

void StrategyRegistry::add(const std::string& name, Factory factory) {
  if (name.empty() || !factory) throw ConfigError("invalid strategy registration");
  if (!factories_.emplace(name, std::move(factory)).second) {
    throw ConfigError("fusion strategy '" + name + "' is already registered");
  }
}

bool StrategyRegistry::contains(const std::string& name) const {
  return factories_.count(name) != 0;
}

std::vector<std::string> StrategyRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : factories_) out.push_back(name);
  return out;
}

std::unique_ptr<FusionStrategy> StrategyRegistry::create(
    const std::string& name) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) {
    std::string known;
    for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown fusion strategy '" + name + "'; available: " + known);
  }
  return it->second();
}

}  // namespace mmfuse::fusion
