#include "mmfuse/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>

#include "mmfuse/errors.hpp"

namespace mmfuse::metrics {
namespace {

using imaging::Plane;

void require_same_shape(const GrayImage& a, const GrayImage& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": image shapes differ (" +
                     std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                     " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

// --- SSIM -------------------------------------------------------------------

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Separable Gaussian filter keeping only positions where the window fits.
Plane filter_valid(const Plane& in) {
  static const auto g = gaussian_taps();
  const int oh = in.height - kSsimWindow + 1;
  const int ow = in.width - kSsimWindow + 1;
  Plane rows(in.height, ow);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * in.at(y, x + k);
      rows.at(y, x) = s;
    }
  }
  Plane out(oh, ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * rows.at(y + k, x);
      out.at(y, x) = s;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane p(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) p.data[i] = a.data[i] * b.data[i];
  return p;
}

// --- histograms ---------------------------------------------------------------

constexpr int kBins = 256;

double entropy_of(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

// Min-max quantization into 256 bins; constant data lands in bin 0.
std::vector<int> quantize(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  std::vector<int> q(v.size(), 0);
  if (range <= 0.0) return q;
  for (std::size_t i = 0; i < v.size(); ++i) {
    q[i] = std::clamp(static_cast<int>(std::lround((v[i] - *lo) / range * (kBins - 1))),
                      0, kBins - 1);
  }
  return q;
}

struct InformationTerms {
  double h_x = 0.0;
  double h_y = 0.0;
  double mutual = 0.0;
};

InformationTerms information(const std::vector<int>& x, const std::vector<int>& y) {
  std::vector<double> joint(kBins * kBins, 0.0);
  std::vector<double> px(kBins, 0.0);
  std::vector<double> py(kBins, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[x[i] * kBins + y[i]] += 1.0;
    px[x[i]] += 1.0;
    py[y[i]] += 1.0;
  }
  const double n = static_cast<double>(x.size());
  InformationTerms t;
  t.h_x = entropy_of(px, n);
  t.h_y = entropy_of(py, n);
  t.mutual = std::max(0.0, t.h_x + t.h_y - entropy_of(joint, n));
  return t;
}

std::vector<double> gradient_magnitude(const GrayImage& img) {
  const int h = img.height();
  const int w = img.width();
  auto px = [&](int y, int x) {
    return img.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
  };
  std::vector<double> g(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      g[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
    }
  }
  return g;
}

double normalized_term(const InformationTerms& t) {
  const double denom = t.h_x + t.h_y;
  // Two constant feature maps carry no information either way; score them
  // as a perfect half-match so identical flat images still reach 1.
  return denom > 0.0 ? t.mutual / denom : 0.5;
}

// --- phase congruency ---------------------------------------------------------

constexpr int kPcScales = 4;
constexpr int kPcOrients = 4;
constexpr double kPcMinWaveLength = 6.0;
constexpr double kPcMult = 2.0;
constexpr double kPcSigmaOnf = 0.55;
constexpr double kPcDThetaOnSigma = 1.2;
constexpr double kPcNoiseK = 2.0;
constexpr double kPcEpsilon = 1e-4;
constexpr double kPcLowpassCutoff = 0.45;
constexpr int kPcLowpassOrder = 15;

// FSIM combination constants (0-255 intensity scale).
constexpr double kFsimT1 = 0.85;
constexpr double kFsimT2 = 160.0;

std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

// Frequency coordinate along one axis, already in ifftshift order.
std::vector<double> frequency_axis(int n) {
  std::vector<double> centered(n);
  for (int i = 0; i < n; ++i) {
    centered[i] = (n % 2) ? (i - (n - 1) / 2.0) / (n - 1) : (i - n / 2.0) / n;
  }
  std::vector<double> shifted(n);
  const int half = n / 2;  // ifftshift moves element floor(n/2) to the front
  for (int i = 0; i < n; ++i) shifted[i] = centered[(i + half) % n];
  return shifted;
}

class Fft2 {
 public:
  Fft2(int rows, int cols) : rows_(rows), cols_(cols), n_(std::size_t(rows) * cols) {
    in_ = fftw_alloc_complex(n_);
    out_ = fftw_alloc_complex(n_);
    std::lock_guard lock(fftw_plan_mutex());
    forward_ = fftw_plan_dft_2d(rows, cols, in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_2d(rows, cols, in_, out_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Fft2() {
    {
      std::lock_guard lock(fftw_plan_mutex());
      fftw_destroy_plan(forward_);
      fftw_destroy_plan(backward_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  std::vector<std::complex<double>> forward(const std::vector<std::complex<double>>& x) {
    return run(forward_, x, 1.0);
  }
  // Normalized inverse (divides by rows·cols).
  std::vector<std::complex<double>> inverse(const std::vector<std::complex<double>>& x) {
    return run(backward_, x, 1.0 / static_cast<double>(n_));
  }

 private:
  std::vector<std::complex<double>> run(fftw_plan plan,
                                        const std::vector<std::complex<double>>& x,
                                        double scale) {
    for (std::size_t i = 0; i < n_; ++i) {
      in_[i][0] = x[i].real();
      in_[i][1] = x[i].imag();
    }
    fftw_execute(plan);
    std::vector<std::complex<double>> y(n_);
    for (std::size_t i = 0; i < n_; ++i) y[i] = {out_[i][0] * scale, out_[i][1] * scale};
    return y;
  }

  int rows_;
  int cols_;
  std::size_t n_;
  fftw_complex* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double upper = v[n / 2];
  if (n % 2) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lower + upper);
}

// Filters and noise statistics that depend only on the image size.
struct PhaseCongruencyBank {
  int rows = 0;
  int cols = 0;
  std::array<std::array<std::vector<double>, kPcScales>, kPcOrients> filters;
  std::array<double, kPcOrients> first_scale_energy{};  // sum of filter^2 at s = 0
  std::array<double, kPcOrients> sum_an2{};
  std::array<double, kPcOrients> sum_aiaj{};
};

PhaseCongruencyBank make_bank(int rows, int cols, Fft2& fft) {
  PhaseCongruencyBank bank;
  bank.rows = rows;
  bank.cols = cols;
  const std::size_t n = std::size_t(rows) * cols;
  const auto fx = frequency_axis(cols);
  const auto fy = frequency_axis(rows);

  std::vector<double> radius(n);
  std::vector<double> sin_t(n);
  std::vector<double> cos_t(n);
  std::vector<double> lowpass(n);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const std::size_t i = std::size_t(y) * cols + x;
      const double r = std::hypot(fx[x], fy[y]);
      lowpass[i] = 1.0 / (1.0 + std::pow(r / kPcLowpassCutoff, 2 * kPcLowpassOrder));
      radius[i] = r;
      const double theta = std::atan2(-fy[y], fx[x]);
      sin_t[i] = std::sin(theta);
      cos_t[i] = std::cos(theta);
    }
  }
  radius[0] = 1.0;  // avoid log(0) at DC; zeroed below

  std::array<std::vector<double>, kPcScales> log_gabor;
  const double log_sigma = std::log(kPcSigmaOnf);
  for (int s = 0; s < kPcScales; ++s) {
    const double fo = 1.0 / (kPcMinWaveLength * std::pow(kPcMult, s));
    log_gabor[s].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double l = std::log(radius[i] / fo);
      log_gabor[s][i] = std::exp(-(l * l) / (2.0 * log_sigma * log_sigma)) * lowpass[i];
    }
    log_gabor[s][0] = 0.0;
  }

  const double theta_sigma = std::numbers::pi / kPcOrients / kPcDThetaOnSigma;
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  for (int o = 0; o < kPcOrients; ++o) {
    const double angle = o * std::numbers::pi / kPcOrients;
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    std::array<std::vector<double>, kPcScales> spatial;
    for (int s = 0; s < kPcScales; ++s) {
      auto& f = bank.filters[o][s];
      f.resize(n);
      std::vector<std::complex<double>> fc(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double ds = sin_t[i] * ca - cos_t[i] * sa;
        const double dc = cos_t[i] * ca + sin_t[i] * sa;
        const double dtheta = std::abs(std::atan2(ds, dc));
        f[i] = log_gabor[s][i] *
               std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
        fc[i] = f[i];
      }
      if (s == 0) {
        double e = 0.0;
        for (double v : f) e += v * v;
        bank.first_scale_energy[o] = e;
      }
      const auto sp = fft.inverse(fc);
      spatial[s].resize(n);
      for (std::size_t i = 0; i < n; ++i) spatial[s][i] = sp[i].real() * sqrt_n;
    }
    double an2 = 0.0;
    double aiaj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (int s = 0; s < kPcScales; ++s) {
        an2 += spatial[s][i] * spatial[s][i];
        for (int t = s + 1; t < kPcScales; ++t) aiaj += spatial[s][i] * spatial[t][i];
      }
    }
    bank.sum_an2[o] = an2;
    bank.sum_aiaj[o] = aiaj;
  }
  return bank;
}

Plane phase_congruency_with(const Plane& img, const PhaseCongruencyBank& bank,
                            Fft2& fft) {
  const std::size_t n = img.size();
  std::vector<std::complex<double>> spatial(n);
  for (std::size_t i = 0; i < n; ++i) spatial[i] = img.data[i];
  const auto image_fft = fft.forward(spatial);

  std::vector<double> energy_all(n, 0.0);
  std::vector<double> an_all(n, 0.0);
  for (int o = 0; o < kPcOrients; ++o) {
    std::array<std::vector<std::complex<double>>, kPcScales> eo;
    std::vector<double> sum_e(n, 0.0);
    std::vector<double> sum_o(n, 0.0);
    std::vector<double> sum_an(n, 0.0);
    for (int s = 0; s < kPcScales; ++s) {
      std::vector<std::complex<double>> prod(n);
      const auto& f = bank.filters[o][s];
      for (std::size_t i = 0; i < n; ++i) prod[i] = image_fft[i] * f[i];
      eo[s] = fft.inverse(prod);
      for (std::size_t i = 0; i < n; ++i) {
        sum_an[i] += std::abs(eo[s][i]);
        sum_e[i] += eo[s][i].real();
        sum_o[i] += eo[s][i].imag();
      }
    }
    std::vector<double> energy(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double x_energy = std::hypot(sum_e[i], sum_o[i]) + kPcEpsilon;
      const double mean_e = sum_e[i] / x_energy;
      const double mean_o = sum_o[i] / x_energy;
      for (int s = 0; s < kPcScales; ++s) {
        const double e = eo[s][i].real();
        const double od = eo[s][i].imag();
        energy[i] += e * mean_e + od * mean_o - std::abs(e * mean_o - od * mean_e);
      }
    }

    // Noise threshold from the smallest scale's response statistics.
    std::vector<double> e2(n);
    for (std::size_t i = 0; i < n; ++i) e2[i] = std::norm(eo[0][i]);
    const double mean_e2n = -median(std::move(e2)) / std::log(0.5);
    const double noise_power = mean_e2n / bank.first_scale_energy[o];
    const double est_noise_energy2 =
        2.0 * noise_power * bank.sum_an2[o] + 4.0 * noise_power * bank.sum_aiaj[o];
    const double tau = std::sqrt(est_noise_energy2 / 2.0);
    const double noise_mean = tau * std::sqrt(std::numbers::pi / 2.0);
    const double noise_sigma = std::sqrt((2.0 - std::numbers::pi / 2.0) * tau * tau);
    const double threshold = (noise_mean + kPcNoiseK * noise_sigma) / 1.7;

    for (std::size_t i = 0; i < n; ++i) {
      energy_all[i] += std::max(energy[i] - threshold, 0.0);
      an_all[i] += sum_an[i];
    }
  }
  Plane pc(img.height, img.width);
  for (std::size_t i = 0; i < n; ++i) {
    pc.data[i] = an_all[i] > 0.0 ? energy_all[i] / an_all[i] : 0.0;
  }
  return pc;
}

// Box average with MATLAB conv2 'same' alignment, then every F-th sample.
Plane downsample(const Plane& in, int f) {
  if (f == 1) return in;
  const int lead = f / 2;
  const int oh = (in.height + f - 1) / f;
  const int ow = (in.width + f - 1) / f;
  Plane out(oh, ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int y0 = oy * f;
      const int x0 = ox * f;
      double s = 0.0;
      for (int j = 0; j < f; ++j) {
        for (int k = 0; k < f; ++k) {
          const int y = y0 + lead - j;
          const int x = x0 + lead - k;
          if (y >= 0 && y < in.height && x >= 0 && x < in.width) s += in.at(y, x);
        }
      }
      out.at(oy, ox) = s / (f * f);
    }
  }
  return out;
}

// Scharr-type gradient magnitude with zero padding.
Plane scharr_magnitude(const Plane& in) {
  static constexpr double kx[3][3] = {{3, 0, -3}, {10, 0, -10}, {3, 0, -3}};
  static constexpr double ky[3][3] = {{3, 10, 3}, {0, 0, 0}, {-3, -10, -3}};
  Plane out(in.height, in.width);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double gx = 0.0;
      double gy = 0.0;
      for (int j = -1; j <= 1; ++j) {
        for (int k = -1; k <= 1; ++k) {
          const int yy = y + j;
          const int xx = x + k;
          if (yy < 0 || yy >= in.height || xx < 0 || xx >= in.width) continue;
          // True convolution: the kernel is flipped relative to the offset.
          const double v = in.at(yy, xx);
          gx += kx[1 - j][1 - k] * v;
          gy += ky[1 - j][1 - k] * v;
        }
      }
      out.at(y, x) = std::hypot(gx, gy) / 16.0;
    }
  }
  return out;
}

Plane to_255(const GrayImage& img) {
  Plane p(img.height(), img.width());
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = img.pixels()[i] * 255.0;
  return p;
}

}  // namespace

double psnr(const GrayImage& reference, const GrayImage& test) {
  require_same_shape(reference, test, "psnr");
  double sse = 0.0;
  const auto& a = reference.pixels();
  const auto& b = test.pixels();
  for (std::size_t i = 0; i < a.size(); ++i) sse += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = sse / static_cast<double>(a.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const GrayImage& a, const GrayImage& b) {
  require_same_shape(a, b, "ssim");
  if (a.height() < kSsimWindow || a.width() < kSsimWindow) {
    throw ShapeError("ssim: image smaller than the 11x11 window");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const Plane& pa = a.plane();
  const Plane& pb = b.plane();
  const Plane mu_a = filter_valid(pa);
  const Plane mu_b = filter_valid(pb);
  const Plane aa = filter_valid(product(pa, pa));
  const Plane bb = filter_valid(product(pb, pb));
  const Plane ab = filter_valid(product(pa, pb));
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.data[i];
    const double mb = mu_b.data[i];
    const double va = aa.data[i] - ma * ma;
    const double vb = bb.data[i] - mb * mb;
    const double cov = ab.data[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

double entropy(const GrayImage& img) {
  std::vector<double> counts(kBins, 0.0);
  for (double v : img.pixels()) {
    counts[std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, kBins - 1)] += 1.0;
  }
  return entropy_of(counts, static_cast<double>(img.pixels().size()));
}

double fmi(const GrayImage& source_a, const GrayImage& source_b,
           const GrayImage& fused) {
  require_same_shape(source_a, fused, "fmi");
  require_same_shape(source_b, fused, "fmi");
  const auto qa = quantize(gradient_magnitude(source_a));
  const auto qb = quantize(gradient_magnitude(source_b));
  const auto qf = quantize(gradient_magnitude(fused));
  return normalized_term(information(qa, qf)) + normalized_term(information(qb, qf));
}

imaging::Plane phase_congruency(const imaging::Plane& img) {
  Fft2 fft(img.height, img.width);
  const auto bank = make_bank(img.height, img.width, fft);
  return phase_congruency_with(img, bank, fft);
}

double fsim(const GrayImage& a, const GrayImage& b) {
  require_same_shape(a, b, "fsim");
  const int f = std::max(1, static_cast<int>(std::lround(
                                std::min(a.height(), a.width()) / 256.0)));
  const Plane ya = downsample(to_255(a), f);
  const Plane yb = downsample(to_255(b), f);

  Fft2 fft(ya.height, ya.width);
  const auto bank = make_bank(ya.height, ya.width, fft);
  const Plane pc_a = phase_congruency_with(ya, bank, fft);
  const Plane pc_b = phase_congruency_with(yb, bank, fft);
  const Plane g_a = scharr_magnitude(ya);
  const Plane g_b = scharr_magnitude(yb);

  double weighted = 0.0;
  double weights = 0.0;
  double unweighted = 0.0;
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const double p1 = pc_a.data[i];
    const double p2 = pc_b.data[i];
    const double pc_sim = (2 * p1 * p2 + kFsimT1) / (p1 * p1 + p2 * p2 + kFsimT1);
    const double g1 = g_a.data[i];
    const double g2 = g_b.data[i];
    const double g_sim = (2 * g1 * g2 + kFsimT2) / (g1 * g1 + g2 * g2 + kFsimT2);
    const double pcm = std::max(p1, p2);
    weighted += pc_sim * g_sim * pcm;
    weights += pcm;
    unweighted += pc_sim * g_sim;
  }
  // Featureless pairs (no phase congruency anywhere) fall back to the
  // unweighted mean of the similarity map.
  if (weights <= 0.0) return unweighted / static_cast<double>(ya.size());
  return weighted / weights;
}

// --- records and reports ------------------------------------------------------

const std::vector<std::string>& MetricRecord::names() {
  static const std::vector<std::string> n{"psnr", "ssim", "fmi", "fsim", "en"};
  return n;
}

double MetricRecord::get(const std::string& name) const {
  if (name == "psnr") return psnr;
  if (name == "ssim") return ssim;
  if (name == "fmi") return fmi;
  if (name == "fsim") return fsim;
  if (name == "en") return en;
  throw ConfigError("unknown metric '" + name + "'");
}

MetricRecord fusion_metrics(const GrayImage& source_a, const GrayImage& source_b,
                            const GrayImage& fused) {
  MetricRecord r;
  r.psnr = 0.5 * (psnr(source_a, fused) + psnr(source_b, fused));
  r.ssim = 0.5 * (ssim(source_a, fused) + ssim(source_b, fused));
  r.fsim = 0.5 * (fsim(source_a, fused) + fsim(source_b, fused));
  r.fmi = fmi(source_a, source_b, fused);
  r.en = entropy(fused);
  return r;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

std::string format_mean_std(const MeanStd& m, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.*f±%.*f", decimals, m.mean, decimals, m.std);
  return buf;
}

std::map<std::string, MeanStd> MetricReport::aggregate() const {
  std::map<std::string, MeanStd> out;
  for (const auto& name : MetricRecord::names()) {
    std::vector<double> v;
    for (const auto& [_, r] : per_pair) v.push_back(r.get(name));
    out[name] = mean_std(v);
  }
  return out;
}

MultiRunSummary combine_runs(const std::vector<MetricReport>& runs) {
  MultiRunSummary s;
  for (const auto& r : runs) s.per_run.push_back(r.aggregate());
  for (const auto& name : MetricRecord::names()) {
    std::vector<double> means;
    for (const auto& agg : s.per_run) means.push_back(agg.at(name).mean);
    s.across_runs[name] = mean_std(means);
  }
  return s;
}

void to_json(nlohmann::json& j, const MetricRecord& r) {
  j = {{"psnr", r.psnr}, {"ssim", r.ssim}, {"fmi", r.fmi}, {"fsim", r.fsim}, {"en", r.en}};
}

void from_json(const nlohmann::json& j, MetricRecord& r) {
  j.at("psnr").get_to(r.psnr);
  j.at("ssim").get_to(r.ssim);
  j.at("fmi").get_to(r.fmi);
  j.at("fsim").get_to(r.fsim);
  j.at("en").get_to(r.en);
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j["run"] = {{"seed", r.run.seed},
              {"strategy", r.run.strategy},
              {"checkpoint_id", r.run.checkpoint_id}};
  j["per_pair"] = nlohmann::json::object();
  for (const auto& [id, rec] : r.per_pair) j["per_pair"][id] = rec;
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& [name, m] : r.aggregate()) {
    agg[name] = {{"mean", m.mean}, {"std", m.std}, {"formatted", format_mean_std(m)}};
  }
  j["aggregate"] = agg;
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  const auto& run = j.at("run");
  run.at("seed").get_to(r.run.seed);
  run.at("strategy").get_to(r.run.strategy);
  run.at("checkpoint_id").get_to(r.run.checkpoint_id);
  r.per_pair.clear();
  for (const auto& [id, rec] : j.at("per_pair").items()) {
    r.per_pair[id] = rec.get<MetricRecord>();
  }
}

void write_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "pair_id";
  for (const auto& n : MetricRecord::names()) out << ',' << n;
  out << '\n';
  char buf[32];
  for (const auto& [id, rec] : report.per_pair) {
    out << id;
    for (const auto& n : MetricRecord::names()) {
      std::snprintf(buf, sizeof(buf), "%.6f", rec.get(n));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace mmfuse::metrics
