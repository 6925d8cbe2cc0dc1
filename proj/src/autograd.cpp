#include "mmfuse/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <unordered_set>

#include "mmfuse/errors.hpp"

namespace mmfuse::ag {
namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements per chunk (32 MiB of doubles).
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

// Builds a result Var; attaches the graph edge only when a parent needs it.
Var make_result(Tensor value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var& p : parents) needs = needs || p.requires_grad();
  }
  Var out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    for (const Var& p : parents) node.parents.push_back(p.node());
    node.backward_fn = std::move(backward_fn);
  }
  return out;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

// Parent i's gradient buffer if that parent participates in backward.
Tensor* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

struct ConvGeometry {
  int cin, cout, k, dilation, padding;
  int h, w, hout, wout;
  int rows_per_chunk;
  bool pointwise;  // 1×1 kernel without padding: input is its own im2col
};

ConvGeometry conv_geometry(const Shape& x, const Shape& wt, int dilation,
                           int padding) {
  ConvGeometry g{};
  g.cin = x.c;
  g.cout = wt.n;
  g.k = wt.h;
  g.dilation = dilation;
  g.padding = padding;
  g.h = x.h;
  g.w = x.w;
  g.hout = x.h + 2 * padding - dilation * (g.k - 1);
  g.wout = x.w + 2 * padding - dilation * (g.k - 1);
  if (g.hout <= 0 || g.wout <= 0) {
    throw ShapeError("conv2d: kernel larger than padded input " + x.str());
  }
  const std::size_t per_row =
      static_cast<std::size_t>(g.cin) * g.k * g.k * g.wout;
  g.rows_per_chunk = static_cast<int>(
      std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1),
                              1, static_cast<std::size_t>(g.hout)));
  g.pointwise = g.k == 1 && padding == 0;
  return g;
}

void im2col(const double* x, const ConvGeometry& g, int r0, int r1,
            double* col) {
  const int cols = (r1 - r0) * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    const double* xp = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst =
            col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
        const int dy = ky * g.dilation - g.padding;
        const int dx = kx * g.dilation - g.padding;
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy + dy;
          double* drow = dst + static_cast<std::size_t>(oy - r0) * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::fill(drow, drow + g.wout, 0.0);
            continue;
          }
          const double* srow = xp + static_cast<std::size_t>(iy) * g.w;
          const int lo = std::clamp(-dx, 0, g.wout);
          const int hi = std::clamp(g.w - dx, lo, g.wout);
          std::fill(drow, drow + lo, 0.0);
          std::copy(srow + lo + dx, srow + hi + dx, drow + lo);
          std::fill(drow + hi, drow + g.wout, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, int r0, int r1,
                double* dx_plane) {
  const int cols = (r1 - r0) * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    double* xp = dx_plane + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src =
            col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
        const int dy = ky * g.dilation - g.padding;
        const int dx = kx * g.dilation - g.padding;
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy + dy;
          if (iy < 0 || iy >= g.h) continue;
          const double* srow = src + static_cast<std::size_t>(oy - r0) * g.wout;
          double* drow = xp + static_cast<std::size_t>(iy) * g.w;
          const int lo = std::clamp(-dx, 0, g.wout);
          const int hi = std::clamp(g.w - dx, lo, g.wout);
          for (int ox = lo; ox < hi; ++ox) drow[ox + dx] += srow[ox];
        }
      }
    }
  }
}

using Kernel3 = Stencil3;
constexpr Kernel3 kSobelX{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
constexpr Kernel3 kSobelY{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};

Tensor stencil_forward(const Tensor& x, const Kernel3& k) {
  Tensor out(x.shape());
  const int h = x.h();
  const int w = x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -1; dx <= 1; ++dx) {
              const double kv = k[dy + 1][dx + 1];
              if (kv == 0.0) continue;
              acc += kv * src[yy * w + std::clamp(xx + dx, 0, w - 1)];
            }
          }
          dst[y * w + xx] = acc;
        }
      }
    }
  }
  return out;
}

void stencil_backward(const Tensor& gout, const Kernel3& k, Tensor& gin) {
  const int h = gout.h();
  const int w = gout.w();
  for (int n = 0; n < gout.n(); ++n) {
    for (int c = 0; c < gout.c(); ++c) {
      const double* g = gout.plane(n, c);
      double* dst = gin.plane(n, c);
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          const double gv = g[y * w + xx];
          if (gv == 0.0) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -1; dx <= 1; ++dx) {
              const double kv = k[dy + 1][dx + 1];
              if (kv == 0.0) continue;
              dst[yy * w + std::clamp(xx + dx, 0, w - 1)] += kv * gv;
            }
          }
        }
      }
    }
  }
}

struct Lerp {
  int i0, i1;
  double t;
};

std::vector<Lerp> upsample_table(int in, int factor) {
  std::vector<Lerp> table(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    const int i0 = static_cast<int>(src);
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    table[o] = {i0, i1, src - i0};
  }
  return table;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.empty()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

Var::Var(Tensor value, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void Var::backward() const {
  if (!node_) throw ShapeError("backward on undefined Var");
  if (node_->value.size() != 1) {
    throw ShapeError("backward requires a scalar, got " +
                     node_->value.shape().str());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Release interior gradients; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Tensor();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// --- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * bv[i];
      }
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * av[i];
      }
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x.value();
  for (double& v : out.values()) {
    if (v < 0.0) v *= slope;
  }
  return make_result(std::move(out), {x}, [slope](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += xv[i] < 0.0 ? slope * self.grad[i] : self.grad[i];
      }
    }
  });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& y = self.value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * y[i] * (1.0 - y[i]);
      }
    }
  });
}

Var abs(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::fabs(v);
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double sgn = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        (*g)[i] += sgn * self.grad[i];
      }
    }
  });
}

// --- convolution -----------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, int dilation,
           int padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv2d: non-square kernel " + ws.str());
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels, kernel expects " + std::to_string(ws.c));
  }
  if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("conv2d: bias shape " + bias.shape().str());
  }
  if (dilation < 1 || padding < 0) {
    throw ShapeError("conv2d: invalid dilation/padding");
  }
  const ConvGeometry g = conv_geometry(xs, ws, dilation, padding);
  const std::size_t kk = static_cast<std::size_t>(g.cin) * g.k * g.k;
  const std::size_t out_plane = static_cast<std::size_t>(g.hout) * g.wout;
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;

  Tensor out(Shape{xs.n, g.cout, g.hout, g.wout});
  ConstRowMap wm(weight.value().data(), g.cout, static_cast<Eigen::Index>(kk));
  std::vector<double> col;
  if (!g.pointwise) {
    col.resize(kk * static_cast<std::size_t>(g.rows_per_chunk) * g.wout);
  }

  for (int n = 0; n < xs.n; ++n) {
    const double* xin = x.value().data() + n * g.cin * in_plane;
    double* yout = out.data() + n * g.cout * out_plane;
    for (int r0 = 0; r0 < g.hout; r0 += g.rows_per_chunk) {
      const int r1 = std::min(g.hout, r0 + g.rows_per_chunk);
      const Eigen::Index cols = static_cast<Eigen::Index>(r1 - r0) * g.wout;
      const double* colp = nullptr;
      Eigen::Index col_stride = cols;
      if (g.pointwise) {
        colp = xin + static_cast<std::size_t>(r0) * g.wout;
        col_stride = static_cast<Eigen::Index>(in_plane);
      } else {
        im2col(xin, g, r0, r1, col.data());
        colp = col.data();
      }
      ConstStridedMap cm(colp, static_cast<Eigen::Index>(kk), cols,
                         Eigen::OuterStride<>(col_stride));
      StridedMap ym(yout + static_cast<std::size_t>(r0) * g.wout, g.cout, cols,
                    Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
      ym.noalias() = wm * cm;
    }
    if (bias.defined()) {
      const Tensor& b = bias.value();
      for (int co = 0; co < g.cout; ++co) {
        double* p = yout + co * out_plane;
        const double bv = b[co];
        for (std::size_t i = 0; i < out_plane; ++i) p[i] += bv;
      }
    }
  }

  std::vector<Var> parents{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [g, has_bias](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    Tensor* gx = grad_of(self, 0);
    Tensor* gw = grad_of(self, 1);
    Tensor* gb = has_bias ? grad_of(self, 2) : nullptr;
    const Tensor& gy = self.grad;
    const std::size_t kk = static_cast<std::size_t>(g.cin) * g.k * g.k;
    const std::size_t out_plane = static_cast<std::size_t>(g.hout) * g.wout;
    const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
    ConstRowMap wm(wv.data(), g.cout, static_cast<Eigen::Index>(kk));
    std::vector<double> col;
    std::vector<double> dcol;
    if (!g.pointwise) {
      col.resize(kk * static_cast<std::size_t>(g.rows_per_chunk) * g.wout);
      dcol.resize(col.size());
    }
    std::optional<RowMap> gwm;
    if (gw) gwm.emplace(gw->data(), g.cout, static_cast<Eigen::Index>(kk));

    for (int n = 0; n < xv.n(); ++n) {
      const double* xin = xv.data() + n * g.cin * in_plane;
      const double* gyo = gy.data() + n * g.cout * out_plane;
      for (int r0 = 0; r0 < g.hout; r0 += g.rows_per_chunk) {
        const int r1 = std::min(g.hout, r0 + g.rows_per_chunk);
        const Eigen::Index cols = static_cast<Eigen::Index>(r1 - r0) * g.wout;
        ConstStridedMap gym(
            gyo + static_cast<std::size_t>(r0) * g.wout, g.cout, cols,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
        if (g.pointwise) {
          ConstStridedMap cm(xin + static_cast<std::size_t>(r0) * g.wout,
                             static_cast<Eigen::Index>(kk), cols,
                             Eigen::OuterStride<>(
                                 static_cast<Eigen::Index>(in_plane)));
          if (gwm) gwm->noalias() += gym * cm.transpose();
          if (gx) {
            StridedMap gxm(gx->data() + n * g.cin * in_plane +
                               static_cast<std::size_t>(r0) * g.wout,
                           static_cast<Eigen::Index>(kk), cols,
                           Eigen::OuterStride<>(
                               static_cast<Eigen::Index>(in_plane)));
            gxm.noalias() += wm.transpose() * gym;
          }
          continue;
        }
        if (gwm) {
          im2col(xin, g, r0, r1, col.data());
          ConstRowMap cm(col.data(), static_cast<Eigen::Index>(kk), cols);
          gwm->noalias() += gym * cm.transpose();
        }
        if (gx) {
          RowMap dm(dcol.data(), static_cast<Eigen::Index>(kk), cols);
          dm.noalias() = wm.transpose() * gym;
          col2im_add(dcol.data(), g, r0, r1,
                     gx->data() + n * g.cin * in_plane);
        }
      }
      if (gb) {
        for (int co = 0; co < g.cout; ++co) {
          const double* p = gyo + co * out_plane;
          double s = 0.0;
          for (std::size_t i = 0; i < out_plane; ++i) s += p[i];
          (*gb)[co] += s;
        }
      }
    }
  });
}

Var avg_pool2d(const Var& x, int factor) {
  const Shape& s = x.shape();
  if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("avg_pool2d: " + s.str() + " not divisible by " +
                     std::to_string(factor));
  }
  const int ho = s.h / factor;
  const int wo = s.w / factor;
  const double inv = 1.0 / (factor * factor);
  Tensor out(Shape{s.n, s.c, ho, wo});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.value().plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy) {
            for (int dx = 0; dx < factor; ++dx) {
              acc += src[(y * factor + dy) * s.w + xx * factor + dx];
            }
          }
          dst[y * wo + xx] = acc * inv;
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [factor, inv](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const Shape& s = g->shape();
    const int ho = s.h / factor;
    const int wo = s.w / factor;
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* src = self.grad.plane(n, c);
        double* dst = g->plane(n, c);
        for (int y = 0; y < ho; ++y) {
          for (int xx = 0; xx < wo; ++xx) {
            const double v = src[y * wo + xx] * inv;
            for (int dy = 0; dy < factor; ++dy) {
              for (int dx = 0; dx < factor; ++dx) {
                dst[(y * factor + dy) * s.w + xx * factor + dx] += v;
              }
            }
          }
        }
      }
    }
  });
}

Var max_pool2d(const Var& x, int factor) {
  const Shape& s = x.shape();
  if (factor < 1 || s.h < factor || s.w < factor) {
    throw ShapeError("max_pool2d: input " + s.str() + " smaller than window");
  }
  // Floor semantics: trailing rows/columns that do not fill a window drop out.
  const int ho = s.h / factor;
  const int wo = s.w / factor;
  Tensor out(Shape{s.n, s.c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.value().plane(n, c);
      const std::size_t base = x.value().plane(n, c) - x.value().data();
      double* dst = out.plane(n, c);
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx, ++k) {
          std::size_t best = static_cast<std::size_t>(y * factor) * s.w +
                             xx * factor;
          for (int dy = 0; dy < factor; ++dy) {
            for (int dx = 0; dx < factor; ++dx) {
              const std::size_t i =
                  static_cast<std::size_t>(y * factor + dy) * s.w +
                  xx * factor + dx;
              if (src[i] > src[best]) best = i;
            }
          }
          dst[y * wo + xx] = src[best];
          (*argmax)[k] = base + best;
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [argmax](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < argmax->size(); ++i) {
        (*g)[(*argmax)[i]] += self.grad[i];
      }
    }
  });
}

Var upsample_bilinear(const Var& x, int factor) {
  const Shape& s = x.shape();
  if (factor < 1) throw ShapeError("upsample_bilinear: factor < 1");
  const int ho = s.h * factor;
  const int wo = s.w * factor;
  auto ty = std::make_shared<std::vector<Lerp>>(upsample_table(s.h, factor));
  auto tx = std::make_shared<std::vector<Lerp>>(upsample_table(s.w, factor));
  Tensor out(Shape{s.n, s.c, ho, wo});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.value().plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < ho; ++y) {
        const Lerp ly = (*ty)[y];
        const double* r0 = src + static_cast<std::size_t>(ly.i0) * s.w;
        const double* r1 = src + static_cast<std::size_t>(ly.i1) * s.w;
        for (int xx = 0; xx < wo; ++xx) {
          const Lerp lx = (*tx)[xx];
          const double top = (1.0 - lx.t) * r0[lx.i0] + lx.t * r0[lx.i1];
          const double bot = (1.0 - lx.t) * r1[lx.i0] + lx.t * r1[lx.i1];
          dst[y * wo + xx] = (1.0 - ly.t) * top + ly.t * bot;
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [ty, tx](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const Shape& s = g->shape();
    const int ho = self.grad.h();
    const int wo = self.grad.w();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* src = self.grad.plane(n, c);
        double* dst = g->plane(n, c);
        for (int y = 0; y < ho; ++y) {
          const Lerp ly = (*ty)[y];
          double* r0 = dst + static_cast<std::size_t>(ly.i0) * s.w;
          double* r1 = dst + static_cast<std::size_t>(ly.i1) * s.w;
          for (int xx = 0; xx < wo; ++xx) {
            const Lerp lx = (*tx)[xx];
            const double v = src[y * wo + xx];
            const double vt = (1.0 - ly.t) * v;
            const double vb = ly.t * v;
            r0[lx.i0] += (1.0 - lx.t) * vt;
            r0[lx.i1] += lx.t * vt;
            r1[lx.i0] += (1.0 - lx.t) * vb;
            r1[lx.i1] += lx.t * vb;
          }
        }
      }
    }
  });
}

Var stencil3x3(const Var& x, const Stencil3& kernel) {
  return make_result(stencil_forward(x.value(), kernel), {x}, [kernel](Node& self) {
    if (Tensor* g = grad_of(self, 0)) stencil_backward(self.grad, kernel, *g);
  });
}

Var sobel_x(const Var& x) { return stencil3x3(x, kSobelX); }
Var sobel_y(const Var& x) { return stencil3x3(x, kSobelY); }

// --- channel manipulation --------------------------------------------------

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels of nothing");
  const Shape s0 = parts.front().shape();
  int total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: " + s.str() + " vs " + s0.str());
    }
    total += s.c;
  }
  Tensor out(Shape{s0.n, total, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  for (int n = 0; n < s0.n; ++n) {
    double* dst = out.plane(n, 0);
    for (const Var& p : parts) {
      const std::size_t len = p.shape().c * plane;
      std::copy_n(p.value().plane(n, 0), len, dst);
      dst += len;
    }
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [](Node& self) {
                       const Shape& s = self.value.shape();
                       const std::size_t plane = s.plane();
                       std::size_t offset = 0;
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         const int c = self.parents[i]->value.c();
                         if (Tensor* g = grad_of(self, i)) {
                           for (int n = 0; n < s.n; ++n) {
                             const double* src = self.grad.plane(n, 0) + offset;
                             double* dst = g->plane(n, 0);
                             for (std::size_t j = 0; j < c * plane; ++j) {
                               dst[j] += src[j];
                             }
                           }
                         }
                         offset += c * plane;
                       }
                     });
}

Var repeat_channels(const Var& x, int times) {
  std::vector<Var> copies(static_cast<std::size_t>(times), x);
  return concat_channels(copies);
}

Var channel_affine(const Var& x, std::vector<double> scale_v,
                   std::vector<double> shift_v) {
  const Shape& s = x.shape();
  if (scale_v.size() != static_cast<std::size_t>(s.c) ||
      shift_v.size() != static_cast<std::size_t>(s.c)) {
    throw ShapeError("channel_affine: expected " + std::to_string(s.c) +
                     " coefficients");
  }
  Tensor out = x.value();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      double* p = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * scale_v[c] + shift_v[c];
    }
  }
  return make_result(std::move(out), {x}, [scale_v](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const Shape& s = g->shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* src = self.grad.plane(n, c);
        double* dst = g->plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * scale_v[c];
      }
    }
  });
}

// --- reductions ------------------------------------------------------------

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.empty()) throw ShapeError("mse of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    acc += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(av.size());
  return make_result(Tensor::scalar(acc * inv_n), {a, b}, [inv_n](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const double k = 2.0 * inv_n * self.grad[0];
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += k * (av[i] - bv[i]);
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= k * (av[i] - bv[i]);
    }
  });
}

Var sum_scalars(std::span<const Var> terms) {
  if (terms.empty()) return Var(Tensor::scalar(0.0));
  double acc = 0.0;
  for (const Var& t : terms) acc += t.value().item();
  return make_result(Tensor::scalar(acc),
                     std::vector<Var>(terms.begin(), terms.end()),
                     [](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         if (Tensor* g = grad_of(self, i)) (*g)[0] += self.grad[0];
                       }
                     });
}

}  // namespace mmfuse::ag
