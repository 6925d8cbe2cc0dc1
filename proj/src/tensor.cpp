#include "mmfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mmfuse/errors.hpp"

namespace mmfuse {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("tensor " + shape.str() + " given " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::sample(int n) const {
  if (n < 0 || n >= shape_.n) throw ShapeError("sample index out of range");
  Tensor out(Shape{1, shape_.c, shape_.h, shape_.w});
  const std::size_t per = out.size();
  std::memcpy(out.data(), data_.data() + per * n, per * sizeof(double));
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_.str());
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor stack_batch(std::span<const Tensor> samples) {
  if (samples.empty()) throw ShapeError("stack_batch of zero samples");
  const Shape s0 = samples.front().shape();
  Tensor out(Shape{static_cast<int>(samples.size()), s0.c, s0.h, s0.w});
  const std::size_t per = static_cast<std::size_t>(s0.c) * s0.h * s0.w;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Shape& s = samples[i].shape();
    if (s.n != 1 || s.c != s0.c || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("stack_batch: sample " + std::to_string(i) +
                       " has shape " + s.str() + ", expected (1, " +
                       std::to_string(s0.c) + ", " + std::to_string(s0.h) +
                       ", " + std::to_string(s0.w) + ")");
    }
    std::memcpy(out.data() + per * i, samples[i].data(), per * sizeof(double));
  }
  return out;
}

}  // namespace mmfuse
