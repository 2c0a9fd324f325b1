#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dexnet/random.hpp"
#include "dexnet/tensor.hpp"

namespace dexnet::nn {

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool buffer = false;  // persisted but not optimized (BN running statistics)
  bool frozen = false;

  static Parameter trainable(Tensor<T> v) {
    Parameter p;
    p.grad = Tensor<T>::like(v);
    p.value = std::move(v);
    return p;
  }
  static Parameter statistic(Tensor<T> v) {
    Parameter p;
    p.value = std::move(v);
    p.buffer = true;
    return p;
  }
};

template <typename T>
using ParameterVisitor = std::function<void(const std::string&, Parameter<T>&)>;

inline std::string join_name(const std::string& prefix, const std::string& name) {
  if (prefix.empty()) return name;
  if (name.empty()) return prefix;
  return prefix + "." + name;
}

/// A differentiable layer. `infer` is const and cache-free so one instance can
/// serve many threads; `forward` runs in training mode and keeps what
/// `backward` needs. `backward` accumulates into parameter gradients.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> infer(const Tensor<T>& x) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void visit(const std::string&, const ParameterVisitor<T>&) {}
  virtual void release() {}
  /// Calls `fn` on every module in the tree, children first.
  virtual void walk(const std::function<void(Module<T>&)>& fn) { fn(*this); }
};

template <typename T>
void zero_grad(Module<T>& m) {
  m.visit("", [](const std::string&, Parameter<T>& p) {
    if (!p.buffer) p.grad.fill(T(0));
  });
}

template <typename T>
std::size_t parameter_count(Module<T>& m, bool include_buffers = false) {
  std::size_t n = 0;
  m.visit("", [&](const std::string&, Parameter<T>& p) {
    if (include_buffers || !p.buffer) n += p.value.size();
  });
  return n;
}

namespace detail {

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* col) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill_n(dst, out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
                std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* x) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Square-kernel 2-D convolution, weight layout [out][in][k][k].
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
         std::size_t pad = 0, bool bias = false)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad) {
    weight_ = Parameter<T>::trainable(Tensor<T>(out_, in_, k_, k_));
    if (bias) bias_ = Parameter<T>::trainable(Tensor<T>(out_, 1));
  }

  /// He-normal over fan-out, the usual torchvision convolution init.
  void init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(out_ * k_ * k_));
    for (auto& v : weight_.value.storage()) v = static_cast<T>(rng.normal() * stddev);
    if (bias_) bias_->value.fill(T(0));
  }

  std::size_t out_size(std::size_t in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<T> infer(const Tensor<T>& x) const override { return compute(x); }

  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    return compute(x);
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const Tensor<T>& x = input_;
    const std::size_t oh = g.h(), ow = g.w(), cols = oh * ow, rows = in_ * k_ * k_;
    Tensor<T> dx = Tensor<T>::like(x);
    ConstMatrixMap<T> w(weight_.value.data(), out_, rows);
    MatrixMap<T> dw(weight_.grad.data(), out_, rows);
    std::vector<T> col(pointwise() ? 0 : rows * cols);
    std::vector<T> dcol(pointwise() ? 0 : rows * cols);
    for (std::size_t i = 0; i < x.n(); ++i) {
      ConstMatrixMap<T> go(g.sample(i), out_, cols);
      if (pointwise()) {
        ConstMatrixMap<T> xi(x.sample(i), rows, cols);
        if (!weight_.frozen) dw.noalias() += go * xi.transpose();
        MatrixMap<T>(dx.sample(i), rows, cols).noalias() = w.transpose() * go;
      } else {
        detail::im2col(x.sample(i), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, col.data());
        if (!weight_.frozen) dw.noalias() += go * ConstMatrixMap<T>(col.data(), rows, cols).transpose();
        MatrixMap<T>(dcol.data(), rows, cols).noalias() = w.transpose() * go;
        detail::col2im_add(dcol.data(), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, dx.sample(i));
      }
      if (bias_ && !bias_->frozen) {
        for (std::size_t o = 0; o < out_; ++o) bias_->grad(o, 0) += go.row(static_cast<Eigen::Index>(o)).sum();
      }
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParameterVisitor<T>& fn) override {
    fn(join_name(prefix, "weight"), weight_);
    if (bias_) fn(join_name(prefix, "bias"), *bias_);
  }

  void release() override { input_ = {}; }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  Tensor<T> compute(const Tensor<T>& x) const {
    if (x.c() != in_) throw DimensionError("conv expects " + std::to_string(in_) + " channels, got " + x.shape_string());
    const std::size_t oh = out_size(x.h()), ow = out_size(x.w()), cols = oh * ow, rows = in_ * k_ * k_;
    Tensor<T> y(x.n(), out_, oh, ow);
    ConstMatrixMap<T> w(weight_.value.data(), out_, rows);
    std::vector<T> col(pointwise() ? 0 : rows * cols);
    for (std::size_t i = 0; i < x.n(); ++i) {
      MatrixMap<T> yi(y.sample(i), out_, cols);
      if (pointwise()) {
        yi.noalias() = w * ConstMatrixMap<T>(x.sample(i), rows, cols);
      } else {
        detail::im2col(x.sample(i), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, col.data());
        yi.noalias() = w * ConstMatrixMap<T>(col.data(), rows, cols);
      }
      if (bias_) {
        for (std::size_t o = 0; o < out_; ++o) yi.row(static_cast<Eigen::Index>(o)).array() += bias_->value(o, 0);
      }
    }
    return y;
  }

  std::size_t in_, out_, k_, stride_, pad_;
  Parameter<T> weight_;
  std::optional<Parameter<T>> bias_;
  Tensor<T> input_;
};

/// Per-channel batch normalization. Training uses batch statistics and
/// updates the running estimates; inference uses the running estimates.
template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, double eps = 1e-5, double momentum = 0.1)
      : channels_(channels), eps_(eps), momentum_(momentum) {
    weight_ = Parameter<T>::trainable(Tensor<T>(channels, 1, 1, 1, T(1)));
    bias_ = Parameter<T>::trainable(Tensor<T>(channels, 1));
    running_mean_ = Parameter<T>::statistic(Tensor<T>(channels, 1));
    running_var_ = Parameter<T>::statistic(Tensor<T>(channels, 1, 1, 1, T(1)));
  }

  /// With `cumulative`, running statistics become the equal-weight average of
  /// the batches seen since the call instead of an exponential average.
  void set_cumulative(bool cumulative) {
    cumulative_ = cumulative;
    batches_seen_ = 0;
  }

  Tensor<T> infer(const Tensor<T>& x) const override {
    check(x);
    Tensor<T> y = Tensor<T>::like(x);
    const std::size_t p = x.plane();
    for (std::size_t c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.value(c, 0)) + eps_);
      const T scale = static_cast<T>(static_cast<double>(weight_.value(c, 0)) * inv);
      const T shift = static_cast<T>(static_cast<double>(bias_.value(c, 0)) -
                                     static_cast<double>(running_mean_.value(c, 0)) * static_cast<double>(scale));
      for (std::size_t i = 0; i < x.n(); ++i) {
        const T* src = x.sample(i) + c * p;
        T* dst = y.sample(i) + c * p;
        for (std::size_t k = 0; k < p; ++k) dst[k] = src[k] * scale + shift;
      }
    }
    return y;
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    check(x);
    const std::size_t p = x.plane();
    const double count = static_cast<double>(x.n() * p);
    xhat_ = Tensor<T>::like(x);
    inv_std_.assign(channels_, 0.0);
    Tensor<T> y = Tensor<T>::like(x);
    ++batches_seen_;
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < x.n(); ++i) {
        const T* src = x.sample(i) + c * p;
        for (std::size_t k = 0; k < p; ++k) sum += static_cast<double>(src[k]);
      }
      const double mean = sum / count;
      for (std::size_t i = 0; i < x.n(); ++i) {
        const T* src = x.sample(i) + c * p;
        for (std::size_t k = 0; k < p; ++k) {
          const double d = static_cast<double>(src[k]) - mean;
          sq += d * d;
        }
      }
      const double var = sq / count;
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[c] = inv;
      const double gamma = static_cast<double>(weight_.value(c, 0));
      const double beta = static_cast<double>(bias_.value(c, 0));
      for (std::size_t i = 0; i < x.n(); ++i) {
        const T* src = x.sample(i) + c * p;
        T* xh = xhat_.sample(i) + c * p;
        T* dst = y.sample(i) + c * p;
        for (std::size_t k = 0; k < p; ++k) {
          const double v = (static_cast<double>(src[k]) - mean) * inv;
          xh[k] = static_cast<T>(v);
          dst[k] = static_cast<T>(gamma * v + beta);
        }
      }
      const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
      const double m = cumulative_ ? 1.0 / static_cast<double>(batches_seen_) : momentum_;
      auto& rm = running_mean_.value(c, 0);
      auto& rv = running_var_.value(c, 0);
      rm = static_cast<T>((1.0 - m) * static_cast<double>(rm) + m * mean);
      rv = static_cast<T>((1.0 - m) * static_cast<double>(rv) + m * unbiased);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const std::size_t p = g.plane();
    const double count = static_cast<double>(g.n() * p);
    Tensor<T> dx = Tensor<T>::like(g);
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < g.n(); ++i) {
        const T* gi = g.sample(i) + c * p;
        const T* xh = xhat_.sample(i) + c * p;
        for (std::size_t k = 0; k < p; ++k) {
          sum_g += static_cast<double>(gi[k]);
          sum_gx += static_cast<double>(gi[k]) * static_cast<double>(xh[k]);
        }
      }
      if (!weight_.frozen) weight_.grad(c, 0) += static_cast<T>(sum_gx);
      if (!bias_.frozen) bias_.grad(c, 0) += static_cast<T>(sum_g);
      const double scale = static_cast<double>(weight_.value(c, 0)) * inv_std_[c] / count;
      for (std::size_t i = 0; i < g.n(); ++i) {
        const T* gi = g.sample(i) + c * p;
        const T* xh = xhat_.sample(i) + c * p;
        T* d = dx.sample(i) + c * p;
        for (std::size_t k = 0; k < p; ++k) {
          d[k] = static_cast<T>(scale * (count * static_cast<double>(gi[k]) - sum_g -
                                         static_cast<double>(xh[k]) * sum_gx));
        }
      }
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParameterVisitor<T>& fn) override {
    fn(join_name(prefix, "weight"), weight_);
    fn(join_name(prefix, "bias"), bias_);
    fn(join_name(prefix, "running_mean"), running_mean_);
    fn(join_name(prefix, "running_var"), running_var_);
  }

  void release() override {
    xhat_ = {};
    inv_std_.clear();
  }

 private:
  void check(const Tensor<T>& x) const {
    if (x.c() != channels_) throw DimensionError("batch norm expects " + std::to_string(channels_) + " channels");
  }

  std::size_t channels_;
  double eps_, momentum_;
  bool cumulative_ = false;
  std::size_t batches_seen_ = 0;
  Parameter<T> weight_, bias_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

template <typename T>
class ReLU : public Module<T> {
 public:
  Tensor<T> infer(const Tensor<T>& x) const override {
    Tensor<T> y = x;
    for (auto& v : y.storage()) v = v > T(0) ? v : T(0);
    return y;
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    output_ = infer(x);
    return output_;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(output_.data()[i] > T(0))) dx.data()[i] = T(0);
    }
    return dx;
  }
  void release() override { output_ = {}; }

 private:
  Tensor<T> output_;
};

/// Max pooling with implicit -inf padding.
template <typename T>
class MaxPool2d : public Module<T> {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad) : k_(kernel), stride_(stride), pad_(pad) {}

  Tensor<T> infer(const Tensor<T>& x) const override {
    return compute(x, nullptr);
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape();
    return compute(x, &argmax_);
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    for (std::size_t i = 0; i < g.size(); ++i) dx.data()[argmax_[i]] += g.data()[i];
    return dx;
  }
  void release() override { argmax_.clear(); }

 private:
  Tensor<T> compute(const Tensor<T>& x, std::vector<std::size_t>* argmax) const {
    const std::size_t oh = (x.h() + 2 * pad_ - k_) / stride_ + 1;
    const std::size_t ow = (x.w() + 2 * pad_ - k_) / stride_ + 1;
    Tensor<T> y(x.n(), x.c(), oh, ow);
    if (argmax) argmax->assign(y.size(), 0);
    std::size_t out_index = 0;
    for (std::size_t i = 0; i < x.n(); ++i) {
      for (std::size_t c = 0; c < x.c(); ++c) {
        const std::size_t base = (i * x.c() + c) * x.plane();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox, ++out_index) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_at = base;
            for (std::size_t ky = 0; ky < k_; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h())) continue;
              for (std::size_t kx = 0; kx < k_; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w())) continue;
                const std::size_t at = base + static_cast<std::size_t>(iy) * x.w() + static_cast<std::size_t>(ix);
                if (x.data()[at] > best) {
                  best = x.data()[at];
                  best_at = at;
                }
              }
            }
            y.data()[out_index] = best;
            if (argmax) (*argmax)[out_index] = best_at;
          }
        }
      }
    }
    return y;
  }

  std::size_t k_, stride_, pad_;
  std::array<std::size_t, 4> in_shape_{};
  std::vector<std::size_t> argmax_;
};

/// Non-overlapping average pooling (kernel == stride), floor on odd sizes.
template <typename T>
class AvgPool2d : public Module<T> {
 public:
  explicit AvgPool2d(std::size_t kernel) : k_(kernel) {}

  Tensor<T> infer(const Tensor<T>& x) const override {
    const std::size_t oh = x.h() / k_, ow = x.w() / k_;
    Tensor<T> y(x.n(), x.c(), oh, ow);
    const T scale = T(1) / static_cast<T>(k_ * k_);
    for (std::size_t i = 0; i < x.n(); ++i) {
      for (std::size_t c = 0; c < x.c(); ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            T acc = 0;
            for (std::size_t ky = 0; ky < k_; ++ky) {
              for (std::size_t kx = 0; kx < k_; ++kx) acc += x(i, c, oy * k_ + ky, ox * k_ + kx);
            }
            y(i, c, oy, ox) = acc * scale;
          }
        }
      }
    }
    return y;
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape();
    return infer(x);
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const T scale = T(1) / static_cast<T>(k_ * k_);
    for (std::size_t i = 0; i < g.n(); ++i) {
      for (std::size_t c = 0; c < g.c(); ++c) {
        for (std::size_t oy = 0; oy < g.h(); ++oy) {
          for (std::size_t ox = 0; ox < g.w(); ++ox) {
            const T v = g(i, c, oy, ox) * scale;
            for (std::size_t ky = 0; ky < k_; ++ky) {
              for (std::size_t kx = 0; kx < k_; ++kx) dx(i, c, oy * k_ + ky, ox * k_ + kx) += v;
            }
          }
        }
      }
    }
    return dx;
  }

 private:
  std::size_t k_;
  std::array<std::size_t, 4> in_shape_{};
};

/// Spatial mean per channel: (n, c, h, w) -> (n, c, 1, 1).
template <typename T>
class GlobalAvgPool : public Module<T> {
 public:
  Tensor<T> infer(const Tensor<T>& x) const override {
    Tensor<T> y(x.n(), x.c());
    const std::size_t p = x.plane();
    for (std::size_t i = 0; i < x.n(); ++i) {
      for (std::size_t c = 0; c < x.c(); ++c) {
        const T* src = x.sample(i) + c * p;
        double acc = 0;
        for (std::size_t k = 0; k < p; ++k) acc += static_cast<double>(src[k]);
        y(i, c) = static_cast<T>(acc / static_cast<double>(p));
      }
    }
    return y;
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape();
    return infer(x);
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const std::size_t p = dx.plane();
    const T scale = T(1) / static_cast<T>(p);
    for (std::size_t i = 0; i < dx.n(); ++i) {
      for (std::size_t c = 0; c < dx.c(); ++c) {
        T* d = dx.sample(i) + c * p;
        std::fill_n(d, p, g(i, c) * scale);
      }
    }
    return dx;
  }

 private:
  std::array<std::size_t, 4> in_shape_{};
};

/// Fully connected layer on flattened samples; weight layout [out][in].
template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {
    weight_ = Parameter<T>::trainable(Tensor<T>(out, in));
    bias_ = Parameter<T>::trainable(Tensor<T>(out, 1));
  }

  void init(Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_ + out_));
    for (auto& v : weight_.value.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    bias_.value.fill(T(0));
  }

  Tensor<T> infer(const Tensor<T>& x) const override {
    if (x.sample_size() != in_) throw DimensionError("linear expects " + std::to_string(in_) + " inputs");
    Tensor<T> y(x.n(), out_);
    ConstMatrixMap<T> xs(x.data(), x.n(), in_);
    MatrixMap<T> ys(y.data(), x.n(), out_);
    ys.noalias() = xs * ConstMatrixMap<T>(weight_.value.data(), out_, in_).transpose();
    ys.rowwise() += ConstVectorMap<T>(bias_.value.data(), out_).transpose();
    return y;
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    return infer(x);
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    ConstMatrixMap<T> gs(g.data(), g.n(), out_);
    ConstMatrixMap<T> xs(input_.data(), input_.n(), in_);
    if (!weight_.frozen) MatrixMap<T>(weight_.grad.data(), out_, in_).noalias() += gs.transpose() * xs;
    if (!bias_.frozen) VectorMap<T>(bias_.grad.data(), out_) += gs.colwise().sum().transpose();
    Tensor<T> dx = Tensor<T>::like(input_);
    MatrixMap<T>(dx.data(), input_.n(), in_).noalias() = gs * ConstMatrixMap<T>(weight_.value.data(), out_, in_);
    return dx;
  }
  void visit(const std::string& prefix, const ParameterVisitor<T>& fn) override {
    fn(join_name(prefix, "weight"), weight_);
    fn(join_name(prefix, "bias"), bias_);
  }
  void release() override { input_ = {}; }

 private:
  std::size_t in_, out_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

/// Named chain of modules. Unnamed children (activations, pools) carry no parameters.
template <typename T>
class Sequential : public Module<T> {
 public:
  template <typename M>
  M& add(std::string name, std::unique_ptr<M> module) {
    M& ref = *module;
    children_.emplace_back(std::move(name), std::move(module));
    return ref;
  }

  Tensor<T> infer(const Tensor<T>& x) const override {
    Tensor<T> h = x;
    for (const auto& [_, m] : children_) h = m->infer(h);
    return h;
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> h = x;
    for (auto& [_, m] : children_) h = m->forward(h);
    return h;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> d = g;
    for (auto it = children_.rbegin(); it != children_.rend(); ++it) d = it->second->backward(d);
    return d;
  }
  void visit(const std::string& prefix, const ParameterVisitor<T>& fn) override {
    for (auto& [name, m] : children_) m->visit(join_name(prefix, name), fn);
  }
  void release() override {
    for (auto& [_, m] : children_) m->release();
  }
  void walk(const std::function<void(Module<T>&)>& fn) override {
    for (auto& [_, m] : children_) m->walk(fn);
    fn(*this);
  }

  std::size_t size() const { return children_.size(); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module<T>>>> children_;
};

/// Softmax cross-entropy over rows of `logits` (n x classes). Writes the
/// gradient of the mean loss into `grad` and returns the mean loss.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels, Tensor<T>& grad,
                             std::size_t* correct = nullptr) {
  const std::size_t n = logits.n(), k = logits.sample_size();
  grad = Tensor<T>::like(logits);
  double loss = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.sample(i);
    T* d = grad.sample(i);
    std::size_t arg = 0;
    double zmax = static_cast<double>(z[0]);
    for (std::size_t j = 1; j < k; ++j) {
      if (static_cast<double>(z[j]) > zmax) {
        zmax = static_cast<double>(z[j]);
        arg = j;
      }
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j]) - zmax);
    const double log_denom = std::log(denom);
    loss -= static_cast<double>(z[labels[i]]) - zmax - log_denom;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(z[j]) - zmax - log_denom);
      d[j] = static_cast<T>((p - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n));
    }
    if (arg == labels[i]) ++hits;
  }
  if (correct) *correct = hits;
  return loss / static_cast<double>(n);
}

}  // namespace dexnet::nn
