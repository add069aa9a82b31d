#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "epd/parallel.hpp"
#include "epd/tensor.hpp"

// Differentiable operators. Every op takes the tape first and records a node
// only when the tape is enabled and some input requires a gradient.

namespace epd {

struct Padding {
  int left = 0;
  int right = 0;

  static constexpr Padding symmetric(int p) { return {p, p}; }
  /// Left-only padding so output t sees inputs <= t.
  static constexpr Padding causal(int kernel, int dilation) { return {dilation * (kernel - 1), 0}; }
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct ConvGeometry {
  std::size_t batch, in_channels, length, out_channels, kernel, out_length;
  std::size_t stride, dilation;
  std::ptrdiff_t pad_left;

  [[nodiscard]] std::size_t patch() const { return in_channels * kernel; }
  [[nodiscard]] bool pointwise() const { return kernel == 1 && stride == 1 && pad_left == 0 && out_length == length; }

  // Output positions whose tap k reads inside [0, length).
  void valid_range(std::size_t k, std::size_t& t0, std::size_t& t1) const {
    const auto offset = static_cast<std::ptrdiff_t>(k * dilation) - pad_left;
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const auto len = static_cast<std::ptrdiff_t>(length);
    std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
    std::ptrdiff_t hi = len - offset <= 0 ? 0 : (len - offset - 1) / s + 1;
    lo = std::clamp<std::ptrdiff_t>(lo, 0, static_cast<std::ptrdiff_t>(out_length));
    hi = std::clamp<std::ptrdiff_t>(hi, lo, static_cast<std::ptrdiff_t>(out_length));
    t0 = static_cast<std::size_t>(lo);
    t1 = static_cast<std::size_t>(hi);
  }
};

// x: [Cin, L] -> cols: [Cin*K, Lout]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const T* src = x + ci * g.length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      T* row = cols + (ci * g.kernel + k) * g.out_length;
      std::size_t t0 = 0, t1 = 0;
      g.valid_range(k, t0, t1);
      const auto offset = static_cast<std::ptrdiff_t>(k * g.dilation) - g.pad_left;
      std::fill(row, row + t0, T(0));
      if (g.stride == 1) {
        if (t1 > t0) std::memcpy(row + t0, src + offset + static_cast<std::ptrdiff_t>(t0), (t1 - t0) * sizeof(T));
      } else {
        for (std::size_t t = t0; t < t1; ++t) row[t] = src[static_cast<std::ptrdiff_t>(t * g.stride) + offset];
      }
      std::fill(row + t1, row + g.out_length, T(0));
    }
  }
}

// Adjoint of im2col: accumulates cols back into dx [Cin, L].
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    T* dst = dx + ci * g.length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const T* row = cols + (ci * g.kernel + k) * g.out_length;
      std::size_t t0 = 0, t1 = 0;
      g.valid_range(k, t0, t1);
      const auto offset = static_cast<std::ptrdiff_t>(k * g.dilation) - g.pad_left;
      for (std::size_t t = t0; t < t1; ++t) dst[static_cast<std::ptrdiff_t>(t * g.stride) + offset] += row[t];
    }
  }
}

template <class T>
std::vector<T>& scratch(std::size_t n) {
  thread_local std::vector<T> buffer;
  if (buffer.size() < n) buffer.resize(n);
  return buffer;
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined input");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
}

}  // namespace detail

/// Output length of a 1-D convolution; throws when it would be < 1.
inline std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, int stride, int dilation,
                                        Padding padding) {
  const auto span = static_cast<std::ptrdiff_t>(dilation) * (static_cast<std::ptrdiff_t>(kernel) - 1) + 1;
  const auto padded = static_cast<std::ptrdiff_t>(length) + padding.left + padding.right;
  if (padded < span) throw std::invalid_argument("conv1d: output length < 1");
  return static_cast<std::size_t>((padded - span) / stride + 1);
}

/// Cross-correlation over [B, Cin, L] with weight [Cout, Cin, K]. bias may be
/// an undefined tensor.
template <class T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int dilation, Padding padding) {
  using detail::require;
  require(input.defined() && weight.defined(), "conv1d: undefined input");
  require(input.rank() == 3, "conv1d: input must be [B, Cin, L], got " + to_string(input.shape()));
  require(weight.rank() == 3, "conv1d: weight must be [Cout, Cin, K], got " + to_string(weight.shape()));
  require(stride >= 1 && dilation >= 1, "conv1d: stride and dilation must be >= 1");
  require(padding.left >= 0 && padding.right >= 0, "conv1d: padding must be >= 0");
  require(input.dim(1) == weight.dim(1), "conv1d: input has " + std::to_string(input.dim(1)) +
                                             " channels, weight expects " + std::to_string(weight.dim(1)));
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "conv1d: bias must be [Cout]");
  }

  detail::ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.length = input.dim(2);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = static_cast<std::size_t>(stride);
  g.dilation = static_cast<std::size_t>(dilation);
  g.pad_left = padding.left;
  g.out_length = conv1d_output_length(g.length, g.kernel, stride, dilation, padding);

  auto out = Tensor<T>::zeros({g.batch, g.out_channels, g.out_length});
  const T* x = input.raw();
  T* y = out.raw();
  const detail::ConstMatMap<T> w(weight.raw(), static_cast<Eigen::Index>(g.out_channels),
                                 static_cast<Eigen::Index>(g.patch()));
  const T* b = bias.defined() ? bias.raw() : nullptr;

  parallel_for(g.batch, [&](std::size_t n) {
    const T* xn = x + n * g.in_channels * g.length;
    const T* cols = xn;
    if (!g.pointwise()) {
      auto& buf = detail::scratch<T>(g.patch() * g.out_length);
      detail::im2col(xn, g, buf.data());
      cols = buf.data();
    }
    detail::MatMap<T> yn(y + n * g.out_channels * g.out_length, static_cast<Eigen::Index>(g.out_channels),
                         static_cast<Eigen::Index>(g.out_length));
    yn.noalias() = w * detail::ConstMatMap<T>(cols, static_cast<Eigen::Index>(g.patch()),
                                              static_cast<Eigen::Index>(g.out_length));
    if (b) {
      for (std::size_t co = 0; co < g.out_channels; ++co) yn.row(static_cast<Eigen::Index>(co)).array() += b[co];
    }
  });

  if (tape.should_record({&input, &weight, &bias})) {
    tape.record(OpKind::Conv1d, {input, weight, bias}, out, [input, weight, bias, g](std::span<const T> gy) mutable {
      const T* x = input.raw();
      const detail::ConstMatMap<T> w(weight.raw(), static_cast<Eigen::Index>(g.out_channels),
                                     static_cast<Eigen::Index>(g.patch()));
      const bool need_w = weight.requires_grad();
      const bool need_x = input.requires_grad();
      T* dx = need_x ? input.grad_buffer().data() : nullptr;
      const std::size_t wsize = g.out_channels * g.patch();
      // Per-item weight partials, summed in item order below.
      std::vector<T> partial(need_w ? g.batch * wsize : 0);

      parallel_for(g.batch, [&](std::size_t n) {
        const detail::ConstMatMap<T> gn(gy.data() + n * g.out_channels * g.out_length,
                                        static_cast<Eigen::Index>(g.out_channels),
                                        static_cast<Eigen::Index>(g.out_length));
        if (need_w) {
          const T* xn = x + n * g.in_channels * g.length;
          const T* cols = xn;
          if (!g.pointwise()) {
            auto& buf = detail::scratch<T>(g.patch() * g.out_length);
            detail::im2col(xn, g, buf.data());
            cols = buf.data();
          }
          detail::MatMap<T> dw(partial.data() + n * wsize, static_cast<Eigen::Index>(g.out_channels),
                               static_cast<Eigen::Index>(g.patch()));
          dw.noalias() = gn * detail::ConstMatMap<T>(cols, static_cast<Eigen::Index>(g.patch()),
                                                     static_cast<Eigen::Index>(g.out_length))
                                  .transpose();
        }
        if (need_x) {
          T* dxn = dx + n * g.in_channels * g.length;
          if (g.pointwise()) {
            detail::MatMap<T> d(dxn, static_cast<Eigen::Index>(g.in_channels), static_cast<Eigen::Index>(g.length));
            d.noalias() += w.transpose() * gn;
          } else {
            auto& buf = detail::scratch<T>(g.patch() * g.out_length);
            detail::MatMap<T> dcols(buf.data(), static_cast<Eigen::Index>(g.patch()),
                                    static_cast<Eigen::Index>(g.out_length));
            dcols.noalias() = w.transpose() * gn;
            detail::col2im_add(buf.data(), g, dxn);
          }
        }
      });

      if (need_w) {
        auto dw = weight.grad_buffer();
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* p = partial.data() + n * wsize;
          for (std::size_t i = 0; i < wsize; ++i) dw[i] += p[i];
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        auto db = bias.grad_buffer();
        for (std::size_t n = 0; n < g.batch; ++n) {
          for (std::size_t co = 0; co < g.out_channels; ++co) {
            const T* row = gy.data() + (n * g.out_channels + co) * g.out_length;
            T s = 0;
            for (std::size_t t = 0; t < g.out_length; ++t) s += row[t];
            db[co] += s;
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int dilation, int padding) {
  return conv1d(tape, input, weight, bias, stride, dilation, Padding::symmetric(padding));
}

/// Affine map: [B, N] x [M, N]^T + [M] -> [B, M].
template <class T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  using detail::require;
  require(input.defined() && weight.defined() && bias.defined(), "dense: undefined input");
  require(input.rank() == 2 && weight.rank() == 2, "dense: expected [B, N] input and [M, N] weight");
  require(input.dim(1) == weight.dim(1), "dense: input width " + std::to_string(input.dim(1)) +
                                             " does not match weight " + to_string(weight.shape()));
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "dense: bias must be [M]");

  const auto batch = static_cast<Eigen::Index>(input.dim(0));
  const auto in = static_cast<Eigen::Index>(input.dim(1));
  const auto outw = static_cast<Eigen::Index>(weight.dim(0));
  auto out = Tensor<T>::zeros({input.dim(0), weight.dim(0)});
  {
    detail::MatMap<T> y(out.raw(), batch, outw);
    y.noalias() = detail::ConstMatMap<T>(input.raw(), batch, in) *
                  detail::ConstMatMap<T>(weight.raw(), outw, in).transpose();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.raw(), outw);
  }
  if (tape.should_record({&input, &weight, &bias})) {
    tape.record(OpKind::Dense, {input, weight, bias}, out,
                [input, weight, bias, batch, in, outw](std::span<const T> gy) mutable {
                  const detail::ConstMatMap<T> g(gy.data(), batch, outw);
                  if (input.requires_grad()) {
                    detail::MatMap<T> dx(input.grad_buffer().data(), batch, in);
                    dx.noalias() += g * detail::ConstMatMap<T>(weight.raw(), outw, in);
                  }
                  if (weight.requires_grad()) {
                    detail::MatMap<T> dw(weight.grad_buffer().data(), outw, in);
                    dw.noalias() += g.transpose() * detail::ConstMatMap<T>(input.raw(), batch, in);
                  }
                  if (bias.requires_grad()) {
                    auto db = bias.grad_buffer();
                    for (Eigen::Index r = 0; r < batch; ++r) {
                      for (Eigen::Index c = 0; c < outw; ++c) db[static_cast<std::size_t>(c)] += g(r, c);
                    }
                  }
                });
  }
  return out;
}

/// max(0, x); the subgradient at 0 is 0.
template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  detail::require(input.defined(), "relu: undefined input");
  auto out = Tensor<T>::zeros(input.shape());
  const auto x = input.data();
  auto y = out.data();
  // NaN passes through so the finite checks downstream still see it.
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] <= T(0) ? T(0) : x[i];
  if (tape.should_record({&input})) {
    tape.record(OpKind::Relu, {input}, out, [input](std::span<const T> gy) mutable {
      const auto x = input.data();
      auto dx = input.grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > T(0) ? gy[i] : T(0);
    });
  }
  return out;
}

/// Elementwise sum of identically shaped tensors.
template <class T>
Tensor<T> residual_add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "residual_add");
  auto out = Tensor<T>::zeros(a.shape());
  const auto x = a.data();
  const auto z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  if (tape.should_record({&a, &b})) {
    tape.record(OpKind::ResidualAdd, {a, b}, out, [a, b](std::span<const T> gy) mutable {
      for (auto* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = t->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gy[i];
      }
    });
  }
  return out;
}

/// Elementwise product of identically shaped tensors.
template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = Tensor<T>::zeros(a.shape());
  const auto x = a.data();
  const auto z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  if (tape.should_record({&a, &b})) {
    tape.record(OpKind::Mul, {a, b}, out, [a, b](std::span<const T> gy) mutable {
      if (a.requires_grad()) {
        auto d = a.grad_buffer();
        const auto other = b.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gy[i] * other[i];
      }
      if (b.requires_grad()) {
        auto d = b.grad_buffer();
        const auto other = a.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gy[i] * other[i];
      }
    });
  }
  return out;
}

/// Mean over the temporal axis: [B, C, L] -> [B, C].
template <class T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input) {
  detail::require(input.defined() && input.rank() == 3, "global_avg_pool: input must be [B, C, L]");
  const std::size_t rows = input.dim(0) * input.dim(1);
  const std::size_t len = input.dim(2);
  auto out = Tensor<T>::zeros({input.dim(0), input.dim(1)});
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t t = 0; t < len; ++t) s += x[r * len + t];
    y[r] = s / static_cast<T>(len);
  }
  if (tape.should_record({&input})) {
    tape.record(OpKind::GlobalAvgPool, {input}, out, [input, rows, len](std::span<const T> gy) mutable {
      auto dx = input.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T g = gy[r] / static_cast<T>(len);
        for (std::size_t t = 0; t < len; ++t) dx[r * len + t] += g;
      }
    });
  }
  return out;
}

/// Mean absolute error, returned as a [1] tensor. sign(0) is taken as 0.
template <class T>
Tensor<T> l1_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require(pred.defined() && target.defined(), "l1_loss: empty batch");
  detail::require(pred.numel() == target.numel(), "l1_loss: pred has " + std::to_string(pred.numel()) +
                                                      " values, target has " + std::to_string(target.numel()));
  const auto p = pred.data();
  const auto t = target.data();
  const auto n = p.size();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(p[i] - t[i]);
  auto out = Tensor<T>::scalar(s / static_cast<T>(n));
  if (tape.should_record({&pred, &target})) {
    tape.record(OpKind::L1Loss, {pred, target}, out, [pred, target, n](std::span<const T> gy) mutable {
      const auto p = pred.data();
      const auto t = target.data();
      const T scale = gy[0] / static_cast<T>(n);
      auto sign = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
      if (pred.requires_grad()) {
        auto d = pred.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) d[i] += scale * sign(p[i] - t[i]);
      }
      if (target.requires_grad()) {
        auto d = target.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) d[i] -= scale * sign(p[i] - t[i]);
      }
    });
  }
  return out;
}

/// Copy with a new shape of equal element count.
template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& input, Shape shape) {
  detail::require(input.defined(), "reshape: undefined input");
  detail::require(numel(shape) == input.numel(), "reshape: cannot view " + to_string(input.shape()) + " as " +
                                                     to_string(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(input.data().begin(), input.data().end()));
  if (tape.should_record({&input})) {
    tape.record(OpKind::Reshape, {input}, out, [input](std::span<const T> gy) mutable {
      auto d = input.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gy[i];
    });
  }
  return out;
}

/// Standardizes each output row of a weight tensor to zero mean, unit variance.
template <class T>
Tensor<T> weight_standardize(Tape<T>& tape, const Tensor<T>& weight, T eps = T(1e-5)) {
  detail::require(weight.defined() && weight.rank() >= 2, "weight_standardize: weight must have rank >= 2");
  const std::size_t rows = weight.dim(0);
  const std::size_t fan = weight.numel() / rows;
  auto out = Tensor<T>::zeros(weight.shape());
  std::vector<T> inv_std(rows);
  const auto w = weight.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = w.data() + r * fan;
    double mean = 0;
    for (std::size_t i = 0; i < fan; ++i) mean += row[i];
    mean /= static_cast<double>(fan);
    double var = 0;
    for (std::size_t i = 0; i < fan; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(fan);
    inv_std[r] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    for (std::size_t i = 0; i < fan; ++i) y[r * fan + i] = (row[i] - static_cast<T>(mean)) * inv_std[r];
  }
  if (tape.should_record({&weight})) {
    tape.record(OpKind::WeightStandardize, {weight}, out,
                [weight, out_data = out, inv_std, rows, fan](std::span<const T> gy) mutable {
                  auto dw = weight.grad_buffer();
                  const auto xhat = out_data.data();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double gmean = 0, gxmean = 0;
                    for (std::size_t i = 0; i < fan; ++i) {
                      gmean += gy[r * fan + i];
                      gxmean += gy[r * fan + i] * xhat[r * fan + i];
                    }
                    gmean /= static_cast<double>(fan);
                    gxmean /= static_cast<double>(fan);
                    for (std::size_t i = 0; i < fan; ++i) {
                      const std::size_t j = r * fan + i;
                      dw[j] += inv_std[r] * static_cast<T>(gy[j] - gmean - xhat[j] * gxmean);
                    }
                  }
                });
  }
  return out;
}

/// Running statistics owned by a normalization layer.
template <class T>
struct NormStats {
  Tensor<T> mean;
  Tensor<T> var;

  static NormStats init(std::size_t channels) {
    return {Tensor<T>::zeros({channels}), Tensor<T>::full({channels}, T(1))};
  }
};

struct NormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over [B, C, L] (or [B, C]) with a learnable
/// scale and shift. Training mode normalizes with batch statistics and
/// updates the running averages; inference mode uses the running averages.
template <class T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                     NormStats<T>& stats, NormOptions opts = {}) {
  using detail::require;
  require(input.defined() && (input.rank() == 3 || input.rank() == 2), "batch_norm: input must be [B, C, L] or [B, C]");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t len = input.rank() == 3 ? input.dim(2) : 1;
  require(scale.numel() == channels && shift.numel() == channels, "batch_norm: scale/shift must be [C]");
  require(stats.mean.numel() == channels && stats.var.numel() == channels, "batch_norm: running stats must be [C]");

  const std::size_t count = batch * len;
  std::vector<T> mean(channels), inv_std(channels);
  const auto x = input.data();
  auto rmean = stats.mean.data();
  auto rvar = stats.var.data();

  parallel_for(channels, [&](std::size_t c) {
    if (opts.training) {
      // Row sums in T vectorise; rows are combined in double.
      double s = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* row = x.data() + (n * channels + c) * len;
        T rs = 0;
        for (std::size_t t = 0; t < len; ++t) rs += row[t];
        s += rs;
      }
      const double mu = s / static_cast<double>(count);
      const T mu_t = static_cast<T>(mu);
      double v = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* row = x.data() + (n * channels + c) * len;
        T rv = 0;
        for (std::size_t t = 0; t < len; ++t) rv += (row[t] - mu_t) * (row[t] - mu_t);
        v += rv;
      }
      const double var = v / static_cast<double>(count);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opts.eps));
      rmean[c] = static_cast<T>((1.0 - opts.momentum) * rmean[c] + opts.momentum * mu);
      rvar[c] = static_cast<T>((1.0 - opts.momentum) * rvar[c] + opts.momentum * unbiased);
    } else {
      mean[c] = rmean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rvar[c]) + opts.eps));
    }
  });

  auto out = Tensor<T>::zeros(input.shape());
  auto y = out.data();
  const auto gamma = scale.data();
  const auto beta = shift.data();
  parallel_for(batch, [&](std::size_t n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * len;
      const T a = gamma[c] * inv_std[c];
      const T b = beta[c] - a * mean[c];
      for (std::size_t t = 0; t < len; ++t) y[base + t] = a * x[base + t] + b;
    }
  });

  if (tape.should_record({&input, &scale, &shift})) {
    tape.record(OpKind::BatchNorm, {input, scale, shift}, out,
                [input, scale, shift, mean, inv_std, batch, channels, len, count,
                 training = opts.training](std::span<const T> gy) mutable {
                  const auto x = input.data();
                  const auto gamma = scale.data();
                  T* dx = input.requires_grad() ? input.grad_buffer().data() : nullptr;
                  T* dscale = scale.requires_grad() ? scale.grad_buffer().data() : nullptr;
                  T* dshift = shift.requires_grad() ? shift.grad_buffer().data() : nullptr;
                  parallel_for(channels, [&](std::size_t c) {
                    const T mu = mean[c], is = inv_std[c];
                    double gsum = 0, gxsum = 0;
                    for (std::size_t n = 0; n < batch; ++n) {
                      const std::size_t base = (n * channels + c) * len;
                      T rg = 0, rgx = 0;
                      for (std::size_t t = 0; t < len; ++t) {
                        rg += gy[base + t];
                        rgx += gy[base + t] * ((x[base + t] - mu) * is);
                      }
                      gsum += rg;
                      gxsum += rgx;
                    }
                    if (dscale) dscale[c] += static_cast<T>(gxsum);
                    if (dshift) dshift[c] += static_cast<T>(gsum);
                    if (!dx) return;
                    const T a = gamma[c] * is;
                    const T gmean = training ? static_cast<T>(gsum / static_cast<double>(count)) : T(0);
                    const T gxmean = training ? static_cast<T>(gxsum / static_cast<double>(count)) : T(0);
                    for (std::size_t n = 0; n < batch; ++n) {
                      const std::size_t base = (n * channels + c) * len;
                      for (std::size_t t = 0; t < len; ++t) {
                        const T xhat = (x[base + t] - mu) * is;
                        dx[base + t] += a * (gy[base + t] - gmean - xhat * gxmean);
                      }
                    }
                  });
                });
  }
  return out;
}

}  // namespace epd
