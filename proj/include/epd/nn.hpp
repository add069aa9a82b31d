#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "epd/error.hpp"
#include "epd/ops.hpp"
#include "epd/tensor.hpp"

namespace epd::nn {

/// Samples per input channel (60 s at 100 Hz).
inline constexpr std::size_t kTraceLength = 6000;

enum class Arch { ResNet1D, TCN };

inline std::string to_string(Arch a) { return a == Arch::TCN ? "tcn" : "resnet"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "tcn" || s == "TCN") return Arch::TCN;
  if (s == "resnet" || s == "resnet1d" || s == "ResNet1D" || s == "ResNet") return Arch::ResNet1D;
  throw std::invalid_argument("unknown model '" + s + "' (expected resnet or tcn)");
}

inline bool is_grid_size(int size) { return size == 64 || size == 128 || size == 256; }

struct ModelConfig {
  Arch arch = Arch::TCN;
  int dense_size = 64;
  int in_channels = 3;
  std::uint64_t seed = 0;
  /// Permits dense sizes outside {64, 128, 256}.
  bool allow_any_size = false;
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.in_channels != 3 && cfg.in_channels != 4) {
    throw std::invalid_argument("in_channels must be 3 or 4, got " + std::to_string(cfg.in_channels));
  }
  if (cfg.allow_any_size ? cfg.dense_size < 2 : !is_grid_size(cfg.dense_size)) {
    throw std::invalid_argument("dense size " + std::to_string(cfg.dense_size) + " is not one of 64, 128, 256");
  }
}

struct ResNetSpec {
  int stem_kernel = 7;
  int stem_stride = 2;
  int stem_channels = 16;
  std::vector<int> stage_channels{16, 32, 64, 128};
  int blocks_per_stage = 2;
  int kernel = 3;
};

struct TcnSpec {
  int levels = 11;
  int kernel = 3;
  int channels = 32;

  /// 1, 2, 4, ... one per level.
  [[nodiscard]] std::vector<int> dilations() const {
    std::vector<int> d(static_cast<std::size_t>(levels));
    for (int i = 0; i < levels; ++i) d[static_cast<std::size_t>(i)] = 1 << i;
    return d;
  }
};

/// Input samples seen by one output of a stack of two-conv residual levels.
inline std::size_t receptive_field(int kernel, const std::vector<int>& dilations) {
  std::size_t rf = 1;
  for (int d : dilations) rf += 2 * static_cast<std::size_t>(kernel - 1) * static_cast<std::size_t>(d);
  return rf;
}

inline std::size_t receptive_field(const TcnSpec& spec) { return receptive_field(spec.kernel, spec.dilations()); }

enum class Mode { Train, Eval };

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, const std::string& where) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericFailure("non-finite activation", where);
  }
}

}  // namespace detail

/// Encoder + dense regression head producing one distance (km) per item.
template <class T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    validate(cfg);
    rng_.seed(cfg.seed);
    if (cfg.arch == Arch::ResNet1D) {
      build_resnet();
    } else {
      build_tcn();
    }
    build_head();
  }

  // Copies would alias parameter storage; use clone().
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const std::vector<NamedTensor<T>>& parameters() const noexcept { return params_; }
  [[nodiscard]] const std::vector<NamedTensor<T>>& buffers() const noexcept { return buffers_; }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  /// Deep copy with fresh storage.
  [[nodiscard]] Model clone() const {
    Model m(cfg_);
    m.copy_from(*this);
    return m;
  }

  void copy_from(const Model& other) {
    auto copy = [](auto& dst, const auto& src) {
      for (std::size_t i = 0; i < dst.size(); ++i) {
        std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.data().begin());
      }
    };
    copy(params_, other.params_);
    copy(buffers_, other.buffers_);
  }

  /// Encoder activations before pooling: [B, C, L'].
  Tensor<T> encode(Tape<T>& tape, const Tensor<T>& batch, Mode mode) {
    check_input(batch);
    const NormOptions norm{mode == Mode::Train, 0.1, 1e-5};
    Tensor<T> x = batch;
    if (cfg_.arch == Arch::ResNet1D) {
      x = relu(tape, apply(tape, stem_norm_, apply(tape, stem_, x), norm));
      detail::check_finite(x, "stem");
      for (auto& b : res_blocks_) {
        auto h = relu(tape, apply(tape, b.norm1, apply(tape, b.conv1, x), norm));
        h = apply(tape, b.norm2, apply(tape, b.conv2, h), norm);
        auto shortcut = b.has_proj ? apply(tape, b.proj_norm, apply(tape, b.proj, x), norm) : x;
        x = relu(tape, residual_add(tape, h, shortcut));
        detail::check_finite(x, b.name);
      }
    } else {
      for (auto& b : tcn_blocks_) {
        auto h = relu(tape, apply(tape, b.norm1, apply(tape, b.conv1, x), norm));
        h = relu(tape, apply(tape, b.norm2, apply(tape, b.conv2, h), norm));
        auto shortcut = b.has_proj ? apply(tape, b.proj, x) : x;
        x = relu(tape, residual_add(tape, h, shortcut));
        detail::check_finite(x, b.name);
      }
    }
    return x;
  }

  /// Predicted epicentral distance per batch item: [B].
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& batch, Mode mode) {
    auto x = global_avg_pool(tape, encode(tape, batch, mode));
    x = relu(tape, dense(tape, x, fc1_.w, fc1_.b));
    detail::check_finite(x, "head.fc1");
    x = relu(tape, dense(tape, x, fc2_.w, fc2_.b));
    detail::check_finite(x, "head.fc2");
    x = dense(tape, x, out_.w, out_.b);
    detail::check_finite(x, "head.out");
    return reshape(tape, x, {x.dim(0)});
  }

  /// Inference without recording.
  Tensor<T> predict(const Tensor<T>& batch) {
    Tape<T> off(false);
    return forward(off, batch, Mode::Eval);
  }

  [[nodiscard]] std::size_t encoder_channels() const {
    return cfg_.arch == Arch::TCN ? static_cast<std::size_t>(tcn_.channels)
                                  : static_cast<std::size_t>(resnet_.stage_channels.back());
  }

 private:
  struct Conv {
    Tensor<T> w;
    Tensor<T> b;  // undefined when a norm follows
    int stride = 1;
    int dilation = 1;
    Padding pad{};
  };
  struct Norm {
    Tensor<T> scale;
    Tensor<T> shift;
    NormStats<T> stats;
  };
  struct Dense {
    Tensor<T> w;
    Tensor<T> b;
  };
  struct ResBlock {
    std::string name;
    Conv conv1, conv2, proj;
    Norm norm1, norm2, proj_norm;
    bool has_proj = false;
  };
  struct TcnBlock {
    std::string name;
    Conv conv1, conv2, proj;
    Norm norm1, norm2;
    bool has_proj = false;
  };

  void check_input(const Tensor<T>& batch) const {
    if (!batch.defined() || batch.rank() != 3) throw std::invalid_argument("model input must be [B, C, L]");
    if (batch.dim(1) != static_cast<std::size_t>(cfg_.in_channels)) {
      throw std::invalid_argument("model expects " + std::to_string(cfg_.in_channels) + " channels, got " +
                                  std::to_string(batch.dim(1)));
    }
    if (batch.dim(2) != kTraceLength) {
      throw std::invalid_argument("model expects " + std::to_string(kTraceLength) + " samples, got " +
                                  std::to_string(batch.dim(2)));
    }
  }

  // Standardized weights for normalized convs, raw weights for the TCN projection.
  Tensor<T> apply(Tape<T>& tape, const Conv& c, const Tensor<T>& x) {
    if (c.b.defined()) return conv1d(tape, x, c.w, c.b, c.stride, c.dilation, c.pad);
    return conv1d(tape, x, weight_standardize(tape, c.w), Tensor<T>{}, c.stride, c.dilation, c.pad);
  }

  Tensor<T> apply(Tape<T>& tape, Norm& n, const Tensor<T>& x, const NormOptions& opts) {
    return batch_norm(tape, x, n.scale, n.shift, n.stats, opts);
  }

  // Fan-in scaled uniform, U(-sqrt(6/fan_in), sqrt(6/fan_in)).
  Tensor<T> init_weight(const std::string& name, Shape shape) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    Tensor<T> t(std::move(shape), std::move(data), true);
    params_.push_back({name, t});
    return t;
  }

  Tensor<T> init_const(const std::string& name, std::size_t n, T value) {
    auto t = Tensor<T>::full({n}, value, true);
    params_.push_back({name, t});
    return t;
  }

  Conv make_conv(const std::string& name, int in, int out, int k, int stride, int dilation, Padding pad, bool bias) {
    Conv c;
    c.w = init_weight(name + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in),
                                         static_cast<std::size_t>(k)});
    if (bias) c.b = init_const(name + ".bias", static_cast<std::size_t>(out), T(0));
    c.stride = stride;
    c.dilation = dilation;
    c.pad = pad;
    return c;
  }

  Norm make_norm(const std::string& name, int channels) {
    const auto c = static_cast<std::size_t>(channels);
    Norm n;
    n.scale = init_const(name + ".scale", c, T(1));
    n.shift = init_const(name + ".shift", c, T(0));
    n.stats = NormStats<T>::init(c);
    buffers_.push_back({name + ".running_mean", n.stats.mean});
    buffers_.push_back({name + ".running_var", n.stats.var});
    return n;
  }

  Dense make_dense(const std::string& name, int in, int out) {
    Dense d;
    d.w = init_weight(name + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in)});
    d.b = init_const(name + ".bias", static_cast<std::size_t>(out), T(0));
    return d;
  }

  void build_resnet() {
    const auto& s = resnet_;
    stem_ = make_conv("stem.conv", cfg_.in_channels, s.stem_channels, s.stem_kernel, s.stem_stride, 1,
                      Padding::symmetric(s.stem_kernel / 2), false);
    stem_norm_ = make_norm("stem.norm", s.stem_channels);
    int in = s.stem_channels;
    for (std::size_t st = 0; st < s.stage_channels.size(); ++st) {
      const int out = s.stage_channels[st];
      for (int j = 0; j < s.blocks_per_stage; ++j) {
        ResBlock b;
        b.name = "stage" + std::to_string(st + 1) + ".block" + std::to_string(j);
        const int stride = j == 0 ? 2 : 1;
        const auto pad = Padding::symmetric(s.kernel / 2);
        b.conv1 = make_conv(b.name + ".conv1", in, out, s.kernel, stride, 1, pad, false);
        b.norm1 = make_norm(b.name + ".norm1", out);
        b.conv2 = make_conv(b.name + ".conv2", out, out, s.kernel, 1, 1, pad, false);
        b.norm2 = make_norm(b.name + ".norm2", out);
        b.has_proj = stride != 1 || in != out;
        if (b.has_proj) {
          b.proj = make_conv(b.name + ".proj", in, out, 1, stride, 1, Padding{}, false);
          b.proj_norm = make_norm(b.name + ".proj_norm", out);
        }
        res_blocks_.push_back(std::move(b));
        in = out;
      }
    }
  }

  void build_tcn() {
    const auto& s = tcn_;
    int in = cfg_.in_channels;
    const auto dilations = s.dilations();
    for (std::size_t i = 0; i < dilations.size(); ++i) {
      TcnBlock b;
      b.name = "tcn.level" + std::to_string(i);
      const int d = dilations[i];
      const auto pad = Padding::causal(s.kernel, d);
      b.conv1 = make_conv(b.name + ".conv1", in, s.channels, s.kernel, 1, d, pad, false);
      b.norm1 = make_norm(b.name + ".norm1", s.channels);
      b.conv2 = make_conv(b.name + ".conv2", s.channels, s.channels, s.kernel, 1, d, pad, false);
      b.norm2 = make_norm(b.name + ".norm2", s.channels);
      b.has_proj = in != s.channels;
      if (b.has_proj) b.proj = make_conv(b.name + ".proj", in, s.channels, 1, 1, 1, Padding{}, true);
      tcn_blocks_.push_back(std::move(b));
      in = s.channels;
    }
  }

  void build_head() {
    const int features = static_cast<int>(encoder_channels());
    fc1_ = make_dense("head.fc1", features, cfg_.dense_size);
    fc2_ = make_dense("head.fc2", cfg_.dense_size, cfg_.dense_size / 2);
    out_ = make_dense("head.out", cfg_.dense_size / 2, 1);
  }

  ModelConfig cfg_;
  ResNetSpec resnet_{};
  TcnSpec tcn_{};
  std::mt19937_64 rng_;
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> buffers_;

  Conv stem_;
  Norm stem_norm_;
  std::vector<ResBlock> res_blocks_;
  std::vector<TcnBlock> tcn_blocks_;
  Dense fc1_, fc2_, out_;
};

/// Seeded construction; the same config yields bitwise-identical parameters.
template <class T = float>
Model<T> build_model(const ModelConfig& cfg) {
  return Model<T>(cfg);
}

template <class T>
std::size_t param_count(const Model<T>& m) {
  return m.param_count();
}

}  // namespace epd::nn
