#pragma once

// Dense sigmoid MLP: parameter vectors, batched forward/backward, SGD and the
// little-endian model byte format used for every model exchange.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsai/rng.hpp"

namespace lsai {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LayerShape {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;

  std::size_t weight_count() const noexcept { return input_dim * output_dim; }
  std::size_t param_count() const noexcept { return weight_count() + output_dim; }
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

inline std::size_t param_count(std::span<const LayerShape> shapes) noexcept {
  std::size_t n = 0;
  for (const auto& s : shapes) n += s.param_count();
  return n;
}

/// in -> hidden... -> out, one LayerShape per weight layer.
inline std::vector<LayerShape> mlp_topology(std::size_t in, std::span<const std::size_t> hidden,
                                            std::size_t out) {
  std::vector<LayerShape> shapes;
  std::size_t prev = in;
  for (auto h : hidden) {
    shapes.push_back({prev, h});
    prev = h;
  }
  shapes.push_back({prev, out});
  return shapes;
}

inline std::vector<LayerShape> default_topology(std::size_t in, std::size_t out) {
  constexpr std::size_t hidden[] = {64, 64, 64};
  return mlp_topology(in, hidden, out);
}

/// Flat model weights. Per layer: weights row-major [out][in], then biases [out].
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(std::vector<LayerShape> shapes)
      : shapes_(std::move(shapes)), values_(param_count(shapes_), 0.0) {
    check_shapes();
  }

  ParamVector(std::vector<LayerShape> shapes, std::vector<double> values)
      : shapes_(std::move(shapes)), values_(std::move(values)) {
    check_shapes();
    if (values_.size() != param_count(shapes_)) {
      throw std::invalid_argument("ParamVector: " + std::to_string(values_.size()) +
                                  " values for shapes needing " +
                                  std::to_string(param_count(shapes_)));
    }
  }

  const std::vector<LayerShape>& shapes() const noexcept { return shapes_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t layer_count() const noexcept { return shapes_.size(); }

  std::size_t layer_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += shapes_.at(l).param_count();
    return off;
  }

  std::span<const double> weights(std::size_t layer) const {
    return {values_.data() + layer_offset(layer), shapes_.at(layer).weight_count()};
  }
  std::span<double> weights(std::size_t layer) {
    return {values_.data() + layer_offset(layer), shapes_.at(layer).weight_count()};
  }
  std::span<const double> biases(std::size_t layer) const {
    const auto& s = shapes_.at(layer);
    return {values_.data() + layer_offset(layer) + s.weight_count(), s.output_dim};
  }
  std::span<double> biases(std::size_t layer) {
    const auto& s = shapes_.at(layer);
    return {values_.data() + layer_offset(layer) + s.weight_count(), s.output_dim};
  }

  /// Flags each flat coordinate: true for bias entries.
  std::vector<bool> bias_flags() const {
    std::vector<bool> flags(values_.size(), false);
    std::size_t off = 0;
    for (const auto& s : shapes_) {
      std::fill(flags.begin() + static_cast<std::ptrdiff_t>(off + s.weight_count()),
                flags.begin() + static_cast<std::ptrdiff_t>(off + s.param_count()), true);
      off += s.param_count();
    }
    return flags;
  }

  bool same_shape(const ParamVector& other) const noexcept { return shapes_ == other.shapes_; }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  void check_shapes() const {
    for (const auto& s : shapes_) {
      if (s.input_dim == 0 || s.output_dim == 0) {
        throw std::invalid_argument("ParamVector: layer dims must be >= 1");
      }
    }
    for (std::size_t l = 1; l < shapes_.size(); ++l) {
      if (shapes_[l].input_dim != shapes_[l - 1].output_dim) {
        throw std::invalid_argument("ParamVector: layer " + std::to_string(l) +
                                    " input does not match previous output");
      }
    }
  }

  std::vector<LayerShape> shapes_;
  std::vector<double> values_;
};

/// True for weight coordinates, false for biases.
inline std::vector<bool> weight_flags(const ParamVector& p) {
  auto flags = p.bias_flags();
  flags.flip();
  return flags;
}

inline void require_same_shape(const ParamVector& a, const ParamVector& b, const char* what) {
  if (!a.same_shape(b) || a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

enum class Activation { Sigmoid, Identity };

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

/// Hidden layers are always sigmoid; the output layer uses `output_activation`.
struct MlpModel {
  ParamVector params;
  Activation output_activation = Activation::Identity;

  std::size_t input_dim() const { return params.shapes().front().input_dim; }
  std::size_t output_dim() const { return params.shapes().back().output_dim; }
  std::size_t layer_count() const noexcept { return params.layer_count(); }
  std::size_t hidden_count() const noexcept {
    return params.layer_count() == 0 ? 0 : params.layer_count() - 1;
  }
  Activation activation_of(std::size_t layer) const noexcept {
    return layer + 1 == layer_count() ? output_activation : Activation::Sigmoid;
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
inline ParamVector init_uniform(std::vector<LayerShape> shapes, Rng& rng) {
  ParamVector p(std::move(shapes));
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.shapes()[l].input_dim));
    for (auto& w : p.weights(l)) w = uniform(rng, -bound, bound);
    for (auto& b : p.biases(l)) b = uniform(rng, -bound, bound);
  }
  return p;
}

inline MlpModel make_mlp(std::vector<LayerShape> shapes, Activation out, Rng& rng) {
  return MlpModel{init_uniform(std::move(shapes), rng), out};
}

struct SgdConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw std::invalid_argument("SgdConfig: learning_rate must be > 0");
    }
    if (batch_size < 1) throw std::invalid_argument("SgdConfig: batch_size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Batched evaluation.
//
// A Batch is feature-major: feature f of sample b lives at data[f * samples + b].
// Every reduction runs sequentially over the input index, so a sample produces
// identical bits whether it is evaluated alone or inside a larger batch.

struct Batch {
  std::size_t features = 0;
  std::size_t samples = 0;
  std::vector<double> data;

  Batch() = default;
  Batch(std::size_t f, std::size_t n) : features(f), samples(n), data(f * n, 0.0) {}

  double& at(std::size_t f, std::size_t b) { return data[f * samples + b]; }
  double at(std::size_t f, std::size_t b) const { return data[f * samples + b]; }
  std::span<double> row(std::size_t f) { return {data.data() + f * samples, samples}; }
  std::span<const double> row(std::size_t f) const { return {data.data() + f * samples, samples}; }

  static Batch column(std::span<const double> x) {
    Batch b(x.size(), 1);
    std::copy(x.begin(), x.end(), b.data.begin());
    return b;
  }

  std::vector<double> sample(std::size_t b) const {
    std::vector<double> out(features);
    for (std::size_t f = 0; f < features; ++f) out[f] = at(f, b);
    return out;
  }

  void set_sample(std::size_t b, std::span<const double> x) {
    for (std::size_t f = 0; f < features; ++f) at(f, b) = x[f];
  }
};

/// Extra term added to the pre-activation of `layer` (fusion injection).
struct Injection {
  std::size_t layer = 0;
  const Batch* addend = nullptr;
};

struct ForwardTrace {
  // acts[0] is the input, acts[l + 1] the post-activation output of layer l.
  std::vector<Batch> acts;
  const Batch& output() const { return acts.back(); }
};

namespace detail {

// c(m, j) += sum_k a(m, k) * b(k, j), with k summed in ascending order for
// every output element. a(m, k) = a[m * am + k * ak]; b rows are contiguous.
// Lanes of the vector kernel round exactly like the scalar tail as long as
// multiply-add contraction is off (the CMake target sets -ffp-contract=off).
inline void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* a, std::size_t am,
                     std::size_t ak, const double* b, std::size_t bk, double* c, std::size_t cm) {
  using v4 = double __attribute__((vector_size(32)));
  constexpr std::size_t R = 4, T = 8;
  const auto load = [](v4& v, const double* p) { std::memcpy(&v, p, sizeof v); };
  const auto store = [](double* p, const v4& v) { std::memcpy(p, &v, sizeof v); };
  const auto tail = [&](std::size_t m, std::size_t j) {
    double acc = c[m * cm + j];
    for (std::size_t k = 0; k < K; ++k) acc += a[m * am + k * ak] * b[k * bk + j];
    c[m * cm + j] = acc;
  };

  std::size_t m0 = 0;
  for (; m0 + R <= M; m0 += R) {
    double* c0 = c + m0 * cm;
    std::size_t j0 = 0;
    for (; j0 + T <= N; j0 += T) {
      v4 x0, x1, y0, y1, z0, z1, u0, u1;
      load(x0, c0 + j0);
      load(x1, c0 + j0 + 4);
      load(y0, c0 + cm + j0);
      load(y1, c0 + cm + j0 + 4);
      load(z0, c0 + 2 * cm + j0);
      load(z1, c0 + 2 * cm + j0 + 4);
      load(u0, c0 + 3 * cm + j0);
      load(u1, c0 + 3 * cm + j0 + 4);
      const double* ar = a + m0 * am;
      for (std::size_t k = 0; k < K; ++k) {
        v4 b0, b1;
        load(b0, b + k * bk + j0);
        load(b1, b + k * bk + j0 + 4);
        const double* ak0 = ar + k * ak;
        const double a0 = ak0[0], a1 = ak0[am], a2 = ak0[2 * am], a3 = ak0[3 * am];
        x0 += a0 * b0;
        x1 += a0 * b1;
        y0 += a1 * b0;
        y1 += a1 * b1;
        z0 += a2 * b0;
        z1 += a2 * b1;
        u0 += a3 * b0;
        u1 += a3 * b1;
      }
      store(c0 + j0, x0);
      store(c0 + j0 + 4, x1);
      store(c0 + cm + j0, y0);
      store(c0 + cm + j0 + 4, y1);
      store(c0 + 2 * cm + j0, z0);
      store(c0 + 2 * cm + j0 + 4, z1);
      store(c0 + 3 * cm + j0, u0);
      store(c0 + 3 * cm + j0 + 4, u1);
    }
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t j = j0; j < N; ++j) tail(m0 + r, j);
    }
  }
  for (; m0 < M; ++m0) {
    for (std::size_t j = 0; j < N; ++j) tail(m0, j);
  }
}

inline void affine(std::span<const double> w, std::span<const double> bias, const Batch& in,
                   Batch& out) {
  const std::size_t n = in.samples;
  for (std::size_t o = 0; o < out.features; ++o) {
    std::fill(out.data.data() + o * n, out.data.data() + (o + 1) * n, bias[o]);
  }
  gemm_acc(out.features, n, in.features, w.data(), in.features, 1, in.data.data(), n,
           out.data.data(), n);
}

inline void activate(Activation a, Batch& z) {
  if (a == Activation::Sigmoid) {
    for (auto& v : z.data) v = sigmoid(v);
  }
}

}  // namespace detail

inline ForwardTrace forward_trace(const MlpModel& model, const Batch& input,
                                  const Injection* injection = nullptr) {
  if (model.layer_count() == 0) throw std::invalid_argument("forward: model has no layers");
  if (input.features != model.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(input.features) +
                                " features, model expects " + std::to_string(model.input_dim()));
  }
  ForwardTrace trace;
  trace.acts.reserve(model.layer_count() + 1);
  trace.acts.push_back(input);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const auto& shape = model.params.shapes()[l];
    Batch z(shape.output_dim, input.samples);
    detail::affine(model.params.weights(l), model.params.biases(l), trace.acts.back(), z);
    if (injection != nullptr && injection->layer == l) {
      const Batch& add = *injection->addend;
      if (add.features != z.features || add.samples != z.samples) {
        throw std::invalid_argument("forward: injection dims do not match layer " +
                                    std::to_string(l));
      }
      for (std::size_t k = 0; k < z.data.size(); ++k) z.data[k] += add.data[k];
    }
    detail::activate(model.activation_of(l), z);
    trace.acts.push_back(std::move(z));
  }
  return trace;
}

inline Batch forward_batch(const MlpModel& model, const Batch& input) {
  return std::move(forward_trace(model, input).acts.back());
}

inline std::vector<double> forward(const MlpModel& model, std::span<const double> input) {
  if (model.layer_count() > 0 && input.size() != model.input_dim()) {
    throw std::invalid_argument("forward: input length " + std::to_string(input.size()) +
                                " != model input_dim " + std::to_string(model.input_dim()));
  }
  return forward_batch(model, Batch::column(input)).data;
}

struct BackwardOptions {
  bool param_grad = true;
  bool input_grad = false;
  std::optional<std::size_t> injection_layer;
};

struct BackwardResult {
  ParamVector param_grad;  // summed over the batch
  Batch input_grad;
  Batch injection_grad;  // dL/d(pre-activation) at the injection layer
};

/// Back-propagates dL/d(output) through a recorded trace.
inline BackwardResult backward(const MlpModel& model, const ForwardTrace& trace,
                               const Batch& output_grad, const BackwardOptions& opts = {}) {
  const std::size_t layers = model.layer_count();
  const std::size_t n = output_grad.samples;
  BackwardResult res;
  if (opts.param_grad) res.param_grad = ParamVector(model.params.shapes());

  if (!opts.param_grad && !opts.input_grad && !opts.injection_layer) return res;
  const std::size_t stop = (opts.param_grad || opts.input_grad) ? 0 : *opts.injection_layer;

  Batch delta = output_grad;
  for (std::size_t l = layers; l-- > stop;) {
    const Batch& out = trace.acts[l + 1];
    if (model.activation_of(l) == Activation::Sigmoid) {
      for (std::size_t k = 0; k < delta.data.size(); ++k) {
        const double y = out.data[k];
        delta.data[k] *= y * (1.0 - y);
      }
    }
    if (opts.injection_layer && *opts.injection_layer == l) res.injection_grad = delta;

    const Batch& in = trace.acts[l];
    const auto w = model.params.weights(l);
    if (opts.param_grad) {
      auto gw = res.param_grad.weights(l);
      auto gb = res.param_grad.biases(l);
      // Sample-major copy of the layer input; samples are still summed in order.
      std::vector<double> xt(n * in.features);
      for (std::size_t i = 0; i < in.features; ++i) {
        const double* x = in.data.data() + i * n;
        for (std::size_t b = 0; b < n; ++b) xt[b * in.features + i] = x[b];
      }
      detail::gemm_acc(delta.features, in.features, n, delta.data.data(), n, 1, xt.data(),
                       in.features, gw.data(), in.features);
      for (std::size_t o = 0; o < delta.features; ++o) {
        const double* d = delta.data.data() + o * n;
        double bsum = 0.0;
        for (std::size_t b = 0; b < n; ++b) bsum += d[b];
        gb[o] = bsum;
      }
    }
    if (l == stop && !(l == 0 && opts.input_grad)) break;
    Batch next(in.features, n);
    detail::gemm_acc(in.features, n, delta.features, w.data(), 1, in.features, delta.data.data(), n,
                     next.data.data(), n);
    delta = std::move(next);
  }
  if (opts.input_grad) res.input_grad = std::move(delta);
  return res;
}

enum class Loss { MSE };

/// Half squared error summed over output dims, averaged over samples.
inline double mse_loss(const Batch& out, const Batch& target) {
  double total = 0.0;
  for (std::size_t k = 0; k < out.data.size(); ++k) {
    const double r = out.data[k] - target.data[k];
    total += 0.5 * r * r;
  }
  return out.samples == 0 ? 0.0 : total / static_cast<double>(out.samples);
}

namespace detail {

inline void check_trace_finite(const ForwardTrace& trace) {
  for (std::size_t l = 1; l < trace.acts.size(); ++l) {
    for (double v : trace.acts[l].data) {
      if (!std::isfinite(v)) {
        const bool is_out = l + 1 == trace.acts.size();
        throw NumericError("non-finite activation in layer " + std::to_string(l - 1) +
                           (is_out ? " (output)" : " (hidden)"));
      }
    }
  }
}

}  // namespace detail

/// Gradient of the summed half-squared-error loss over a batch.
inline ParamVector batch_gradient(const MlpModel& model, const Batch& input, const Batch& target) {
  if (target.features != model.output_dim() || target.samples != input.samples) {
    throw std::invalid_argument("backprop: target dims do not match model output");
  }
  const auto trace = forward_trace(model, input);
  detail::check_trace_finite(trace);
  Batch g = trace.output();
  for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] -= target.data[k];
  for (double v : g.data) {
    if (!std::isfinite(v * v)) {
      throw NumericError("non-finite loss at layer " + std::to_string(model.layer_count() - 1) +
                         " (output)");
    }
  }
  return std::move(backward(model, trace, g).param_grad);
}

inline ParamVector backprop(const MlpModel& model, std::span<const double> input,
                            std::span<const double> target, Loss = Loss::MSE) {
  if (input.size() != model.input_dim()) {
    throw std::invalid_argument("backprop: input length does not match model");
  }
  if (target.size() != model.output_dim()) {
    throw std::invalid_argument("backprop: target length does not match model");
  }
  return batch_gradient(model, Batch::column(input), Batch::column(target));
}

inline ParamVector sgd_step(const ParamVector& params, const ParamVector& grad,
                            const SgdConfig& cfg) {
  require_same_shape(params, grad, "sgd_step");
  cfg.validate();
  ParamVector out = params;
  auto& v = out.values();
  const auto& g = grad.values();
  for (std::size_t k = 0; k < v.size(); ++k) v[k] -= cfg.learning_rate * g[k];
  return out;
}

inline void scale_in_place(ParamVector& p, double factor) {
  for (auto& v : p.values()) v *= factor;
}

/// Rescales `grad` so its L2 norm is at most `max_norm` (no-op when max_norm <= 0).
inline void clip_norm(ParamVector& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (double v : grad.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) scale_in_place(grad, max_norm / norm);
}

// ---------------------------------------------------------------------------
// Supervised datasets.

struct Sample {
  std::vector<double> input;
  std::vector<double> target;
};
using Dataset = std::vector<Sample>;

/// Samples [start, start+count) of `data`, wrapping around.
inline std::pair<Batch, Batch> cyclic_batch(const Dataset& data, std::size_t start,
                                            std::size_t count) {
  const std::size_t in_dim = data.front().input.size();
  const std::size_t out_dim = data.front().target.size();
  Batch x(in_dim, count), y(out_dim, count);
  for (std::size_t b = 0; b < count; ++b) {
    const auto& s = data[(start + b) % data.size()];
    x.set_sample(b, s.input);
    y.set_sample(b, s.target);
  }
  return {std::move(x), std::move(y)};
}

inline double dataset_loss(const MlpModel& model, const Dataset& data) {
  if (data.empty()) return 0.0;
  auto [x, y] = cyclic_batch(data, 0, data.size());
  return mse_loss(forward_batch(model, x), y);
}

// ---------------------------------------------------------------------------
// Byte format: "LSAI" | version u16 | layer count u16 | (in u32, out u32) per
// layer | f64 values in layer order. All little-endian.

inline constexpr std::uint16_t kModelFormatVersion = 1;

inline std::size_t serialized_size(std::span<const LayerShape> shapes) noexcept {
  return 8 + 8 * shapes.size() + 8 * param_count(shapes);
}

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::size_t reserve = 0) { bytes_.reserve(reserve); }
  void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
  void u8(std::uint8_t v) { put(v, 1); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool expect(const char* s, std::size_t n) {
    need(n, "magic");
    const bool ok = std::equal(s, s + n, bytes_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ += n;
    return ok;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated model bytes while reading ") + what);
    }
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const ParamVector& p) {
  if (p.layer_count() > 0xFFFF) throw std::invalid_argument("serialize: too many layers");
  detail::ByteWriter w(serialized_size(p.shapes()));
  w.raw("LSAI", 4);
  w.u16(kModelFormatVersion);
  w.u16(static_cast<std::uint16_t>(p.layer_count()));
  for (const auto& s : p.shapes()) {
    w.u32(static_cast<std::uint32_t>(s.input_dim));
    w.u32(static_cast<std::uint32_t>(s.output_dim));
  }
  for (double v : p.values()) w.f64(v);
  return w.take();
}

inline ParamVector deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (!r.expect("LSAI", 4)) throw FormatError("bad magic: not an LSAI model");
  const auto version = r.u16("version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  const auto layers = r.u16("layer count");
  std::vector<LayerShape> shapes;
  shapes.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = r.u32("layer input dim");
    const auto out = r.u32("layer output dim");
    shapes.push_back({in, out});
  }
  std::size_t count = 0;
  for (const auto& s : shapes) {
    if (s.input_dim == 0 || s.output_dim == 0) throw FormatError("layer with zero dimension");
    count += s.param_count();
  }
  if (r.remaining() != 8 * count) {
    throw FormatError(r.remaining() < 8 * count ? "truncated model bytes: missing values"
                                                : "trailing bytes after model values");
  }
  std::vector<double> values(count);
  for (auto& v : values) {
    v = r.f64("value");
    if (!std::isfinite(v)) throw FormatError("non-finite value in model bytes");
  }
  try {
    return ParamVector(std::move(shapes), std::move(values));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent layer shapes: ") + e.what());
  }
}

}  // namespace lsai
