#pragma once

// Small deterministic neural-network engine: dense / conv2d / relu / flatten
// layers with a softmax head, cross-entropy backprop and plain SGD.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "seamforge/dataset.hpp"
#include "seamforge/error.hpp"

namespace seamforge {

namespace layer {

// weight is out_dim x in_dim; y = x W^T + b.
template <typename S>
struct Dense {
  int in_dim = 0;
  int out_dim = 0;
  Matrix<S> weight;
  Vector<S> bias;
};

// Valid (unpadded) convolution over HWC input. weight is
// out_channels x (kernel_h * kernel_w * in_channels), inner order (ky, kx, ci).
template <typename S>
struct Conv2d {
  int kernel_h = 0;
  int kernel_w = 0;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Matrix<S> weight;
  Vector<S> bias;
};

struct Relu {};
struct Flatten {};
struct Softmax {};

}  // namespace layer

template <typename S>
using Layer = std::variant<layer::Dense<S>, layer::Conv2d<S>, layer::Relu, layer::Flatten,
                           layer::Softmax>;

// Architecture descriptor used for construction and checkpoints. Dense needs
// only `out`; conv2d needs `out` (channels), kernel and stride.
struct LayerSpec {
  enum class Kind { dense, conv2d, relu, flatten, softmax };
  Kind kind = Kind::relu;
  int out = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;

  static LayerSpec dense(int out) { return {Kind::dense, out, 0, 0, 1}; }
  static LayerSpec conv2d(int out_channels, int kh, int kw, int stride = 1) {
    return {Kind::conv2d, out_channels, kh, kw, stride};
  }
  static LayerSpec relu() { return {Kind::relu}; }
  static LayerSpec flatten() { return {Kind::flatten}; }
  static LayerSpec softmax() { return {Kind::softmax}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline const char* kind_name(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::dense: return "dense";
    case LayerSpec::Kind::conv2d: return "conv2d";
    case LayerSpec::Kind::relu: return "relu";
    case LayerSpec::Kind::flatten: return "flatten";
    case LayerSpec::Kind::softmax: return "softmax";
  }
  return "?";
}

namespace detail {

inline Shape conv_output_shape(const Shape& in, int kh, int kw, int stride, int out_channels) {
  return {(in.height - kh) / stride + 1, (in.width - kw) / stride + 1, out_channels};
}

template <typename S>
std::size_t layer_param_count(const Layer<S>& l) {
  if (auto* d = std::get_if<layer::Dense<S>>(&l)) {
    return static_cast<std::size_t>(d->weight.size() + d->bias.size());
  }
  if (auto* c = std::get_if<layer::Conv2d<S>>(&l)) {
    return static_cast<std::size_t>(c->weight.size() + c->bias.size());
  }
  return 0;
}

template <typename S>
bool has_params(const Layer<S>& l) {
  return std::holds_alternative<layer::Dense<S>>(l) || std::holds_alternative<layer::Conv2d<S>>(l);
}

}  // namespace detail

template <typename S>
class Network {
 public:
  using Scalar = S;

  Network() = default;

  // Validates that consecutive layer shapes are compatible and that the
  // network ends in a softmax over class_count outputs.
  Network(Shape input_shape, std::vector<Layer<S>> layers, int class_count)
      : input_shape_(input_shape), layers_(std::move(layers)), class_count_(class_count) {
    validate();
  }

  [[nodiscard]] const Shape& input_shape() const { return input_shape_; }
  [[nodiscard]] std::size_t input_dim() const { return input_shape_.size(); }
  [[nodiscard]] int class_count() const { return class_count_; }
  [[nodiscard]] const std::vector<Layer<S>>& layers() const { return layers_; }
  [[nodiscard]] std::vector<Layer<S>>& layers() { return layers_; }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t q = 0;
    for (const auto& l : layers_) q += detail::layer_param_count(l);
    return q;
  }

  // Architecture descriptors, one per layer.
  [[nodiscard]] std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) {
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, layer::Dense<S>>) {
              out.push_back(LayerSpec::dense(v.out_dim));
            } else if constexpr (std::is_same_v<T, layer::Conv2d<S>>) {
              out.push_back(LayerSpec::conv2d(v.out_channels, v.kernel_h, v.kernel_w, v.stride));
            } else if constexpr (std::is_same_v<T, layer::Relu>) {
              out.push_back(LayerSpec::relu());
            } else if constexpr (std::is_same_v<T, layer::Flatten>) {
              out.push_back(LayerSpec::flatten());
            } else {
              out.push_back(LayerSpec::softmax());
            }
          },
          l);
    }
    return out;
  }

  // Parameters in layer order; per layer the weight (row-major) then bias.
  [[nodiscard]] Vector<S> flatten_weights() const {
    Vector<S> w(static_cast<Eigen::Index>(param_count()));
    Eigen::Index pos = 0;
    auto put = [&](const auto& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) w[pos++] = m(r, c);
    };
    for (const auto& l : layers_) {
      if (auto* d = std::get_if<layer::Dense<S>>(&l)) {
        put(d->weight);
        put(d->bias);
      } else if (auto* c = std::get_if<layer::Conv2d<S>>(&l)) {
        put(c->weight);
        put(c->bias);
      }
    }
    return w;
  }

  void unflatten_weights(std::span<const S> w) {
    detail::require<ShapeError>(w.size() == param_count(),
                                "unflatten_weights: expected " + std::to_string(param_count()) +
                                    " values, got " + std::to_string(w.size()));
    std::size_t pos = 0;
    auto take = [&](auto& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = w[pos++];
    };
    for (auto& l : layers_) {
      if (auto* d = std::get_if<layer::Dense<S>>(&l)) {
        take(d->weight);
        take(d->bias);
      } else if (auto* c = std::get_if<layer::Conv2d<S>>(&l)) {
        take(c->weight);
        take(c->bias);
      }
    }
  }

  void unflatten_weights(const Vector<S>& w) {
    unflatten_weights(std::span<const S>(w.data(), static_cast<std::size_t>(w.size())));
  }

  template <typename T>
  [[nodiscard]] Network<T> cast() const {
    std::vector<Layer<T>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) {
      std::visit(
          [&](const auto& v) {
            using L = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<L, layer::Dense<S>>) {
              out.emplace_back(layer::Dense<T>{v.in_dim, v.out_dim, v.weight.template cast<T>(),
                                               v.bias.template cast<T>()});
            } else if constexpr (std::is_same_v<L, layer::Conv2d<S>>) {
              out.emplace_back(layer::Conv2d<T>{v.kernel_h, v.kernel_w, v.in_channels,
                                                v.out_channels, v.stride,
                                                v.weight.template cast<T>(),
                                                v.bias.template cast<T>()});
            } else {
              out.emplace_back(v);
            }
          },
          l);
    }
    return Network<T>(input_shape_, std::move(out), class_count_);
  }

  // Output shape after each layer.
  [[nodiscard]] std::vector<Shape> layer_shapes() const {
    std::vector<Shape> shapes;
    Shape cur = input_shape_;
    for (const auto& l : layers_) {
      if (auto* d = std::get_if<layer::Dense<S>>(&l)) {
        cur = Shape::features(d->out_dim);
      } else if (auto* c = std::get_if<layer::Conv2d<S>>(&l)) {
        cur = detail::conv_output_shape(cur, c->kernel_h, c->kernel_w, c->stride, c->out_channels);
      } else if (std::holds_alternative<layer::Flatten>(l)) {
        cur = Shape::features(static_cast<int>(cur.size()));
      }
      shapes.push_back(cur);
    }
    return shapes;
  }

 private:
  void validate() const {
    detail::require<ShapeError>(input_shape_.size() > 0, "network: empty input shape");
    detail::require(class_count_ >= 1, "network: class_count must be positive");
    detail::require<ShapeError>(!layers_.empty() &&
                                    std::holds_alternative<layer::Softmax>(layers_.back()),
                                "network: last layer must be softmax");
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const std::string where = "network: layer " + std::to_string(i) + ": ";
      if (auto* d = std::get_if<layer::Dense<S>>(&l)) {
        detail::require<ShapeError>(cur.flat(), where + "dense layer needs flat input, got " +
                                                    to_string(cur));
        detail::require<ShapeError>(static_cast<std::size_t>(d->in_dim) == cur.size(),
                                    where + "dense in_dim " + std::to_string(d->in_dim) +
                                        " != incoming width " + std::to_string(cur.size()));
        detail::require<ShapeError>(d->out_dim >= 1 && d->weight.rows() == d->out_dim &&
                                        d->weight.cols() == d->in_dim &&
                                        d->bias.size() == d->out_dim,
                                    where + "dense parameter shape mismatch");
        cur = Shape::features(d->out_dim);
      } else if (auto* c = std::get_if<layer::Conv2d<S>>(&l)) {
        detail::require<ShapeError>(c->in_channels == cur.channels,
                                    where + "conv2d in_channels " +
                                        std::to_string(c->in_channels) + " != incoming " +
                                        std::to_string(cur.channels));
        detail::require<ShapeError>(c->stride >= 1 && c->kernel_h >= 1 && c->kernel_w >= 1 &&
                                        c->kernel_h <= cur.height && c->kernel_w <= cur.width,
                                    where + "conv2d kernel does not fit input " + to_string(cur));
        detail::require<ShapeError>(
            c->weight.rows() == c->out_channels &&
                c->weight.cols() == c->kernel_h * c->kernel_w * c->in_channels &&
                c->bias.size() == c->out_channels,
            where + "conv2d parameter shape mismatch");
        cur = detail::conv_output_shape(cur, c->kernel_h, c->kernel_w, c->stride, c->out_channels);
      } else if (std::holds_alternative<layer::Flatten>(l)) {
        cur = Shape::features(static_cast<int>(cur.size()));
      } else if (std::holds_alternative<layer::Softmax>(l)) {
        detail::require<ShapeError>(i + 1 == layers_.size(), where + "softmax must be last");
        detail::require<ShapeError>(cur.flat() && cur.size() == static_cast<std::size_t>(class_count_),
                                    where + "softmax width " + std::to_string(cur.size()) +
                                        " != class_count " + std::to_string(class_count_));
      }
    }
  }

  Shape input_shape_;
  std::vector<Layer<S>> layers_;
  int class_count_ = 0;
};

// He-uniform initialisation, zero biases.
template <typename S = float>
Network<S> build_network(Shape input_shape, const std::vector<LayerSpec>& specs, int class_count,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Layer<S>> layers;
  Shape cur = input_shape;
  auto he = [&](Matrix<S>& w, int fan_in) {
    std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<S>(u(rng));
  };
  for (const auto& s : specs) {
    switch (s.kind) {
      case LayerSpec::Kind::dense: {
        detail::require<ShapeError>(s.out >= 1, "build_network: dense out must be positive");
        const int in = static_cast<int>(cur.size());
        layer::Dense<S> d{in, s.out, Matrix<S>(s.out, in), Vector<S>::Zero(s.out)};
        he(d.weight, in);
        layers.emplace_back(std::move(d));
        cur = Shape::features(s.out);
        break;
      }
      case LayerSpec::Kind::conv2d: {
        detail::require<ShapeError>(s.out >= 1 && s.kernel_h >= 1 && s.kernel_w >= 1 &&
                                        s.stride >= 1,
                                    "build_network: bad conv2d descriptor");
        const int fan_in = s.kernel_h * s.kernel_w * cur.channels;
        layer::Conv2d<S> c{s.kernel_h, s.kernel_w,          cur.channels,
                           s.out,      s.stride,            Matrix<S>(s.out, fan_in),
                           Vector<S>::Zero(s.out)};
        he(c.weight, fan_in);
        cur = detail::conv_output_shape(cur, s.kernel_h, s.kernel_w, s.stride, s.out);
        layers.emplace_back(std::move(c));
        break;
      }
      case LayerSpec::Kind::relu: layers.emplace_back(layer::Relu{}); break;
      case LayerSpec::Kind::flatten:
        layers.emplace_back(layer::Flatten{});
        cur = Shape::features(static_cast<int>(cur.size()));
        break;
      case LayerSpec::Kind::softmax: layers.emplace_back(layer::Softmax{}); break;
    }
  }
  return Network<S>(input_shape, std::move(layers), class_count);
}

// MLP: flatten -> [dense h, relu]* -> dense C -> softmax.
inline std::vector<LayerSpec> mlp_specs(const std::vector<int>& hidden, int class_count) {
  std::vector<LayerSpec> specs{LayerSpec::flatten()};
  for (int h : hidden) {
    specs.push_back(LayerSpec::dense(h));
    specs.push_back(LayerSpec::relu());
  }
  specs.push_back(LayerSpec::dense(class_count));
  specs.push_back(LayerSpec::softmax());
  return specs;
}

// conv(filters@k x k) -> relu -> flatten -> dense C -> softmax.
inline std::vector<LayerSpec> small_cnn_specs(int filters, int kernel, int class_count) {
  return {LayerSpec::conv2d(filters, kernel, kernel), LayerSpec::relu(), LayerSpec::flatten(),
          LayerSpec::dense(class_count), LayerSpec::softmax()};
}

// ---------------------------------------------------------------------------
// Forward / backward

// Inputs of every layer before the softmax head, plus the logits.
template <typename S>
struct ForwardTrace {
  std::vector<Matrix<S>> inputs;
  Matrix<S> logits;
};

namespace detail {

template <typename S>
void im2col(const S* x, const Shape& in, const layer::Conv2d<S>& c, const Shape& out,
            Matrix<S>& cols) {
  cols.resize(static_cast<Eigen::Index>(out.height) * out.width,
              static_cast<Eigen::Index>(c.kernel_h) * c.kernel_w * c.in_channels);
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      S* row = cols.row(oy * out.width + ox).data();
      int k = 0;
      for (int ky = 0; ky < c.kernel_h; ++ky) {
        const int iy = oy * c.stride + ky;
        for (int kx = 0; kx < c.kernel_w; ++kx) {
          const int ix = ox * c.stride + kx;
          const S* px = x + (static_cast<std::size_t>(iy) * in.width + ix) * in.channels;
          for (int ci = 0; ci < c.in_channels; ++ci) row[k++] = px[ci];
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const Matrix<S>& dcols, const Shape& in, const layer::Conv2d<S>& c,
                const Shape& out, S* dx) {
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      const S* row = dcols.row(oy * out.width + ox).data();
      int k = 0;
      for (int ky = 0; ky < c.kernel_h; ++ky) {
        const int iy = oy * c.stride + ky;
        for (int kx = 0; kx < c.kernel_w; ++kx) {
          const int ix = ox * c.stride + kx;
          S* px = dx + (static_cast<std::size_t>(iy) * in.width + ix) * in.channels;
          for (int ci = 0; ci < c.in_channels; ++ci) px[ci] += row[k++];
        }
      }
    }
  }
}

template <typename S>
Matrix<S> conv_forward(const Matrix<S>& x, const Shape& in, const layer::Conv2d<S>& c,
                       const Shape& out) {
  const Eigen::Index n = x.rows();
  Matrix<S> y(n, static_cast<Eigen::Index>(out.size()));
  Matrix<S> cols;
  const Matrix<S> wt = c.weight.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    im2col(x.row(i).data(), in, c, out, cols);
    Eigen::Map<Matrix<S>> yi(y.row(i).data(), cols.rows(), c.out_channels);
    yi.noalias() = cols * wt;
    yi.rowwise() += c.bias.transpose();
  }
  return y;
}

}  // namespace detail

template <typename S>
ForwardTrace<S> trace(const Network<S>& net, const Matrix<S>& batch) {
  detail::require<ShapeError>(static_cast<std::size_t>(batch.cols()) == net.input_dim(),
                              "forward: batch has " + std::to_string(batch.cols()) +
                                  " columns, network expects " + std::to_string(net.input_dim()));
  ForwardTrace<S> t;
  const auto shapes = net.layer_shapes();
  Matrix<S> cur = batch;
  Shape cur_shape = net.input_shape();
  const auto& layers = net.layers();
  for (std::size_t li = 0; li + 1 < layers.size(); ++li) {
    t.inputs.push_back(cur);
    const auto& l = layers[li];
    if (auto* d = std::get_if<layer::Dense<S>>(&l)) {
      Matrix<S> y = cur * d->weight.transpose();
      y.rowwise() += d->bias.transpose();
      cur = std::move(y);
    } else if (auto* c = std::get_if<layer::Conv2d<S>>(&l)) {
      cur = detail::conv_forward(cur, cur_shape, *c, shapes[li]);
    } else if (std::holds_alternative<layer::Relu>(l)) {
      cur = cur.cwiseMax(S(0));
    }
    cur_shape = shapes[li];
  }
  t.logits = std::move(cur);
  return t;
}

template <typename S>
Matrix<S> logits(const Network<S>& net, const Matrix<S>& batch) {
  return trace(net, batch).logits;
}

template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& z) {
  Matrix<S> p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const S m = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Probability matrix n x C.
template <typename S>
Matrix<S> forward(const Network<S>& net, const Matrix<S>& batch) {
  return softmax_rows(logits(net, batch));
}

// Gradient of sum_i <d_logits_i, logits_i> w.r.t. the flat parameter vector.
template <typename S>
Vector<S> backward(const Network<S>& net, const ForwardTrace<S>& t, const Matrix<S>& d_logits) {
  const auto& layers = net.layers();
  const auto shapes = net.layer_shapes();
  Vector<S> grad(static_cast<Eigen::Index>(net.param_count()));
  // Offsets of each layer's block in the flat vector.
  std::vector<Eigen::Index> offset(layers.size(), 0);
  {
    Eigen::Index pos = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      offset[i] = pos;
      pos += static_cast<Eigen::Index>(detail::layer_param_count(layers[i]));
    }
  }
  Matrix<S> g = d_logits;
  for (std::size_t li = layers.size() - 1; li-- > 0;) {
    const Matrix<S>& x = t.inputs[li];
    const Shape in_shape = li == 0 ? net.input_shape() : shapes[li - 1];
    const auto& l = layers[li];
    if (auto* d = std::get_if<layer::Dense<S>>(&l)) {
      Eigen::Map<Matrix<S>> gw(grad.data() + offset[li], d->out_dim, d->in_dim);
      gw.noalias() = g.transpose() * x;
      grad.segment(offset[li] + d->weight.size(), d->out_dim) = g.colwise().sum().transpose();
      if (li > 0) g = g * d->weight;
    } else if (auto* c = std::get_if<layer::Conv2d<S>>(&l)) {
      const Shape& out_shape = shapes[li];
      Eigen::Map<Matrix<S>> gw(grad.data() + offset[li], c->weight.rows(), c->weight.cols());
      gw.setZero();
      Vector<S> gb = Vector<S>::Zero(c->out_channels);
      Matrix<S> gx = li > 0 ? Matrix<S>::Zero(x.rows(), x.cols()) : Matrix<S>();
      Matrix<S> cols;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        detail::im2col(x.row(i).data(), in_shape, *c, out_shape, cols);
        Eigen::Map<const Matrix<S>> gi(g.row(i).data(), cols.rows(), c->out_channels);
        gw.noalias() += gi.transpose() * cols;
        gb += gi.colwise().sum().transpose();
        if (li > 0) {
          Matrix<S> dcols = gi * c->weight;
          detail::col2im_add(dcols, in_shape, *c, out_shape, gx.row(i).data());
        }
      }
      grad.segment(offset[li] + c->weight.size(), c->out_channels) = gb;
      if (li > 0) g = std::move(gx);
    } else if (std::holds_alternative<layer::Relu>(l)) {
      g = (x.array() > S(0)).select(g, S(0));
    }
  }
  return grad;
}

struct LossAndGrad {
  double loss = 0.0;
  Vector<double> grad;
};

namespace detail {

inline void check_labels(std::span<const int> labels, int class_count) {
  for (int y : labels) {
    require(y >= 0 && y < class_count, "label " + std::to_string(y) + " outside [0, " +
                                           std::to_string(class_count) + ")");
  }
}

// Mean cross-entropy and d(loss)/d(logits).
template <typename S>
double cross_entropy(const Matrix<S>& z, std::span<const int> labels, Matrix<S>& d_logits) {
  const auto n = z.rows();
  d_logits.resize(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const S m = z.row(i).maxCoeff();
    const auto e = (z.row(i).array() - m).exp();
    const S sum = e.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    loss += static_cast<double>(std::log(sum) - (z(i, y) - m));
    d_logits.row(i) = e / sum;
    d_logits(i, y) -= S(1);
  }
  d_logits /= static_cast<S>(n);
  return loss / static_cast<double>(n);
}

}  // namespace detail

// Mean cross-entropy loss and its gradient over the flat parameter vector.
template <typename S>
std::pair<double, Vector<S>> loss_and_grad_native(const Network<S>& net, const Matrix<S>& batch,
                                                  std::span<const int> labels) {
  detail::require<ShapeError>(static_cast<std::size_t>(batch.rows()) == labels.size(),
                              "loss_and_grad: batch rows != label count");
  detail::require<ShapeError>(!labels.empty(), "loss_and_grad: empty batch");
  detail::check_labels(labels, net.class_count());
  const auto t = trace(net, batch);
  Matrix<S> dz;
  const double loss = detail::cross_entropy(t.logits, labels, dz);
  return {loss, backward(net, t, dz)};
}

// 64-bit evaluation of loss and gradient regardless of the stored precision.
template <typename S>
LossAndGrad loss_and_grad(const Network<S>& net, const Matrix<S>& batch,
                          std::span<const int> labels) {
  if constexpr (std::is_same_v<S, double>) {
    auto [loss, g] = loss_and_grad_native(net, batch, labels);
    return {loss, std::move(g)};
  } else {
    auto [loss, g] = loss_and_grad_native(net.template cast<double>(),
                                          Matrix<double>(batch.template cast<double>()), labels);
    return {loss, std::move(g)};
  }
}

// Gradient of the pre-softmax logit `class_index` for one input: the NTK
// feature map phi(x) at the network's current weights.
template <typename S>
Vector<S> per_example_gradient(const Network<S>& anchor, std::span<const S> x, int class_index) {
  detail::require<ShapeError>(x.size() == anchor.input_dim(),
                              "per_example_gradient: input has " + std::to_string(x.size()) +
                                  " values, network expects " +
                                  std::to_string(anchor.input_dim()));
  detail::require(class_index >= 0 && class_index < anchor.class_count(),
                  "per_example_gradient: class index out of range");
  Matrix<S> row(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), row.data());
  const auto t = trace(anchor, row);
  Matrix<S> dz = Matrix<S>::Zero(1, anchor.class_count());
  dz(0, class_index) = S(1);
  return backward(anchor, t, dz);
}

// ---------------------------------------------------------------------------
// Prediction and training

// argmax per row, ties to the lowest index.
template <typename S>
std::vector<int> argmax_rows(const Matrix<S>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j)
      if (m(i, j) > m(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

template <typename S>
Matrix<S> rows_as(const LabeledDataset& data, Eigen::Index begin, Eigen::Index count) {
  if constexpr (std::is_same_v<S, float>) {
    return data.inputs.middleRows(begin, count);
  } else {
    return data.inputs.middleRows(begin, count).template cast<S>();
  }
}

template <typename S>
std::vector<int> predict(const Network<S>& net, const LabeledDataset& data) {
  constexpr Eigen::Index chunk = 1024;
  std::vector<int> out;
  out.reserve(data.size());
  const auto n = static_cast<Eigen::Index>(data.size());
  for (Eigen::Index b = 0; b < n; b += chunk) {
    const auto cnt = std::min(chunk, n - b);
    const auto p = argmax_rows(logits(net, rows_as<S>(data, b, cnt)));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// Fraction of samples whose argmax prediction equals the label.
template <typename S>
double evaluate_accuracy(const Network<S>& net, const LabeledDataset& data) {
  detail::require(!data.empty(), "evaluate_accuracy: empty dataset");
  const auto pred = predict(net, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    detail::require(learning_rate > 0.0 && std::isfinite(learning_rate),
                    "train: learning_rate must be positive");
    detail::require(batch_size >= 1, "train: batch_size must be >= 1");
  }
};

struct EpochStats {
  double loss = 0.0;      // mean over samples of the mini-batch losses
  double accuracy = 0.0;  // running training accuracy within the epoch
};

template <typename S>
struct TrainResult {
  Network<S> network;
  std::vector<EpochStats> history;
};

// In-place Fisher-Yates.
inline void fisher_yates(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

// One pass of mini-batch SGD over `data`.
template <typename S>
EpochStats sgd_epoch(Network<S>& net, const LabeledDataset& data, const TrainConfig& cfg,
                     std::mt19937_64& rng) {
  cfg.validate();
  detail::require(!data.empty(), "train: empty dataset");
  detail::require<ShapeError>(data.dim() == net.input_dim(),
                              "train: dataset width does not match network input");
  detail::check_labels(data.labels, net.class_count());

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (cfg.shuffle) fisher_yates(order, rng);

  Vector<S> w = net.flatten_weights();
  Matrix<S> batch;
  std::vector<int> labels;
  EpochStats stats;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t cnt = std::min(cfg.batch_size, order.size() - start);
    batch.resize(static_cast<Eigen::Index>(cnt), static_cast<Eigen::Index>(data.dim()));
    labels.resize(cnt);
    for (std::size_t r = 0; r < cnt; ++r) {
      const auto src = static_cast<Eigen::Index>(order[start + r]);
      batch.row(static_cast<Eigen::Index>(r)) = data.inputs.row(src).template cast<S>();
      labels[r] = data.labels[order[start + r]];
    }
    const auto t = trace(net, batch);
    Matrix<S> dz;
    const double loss = detail::cross_entropy(t.logits, labels, dz);
    const auto pred = argmax_rows(t.logits);
    for (std::size_t r = 0; r < cnt; ++r) correct += pred[r] == labels[r];
    stats.loss += loss * static_cast<double>(cnt);
    w -= static_cast<S>(cfg.learning_rate) * backward(net, t, dz);
    net.unflatten_weights(w);
  }
  stats.loss /= static_cast<double>(data.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return stats;
}

// Plain SGD for cfg.max_epochs epochs. Deterministic in (net, data, cfg).
template <typename S>
TrainResult<S> sgd_train(Network<S> net, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  detail::require(!data.empty(), "train: empty dataset");
  std::mt19937_64 rng(cfg.seed);
  TrainResult<S> out{std::move(net), {}};
  for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
    out.history.push_back(sgd_epoch(out.network, data, cfg, rng));
  }
  return out;
}

// Activations after each parameterised layer (after its relu when one
// follows), input to output. Used for representation similarity.
template <typename S>
std::vector<Matrix<S>> layer_activations(const Network<S>& net, const Matrix<S>& batch) {
  const auto t = trace(net, batch);
  const auto& layers = net.layers();
  std::vector<Matrix<S>> out;
  for (std::size_t li = 0; li + 1 < layers.size(); ++li) {
    if (!detail::has_params(layers[li])) continue;
    const Matrix<S>& produced = li + 1 < t.inputs.size() ? t.inputs[li + 1] : t.logits;
    if (li + 1 < layers.size() - 1 && std::holds_alternative<layer::Relu>(layers[li + 1])) {
      out.push_back(li + 2 < t.inputs.size() ? t.inputs[li + 2] : t.logits);
    } else {
      out.push_back(produced);
    }
  }
  return out;
}

}  // namespace seamforge
