#pragma once

// Layer primitives of the landmark network: convolution, 2x2 max-pooling,
// tanh and fully-connected layers with their exact adjoints, plus SGD.
//
// Everything is templated on the storage scalar. Dot products always
// accumulate in double, whatever the storage type.

#include <Eigen/Core>

#include <algorithm>

#include <cmath>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "sdn/error.hpp"
#include "sdn/tensor.hpp"

namespace sdn {

using AccumMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using AccumVector = Eigen::VectorXd;

template <typename Scalar>
struct BasicConvParams {
  BasicTensor<Scalar> weights;  // [out_channels, in_channels, k, k]
  BasicTensor<Scalar> bias;     // [out_channels]
  int stride = 1;
  int padding = 0;

  int out_channels() const { return weights.dim(0); }
  int in_channels() const { return weights.dim(1); }
  int kernel_size() const { return weights.dim(2); }

  void validate() const {
    if (weights.rank() != 4 || weights.dim(2) != weights.dim(3))
      throw ShapeError("conv weights must be [out,in,k,k], got " + to_string(weights.shape()));
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
      throw ShapeError("conv bias " + to_string(bias.shape()) + " does not match " +
                       std::to_string(weights.dim(0)) + " output channels");
    if (stride < 1) throw ShapeError("conv stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("conv padding must be >= 0, got " + std::to_string(padding));
  }

  template <typename Other>
  BasicConvParams<Other> cast() const {
    return {weights.template cast<Other>(), bias.template cast<Other>(), stride, padding};
  }
  friend bool operator==(const BasicConvParams&, const BasicConvParams&) = default;
};

template <typename Scalar>
struct BasicFcParams {
  BasicTensor<Scalar> weights;  // [out_dim, in_dim]
  BasicTensor<Scalar> bias;     // [out_dim]

  int out_dim() const { return weights.dim(0); }
  int in_dim() const { return weights.dim(1); }

  void validate() const {
    if (weights.rank() != 2)
      throw ShapeError("fc weights must be [out,in], got " + to_string(weights.shape()));
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
      throw ShapeError("fc bias " + to_string(bias.shape()) + " does not match out_dim " +
                       std::to_string(weights.dim(0)));
  }

  template <typename Other>
  BasicFcParams<Other> cast() const {
    return {weights.template cast<Other>(), bias.template cast<Other>()};
  }
  friend bool operator==(const BasicFcParams&, const BasicFcParams&) = default;
};

template <typename Scalar>
struct LayerGrads {
  BasicTensor<Scalar> d_weights;
  BasicTensor<Scalar> d_bias;
  BasicTensor<Scalar> d_input;
};

using ConvParams = BasicConvParams<float>;
using FcParams = BasicFcParams<float>;

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip) via im2col + GEMM.

struct ConvGeometry {
  int channels, height, width;
  int kernel, stride, padding;
  int out_height, out_width;
};

namespace detail {

inline int conv_output_extent(int extent, int kernel, int stride, int padding, const char* axis) {
  const int span = extent + 2 * padding - kernel;
  if (span < 0)
    throw ShapeError(std::string("conv input ") + axis + " " + std::to_string(extent) +
                     " with padding " + std::to_string(padding) + " is smaller than kernel " +
                     std::to_string(kernel));
  if (span % stride != 0)
    throw ShapeError(std::string("conv output ") + axis + " is not an integer: (" +
                     std::to_string(extent) + " + 2*" + std::to_string(padding) + " - " +
                     std::to_string(kernel) + ") / " + std::to_string(stride));
  return span / stride + 1;
}

}  // namespace detail

template <typename Scalar>
ConvGeometry conv_geometry(const Shape& input, const BasicConvParams<Scalar>& params) {
  params.validate();
  if (input.size() != 3)
    throw ShapeError("conv input must be [channels,height,width], got " + to_string(input));
  if (input[0] != params.in_channels())
    throw ShapeError("conv input has " + std::to_string(input[0]) + " channels, kernel expects " +
                     std::to_string(params.in_channels()));
  const int k = params.kernel_size();
  return {input[0],
          input[1],
          input[2],
          k,
          params.stride,
          params.padding,
          detail::conv_output_extent(input[1], k, params.stride, params.padding, "height"),
          detail::conv_output_extent(input[2], k, params.stride, params.padding, "width")};
}

namespace detail {

// im2col restricted to output rows [oy0, oy1); `cols` must be
// fan x ((oy1 - oy0) * out_width).
template <typename Scalar>
void im2col_rows(const BasicTensor<Scalar>& input, const ConvGeometry& g, int oy0, int oy1, AccumMatrix& cols) {
  cols.setZero();
  const int rows = oy1 - oy0;
  Eigen::Index row = 0;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx, ++row) {
        double* dst = cols.row(row).data();
        for (int r = 0; r < rows; ++r) {
          const int iy = (oy0 + r) * g.stride + ky - g.padding;
          if (iy < 0 || iy >= g.height) continue;
          const Scalar* src = input.data() + (Eigen::Index(c) * g.height + iy) * g.width;
          double* out = dst + Eigen::Index(r) * g.out_width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride + kx - g.padding;
            if (ix >= 0 && ix < g.width) out[ox] = static_cast<double>(src[ix]);
          }
        }
      }
}

// Adds the columns of output rows [oy0, oy1) back onto the input grid.
inline void col2im_rows(const AccumMatrix& cols, const ConvGeometry& g, int oy0, int oy1, double* acc) {
  const int rows = oy1 - oy0;
  Eigen::Index row = 0;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx, ++row) {
        const double* src = cols.row(row).data();
        for (int r = 0; r < rows; ++r) {
          const int iy = (oy0 + r) * g.stride + ky - g.padding;
          if (iy < 0 || iy >= g.height) continue;
          double* dst = acc + (Eigen::Index(c) * g.height + iy) * g.width;
          const double* in = src + Eigen::Index(r) * g.out_width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride + kx - g.padding;
            if (ix >= 0 && ix < g.width) dst[ix] += in[ox];
          }
        }
      }
}

// Output rows per tile, keeping a column tile near 32k doubles.
inline int conv_tile_rows(const ConvGeometry& g) {
  const Eigen::Index fan = Eigen::Index(g.channels) * g.kernel * g.kernel;
  const Eigen::Index per_row = fan * g.out_width;
  return static_cast<int>(std::clamp<Eigen::Index>(32768 / std::max<Eigen::Index>(per_row, 1), 1, g.out_height));
}

}  // namespace detail

// Rows index (channel, ky, kx); columns index output pixels.
template <typename Scalar>
AccumMatrix im2col(const BasicTensor<Scalar>& input, const ConvGeometry& g) {
  AccumMatrix cols(Eigen::Index(g.channels) * g.kernel * g.kernel, Eigen::Index(g.out_height) * g.out_width);
  detail::im2col_rows(input, g, 0, g.out_height, cols);
  return cols;
}

template <typename Scalar>
BasicTensor<Scalar> col2im(const AccumMatrix& cols, const ConvGeometry& g) {
  AccumVector acc = AccumVector::Zero(Eigen::Index(g.channels) * g.height * g.width);
  detail::col2im_rows(cols, g, 0, g.out_height, acc.data());
  return BasicTensor<Scalar>({g.channels, g.height, g.width}, acc.template cast<Scalar>().eval());
}

template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicConvParams<Scalar>& params) {
  const ConvGeometry g = conv_geometry(input.shape(), params);
  const int out_c = params.out_channels();
  const Eigen::Index fan = Eigen::Index(g.channels) * g.kernel * g.kernel;
  const Eigen::Index pixels = Eigen::Index(g.out_height) * g.out_width;
  const AccumMatrix kernel = params.weights.as_matrix(out_c, fan).template cast<double>();
  const AccumVector bias = params.bias.values().template cast<double>();

  BasicTensor<Scalar> result({out_c, g.out_height, g.out_width});
  auto out = result.as_matrix(out_c, pixels);
  const int tile = detail::conv_tile_rows(g);
  AccumMatrix cols, acc;
  for (int oy0 = 0; oy0 < g.out_height; oy0 += tile) {
    const int oy1 = std::min(g.out_height, oy0 + tile);
    const Eigen::Index n = Eigen::Index(oy1 - oy0) * g.out_width;
    cols.resize(fan, n);
    detail::im2col_rows(input, g, oy0, oy1, cols);
    acc.resize(out_c, n);
    acc.noalias() = kernel * cols;
    acc.colwise() += bias;
    out.middleCols(Eigen::Index(oy0) * g.out_width, n) = acc.template cast<Scalar>();
  }
  return result;
}

template <typename Scalar>
LayerGrads<Scalar> conv2d_grad(const BasicTensor<Scalar>& input, const BasicConvParams<Scalar>& params,
                               const BasicTensor<Scalar>& upstream) {
  const ConvGeometry g = conv_geometry(input.shape(), params);
  const Shape expected{params.out_channels(), g.out_height, g.out_width};
  if (upstream.shape() != expected)
    throw ShapeError("conv upstream gradient " + to_string(upstream.shape()) + " != output " +
                     to_string(expected));
  const int out_c = params.out_channels();
  const Eigen::Index fan = Eigen::Index(g.channels) * g.kernel * g.kernel;
  const Eigen::Index pixels = Eigen::Index(g.out_height) * g.out_width;

  const AccumMatrix kernel = params.weights.as_matrix(out_c, fan).template cast<double>();
  const auto up_all = upstream.as_matrix(out_c, pixels);
  AccumMatrix d_kernel = AccumMatrix::Zero(out_c, fan);
  AccumVector d_bias = AccumVector::Zero(out_c);
  AccumVector d_in = AccumVector::Zero(Eigen::Index(g.channels) * g.height * g.width);

  const int tile = detail::conv_tile_rows(g);
  AccumMatrix cols, up, d_cols;
  for (int oy0 = 0; oy0 < g.out_height; oy0 += tile) {
    const int oy1 = std::min(g.out_height, oy0 + tile);
    const Eigen::Index n = Eigen::Index(oy1 - oy0) * g.out_width;
    cols.resize(fan, n);
    detail::im2col_rows(input, g, oy0, oy1, cols);
    up = up_all.middleCols(Eigen::Index(oy0) * g.out_width, n).template cast<double>();
    d_kernel.noalias() += up * cols.transpose();
    d_bias += up.rowwise().sum();
    d_cols.resize(fan, n);
    d_cols.noalias() = kernel.transpose() * up;
    detail::col2im_rows(d_cols, g, oy0, oy1, d_in.data());
  }

  LayerGrads<Scalar> grads;
  grads.d_weights = BasicTensor<Scalar>(params.weights.shape());
  grads.d_weights.as_matrix(out_c, fan) = d_kernel.template cast<Scalar>();
  grads.d_bias = BasicTensor<Scalar>(params.bias.shape(), d_bias.template cast<Scalar>().eval());
  grads.d_input = BasicTensor<Scalar>(input.shape(), d_in.template cast<Scalar>().eval());
  return grads;
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 max-pooling. Odd trailing rows/columns form partial windows
// (the missing cells act as -inf). Ties go to the lowest row-major index.

struct ArgmaxRecord {
  Shape input_shape;
  std::vector<Eigen::Index> winners;  // flat input index per output element
};

template <typename Scalar>
struct PoolResult {
  BasicTensor<Scalar> output;
  ArgmaxRecord record;
};

template <typename Scalar>
PoolResult<Scalar> maxpool2x2(const BasicTensor<Scalar>& input) {
  if (input.rank() != 3)
    throw ShapeError("maxpool input must be [channels,height,width], got " + to_string(input.shape()));
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;

  PoolResult<Scalar> result{BasicTensor<Scalar>({c, oh, ow}), {input.shape(), {}}};
  result.record.winners.resize(static_cast<std::size_t>(result.output.size()));
  Eigen::Index o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++o) {
        Eigen::Index best = -1;
        Scalar best_value = -std::numeric_limits<Scalar>::infinity();
        for (int dy = 0; dy < 2; ++dy) {
          const int y = 2 * oy + dy;
          if (y >= h) break;
          for (int dx = 0; dx < 2; ++dx) {
            const int x = 2 * ox + dx;
            if (x >= w) break;
            const Eigen::Index idx = (Eigen::Index(ch) * h + y) * w + x;
            if (best < 0 || input[idx] > best_value) {
              best = idx;
              best_value = input[idx];
            }
          }
        }
        result.output[o] = best_value;
        result.record.winners[static_cast<std::size_t>(o)] = best;
      }
  return result;
}

template <typename Scalar>
BasicTensor<Scalar> maxpool2x2_grad(const ArgmaxRecord& record, const BasicTensor<Scalar>& upstream) {
  if (static_cast<std::size_t>(upstream.size()) != record.winners.size())
    throw ShapeError("maxpool upstream gradient has " + std::to_string(upstream.size()) +
                     " elements, record has " + std::to_string(record.winners.size()));
  BasicTensor<Scalar> d_input(record.input_shape);
  for (std::size_t i = 0; i < record.winners.size(); ++i)
    d_input[record.winners[i]] += upstream[static_cast<Eigen::Index>(i)];
  return d_input;
}

// ---------------------------------------------------------------------------

namespace detail {

// tanh(|z|) = 2 / (1 + e^-2|z|) - 1 in double, with a series near 0, rounded
// once to the storage type: odd and nondecreasing.
template <typename Scalar>
void tanh_via_double(const Scalar* src, Scalar* dst, Eigen::Index n) {
  constexpr Eigen::Index kBlock = 256;
  Eigen::Array<double, kBlock, 1> a, e;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index m = std::min(kBlock, n - start);
    for (Eigen::Index i = 0; i < m; ++i) a[i] = std::abs(static_cast<double>(src[start + i]));
    e.head(m) = (-2.0 * a.head(m)).exp();
    for (Eigen::Index i = 0; i < m; ++i) {
      const double x = a[i], x2 = x * x;
      const double t = x < 0x1p-7 ? x * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0))) : 2.0 / (1.0 + e[i]) - 1.0;
      dst[start + i] = static_cast<Scalar>(src[start + i] < 0 ? -t : t);
    }
  }
}

}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> tanh_activation(const BasicTensor<Scalar>& input) {
  if constexpr (std::is_same_v<Scalar, double>) {
    return BasicTensor<Scalar>(input.shape(), input.values().array().tanh().matrix().eval());
  } else {
    BasicTensor<Scalar> out(input.shape());
    detail::tanh_via_double(input.values().data(), out.values().data(), input.size());
    return out;
  }
}

// Takes the forward *output*: d tanh(z)/dz = 1 - tanh(z)^2.
template <typename Scalar>
BasicTensor<Scalar> tanh_grad(const BasicTensor<Scalar>& output, const BasicTensor<Scalar>& upstream) {
  if (output.shape() != upstream.shape())
    throw ShapeError("tanh upstream gradient " + to_string(upstream.shape()) + " != output " +
                     to_string(output.shape()));
  return BasicTensor<Scalar>(
      output.shape(),
      (upstream.values().array() * (Scalar(1) - output.values().array().square())).matrix().eval());
}

// ---------------------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> fully_connected(const BasicTensor<Scalar>& input, const BasicFcParams<Scalar>& params) {
  params.validate();
  if (input.size() != params.in_dim())
    throw ShapeError("fc input has " + std::to_string(input.size()) + " elements, layer expects " +
                     std::to_string(params.in_dim()));
  const auto w = params.weights.as_matrix(params.out_dim(), params.in_dim());
  const AccumVector x = input.values().template cast<double>();
  BasicTensor<Scalar> out({params.out_dim()});
  for (int o = 0; o < params.out_dim(); ++o)
    out[o] = static_cast<Scalar>(w.row(o).template cast<double>().dot(x.transpose()) + double(params.bias[o]));
  return out;
}

template <typename Scalar>
LayerGrads<Scalar> fc_grad(const BasicTensor<Scalar>& input, const BasicFcParams<Scalar>& params,
                           const BasicTensor<Scalar>& upstream) {
  params.validate();
  if (input.size() != params.in_dim())
    throw ShapeError("fc input has " + std::to_string(input.size()) + " elements, layer expects " +
                     std::to_string(params.in_dim()));
  if (upstream.size() != params.out_dim())
    throw ShapeError("fc upstream gradient has " + std::to_string(upstream.size()) +
                     " elements, layer has out_dim " + std::to_string(params.out_dim()));
  const auto w = params.weights.as_matrix(params.out_dim(), params.in_dim());
  const AccumVector x = input.values().template cast<double>();

  LayerGrads<Scalar> grads;
  grads.d_weights = BasicTensor<Scalar>(params.weights.shape());
  auto dw = grads.d_weights.as_matrix(params.out_dim(), params.in_dim());
  AccumVector d_in = AccumVector::Zero(params.in_dim());
  for (int o = 0; o < params.out_dim(); ++o) {
    const double u = upstream[o];
    dw.row(o) = (u * x.transpose()).template cast<Scalar>();
    d_in += u * w.row(o).transpose().template cast<double>();
  }
  grads.d_bias = upstream.reshaped(params.bias.shape());
  grads.d_input = BasicTensor<Scalar>(input.shape(), d_in.template cast<Scalar>().eval());
  return grads;
}

// ---------------------------------------------------------------------------

// params <- params - lr * grads
template <typename Scalar>
void sgd_update(BasicTensor<Scalar>& params, const BasicTensor<Scalar>& grads, double lr) {
  if (params.shape() != grads.shape())
    throw ShapeError("sgd: gradient " + to_string(grads.shape()) + " != parameter " +
                     to_string(params.shape()));
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw SpecError("sgd: learning rate must be finite and >= 0, got " + std::to_string(lr));
  params.values() = (params.values().template cast<double>() - lr * grads.values().template cast<double>())
                        .template cast<Scalar>();
}

// Momentum form used by Caffe: v <- momentum * v + lr * grads; params <- params - v.
template <typename Scalar>
void sgd_momentum_update(BasicTensor<Scalar>& params, const BasicTensor<Scalar>& grads,
                         BasicTensor<Scalar>& velocity, double lr, double momentum) {
  if (params.shape() != grads.shape() || params.shape() != velocity.shape())
    throw ShapeError("sgd: parameter " + to_string(params.shape()) + ", gradient " +
                     to_string(grads.shape()) + " and velocity " + to_string(velocity.shape()) +
                     " must match");
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw SpecError("sgd: learning rate must be finite and >= 0, got " + std::to_string(lr));
  velocity.values() = (momentum * velocity.values().template cast<double>() +
                       lr * grads.values().template cast<double>())
                          .template cast<Scalar>();
  params.values() = (params.values().template cast<double>() - velocity.values().template cast<double>())
                        .template cast<Scalar>();
}

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), one element at a time.
template <typename Scalar, typename Fn>
BasicTensor<Scalar> numeric_gradient(Fn&& f, const BasicTensor<Scalar>& x, double eps) {
  if (!(eps > 0.0)) throw SpecError("numeric_gradient: eps must be > 0");
  BasicTensor<Scalar> probe = x;
  BasicTensor<Scalar> grad(x.shape());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar original = probe[i];
    // In float storage x +/- eps is rounded; divide by the step actually taken.
    const Scalar up = static_cast<Scalar>(original + eps);
    const Scalar down = static_cast<Scalar>(original - eps);
    probe[i] = up;
    const double plus = f(static_cast<const BasicTensor<Scalar>&>(probe));
    probe[i] = down;
    const double minus = f(static_cast<const BasicTensor<Scalar>&>(probe));
    probe[i] = original;
    grad[i] = static_cast<Scalar>((plus - minus) / (double(up) - double(down)));
  }
  return grad;
}

}  // namespace sdn
