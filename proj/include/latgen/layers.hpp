#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "latgen/error.hpp"
#include "latgen/tensor.hpp"

namespace latgen {

// weights: [out, in] row-major.
struct FullyConnected {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::vector<float> weights;
  std::vector<float> bias;
};

// weights: [in_channels, out_channels, kernel_h, kernel_w] row-major.
struct TransposedConv {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t output_padding = 0;
  std::vector<float> weights;
  std::vector<float> bias;
};

// Inference-only batch normalization over running statistics.
struct BatchNormInfer {
  std::size_t channels = 0;
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  double epsilon = 1e-5;
};

enum class ActivationKind { ReLU, LeakyReLU, Tanh };

struct Activation {
  ActivationKind kind = ActivationKind::ReLU;
  double alpha = 0.2;  // LeakyReLU only
};

struct Reshape {
  Shape target_shape;
};

using LayerSpec = std::variant<FullyConnected, TransposedConv, BatchNormInfer, Activation, Reshape>;

inline std::string layer_name(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, FullyConnected>) return "fully_connected";
        if constexpr (std::is_same_v<T, TransposedConv>) return "conv_transpose";
        if constexpr (std::is_same_v<T, BatchNormInfer>) return "batchnorm";
        if constexpr (std::is_same_v<T, Activation>) return "activation";
        if constexpr (std::is_same_v<T, Reshape>) return "reshape";
      },
      layer);
}

namespace detail {

inline void require_length(const std::vector<float>& v, std::size_t expected, const char* what) {
  if (v.size() != expected) {
    fail(ErrorCode::Validation, std::string(what) + " has " + std::to_string(v.size()) + " values, expected " +
                                    std::to_string(expected));
  }
}

inline std::int64_t conv_transpose_extent(std::int64_t in, std::int64_t kernel, const TransposedConv& layer) {
  return (in - 1) * layer.stride - 2 * layer.padding + kernel + layer.output_padding;
}

}  // namespace detail

// Checks parameter arrays against declared sizes and hyperparameter ranges.
inline void validate_parameters(const LayerSpec& layer) {
  std::visit(
      [](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, FullyConnected>) {
          require(l.in_features > 0 && l.out_features > 0, ErrorCode::Validation, "fully_connected sizes must be positive");
          detail::require_length(l.weights, l.in_features * l.out_features, "fully_connected weight");
          detail::require_length(l.bias, l.out_features, "fully_connected bias");
        } else if constexpr (std::is_same_v<T, TransposedConv>) {
          require(l.in_channels > 0 && l.out_channels > 0 && l.kernel_h > 0 && l.kernel_w > 0, ErrorCode::Validation,
                  "conv_transpose sizes must be positive");
          require(l.stride >= 1, ErrorCode::Validation, "conv_transpose stride must be >= 1");
          require(l.padding >= 0, ErrorCode::Validation, "conv_transpose padding must be >= 0");
          require(l.output_padding >= 0 && l.output_padding < l.stride, ErrorCode::Validation,
                  "conv_transpose output_padding must be in [0, stride)");
          detail::require_length(l.weights, l.in_channels * l.out_channels * l.kernel_h * l.kernel_w,
                                 "conv_transpose weight");
          detail::require_length(l.bias, l.out_channels, "conv_transpose bias");
        } else if constexpr (std::is_same_v<T, BatchNormInfer>) {
          require(l.channels > 0, ErrorCode::Validation, "batchnorm channels must be positive");
          require(l.epsilon >= 0.0 && std::isfinite(l.epsilon), ErrorCode::Validation, "batchnorm epsilon must be >= 0");
          detail::require_length(l.gamma, l.channels, "batchnorm gamma");
          detail::require_length(l.beta, l.channels, "batchnorm beta");
          detail::require_length(l.running_mean, l.channels, "batchnorm running_mean");
          detail::require_length(l.running_var, l.channels, "batchnorm running_var");
          for (float v : l.running_var) require(v >= 0.0f, ErrorCode::Validation, "batchnorm running_var must be >= 0");
        } else if constexpr (std::is_same_v<T, Activation>) {
          require(std::isfinite(l.alpha), ErrorCode::Validation, "activation alpha must be finite");
        } else if constexpr (std::is_same_v<T, Reshape>) {
          require(!l.target_shape.empty(), ErrorCode::Validation, "reshape target must be nonempty");
          for (auto d : l.target_shape) require(d > 0, ErrorCode::Validation, "reshape dims must be positive");
        }
      },
      layer);
}

// Shape produced by `layer` when fed `input`; throws Shape on mismatch.
inline Shape infer_output_shape(const LayerSpec& layer, const Shape& input) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, FullyConnected>) {
          if (element_count(input) != l.in_features) {
            fail(ErrorCode::Shape, "fully_connected expects " + std::to_string(l.in_features) + " inputs, got " +
                                       shape_string(input));
          }
          return {l.out_features};
        } else if constexpr (std::is_same_v<T, TransposedConv>) {
          if (input.size() != 3 || input[0] != l.in_channels) {
            fail(ErrorCode::Shape, "conv_transpose expects [" + std::to_string(l.in_channels) + ",H,W], got " +
                                       shape_string(input));
          }
          const auto h = detail::conv_transpose_extent(static_cast<std::int64_t>(input[1]),
                                                       static_cast<std::int64_t>(l.kernel_h), l);
          const auto w = detail::conv_transpose_extent(static_cast<std::int64_t>(input[2]),
                                                       static_cast<std::int64_t>(l.kernel_w), l);
          if (h <= 0 || w <= 0) {
            fail(ErrorCode::Shape, "conv_transpose output extent is not positive for input " + shape_string(input));
          }
          return {l.out_channels, static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
        } else if constexpr (std::is_same_v<T, BatchNormInfer>) {
          if (input.empty() || input[0] != l.channels || (input.size() != 1 && input.size() != 3)) {
            fail(ErrorCode::Shape, "batchnorm expects " + std::to_string(l.channels) + " channels, got " +
                                       shape_string(input));
          }
          return input;
        } else if constexpr (std::is_same_v<T, Activation>) {
          return input;
        } else if constexpr (std::is_same_v<T, Reshape>) {
          if (element_count(l.target_shape) != element_count(input)) {
            fail(ErrorCode::Shape, "cannot reshape " + shape_string(input) + " to " + shape_string(l.target_shape));
          }
          return l.target_shape;
        }
      },
      layer);
}

// out = W x + b, accumulated in double.
inline Tensor fully_connected(const Tensor& input, const FullyConnected& layer) {
  if (input.size() != layer.in_features) {
    fail(ErrorCode::Shape, "fully_connected expects " + std::to_string(layer.in_features) + " inputs, got " +
                               shape_string(input.shape()));
  }
  Tensor out(Shape{layer.out_features});
  const auto x = input.data();
  for (std::size_t o = 0; o < layer.out_features; ++o) {
    const float* row = layer.weights.data() + o * layer.in_features;
    double acc = 0.0;
    for (std::size_t i = 0; i < layer.in_features; ++i) acc += static_cast<double>(row[i]) * x[i];
    out[o] = acc + static_cast<double>(layer.bias[o]);
  }
  return out;
}

// Scatter-add transposed convolution: input element (c, i, j) adds
// x * W[c, o, :, :] into the output window anchored at
// (i * stride - padding, j * stride - padding); bias is added last.
inline Tensor conv_transpose(const Tensor& input, const TransposedConv& layer) {
  const Shape out_shape = infer_output_shape(layer, input.shape());
  Tensor out(out_shape);

  const auto in_h = static_cast<std::int64_t>(input.shape()[1]);
  const auto in_w = static_cast<std::int64_t>(input.shape()[2]);
  const auto out_h = static_cast<std::int64_t>(out_shape[1]);
  const auto out_w = static_cast<std::int64_t>(out_shape[2]);
  const auto kh = static_cast<std::int64_t>(layer.kernel_h);
  const auto kw = static_cast<std::int64_t>(layer.kernel_w);
  const std::size_t kernel_area = layer.kernel_h * layer.kernel_w;

  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    double* plane = out.data().data() + o * static_cast<std::size_t>(out_h * out_w);
    for (std::size_t c = 0; c < layer.in_channels; ++c) {
      const float* kernel = layer.weights.data() + (c * layer.out_channels + o) * kernel_area;
      for (std::int64_t i = 0; i < in_h; ++i) {
        const std::int64_t y0 = i * layer.stride - layer.padding;
        for (std::int64_t j = 0; j < in_w; ++j) {
          const double x = input.at(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
          if (x == 0.0) continue;
          const std::int64_t x0 = j * layer.stride - layer.padding;
          for (std::int64_t ki = 0; ki < kh; ++ki) {
            const std::int64_t y = y0 + ki;
            if (y < 0 || y >= out_h) continue;
            double* row = plane + y * out_w;
            const float* krow = kernel + ki * kw;
            for (std::int64_t kj = 0; kj < kw; ++kj) {
              const std::int64_t xx = x0 + kj;
              if (xx < 0 || xx >= out_w) continue;
              row[xx] += x * static_cast<double>(krow[kj]);
            }
          }
        }
      }
    }
    const double b = layer.bias[o];
    for (std::int64_t p = 0; p < out_h * out_w; ++p) plane[p] += b;
  }
  return out;
}

inline Tensor batchnorm_infer(const Tensor& input, const BatchNormInfer& layer) {
  infer_output_shape(layer, input.shape());
  Tensor out = input;
  const std::size_t plane = input.size() / layer.channels;
  for (std::size_t c = 0; c < layer.channels; ++c) {
    const double scale = static_cast<double>(layer.gamma[c]) /
                         std::sqrt(static_cast<double>(layer.running_var[c]) + layer.epsilon);
    const double mean = layer.running_mean[c];
    const double shift = layer.beta[c];
    for (std::size_t p = c * plane; p < (c + 1) * plane; ++p) out[p] = scale * (input[p] - mean) + shift;
  }
  return out;
}

inline Tensor apply_activation(Tensor input, const Activation& act) {
  for (double& v : input.data()) {
    switch (act.kind) {
      case ActivationKind::ReLU: v = v > 0.0 ? v : 0.0; break;
      case ActivationKind::LeakyReLU: v = v >= 0.0 ? v : act.alpha * v; break;
      case ActivationKind::Tanh: v = std::tanh(v); break;
    }
  }
  return input;
}

inline Tensor apply_layer(const Tensor& input, const LayerSpec& layer) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, FullyConnected>) {
          return fully_connected(input, l);
        } else if constexpr (std::is_same_v<T, TransposedConv>) {
          return conv_transpose(input, l);
        } else if constexpr (std::is_same_v<T, BatchNormInfer>) {
          return batchnorm_infer(input, l);
        } else if constexpr (std::is_same_v<T, Activation>) {
          return apply_activation(input, l);
        } else if constexpr (std::is_same_v<T, Reshape>) {
          Tensor out = input;
          out.reshape(l.target_shape);
          return out;
        }
      },
      layer);
}

}  // namespace latgen
