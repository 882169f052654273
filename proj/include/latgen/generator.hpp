#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "latgen/error.hpp"
#include "latgen/latent.hpp"
#include "latgen/layers.hpp"
#include "latgen/tensor.hpp"

namespace latgen {

// The generator function G: an ordered layer stack from a latent vector of
// `input_dim` components to a tensor of `output_shape`.
struct GeneratorModel {
  std::size_t input_dim = 0;
  LatentSpace input_space = LatentSpace::UniformCube;
  std::vector<LayerSpec> layers;
  Shape output_shape;
};

namespace detail {

inline std::string layer_context(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" + layer_name(layer) + ")";
}

inline bool all_finite(const std::vector<float>& v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool parameters_finite(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, FullyConnected> || std::is_same_v<T, TransposedConv>) {
          return all_finite(l.weights) && all_finite(l.bias);
        } else if constexpr (std::is_same_v<T, BatchNormInfer>) {
          return all_finite(l.gamma) && all_finite(l.beta) && all_finite(l.running_mean) &&
                 all_finite(l.running_var);
        } else {
          return true;
        }
      },
      layer);
}

}  // namespace detail

// Validates every layer's parameters and the shape chain; errors name the
// offending layer index.
inline void validate_model(const GeneratorModel& model) {
  require(model.input_dim > 0, ErrorCode::Validation, "model input_dim must be positive");
  Shape shape{model.input_dim};
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    try {
      validate_parameters(layer);
      if (!detail::parameters_finite(layer)) fail(ErrorCode::Validation, "non-finite parameter");
      shape = infer_output_shape(layer, shape);
    } catch (const Error& e) {
      fail(ErrorCode::Validation, detail::layer_context(i, layer) + ": " + e.message(), std::to_string(i));
    }
  }
  if (shape != model.output_shape) {
    fail(ErrorCode::Validation, "layer chain produces " + shape_string(shape) + " but model declares output " +
                                    shape_string(model.output_shape));
  }
}

struct ForwardOptions {
  // Check every intermediate activation for NaN/Inf.
  bool validate_finite = false;
  // Receives non-fatal diagnostics such as a latent-space tag mismatch.
  // Unset means stderr.
  std::function<void(std::string_view)> on_warning;
};

inline Tensor forward(const GeneratorModel& model, const LatentVector& z, const ForwardOptions& options = {}) {
  if (z.dim() != model.input_dim) {
    fail(ErrorCode::Shape, "latent dim " + std::to_string(z.dim()) + " does not match model input_dim " +
                               std::to_string(model.input_dim));
  }
  if (z.space() != model.input_space) {
    const std::string msg = "latent space '" + std::string(to_string(z.space())) + "' differs from model space '" +
                            std::string(to_string(model.input_space)) + "'";
    if (options.on_warning) {
      options.on_warning(msg);
    } else {
      std::fprintf(stderr, "warning: %s\n", msg.c_str());
    }
  }

  Tensor x(Shape{z.dim()}, std::vector<double>(z.values().begin(), z.values().end()));
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    try {
      x = apply_layer(x, model.layers[i]);
    } catch (const Error& e) {
      fail(e.code(), detail::layer_context(i, model.layers[i]) + ": " + e.message(), std::to_string(i));
    }
    if (options.validate_finite && !x.all_finite()) {
      fail(ErrorCode::Numeric, detail::layer_context(i, model.layers[i]) + " produced a non-finite activation",
           std::to_string(i));
    }
  }
  if (x.shape() != model.output_shape) {
    fail(ErrorCode::Shape, "forward produced " + shape_string(x.shape()) + ", model declares " +
                               shape_string(model.output_shape));
  }
  return x;
}

inline constexpr std::size_t kDcganLatentDim = 100;
inline constexpr std::size_t kDcganCalibrationBatch = 16;

namespace detail {

class NormalSource {
 public:
  NormalSource(std::uint64_t seed, double stddev) : rng_(seed), stddev_(stddev) {}

  float operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return static_cast<float>(spare_ * stddev_);
    }
    const double u1 = 1.0 - unit_interval(rng_);
    const double u2 = unit_interval(rng_);
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    have_spare_ = true;
    return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2) * stddev_);
  }

 private:
  std::mt19937_64 rng_;
  double stddev_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Sets running statistics to the per-channel mean and (biased) variance of
// the calibration activations.
inline void calibrate_batchnorm(BatchNormInfer& bn, const std::vector<Tensor>& batch) {
  for (std::size_t c = 0; c < bn.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (const auto& t : batch) {
      const std::size_t plane = t.size() / bn.channels;
      for (std::size_t p = c * plane; p < (c + 1) * plane; ++p) {
        sum += t[p];
        sq += t[p] * t[p];
        ++count;
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
    bn.running_mean[c] = static_cast<float>(mean);
    bn.running_var[c] = static_cast<float>(var);
  }
}

}  // namespace detail

// DCGAN-64 generator: z (100, uniform) -> project to 4x4x(512s) -> four
// stride-2 k4 p1 transposed convs through 8x8x(256s), 16x16x(128s),
// 32x32x(64s) to 64x64x3, batchnorm + ReLU between stages and Tanh last.
//
// Weights are N(0, 0.02), gammas N(1, 0.02), biases and betas zero. With no
// training data the batchnorm running statistics are taken from a fixed
// calibration batch of latents pushed through the freshly initialized
// network, which keeps every stage at unit scale instead of collapsing the
// output to a constant.
inline GeneratorModel dcgan64_architecture(std::uint64_t seed, double channel_scale = 1.0) {
  require(channel_scale > 0.0 && channel_scale <= 1.0, ErrorCode::InvalidArgument,
          "channel_scale must lie in (0, 1]");
  const std::size_t base[4] = {512, 256, 128, 64};
  std::size_t channels[4];
  for (int s = 0; s < 4; ++s) {
    channels[s] = static_cast<std::size_t>(std::floor(static_cast<double>(base[s]) * channel_scale + 1e-9));
    if (channels[s] < 1) {
      fail(ErrorCode::InvalidArgument, "channel_scale " + std::to_string(channel_scale) +
                                           " leaves stage " + std::to_string(s) + " with no channels");
    }
  }

  detail::NormalSource weight_init(seed, 0.02);
  detail::NormalSource gamma_init(seed ^ 0x9e3779b97f4a7c15ULL, 0.02);

  GeneratorModel model;
  model.input_dim = kDcganLatentDim;
  model.input_space = LatentSpace::UniformCube;
  model.output_shape = {3, 64, 64};

  std::vector<Tensor> batch;
  for (const auto& z : sample_latents(LatentSpace::UniformCube, kDcganLatentDim, kDcganCalibrationBatch,
                                      seed + 0x5eed)) {
    batch.emplace_back(Shape{kDcganLatentDim}, std::vector<double>(z.values().begin(), z.values().end()));
  }
  auto push = [&](LayerSpec layer) {
    for (auto& t : batch) t = apply_layer(t, layer);
    model.layers.push_back(std::move(layer));
  };
  auto push_norm_relu = [&](std::size_t c) {
    BatchNormInfer bn;
    bn.channels = c;
    bn.gamma.resize(c);
    for (float& g : bn.gamma) g = 1.0f + gamma_init();
    bn.beta.assign(c, 0.0f);
    bn.running_mean.assign(c, 0.0f);
    bn.running_var.assign(c, 1.0f);
    bn.epsilon = 1e-5;
    detail::calibrate_batchnorm(bn, batch);
    push(bn);
    push(Activation{ActivationKind::ReLU, 0.0});
  };
  auto make_deconv = [&](std::size_t in, std::size_t out) {
    TransposedConv conv;
    conv.in_channels = in;
    conv.out_channels = out;
    conv.kernel_h = conv.kernel_w = 4;
    conv.stride = 2;
    conv.padding = 1;
    conv.output_padding = 0;
    conv.weights.resize(in * out * 16);
    for (float& w : conv.weights) w = weight_init();
    conv.bias.assign(out, 0.0f);
    return conv;
  };

  FullyConnected project;
  project.in_features = kDcganLatentDim;
  project.out_features = channels[0] * 16;
  project.weights.resize(project.in_features * project.out_features);
  for (float& w : project.weights) w = weight_init();
  project.bias.assign(project.out_features, 0.0f);
  push(project);
  push(Reshape{{channels[0], 4, 4}});
  push_norm_relu(channels[0]);

  for (int s = 1; s < 4; ++s) {
    push(make_deconv(channels[s - 1], channels[s]));
    push_norm_relu(channels[s]);
  }
  push(make_deconv(channels[3], 3));
  push(Activation{ActivationKind::Tanh, 0.0});

  validate_model(model);
  return model;
}

}  // namespace latgen
