#pragma once

// LGW1 weight files:
//
//   offset 0   8 bytes   magic "LATGENW1"
//   offset 8   u64 LE    manifest length M
//   offset 16  M bytes   UTF-8 JSON manifest
//   offset 16+M          payload: little-endian float32 tensors, contiguous,
//                        in manifest order, row-major in the declared layout
//
// Each manifest tensor entry records its shape, byte offset (relative to the
// payload start) and byte length. Transposed-conv weights are laid out
// [in_ch, out_ch, kH, kW]; fully-connected weights [out, in].

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latgen/error.hpp"
#include "latgen/fs_util.hpp"
#include "latgen/generator.hpp"

namespace latgen {

inline constexpr std::string_view kWeightMagic = "LATGENW1";
inline constexpr int kWeightFormatVersion = 1;

namespace detail {

using Json = nlohmann::json;

struct PayloadWriter {
  std::string bytes;

  Json add(const char* name, const Shape& shape, const std::vector<float>& values) {
    Json entry = {{"name", name}, {"shape", shape}, {"offset", bytes.size()}, {"bytes", values.size() * 4}};
    for (float v : values) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
    return entry;
  }
};

inline std::string_view activation_kind_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::LeakyReLU: return "leaky_relu";
    case ActivationKind::Tanh: return "tanh";
  }
  return "relu";
}

}  // namespace detail

inline std::string encode_model(const GeneratorModel& model) {
  validate_model(model);
  detail::PayloadWriter payload;
  detail::Json layers = detail::Json::array();
  for (const auto& layer : model.layers) {
    detail::Json entry;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, FullyConnected>) {
            entry = {{"type", "fully_connected"}, {"in_features", l.in_features}, {"out_features", l.out_features}};
            entry["tensors"] = {payload.add("weight", {l.out_features, l.in_features}, l.weights),
                                payload.add("bias", {l.out_features}, l.bias)};
          } else if constexpr (std::is_same_v<T, TransposedConv>) {
            entry = {{"type", "conv_transpose"},
                     {"in_channels", l.in_channels},
                     {"out_channels", l.out_channels},
                     {"kernel", {l.kernel_h, l.kernel_w}},
                     {"stride", l.stride},
                     {"padding", l.padding},
                     {"output_padding", l.output_padding}};
            entry["tensors"] = {
                payload.add("weight", {l.in_channels, l.out_channels, l.kernel_h, l.kernel_w}, l.weights),
                payload.add("bias", {l.out_channels}, l.bias)};
          } else if constexpr (std::is_same_v<T, BatchNormInfer>) {
            entry = {{"type", "batchnorm"}, {"channels", l.channels}, {"epsilon", l.epsilon}};
            entry["tensors"] = {payload.add("gamma", {l.channels}, l.gamma), payload.add("beta", {l.channels}, l.beta),
                                payload.add("running_mean", {l.channels}, l.running_mean),
                                payload.add("running_var", {l.channels}, l.running_var)};
          } else if constexpr (std::is_same_v<T, Activation>) {
            entry = {{"type", "activation"}, {"kind", detail::activation_kind_name(l.kind)}};
            if (l.kind == ActivationKind::LeakyReLU) entry["alpha"] = l.alpha;
          } else if constexpr (std::is_same_v<T, Reshape>) {
            entry = {{"type", "reshape"}, {"target_shape", l.target_shape}};
          }
        },
        layer);
    layers.push_back(std::move(entry));
  }

  const detail::Json manifest = {{"format", "LGW1"},
                                 {"version", kWeightFormatVersion},
                                 {"input_dim", model.input_dim},
                                 {"input_space", to_string(model.input_space)},
                                 {"output_shape", model.output_shape},
                                 {"payload_bytes", payload.bytes.size()},
                                 {"layers", std::move(layers)}};
  const std::string text = manifest.dump();

  std::string out(kWeightMagic);
  const auto len = static_cast<std::uint64_t>(text.size());
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xffu));
  out += text;
  out += payload.bytes;
  return out;
}

namespace detail {

class PayloadReader {
 public:
  explicit PayloadReader(std::string_view payload) : payload_(payload) {}

  // Reads the next tensor entry, which must start where the previous ended and
  // carry exactly `expected` shape.
  std::vector<float> read(const Json& entry, std::string_view name, const Shape& expected) {
    if (!entry.is_object() || entry.value("name", "") != name) {
      fail(ErrorCode::Format, "expected tensor '" + std::string(name) + "'");
    }
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto bytes = entry.at("bytes").get<std::uint64_t>();
    if (offset != cursor_) {
      fail(ErrorCode::Format, "tensor '" + std::string(name) + "' offset " + std::to_string(offset) +
                                  " is not contiguous (expected " + std::to_string(cursor_) + ")");
    }
    if (bytes != element_count(shape) * 4) {
      fail(ErrorCode::Format, "tensor '" + std::string(name) + "' byte length does not match its shape");
    }
    if (offset + bytes > payload_.size()) {
      fail(ErrorCode::Format, "tensor '" + std::string(name) + "' runs past the end of the payload (truncated file)");
    }
    if (shape != expected) {
      fail(ErrorCode::Validation, "tensor '" + std::string(name) + "' has shape " + shape_string(shape) +
                                      " but the layer declares " + shape_string(expected));
    }
    std::vector<float> values(element_count(shape));
    const auto* p = reinterpret_cast<const unsigned char*>(payload_.data() + offset);
    for (std::size_t i = 0; i < values.size(); ++i, p += 4) {
      const std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
                                 (std::uint32_t{p[3]} << 24);
      values[i] = std::bit_cast<float>(bits);
      if (!std::isfinite(values[i])) {
        fail(ErrorCode::Validation, "tensor '" + std::string(name) + "' contains a non-finite value at element " +
                                        std::to_string(i));
      }
    }
    cursor_ = offset + bytes;
    return values;
  }

  std::uint64_t consumed() const noexcept { return cursor_; }

 private:
  std::string_view payload_;
  std::uint64_t cursor_ = 0;
};

inline const Json& tensor_at(const Json& entry, std::size_t i) {
  const auto& tensors = entry.at("tensors");
  if (!tensors.is_array() || i >= tensors.size()) fail(ErrorCode::Format, "missing tensor entry");
  return tensors[i];
}

inline LayerSpec decode_layer(const Json& entry, PayloadReader& payload) {
  const auto type = entry.at("type").get<std::string>();
  if (type == "fully_connected") {
    FullyConnected l;
    l.in_features = entry.at("in_features").get<std::size_t>();
    l.out_features = entry.at("out_features").get<std::size_t>();
    l.weights = payload.read(tensor_at(entry, 0), "weight", {l.out_features, l.in_features});
    l.bias = payload.read(tensor_at(entry, 1), "bias", {l.out_features});
    return l;
  }
  if (type == "conv_transpose") {
    TransposedConv l;
    l.in_channels = entry.at("in_channels").get<std::size_t>();
    l.out_channels = entry.at("out_channels").get<std::size_t>();
    const auto kernel = entry.at("kernel").get<std::vector<std::size_t>>();
    if (kernel.size() != 2) fail(ErrorCode::Format, "kernel must be [kH, kW]");
    l.kernel_h = kernel[0];
    l.kernel_w = kernel[1];
    l.stride = entry.at("stride").get<std::int64_t>();
    l.padding = entry.at("padding").get<std::int64_t>();
    l.output_padding = entry.at("output_padding").get<std::int64_t>();
    l.weights = payload.read(tensor_at(entry, 0), "weight", {l.in_channels, l.out_channels, l.kernel_h, l.kernel_w});
    l.bias = payload.read(tensor_at(entry, 1), "bias", {l.out_channels});
    return l;
  }
  if (type == "batchnorm") {
    BatchNormInfer l;
    l.channels = entry.at("channels").get<std::size_t>();
    l.epsilon = entry.at("epsilon").get<double>();
    l.gamma = payload.read(tensor_at(entry, 0), "gamma", {l.channels});
    l.beta = payload.read(tensor_at(entry, 1), "beta", {l.channels});
    l.running_mean = payload.read(tensor_at(entry, 2), "running_mean", {l.channels});
    l.running_var = payload.read(tensor_at(entry, 3), "running_var", {l.channels});
    return l;
  }
  if (type == "activation") {
    const auto kind = entry.at("kind").get<std::string>();
    if (kind == "relu") return Activation{ActivationKind::ReLU, 0.0};
    if (kind == "tanh") return Activation{ActivationKind::Tanh, 0.0};
    if (kind == "leaky_relu") return Activation{ActivationKind::LeakyReLU, entry.at("alpha").get<double>()};
    fail(ErrorCode::Format, "unknown activation kind '" + kind + "'");
  }
  if (type == "reshape") return Reshape{entry.at("target_shape").get<Shape>()};
  fail(ErrorCode::Format, "unknown layer type '" + type + "'");
}

}  // namespace detail

inline GeneratorModel decode_model(std::string_view bytes) {
  if (bytes.size() < 16) fail(ErrorCode::Format, "file too short for an LGW1 header");
  if (bytes.substr(0, 8) != kWeightMagic) fail(ErrorCode::Format, "bad magic (not an LGW1 weight file)");
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= std::uint64_t{static_cast<unsigned char>(bytes[8 + b])} << (8 * b);
  if (len > bytes.size() - 16) fail(ErrorCode::Format, "manifest length exceeds file size (truncated file)");

  detail::Json manifest;
  try {
    manifest = detail::Json::parse(bytes.substr(16, len));
  } catch (const detail::Json::exception& e) {
    fail(ErrorCode::Format, std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(16 + len);

  GeneratorModel model;
  std::size_t index = 0;
  bool in_layers = false;
  auto layer_prefix = [&] { return in_layers ? "layer " + std::to_string(index) + ": " : std::string(); };
  try {
    if (manifest.value("format", "") != "LGW1" || manifest.value("version", 0) != kWeightFormatVersion) {
      fail(ErrorCode::Format, "unsupported format/version");
    }
    model.input_dim = manifest.at("input_dim").get<std::size_t>();
    model.input_space = parse_latent_space(manifest.at("input_space").get<std::string>());
    model.output_shape = manifest.at("output_shape").get<Shape>();
    const auto declared_payload = manifest.at("payload_bytes").get<std::uint64_t>();
    if (declared_payload != payload.size()) {
      fail(ErrorCode::Format, "payload is " + std::to_string(payload.size()) + " bytes, manifest declares " +
                                  std::to_string(declared_payload) + " (truncated or padded file)");
    }

    detail::PayloadReader reader(payload);
    const auto& layers = manifest.at("layers");
    if (!layers.is_array()) fail(ErrorCode::Format, "layers must be an array");
    in_layers = true;
    for (index = 0; index < layers.size(); ++index) {
      model.layers.push_back(detail::decode_layer(layers[index], reader));
    }
    in_layers = false;
    if (reader.consumed() != payload.size()) fail(ErrorCode::Format, "payload has trailing bytes");
  } catch (const Error& e) {
    const auto code = e.code() == ErrorCode::InvalidArgument ? ErrorCode::Format : e.code();
    fail(code, layer_prefix() + e.message(), in_layers ? std::to_string(index) : std::string());
  } catch (const detail::Json::exception& e) {
    fail(ErrorCode::Format, layer_prefix() + "malformed manifest: " + e.what(),
         in_layers ? std::to_string(index) : std::string());
  }

  validate_model(model);
  return model;
}

inline void save_model(const GeneratorModel& model, const fs::path& path) {
  write_file_atomic(path, encode_model(model));
}

inline GeneratorModel load_model(const fs::path& path) {
  return decode_model(read_file(path));
}

}  // namespace latgen
