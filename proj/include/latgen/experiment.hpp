#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "latgen/anchor_store.hpp"
#include "latgen/error.hpp"
#include "latgen/fs_util.hpp"
#include "latgen/generator.hpp"
#include "latgen/hash.hpp"
#include "latgen/image.hpp"
#include "latgen/latent.hpp"
#include "latgen/weights_io.hpp"

namespace latgen {

inline constexpr std::string_view kEngineVersion = "latgen 0.1.0";

enum class ExperimentKind { Samples, Interpolate, Extrapolate, CircularPaper, Slerp, Arithmetic };

inline std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Samples: return "samples";
    case ExperimentKind::Interpolate: return "interpolate";
    case ExperimentKind::Extrapolate: return "extrapolate";
    case ExperimentKind::CircularPaper: return "circular_paper";
    case ExperimentKind::Slerp: return "slerp";
    case ExperimentKind::Arithmetic: return "arithmetic";
  }
  return "unknown";
}

inline ExperimentKind parse_experiment_kind(std::string_view text) {
  for (auto k : {ExperimentKind::Samples, ExperimentKind::Interpolate, ExperimentKind::Extrapolate,
                 ExperimentKind::CircularPaper, ExperimentKind::Slerp, ExperimentKind::Arithmetic}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorCode::InvalidArgument, "unknown experiment kind '" + std::string(text) + "'");
}

inline bool is_traversal(ExperimentKind kind) {
  return kind != ExperimentKind::Samples && kind != ExperimentKind::Arithmetic;
}

struct TermRef {
  int sign = 1;
  std::string anchor_set;

  friend bool operator==(const TermRef&, const TermRef&) = default;
};

// Parses whitespace-separated "+name" / "-name" terms; the first term may omit
// its sign.
inline std::vector<TermRef> parse_expression(std::string_view expr) {
  std::vector<TermRef> terms;
  std::size_t pos = 0;
  while (pos < expr.size()) {
    while (pos < expr.size() && std::isspace(static_cast<unsigned char>(expr[pos]))) ++pos;
    if (pos >= expr.size()) break;
    std::size_t end = pos;
    while (end < expr.size() && !std::isspace(static_cast<unsigned char>(expr[end]))) ++end;
    std::string_view token = expr.substr(pos, end - pos);
    pos = end;

    TermRef term;
    if (token.front() == '+' || token.front() == '-') {
      term.sign = token.front() == '-' ? -1 : 1;
      token.remove_prefix(1);
    } else if (!terms.empty()) {
      fail(ErrorCode::InvalidArgument, "expression term '" + std::string(token) + "' needs a leading + or -");
    }
    if (token.empty()) fail(ErrorCode::InvalidArgument, "expression has a sign without a name");
    term.anchor_set = std::string(token);
    terms.push_back(std::move(term));
  }
  if (terms.empty()) fail(ErrorCode::InvalidArgument, "expression has no terms");
  return terms;
}

inline std::string format_expression(const std::vector<TermRef>& terms) {
  std::string out;
  for (const auto& t : terms) {
    if (!out.empty()) out += ' ';
    out += t.sign < 0 ? '-' : '+';
    out += t.anchor_set;
  }
  return out;
}

// Declarative description of one experiment. Serialized as strict JSON:
// unknown keys and keys that do not apply to the kind are rejected.
struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Samples;
  std::string model_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::size_t n = 16;
  std::size_t grid_cols = 4;
  std::optional<std::array<std::uint64_t, 2>> endpoint_seeds;
  std::optional<std::array<std::string, 2>> endpoint_files;
  double radius = 1.0;  // circular_paper only
  std::string store_path;
  std::vector<TermRef> terms;
  std::size_t jobs = 1;

  void validate() const {
    require(!model_path.empty(), ErrorCode::InvalidArgument, "spec needs model_path");
    require(!output_dir.empty(), ErrorCode::InvalidArgument, "spec needs output_dir");
    require(jobs >= 1, ErrorCode::InvalidArgument, "jobs must be >= 1");
    if (kind == ExperimentKind::Arithmetic) {
      require(!store_path.empty(), ErrorCode::InvalidArgument, "arithmetic spec needs store_path");
      require(!terms.empty(), ErrorCode::InvalidArgument, "arithmetic spec needs at least one term");
      for (const auto& t : terms) {
        require(t.sign == 1 || t.sign == -1, ErrorCode::InvalidArgument, "term sign must be + or -");
        require(!t.anchor_set.empty(), ErrorCode::InvalidArgument, "term needs an anchor_set name");
      }
      return;
    }
    require(grid_cols >= 1, ErrorCode::InvalidArgument, "grid_cols must be >= 1");
    if (kind == ExperimentKind::Samples) {
      require(n >= 1, ErrorCode::InvalidArgument, "samples needs n >= 1");
      return;
    }
    require(n >= 2, ErrorCode::InvalidArgument, "traversals need n >= 2");
    if (kind == ExperimentKind::Extrapolate) require(n % 2 == 0, ErrorCode::InvalidArgument, "extrapolate needs an even n");
    require(!(endpoint_seeds && endpoint_files), ErrorCode::InvalidArgument,
            "give endpoint_seeds or endpoint_files, not both");
    require(std::isfinite(radius), ErrorCode::InvalidArgument, "radius must be finite");
  }
};

namespace detail {

using Json = nlohmann::json;

inline std::vector<std::string> allowed_spec_keys(ExperimentKind kind) {
  std::vector<std::string> keys = {"kind", "model_path", "output_dir", "jobs"};
  if (kind == ExperimentKind::Arithmetic) {
    keys.insert(keys.end(), {"store_path", "terms"});
    return keys;
  }
  keys.insert(keys.end(), {"seed", "n", "grid_cols"});
  if (is_traversal(kind)) keys.insert(keys.end(), {"endpoint_seeds", "endpoint_files"});
  if (kind == ExperimentKind::CircularPaper) keys.push_back("radius");
  return keys;
}

}  // namespace detail

inline nlohmann::json spec_to_json(const ExperimentSpec& spec) {
  detail::Json j = {{"kind", to_string(spec.kind)},
                    {"model_path", spec.model_path},
                    {"output_dir", spec.output_dir},
                    {"jobs", spec.jobs}};
  if (spec.kind == ExperimentKind::Arithmetic) {
    j["store_path"] = spec.store_path;
    j["terms"] = detail::Json::array();
    for (const auto& t : spec.terms) {
      j["terms"].push_back({{"sign", t.sign < 0 ? "-" : "+"}, {"anchor_set", t.anchor_set}});
    }
    return j;
  }
  j["seed"] = spec.seed;
  j["n"] = spec.n;
  j["grid_cols"] = spec.grid_cols;
  if (spec.endpoint_seeds) j["endpoint_seeds"] = *spec.endpoint_seeds;
  if (spec.endpoint_files) j["endpoint_files"] = *spec.endpoint_files;
  if (spec.kind == ExperimentKind::CircularPaper) j["radius"] = spec.radius;
  return j;
}

inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, "experiment spec must be a JSON object");
  ExperimentSpec spec;
  try {
    spec.kind = parse_experiment_kind(j.at("kind").get<std::string>());
    const auto allowed = detail::allowed_spec_keys(spec.kind);
    for (const auto& [key, value] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        fail(ErrorCode::InvalidArgument,
             "unknown or inapplicable field '" + key + "' for kind '" + std::string(to_string(spec.kind)) + "'");
      }
    }
    spec.model_path = j.at("model_path").get<std::string>();
    spec.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("jobs")) spec.jobs = j["jobs"].get<std::size_t>();
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("n")) spec.n = j["n"].get<std::size_t>();
    if (j.contains("grid_cols")) spec.grid_cols = j["grid_cols"].get<std::size_t>();
    if (j.contains("endpoint_seeds")) spec.endpoint_seeds = j["endpoint_seeds"].get<std::array<std::uint64_t, 2>>();
    if (j.contains("endpoint_files")) spec.endpoint_files = j["endpoint_files"].get<std::array<std::string, 2>>();
    if (j.contains("radius")) spec.radius = j["radius"].get<double>();
    if (j.contains("store_path")) spec.store_path = j["store_path"].get<std::string>();
    if (j.contains("terms")) {
      for (const auto& t : j["terms"]) {
        TermRef term;
        const auto& sign = t.at("sign");
        if (sign.is_string()) {
          const auto s = sign.get<std::string>();
          if (s != "+" && s != "-") fail(ErrorCode::InvalidArgument, "term sign must be \"+\" or \"-\"");
          term.sign = s == "-" ? -1 : 1;
        } else {
          term.sign = sign.get<int>();
        }
        term.anchor_set = t.at("anchor_set").get<std::string>();
        for (const auto& [key, value] : t.items()) {
          if (key != "sign" && key != "anchor_set") fail(ErrorCode::InvalidArgument, "unknown term field '" + key + "'");
        }
        spec.terms.push_back(std::move(term));
      }
    }
  } catch (const detail::Json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed experiment spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline ExperimentSpec load_spec(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return spec_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::InvalidArgument, "spec '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

struct OutputFile {
  std::string name;  // relative to the output directory
  std::string sha256;
};

struct RunManifest {
  ExperimentSpec spec;
  std::vector<std::string> latents;  // serialized, in tile order
  std::vector<OutputFile> outputs;
  std::string engine_version;
  double duration_ms = 0.0;
  nlohmann::json metrics = nlohmann::json::object();
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  detail::Json outputs = detail::Json::array();
  for (const auto& o : m.outputs) outputs.push_back({{"file", o.name}, {"sha256", o.sha256}});
  return {{"spec", spec_to_json(m.spec)},
          {"latents", m.latents},
          {"outputs", outputs},
          {"engine_version", m.engine_version},
          {"duration_ms", m.duration_ms},
          {"metrics", m.metrics}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.spec = spec_from_json(j.at("spec"));
    m.latents = j.at("latents").get<std::vector<std::string>>();
    for (const auto& o : j.at("outputs")) m.outputs.push_back({o.at("file").get<std::string>(), o.at("sha256").get<std::string>()});
    m.engine_version = j.at("engine_version").get<std::string>();
    m.duration_ms = j.value("duration_ms", 0.0);
    m.metrics = j.value("metrics", detail::Json::object());
  } catch (const detail::Json::exception& e) {
    fail(ErrorCode::Format, std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

inline RunManifest load_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return manifest_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Format, "manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Everything an experiment produces, held in memory before any file is written.
struct RenderedExperiment {
  std::vector<LatentVector> latents;
  std::vector<std::pair<std::string, std::string>> files;  // name, bytes
  nlohmann::json metrics = nlohmann::json::object();
};

struct RunOptions {
  std::function<void(std::string_view)> on_warning;
};

namespace detail {

inline std::string tile_name(ExperimentKind kind, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_%02zu.png", index);
  return std::string(to_string(kind)) + buf;
}

inline std::string grid_name(ExperimentKind kind) { return std::string(to_string(kind)) + "_grid.png"; }

inline LatentVector read_endpoint(const std::string& path, const GeneratorModel& model) {
  const auto latents = parse_latents(read_file(path));
  if (latents.empty()) fail(ErrorCode::Validation, "endpoint file '" + path + "' holds no latent vector");
  if (latents.front().dim() != model.input_dim) {
    fail(ErrorCode::Validation, "endpoint file '" + path + "' has dim " + std::to_string(latents.front().dim()) +
                                    ", model expects " + std::to_string(model.input_dim));
  }
  return latents.front();
}

inline std::vector<Tensor> forward_all(const GeneratorModel& model, const std::vector<LatentVector>& latents,
                                       std::size_t jobs, const ForwardOptions& options) {
  std::vector<Tensor> out(latents.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, latents.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < latents.size(); ++i) out[i] = forward(model, latents[i], options);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < latents.size(); i += workers) out[i] = forward(model, latents[i], options);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sum);
}

}  // namespace detail

// Builds latents, decodes them and encodes every output file in memory.
// Throws before anything touches the output directory.
inline RenderedExperiment render_experiment(const ExperimentSpec& spec, const RunOptions& options = {}) {
  spec.validate();
  std::error_code exists_ec;
  if (!fs::exists(spec.model_path, exists_ec)) {
    fail(ErrorCode::Resolution, "model '" + spec.model_path + "' does not exist");
  }
  const GeneratorModel model = load_model(spec.model_path);
  if (model.output_shape.size() != 3 || model.output_shape[0] != 3) {
    fail(ErrorCode::Validation, "model output " + shape_string(model.output_shape) + " is not an RGB image [3,H,W]");
  }
  const auto dim = static_cast<std::int64_t>(model.input_dim);
  const LatentSpace space = model.input_space;

  RenderedExperiment result;
  std::vector<std::string> tile_names;

  if (spec.kind == ExperimentKind::Samples) {
    result.latents = sample_latents(space, dim, static_cast<std::int64_t>(spec.n), spec.seed);
  } else if (is_traversal(spec.kind)) {
    std::vector<LatentVector> ends;
    if (spec.endpoint_files) {
      for (const auto& f : *spec.endpoint_files) ends.push_back(detail::read_endpoint(f, model));
    } else if (spec.endpoint_seeds) {
      for (auto s : *spec.endpoint_seeds) ends.push_back(sample_latents(space, dim, 1, s).front());
    } else {
      ends = sample_latents(space, dim, 2, spec.seed);
    }
    TraversalSequence seq = [&] {
      switch (spec.kind) {
        case ExperimentKind::Interpolate: return lerp(ends[0], ends[1], spec.n);
        case ExperimentKind::Extrapolate: return extrapolate_two_sided(ends[0], ends[1], spec.n);
        case ExperimentKind::CircularPaper: return circular_paper(ends[0], ends[1], spec.n, spec.radius);
        default: return slerp(ends[0], ends[1], spec.n);
      }
    }();
    result.latents = std::move(seq.points);
  } else {
    std::error_code ec;
    if (!fs::exists(spec.store_path, ec)) {
      fail(ErrorCode::Resolution, "anchor store '" + spec.store_path + "' does not exist");
    }
    const AnchorStore store(spec.store_path);
    ArithmeticExpression expr;
    for (const auto& t : spec.terms) {
      if (!store.contains(t.anchor_set)) {
        fail(ErrorCode::Resolution, "unknown anchor set '" + t.anchor_set + "'");
      }
      AnchorSet set = store.get(t.anchor_set);
      if (set.members.front().dim() != model.input_dim) {
        fail(ErrorCode::Validation, "anchor set '" + t.anchor_set + "' has dim " +
                                        std::to_string(set.members.front().dim()) + ", model expects " +
                                        std::to_string(model.input_dim));
      }
      result.latents.push_back(average_anchors(set));
      expr.terms.push_back({t.sign, std::move(set)});
    }
    result.latents.push_back(evaluate_arithmetic(expr));
  }

  ForwardOptions fwd;
  fwd.on_warning = options.on_warning;
  const auto outputs = detail::forward_all(model, result.latents, spec.jobs, fwd);

  std::vector<ImageBuffer> images;
  images.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    images.push_back(tensor_to_image(outputs[i]));
    result.files.emplace_back(detail::tile_name(spec.kind, i), encode_png_bytes(images.back()));
  }
  const std::size_t cols = spec.kind == ExperimentKind::Arithmetic ? images.size() : spec.grid_cols;
  result.files.emplace_back(detail::grid_name(spec.kind), encode_png_bytes(compose_grid(images, cols)));

  if (spec.kind == ExperimentKind::Arithmetic) {
    result.files.emplace_back("arithmetic_result.latent", serialize_latent(result.latents.back()) + "\n");
  }

  if (is_traversal(spec.kind)) {
    nlohmann::json latent_gaps = nlohmann::json::array();
    nlohmann::json image_gaps = nlohmann::json::array();
    std::size_t argmax = 0;
    double best = -1.0;
    for (std::size_t i = 0; i + 1 < outputs.size(); ++i) {
      latent_gaps.push_back(detail::l2_distance(result.latents[i].values(), result.latents[i + 1].values()));
      const double gap = detail::l2_distance(outputs[i].data(), outputs[i + 1].data());
      image_gaps.push_back(gap);
      if (gap > best) {
        best = gap;
        argmax = i;
      }
    }
    result.metrics["adjacent_latent_l2"] = latent_gaps;
    result.metrics["adjacent_image_l2"] = image_gaps;
    // 1-based tile indices of the pair with the largest image-space jump.
    result.metrics["max_image_jump_pair"] = {argmax + 1, argmax + 2};
  }
  return result;
}

inline fs::path manifest_path(const fs::path& output_dir) { return output_dir / "manifest.json"; }

// Runs the experiment and writes tiles, grid and manifest (last) into
// spec.output_dir.
inline RunManifest run(const ExperimentSpec& input_spec, const RunOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentSpec spec = input_spec;
  spec.model_path = fs::absolute(spec.model_path).string();
  spec.output_dir = fs::absolute(spec.output_dir).string();
  if (!spec.store_path.empty()) spec.store_path = fs::absolute(spec.store_path).string();
  if (spec.endpoint_files) {
    for (auto& f : *spec.endpoint_files) f = fs::absolute(f).string();
  }

  RenderedExperiment rendered = render_experiment(spec, options);

  std::error_code ec;
  fs::create_directories(spec.output_dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create output directory '" + spec.output_dir + "': " + ec.message());

  RunManifest manifest;
  manifest.spec = spec;
  for (const auto& z : rendered.latents) manifest.latents.push_back(serialize_latent(z));
  for (const auto& [name, bytes] : rendered.files) {
    write_file_atomic(fs::path(spec.output_dir) / name, bytes);
    manifest.outputs.push_back({name, sha256_hex(bytes)});
  }
  manifest.engine_version = std::string(kEngineVersion);
  manifest.metrics = std::move(rendered.metrics);
  manifest.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(manifest_path(spec.output_dir), manifest_to_json(manifest).dump(2) + "\n");
  return manifest;
}

struct Divergence {
  std::string file;
  std::string reason;
};

struct RerunReport {
  std::vector<Divergence> divergent;
  std::size_t checked = 0;

  bool all_match() const noexcept { return divergent.empty(); }
};

// Re-executes the manifest's spec in memory and compares every listed output
// against both the recorded hash and the file currently on disk next to the
// manifest.
inline RerunReport rerun_check(const fs::path& manifest_file, const RunOptions& options = {}) {
  const RunManifest manifest = load_manifest(manifest_file);
  const RenderedExperiment rendered = render_experiment(manifest.spec, options);

  std::map<std::string, std::string> regenerated;
  for (const auto& [name, bytes] : rendered.files) regenerated[name] = sha256_hex(bytes);

  RerunReport report;
  const fs::path dir = manifest_file.parent_path();
  for (const auto& out : manifest.outputs) {
    ++report.checked;
    const fs::path on_disk = dir / out.name;
    std::error_code ec;
    if (!fs::exists(on_disk, ec)) {
      report.divergent.push_back({out.name, "missing"});
      continue;
    }
    if (sha256_hex(read_file(on_disk)) != out.sha256) {
      report.divergent.push_back({out.name, "file on disk does not match recorded hash"});
      continue;
    }
    auto it = regenerated.find(out.name);
    if (it == regenerated.end()) {
      report.divergent.push_back({out.name, "not produced by re-execution"});
    } else if (it->second != out.sha256) {
      report.divergent.push_back({out.name, "re-execution produced a different hash"});
    }
  }
  for (const auto& [name, hash] : regenerated) {
    const bool listed = std::any_of(manifest.outputs.begin(), manifest.outputs.end(),
                                    [&](const OutputFile& o) { return o.name == name; });
    if (!listed) report.divergent.push_back({name, "produced by re-execution but absent from manifest"});
  }
  return report;
}

}  // namespace latgen
