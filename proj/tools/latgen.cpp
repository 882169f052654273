// latgen: headless latent-space experiments and the HTTP service.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "latgen/anchor_store.hpp"
#include "latgen/error.hpp"
#include "latgen/experiment.hpp"
#include "latgen/generator.hpp"
#include "latgen/service.hpp"
#include "latgen/weights_io.hpp"

namespace {

using namespace latgen;

constexpr int kExitMismatch = 1;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitIo = 4;
constexpr int kExitNumeric = 5;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return kExitIo;
    case ErrorCode::Numeric: return kExitNumeric;
    default: return kExitValidation;
  }
}

bool use_color() { return std::getenv("NO_COLOR") == nullptr && ::isatty(STDERR_FILENO); }

void report_error(const Error& e) {
  const nlohmann::json envelope = {{"code", to_string(e.code())}, {"message", e.message()}, {"detail", e.detail()}};
  if (use_color()) {
    std::cerr << "\033[31merror\033[0m: " << e.message() << "\n";
  } else {
    std::cerr << "error: " << e.message() << "\n";
  }
  std::cerr << envelope.dump() << "\n";
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

std::string default_config_path() {
  if (const char* xdg = std::getenv("XDG_CONFIG_HOME"); xdg && *xdg) return std::string(xdg) + "/latgen/config.toml";
  if (const char* home = std::getenv("HOME"); home && *home) return std::string(home) + "/.config/latgen/config.toml";
  return "latgen.toml";
}

struct ExperimentFlags {
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t n = 16;
  std::size_t cols = 4;
  std::size_t jobs = 1;
  std::vector<std::uint64_t> endpoint_seeds;
  std::vector<std::string> endpoint_files;
  double radius = 1.0;
  std::string store;
  std::string expr;
  bool emit_spec = false;
};

void add_common(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--model", f.model, "LGW1 weight file")->required();
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--jobs", f.jobs, "Parallel forward passes")->check(CLI::PositiveNumber);
  cmd->add_flag("--emit-spec", f.emit_spec, "Print the equivalent spec JSON and exit");
}

void add_grid(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--seed", f.seed, "Sampling seed");
  cmd->add_option("--n", f.n, "Number of latents / traversal steps");
  cmd->add_option("--cols", f.cols, "Grid columns")->check(CLI::PositiveNumber);
}

void add_endpoints(CLI::App* cmd, ExperimentFlags& f) {
  auto* seeds = cmd->add_option("--endpoint-seeds", f.endpoint_seeds, "Two seeds, one per endpoint")->expected(2);
  auto* files = cmd->add_option("--endpoint-files", f.endpoint_files, "Two latent files, one per endpoint")->expected(2);
  seeds->excludes(files);
}

ExperimentSpec build_spec(ExperimentKind kind, const ExperimentFlags& f) {
  ExperimentSpec spec;
  spec.kind = kind;
  spec.model_path = f.model;
  spec.output_dir = f.out;
  spec.jobs = f.jobs;
  if (kind == ExperimentKind::Arithmetic) {
    spec.store_path = f.store;
    spec.terms = parse_expression(f.expr);
  } else {
    spec.seed = f.seed;
    spec.n = f.n;
    spec.grid_cols = f.cols;
    if (f.endpoint_seeds.size() == 2) spec.endpoint_seeds = std::array{f.endpoint_seeds[0], f.endpoint_seeds[1]};
    if (f.endpoint_files.size() == 2) spec.endpoint_files = std::array{f.endpoint_files[0], f.endpoint_files[1]};
    if (kind == ExperimentKind::CircularPaper) spec.radius = f.radius;
  }
  spec.validate();
  return spec;
}

int run_spec(const ExperimentSpec& spec, bool emit_spec) {
  if (emit_spec) {
    std::cout << spec_to_json(spec).dump(2) << "\n";
    return 0;
  }
  const RunManifest manifest = run(spec);
  std::cout << manifest_path(manifest.spec.output_dir).string() << "\n";
  if (manifest.metrics.contains("max_image_jump_pair")) {
    const auto& pair = manifest.metrics["max_image_jump_pair"];
    std::cerr << "largest adjacent image jump: tiles " << pair[0] << " -> " << pair[1] << "\n";
  }
  return 0;
}

std::set<std::string> split_tags(const std::string& raw) {
  std::set<std::string> tags;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    const std::size_t end = std::min(raw.find(',', pos), raw.size());
    if (end > pos) tags.insert(raw.substr(pos, end - pos));
    pos = end + 1;
  }
  return tags;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latgen: latent-space traversal and vector arithmetic for deconvolutional generators"};
  app.require_subcommand(1);
  app.set_config("--config", default_config_path(), "TOML/INI config file; flags override it");

  ExperimentFlags flags;

  auto* sample = app.add_subcommand("sample", "Decode n sampled latents into tiles and a grid");
  add_common(sample, flags);
  add_grid(sample, flags);

  struct Traversal {
    const char* name;
    const char* help;
    ExperimentKind kind;
    CLI::App* cmd = nullptr;
  };
  std::vector<Traversal> traversals = {
      {"interpolate", "Linear interpolation between two latents", ExperimentKind::Interpolate},
      {"extrapolate", "Two-sided extrapolation beyond both endpoints", ExperimentKind::Extrapolate},
      {"circle", "Semicircular interpolation (reference scheme)", ExperimentKind::CircularPaper},
      {"slerp", "Great-circle interpolation", ExperimentKind::Slerp},
  };
  for (auto& t : traversals) {
    t.cmd = app.add_subcommand(t.name, t.help);
    add_common(t.cmd, flags);
    add_grid(t.cmd, flags);
    add_endpoints(t.cmd, flags);
    if (t.kind == ExperimentKind::CircularPaper) t.cmd->add_option("--radius", flags.radius, "Semicircle radius");
  }

  auto* arith = app.add_subcommand("arith", "Anchor-set vector arithmetic, e.g. \"+a -b +c\"");
  add_common(arith, flags);
  arith->add_option("--store", flags.store, "Anchor store JSON")->required();
  arith->add_option("--expr", flags.expr, "Signed anchor-set names")->required();

  std::string spec_path;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment spec file");
  run_cmd->add_option("spec", spec_path, "Spec JSON")->required();

  std::string manifest_file;
  auto* rerun = app.add_subcommand("rerun-check", "Re-execute a manifest and compare output hashes");
  rerun->add_option("manifest", manifest_file, "Manifest JSON")->required();

  auto* model_cmd = app.add_subcommand("model", "Inspect or create LGW1 weight files");
  model_cmd->require_subcommand(1);
  std::string model_path;
  auto* validate = model_cmd->add_subcommand("validate", "Check a weight file");
  validate->add_option("path", model_path)->required();
  auto* info = model_cmd->add_subcommand("info", "Print a weight file's layer stack");
  info->add_option("path", model_path)->required();
  std::uint64_t init_seed = 0;
  double init_scale = 1.0 / 32.0;
  auto* init = model_cmd->add_subcommand("init", "Write a randomly initialized DCGAN-64 generator");
  init->add_option("--seed", init_seed);
  init->add_option("--channel-scale", init_scale, "Fraction of the full channel widths, in (0, 1]");
  init->add_option("--out", model_path)->required();

  auto* anchor_cmd = app.add_subcommand("anchor", "Manage anchor sets");
  anchor_cmd->require_subcommand(1);
  std::string store_path, anchor_name, anchor_tags, latent_file, from_manifest;
  std::vector<std::size_t> pick;
  bool overwrite = false;
  auto* anchor_add = anchor_cmd->add_subcommand("add", "Create an anchor set");
  anchor_add->add_option("--store", store_path)->required();
  anchor_add->add_option("--name", anchor_name)->required();
  anchor_add->add_option("--tags", anchor_tags, "Comma-separated tags");
  auto* lf = anchor_add->add_option("--latent-file", latent_file, "One serialized latent per line");
  auto* fm = anchor_add->add_option("--from-manifest", from_manifest, "Take members from a run manifest");
  anchor_add->add_option("--pick", pick, "0-based latent indices used with --from-manifest");
  anchor_add->add_flag("--overwrite", overwrite);
  lf->excludes(fm);
  auto* anchor_list = anchor_cmd->add_subcommand("list", "List anchor sets");
  anchor_list->add_option("--store", store_path)->required();
  anchor_list->add_option("--tags", anchor_tags, "Comma-separated tags (all must match)");
  auto* anchor_delete = anchor_cmd->add_subcommand("delete", "Delete an anchor set");
  anchor_delete->add_option("--store", store_path)->required();
  anchor_delete->add_option("--name", anchor_name)->required();

  std::string listen = env_or("LATGEN_LISTEN", "127.0.0.1:8080");
  ServiceConfig service_config;
  service_config.cache_dir = env_or("LATGEN_CACHE_DIR", "latgen-cache");
  service_config.store_path = env_or("LATGEN_STORE", "anchors.json");
  std::string ui_dir = env_or("LATGEN_UI_DIR", "");
  auto* serve = app.add_subcommand("serve", "Start the HTTP API");
  serve->add_option("--listen", listen, "host:port (env LATGEN_LISTEN)");
  serve->add_option("--cache-dir", service_config.cache_dir, "Model and image cache (env LATGEN_CACHE_DIR)");
  serve->add_option("--store", service_config.store_path, "Anchor store JSON (env LATGEN_STORE)");
  serve->add_option("--ui-dir", ui_dir, "Static explorer assets (env LATGEN_UI_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*sample) return run_spec(build_spec(ExperimentKind::Samples, flags), flags.emit_spec);
    for (const auto& t : traversals) {
      if (*t.cmd) return run_spec(build_spec(t.kind, flags), flags.emit_spec);
    }
    if (*arith) return run_spec(build_spec(ExperimentKind::Arithmetic, flags), flags.emit_spec);
    if (*run_cmd) return run_spec(load_spec(spec_path), false);

    if (*rerun) {
      const RerunReport report = rerun_check(manifest_file);
      if (report.all_match()) {
        std::cout << "all " << report.checked << " output hashes match\n";
        return 0;
      }
      for (const auto& d : report.divergent) std::cout << "MISMATCH " << d.file << ": " << d.reason << "\n";
      return kExitMismatch;
    }

    if (*validate) {
      load_model(model_path);
      std::cout << "ok " << model_path << "\n";
      return 0;
    }
    if (*info) {
      const GeneratorModel m = load_model(model_path);
      std::cout << "input: " << m.input_dim << " (" << to_string(m.input_space) << ")\n";
      Shape shape{m.input_dim};
      for (std::size_t i = 0; i < m.layers.size(); ++i) {
        shape = infer_output_shape(m.layers[i], shape);
        std::cout << "  " << i << " " << layer_name(m.layers[i]) << " -> " << shape_string(shape) << "\n";
      }
      std::cout << "output: " << shape_string(m.output_shape) << "\n";
      return 0;
    }
    if (*init) {
      save_model(dcgan64_architecture(init_seed, init_scale), model_path);
      std::cout << model_path << "\n";
      return 0;
    }

    if (*anchor_add) {
      AnchorStore store(store_path);
      AnchorSet set;
      set.name = anchor_name;
      set.tags = split_tags(anchor_tags);
      if (!latent_file.empty()) {
        set.members = parse_latents(read_file(latent_file));
      } else if (!from_manifest.empty()) {
        const RunManifest m = load_manifest(from_manifest);
        for (auto i : pick) {
          if (i >= m.latents.size()) fail(ErrorCode::InvalidArgument, "--pick index " + std::to_string(i) + " out of range");
          set.members.push_back(parse_latent(m.latents[i]));
        }
      } else {
        fail(ErrorCode::InvalidArgument, "anchor add needs --latent-file or --from-manifest");
      }
      store.put(set, overwrite);
      std::cout << set.name << " (" << set.members.size() << " members)\n";
      return 0;
    }
    if (*anchor_list) {
      AnchorStore store(store_path);
      for (const auto& s : store.list(split_tags(anchor_tags))) {
        std::cout << s.name << "\t" << s.member_count << "\t";
        bool first = true;
        for (const auto& t : s.tags) {
          std::cout << (first ? "" : ",") << t;
          first = false;
        }
        std::cout << "\n";
      }
      return 0;
    }
    if (*anchor_delete) {
      AnchorStore store(store_path);
      store.remove(anchor_name);
      return 0;
    }

    if (*serve) {
      if (!ui_dir.empty()) service_config.ui_dir = ui_dir;
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "--listen must be host:port");
      const std::string host = listen.substr(0, colon);
      const int port = std::stoi(listen.substr(colon + 1));
      Service service(service_config);
      httplib::Server server;
      service.register_routes(server);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) fail(ErrorCode::Io, "cannot listen on " + listen);
      return 0;
    }
  } catch (const Error& e) {
    report_error(e);
    return exit_code(e.code());
  } catch (const std::exception& e) {
    report_error(Error(ErrorCode::Io, e.what()));
    return kExitIo;
  }
  return kExitUsage;
}
