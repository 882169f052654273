#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "latgen/anchor_store.hpp"
#include "latgen/error.hpp"
#include "latgen/experiment.hpp"
#include "latgen/fs_util.hpp"
#include "latgen/generator.hpp"
#include "latgen/hash.hpp"
#include "latgen/image.hpp"
#include "latgen/latent.hpp"
#include "latgen/weights_io.hpp"

namespace latgen {

struct ServiceConfig {
  fs::path cache_dir = "latgen-cache";  // models/, images/, session.json
  fs::path store_path = "anchors.json";
  std::optional<fs::path> ui_dir;
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Format:
    case ErrorCode::Validation: return 400;
    case ErrorCode::NotFound:
    case ErrorCode::Resolution: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::Shape:
    case ErrorCode::DegenerateGeometry:
    case ErrorCode::Numeric: return 422;
    case ErrorCode::Io: return 500;
  }
  return 500;
}

// HTTP facade over latent ops, the generator engine and the anchor store.
// Models and images are content-addressed by SHA-256; latent ids are derived
// from the serialized vector and persisted in the session file, so identical
// requests always map to identical URLs and ids.
class Service {
 public:
  explicit Service(ServiceConfig config) : config_(std::move(config)), store_(config_.store_path) {
    fs::create_directories(models_dir());
    fs::create_directories(images_dir());
    load_session();
  }

  void register_routes(httplib::Server& server) {
    server.Post("/api/models", wrap([this](const httplib::Request& req) { return upload_model(req); }));
    server.Get("/api/models", wrap([this](const httplib::Request&) { return list_models(); }));
    server.Post("/api/sample", wrap([this](const httplib::Request& req) { return sample(parse_body(req)); }));
    server.Post("/api/traverse", wrap([this](const httplib::Request& req) { return traverse(parse_body(req)); }));
    server.Post("/api/arithmetic", wrap([this](const httplib::Request& req) { return arithmetic(parse_body(req)); }));
    server.Get("/api/latents/([A-Za-z0-9_]+)", wrap([this](const httplib::Request& req) {
                 return Reply{200, {{"latent_id", req.matches[1].str()}, {"latent", serialize_latent(latent(req.matches[1]))}}};
               }));
    server.Get("/api/anchors", wrap([this](const httplib::Request& req) { return list_anchors(req); }));
    server.Post("/api/anchors", wrap([this](const httplib::Request& req) { return put_anchors(parse_body(req)); }));
    server.Get("/api/anchors/([^/]+)", wrap([this](const httplib::Request& req) { return get_anchors(req.matches[1]); }));
    server.Delete("/api/anchors/([^/]+)",
                  wrap([this](const httplib::Request& req) { return delete_anchors(req.matches[1]); }));
    server.Get("/images/([0-9a-f]{64})\\.png", [this](const httplib::Request& req, httplib::Response& res) {
      const fs::path file = images_dir() / (req.matches[1].str() + ".png");
      std::error_code ec;
      if (!fs::exists(file, ec)) {
        send_error(res, Error(ErrorCode::NotFound, "image not found"));
        return;
      }
      res.set_content(read_file(file), "image/png");
    });
    if (config_.ui_dir && fs::is_directory(*config_.ui_dir)) server.set_mount_point("/", config_.ui_dir->string());
  }

 private:
  using Json = nlohmann::json;

  struct Reply {
    int status = 200;
    Json body;
  };

  fs::path models_dir() const { return config_.cache_dir / "models"; }
  fs::path images_dir() const { return config_.cache_dir / "images"; }
  fs::path session_path() const { return config_.cache_dir / "session.json"; }

  static void send_error(httplib::Response& res, const Error& e) {
    res.status = http_status(e.code());
    res.set_content(Json{{"code", to_string(e.code())}, {"message", e.message()}, {"detail", e.detail()}}.dump(),
                    "application/json");
  }

  template <typename F>
  httplib::Server::Handler wrap(F fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        Reply reply = fn(req);
        res.status = reply.status;
        if (reply.status != 204) res.set_content(reply.body.dump(), "application/json");
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const Json::exception& e) {
        send_error(res, Error(ErrorCode::InvalidArgument, std::string("malformed request: ") + e.what()));
      } catch (const std::exception& e) {
        send_error(res, Error(ErrorCode::Io, e.what()));
      }
    };
  }

  static Json parse_body(const httplib::Request& req) {
    try {
      Json body = Json::parse(req.body);
      if (!body.is_object()) fail(ErrorCode::InvalidArgument, "request body must be a JSON object");
      return body;
    } catch (const Json::parse_error& e) {
      fail(ErrorCode::InvalidArgument, std::string("request body is not valid JSON: ") + e.what());
    }
  }

  // --- models -------------------------------------------------------------

  Reply upload_model(const httplib::Request& req) {
    std::string bytes;
    if (req.has_file("file")) {
      bytes = req.get_file_value("file").content;
    } else {
      bytes = req.body;
    }
    GeneratorModel model = decode_model(bytes);
    const std::string id = sha256_hex(bytes);
    const fs::path file = models_dir() / (id + ".lgw1");
    {
      std::lock_guard lock(mutex_);
      std::error_code ec;
      if (!fs::exists(file, ec)) write_file_atomic(file, bytes);
      models_.emplace(id, std::make_shared<const GeneratorModel>(std::move(model)));
    }
    return {200, {{"model_id", id}}};
  }

  Reply list_models() {
    Json list = Json::array();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(models_dir())) {
      if (entry.path().extension() == ".lgw1") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string id = f.stem().string();
      const auto m = model(id);
      list.push_back({{"model_id", id},
                      {"input_dim", m->input_dim},
                      {"input_space", to_string(m->input_space)},
                      {"output_shape", m->output_shape},
                      {"layers", m->layers.size()}});
    }
    return {200, list};
  }

  std::shared_ptr<const GeneratorModel> model(const std::string& id) {
    std::lock_guard lock(mutex_);
    if (auto it = models_.find(id); it != models_.end()) return it->second;
    const fs::path file = models_dir() / (id + ".lgw1");
    std::error_code ec;
    if (id.find_first_not_of("0123456789abcdef") != std::string::npos || !fs::exists(file, ec)) {
      fail(ErrorCode::NotFound, "unknown model '" + id + "'");
    }
    auto m = std::make_shared<const GeneratorModel>(load_model(file));
    models_.emplace(id, m);
    return m;
  }

  // --- session latents and images -----------------------------------------

  void load_session() {
    std::error_code ec;
    if (!fs::exists(session_path(), ec)) return;
    const Json doc = Json::parse(read_file(session_path()));
    for (const auto& [id, text] : doc.at("latents").items()) {
      latents_.emplace(id, parse_latent(text.get<std::string>()));
    }
  }

  std::string register_latent(const LatentVector& z) {
    const std::string text = serialize_latent(z);
    const std::string id = "lat_" + sha256_hex(text).substr(0, 24);
    std::lock_guard lock(mutex_);
    if (latents_.emplace(id, z).second) {
      Json doc = {{"latents", Json::object()}};
      for (const auto& [k, v] : latents_) doc["latents"][k] = serialize_latent(v);
      write_file_atomic(session_path(), doc.dump());
    }
    return id;
  }

  LatentVector latent(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = latents_.find(id);
    if (it == latents_.end()) fail(ErrorCode::NotFound, "unknown latent id '" + id + "'");
    return it->second;
  }

  std::string store_image(const ImageBuffer& img) {
    const std::string bytes = encode_png_bytes(img);
    const std::string hash = sha256_hex(bytes);
    const fs::path file = images_dir() / (hash + ".png");
    std::error_code ec;
    if (!fs::exists(file, ec)) write_file_atomic(file, bytes);
    return "/images/" + hash + ".png";
  }

  ImageBuffer render(const GeneratorModel& m, const LatentVector& z) {
    if (z.dim() != m.input_dim) {
      fail(ErrorCode::Shape, "latent dim " + std::to_string(z.dim()) + " does not match model input_dim " +
                                 std::to_string(m.input_dim));
    }
    ForwardOptions options;
    options.on_warning = [](std::string_view) {};
    return tensor_to_image(forward(m, z, options));
  }

  static std::uint64_t get_seed(const Json& j) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    const auto v = j.get<std::int64_t>();
    require(v >= 0, ErrorCode::InvalidArgument, "seed must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  // --- generation ---------------------------------------------------------

  Reply sample(const Json& body) {
    const auto m = model(body.at("model_id").get<std::string>());
    const auto count = body.value("count", std::int64_t{16});
    require(count >= 1 && count <= 1024, ErrorCode::InvalidArgument, "count must lie in [1, 1024]");
    const auto seed = get_seed(body.at("seed"));
    Json ids = Json::array(), urls = Json::array();
    for (const auto& z : sample_latents(m->input_space, static_cast<std::int64_t>(m->input_dim), count, seed)) {
      ids.push_back(register_latent(z));
      urls.push_back(store_image(render(*m, z)));
    }
    return {200, {{"latent_ids", ids}, {"image_urls", urls}}};
  }

  Reply traverse(const Json& body) {
    const auto m = model(body.at("model_id").get<std::string>());
    const auto kind = body.at("kind").get<std::string>();
    const auto n = body.value("n", std::size_t{16});
    const auto cols = body.value("grid_cols", std::size_t{4});
    require(cols >= 1, ErrorCode::InvalidArgument, "grid_cols must be >= 1");

    std::vector<LatentVector> ends;
    const auto& endpoints = body.at("endpoints");
    if (endpoints.contains("latent_ids")) {
      for (const auto& id : endpoints["latent_ids"]) ends.push_back(latent(id.get<std::string>()));
    } else if (endpoints.contains("seeds")) {
      for (const auto& s : endpoints["seeds"]) {
        ends.push_back(sample_latents(m->input_space, static_cast<std::int64_t>(m->input_dim), 1, get_seed(s)).front());
      }
    } else {
      fail(ErrorCode::InvalidArgument, "endpoints needs latent_ids or seeds");
    }
    require(ends.size() == 2, ErrorCode::InvalidArgument, "endpoints needs exactly two entries");
    for (const auto& e : ends) {
      if (e.dim() != m->input_dim) {
        fail(ErrorCode::Shape, "endpoint dim " + std::to_string(e.dim()) + " does not match model input_dim " +
                                   std::to_string(m->input_dim));
      }
    }

    TraversalSequence seq = [&] {
      if (kind == "linear" || kind == "interpolate") return lerp(ends[0], ends[1], n);
      if (kind == "extrapolate") return extrapolate_two_sided(ends[0], ends[1], n);
      if (kind == "circular_paper" || kind == "circle") {
        return circular_paper(ends[0], ends[1], n, body.value("radius", 1.0));
      }
      if (kind == "slerp") return slerp(ends[0], ends[1], n);
      fail(ErrorCode::InvalidArgument, "unknown traversal kind '" + kind + "'");
    }();

    Json ids = Json::array(), urls = Json::array();
    std::vector<ImageBuffer> tiles;
    for (const auto& z : seq.points) {
      ids.push_back(register_latent(z));
      tiles.push_back(render(*m, z));
      urls.push_back(store_image(tiles.back()));
    }
    const std::string grid = store_image(compose_grid(tiles, cols));
    return {200, {{"latent_ids", ids}, {"image_urls", urls}, {"grid_url", grid}}};
  }

  Reply arithmetic(const Json& body) {
    const auto m = model(body.at("model_id").get<std::string>());
    const auto& terms = body.at("terms");
    require(terms.is_array() && !terms.empty(), ErrorCode::InvalidArgument, "terms must be a nonempty array");

    ArithmeticExpression expr;
    Json operand_ids = Json::array(), operand_urls = Json::array();
    std::vector<ImageBuffer> tiles;
    for (const auto& t : terms) {
      int sign = 1;
      const auto& s = t.at("sign");
      if (s.is_string()) {
        const auto text = s.get<std::string>();
        require(text == "+" || text == "-", ErrorCode::InvalidArgument, "sign must be \"+\" or \"-\"");
        sign = text == "-" ? -1 : 1;
      } else {
        sign = s.get<int>();
        require(sign == 1 || sign == -1, ErrorCode::InvalidArgument, "sign must be +1 or -1");
      }
      const auto name = t.at("anchor_set").get<std::string>();
      AnchorSet set = [&] {
        std::lock_guard lock(store_mutex_);
        return store_.get(name);
      }();
      const LatentVector mean = average_anchors(set);
      if (mean.dim() != m->input_dim) {
        fail(ErrorCode::Shape, "anchor set '" + name + "' has dim " + std::to_string(mean.dim()) +
                                   ", model expects " + std::to_string(m->input_dim));
      }
      operand_ids.push_back(register_latent(mean));
      tiles.push_back(render(*m, mean));
      operand_urls.push_back(store_image(tiles.back()));
      expr.terms.push_back({sign, std::move(set)});
    }
    const LatentVector result = evaluate_arithmetic(expr);
    tiles.push_back(render(*m, result));
    const std::string result_url = store_image(tiles.back());
    const std::string strip_url = store_image(compose_grid(tiles, tiles.size()));
    return {200,
            {{"result_latent_id", register_latent(result)},
             {"operand_latent_ids", operand_ids},
             {"operand_image_urls", operand_urls},
             {"result_image_url", result_url},
             {"strip_url", strip_url}}};
  }

  // --- anchors ------------------------------------------------------------

  static Json summary_json(const AnchorSetSummary& s) {
    return {{"name", s.name},
            {"tags", s.tags},
            {"member_count", s.member_count},
            {"dim", s.dim},
            {"space", to_string(s.space)},
            {"created_at", s.created_at}};
  }

  Reply list_anchors(const httplib::Request& req) {
    std::set<std::string> tags;
    if (req.has_param("tags")) {
      const std::string raw = req.get_param_value("tags");
      std::size_t pos = 0;
      while (pos <= raw.size()) {
        const std::size_t end = std::min(raw.find(',', pos), raw.size());
        if (end > pos) tags.insert(raw.substr(pos, end - pos));
        pos = end + 1;
      }
    }
    std::lock_guard lock(store_mutex_);
    Json list = Json::array();
    for (const auto& s : store_.list(tags)) list.push_back(summary_json(s));
    return {200, list};
  }

  Reply put_anchors(const Json& body) {
    AnchorSet set;
    set.name = body.at("name").get<std::string>();
    if (body.contains("tags")) set.tags = body["tags"].get<std::set<std::string>>();
    if (body.contains("latent_ids")) {
      for (const auto& id : body["latent_ids"]) set.members.push_back(latent(id.get<std::string>()));
    }
    if (body.contains("latents")) {
      for (const auto& text : body["latents"]) set.members.push_back(parse_latent(text.get<std::string>()));
    }
    const bool overwrite = body.value("overwrite", false);
    std::lock_guard lock(store_mutex_);
    store_.put(set, overwrite);
    return {201, {{"name", set.name}}};
  }

  Reply get_anchors(const std::string& name) {
    AnchorSet set = [&] {
      std::lock_guard lock(store_mutex_);
      return store_.get(name);
    }();
    Json members = Json::array(), ids = Json::array();
    for (const auto& z : set.members) {
      members.push_back(serialize_latent(z));
      ids.push_back(register_latent(z));
    }
    return {200, {{"name", set.name}, {"tags", set.tags}, {"members", members}, {"latent_ids", ids}}};
  }

  Reply delete_anchors(const std::string& name) {
    std::lock_guard lock(store_mutex_);
    store_.remove(name);
    return {204, {}};
  }

  ServiceConfig config_;
  std::mutex mutex_;  // models_, latents_, session file
  std::map<std::string, std::shared_ptr<const GeneratorModel>> models_;
  std::map<std::string, LatentVector> latents_;
  std::mutex store_mutex_;  // single writer for the anchor store
  AnchorStore store_;
};

}  // namespace latgen
