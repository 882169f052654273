#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include "latgen/service.hpp"
#include "test_support.hpp"

using namespace latgen;
using nlohmann::json;
using testing_support::TempDir;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    service_ = std::make_unique<Service>(ServiceConfig{dir_ / "cache", dir_ / "anchors.json", std::nullopt});
    service_->register_routes(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(60, 0);
    model_bytes_ = encode_model(testing_support::tiny_dcgan(3));
  }

  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client_->Post(path, body.dump(), "application/json");
  }

  static json body(const httplib::Result& r) { return json::parse(r->body); }

  std::string upload(const std::string& bytes) {
    httplib::MultipartFormDataItems items{{"file", bytes, "model.lgw", "application/octet-stream"}};
    auto r = client_->Post("/api/models", items);
    EXPECT_EQ(r->status, 200) << r->body;
    return body(r)["model_id"];
  }

  std::string image(const std::string& url) {
    auto r = client_->Get(url);
    EXPECT_EQ(r->status, 200) << url;
    return r->body;
  }

  void put_anchor(const std::string& name, std::set<std::string> tags, std::uint64_t seed, std::int64_t dim = 100) {
    json latents = json::array();
    for (const auto& z : sample_latents(LatentSpace::UniformCube, dim, 3, seed)) latents.push_back(serialize_latent(z));
    auto r = post("/api/anchors", {{"name", name}, {"tags", tags}, {"latents", latents}});
    ASSERT_EQ(r->status, 201) << r->body;
  }

  TempDir dir_;
  httplib::Server server_;
  std::unique_ptr<Service> service_;
  std::thread thread_;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
  std::string model_bytes_;
};

}  // namespace

TEST_F(ServiceTest, ModelUploadIsContentAddressed) {
  const auto id = upload(model_bytes_);
  EXPECT_EQ(upload(model_bytes_), id);
  EXPECT_EQ(id, sha256_hex(model_bytes_));
  // Raw body upload works too.
  auto raw = client_->Post("/api/models", model_bytes_, "application/octet-stream");
  EXPECT_EQ(body(raw)["model_id"], id);

  upload(encode_model(testing_support::tiny_dcgan(4)));
  auto list = client_->Get("/api/models");
  ASSERT_EQ(list->status, 200);
  const auto models = body(list);
  ASSERT_EQ(models.size(), 2u);
  EXPECT_EQ(models[0]["input_dim"], 100);
}

TEST_F(ServiceTest, CorruptModelIsFormatError) {
  auto bad = model_bytes_;
  bad[0] = 'Z';
  auto r = client_->Post("/api/models", bad, "application/octet-stream");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(body(r)["code"], "format");
  EXPECT_TRUE(body(r).contains("message"));
  EXPECT_TRUE(body(r).contains("detail"));
}

TEST_F(ServiceTest, ShapeLieReportsLayer) {
  const auto bytes = encode_model(testing_support::tiny_dcgan(3));
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= std::uint64_t{static_cast<unsigned char>(bytes[8 + b])} << (8 * b);
  auto manifest = json::parse(bytes.substr(16, len));
  manifest["layers"][4]["out_channels"] = 5;
  const auto text = manifest.dump();
  std::string bad = "LATGENW1";
  for (int b = 0; b < 8; ++b) bad.push_back(static_cast<char>((text.size() >> (8 * b)) & 0xffu));
  bad += text + bytes.substr(16 + len);
  auto r = client_->Post("/api/models", bad, "application/octet-stream");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(body(r)["code"], "validation");
  EXPECT_NE(body(r)["message"].get<std::string>().find("layer 4"), std::string::npos);
}

TEST_F(ServiceTest, SampleIsDeterministic) {
  const auto id = upload(model_bytes_);
  const json req = {{"model_id", id}, {"count", 4}, {"seed", 11}};
  auto first = body(post("/api/sample", req));
  auto second = body(post("/api/sample", req));
  EXPECT_EQ(first, second);
  ASSERT_EQ(first["image_urls"].size(), 4u);
  ASSERT_EQ(first["latent_ids"].size(), 4u);

  // Latent ids resolve to the sampled vectors.
  const auto expected = sample_latents(LatentSpace::UniformCube, 100, 4, 11);
  auto lat = client_->Get("/api/latents/" + first["latent_ids"][2].get<std::string>());
  ASSERT_EQ(lat->status, 200);
  EXPECT_TRUE(parse_latent(body(lat)["latent"].get<std::string>()).bitwise_equal(expected[2]));

  // The served PNG is the rendering of that latent.
  const auto png = image(first["image_urls"][2]);
  EXPECT_EQ(decode_png_bytes(png), tensor_to_image(forward(testing_support::tiny_dcgan(3), expected[2])));

  auto other = body(post("/api/sample", {{"model_id", id}, {"count", 4}, {"seed", 12}}));
  EXPECT_NE(other["latent_ids"][0], first["latent_ids"][0]);
  EXPECT_EQ(body(post("/api/sample", {{"model_id", id}, {"count", 16}, {"seed", 1}}))["image_urls"].size(), 16u);
}

TEST_F(ServiceTest, UnknownModelIs404) {
  auto r = post("/api/sample", {{"model_id", std::string(64, 'a')}, {"count", 1}, {"seed", 1}});
  EXPECT_EQ(r->status, 404);
  EXPECT_EQ(body(r)["code"], "not_found");
}

TEST_F(ServiceTest, TraverseEndpointsAndDegenerateSegment) {
  const auto id = upload(model_bytes_);
  auto samples = body(post("/api/sample", {{"model_id", id}, {"count", 2}, {"seed", 5}}));
  auto r = post("/api/traverse", {{"model_id", id},
                                  {"kind", "linear"},
                                  {"endpoints", {{"latent_ids", samples["latent_ids"]}}},
                                  {"n", 5}});
  ASSERT_EQ(r->status, 200) << r->body;
  const auto t = body(r);
  ASSERT_EQ(t["image_urls"].size(), 5u);
  EXPECT_EQ(t["latent_ids"][0], samples["latent_ids"][0]);
  EXPECT_EQ(t["latent_ids"][4], samples["latent_ids"][1]);
  EXPECT_EQ(t["image_urls"][0], samples["image_urls"][0]);
  EXPECT_EQ(decode_png_bytes(image(t["grid_url"])).width, 4u * 64u);

  auto same = body(post("/api/traverse", {{"model_id", id},
                                          {"kind", "extrapolate"},
                                          {"endpoints", {{"seeds", {9, 9}}}},
                                          {"n", 16}}));
  for (const auto& url : same["image_urls"]) EXPECT_EQ(url, same["image_urls"][0]);
}

TEST_F(ServiceTest, TraverseErrors) {
  const auto id = upload(model_bytes_);
  auto unknown = post("/api/traverse", {{"model_id", id},
                                        {"kind", "slerp"},
                                        {"endpoints", {{"latent_ids", {"lat_nope", "lat_nope"}}}}});
  EXPECT_EQ(unknown->status, 404);

  put_anchor("short", {}, 1, 10);
  auto members = body(client_->Get("/api/anchors/short"))["latent_ids"];
  auto mismatch = post("/api/traverse", {{"model_id", id},
                                         {"kind", "linear"},
                                         {"endpoints", {{"latent_ids", {members[0], members[1]}}}}});
  EXPECT_EQ(mismatch->status, 422);

  auto odd = post("/api/traverse", {{"model_id", id}, {"kind", "extrapolate"}, {"endpoints", {{"seeds", {1, 2}}}}, {"n", 5}});
  EXPECT_EQ(odd->status, 400);
  auto bad_kind = post("/api/traverse", {{"model_id", id}, {"kind", "zigzag"}, {"endpoints", {{"seeds", {1, 2}}}}});
  EXPECT_EQ(bad_kind->status, 400);
  auto not_json = client_->Post("/api/traverse", "{", "application/json");
  EXPECT_EQ(not_json->status, 400);
}

TEST_F(ServiceTest, ArithmeticCancellation) {
  const auto id = upload(model_bytes_);
  put_anchor("a", {"smiling", "woman"}, 1);
  put_anchor("b", {"neutral", "woman"}, 2);
  put_anchor("b2", {"neutral", "woman"}, 2);
  auto r = post("/api/arithmetic", {{"model_id", id},
                                    {"terms",
                                     {{{"sign", "+"}, {"anchor_set", "a"}},
                                      {{"sign", "-"}, {"anchor_set", "b"}},
                                      {{"sign", "+"}, {"anchor_set", "b2"}}}}});
  ASSERT_EQ(r->status, 200) << r->body;
  const auto out = body(r);
  EXPECT_EQ(out["result_image_url"], out["operand_image_urls"][0]);
  EXPECT_EQ(out["result_latent_id"], out["operand_latent_ids"][0]);
  EXPECT_EQ(decode_png_bytes(image(out["strip_url"])).width, 4u * 64u);

  auto single = body(post("/api/arithmetic", {{"model_id", id}, {"terms", {{{"sign", 1}, {"anchor_set", "a"}}}}}));
  EXPECT_EQ(single["result_image_url"], out["operand_image_urls"][0]);

  auto missing = post("/api/arithmetic", {{"model_id", id}, {"terms", {{{"sign", "+"}, {"anchor_set", "nobody"}}}}});
  EXPECT_EQ(missing->status, 404);

  put_anchor("short", {}, 1, 10);
  auto mismatch = post("/api/arithmetic", {{"model_id", id}, {"terms", {{{"sign", "+"}, {"anchor_set", "short"}}}}});
  EXPECT_EQ(mismatch->status, 422);
}

TEST_F(ServiceTest, AnchorCrud) {
  EXPECT_EQ(body(client_->Get("/api/anchors")), json::array());
  put_anchor("sw", {"smiling", "woman"}, 1);
  put_anchor("nw", {"neutral", "woman"}, 2);

  auto dup = post("/api/anchors", {{"name", "sw"}, {"latents", {serialize_latent(sample_latents(LatentSpace::UniformCube, 100, 1, 1)[0])}}});
  EXPECT_EQ(dup->status, 409);

  auto filtered = body(client_->Get("/api/anchors?tags=smiling,woman"));
  ASSERT_EQ(filtered.size(), 1u);
  EXPECT_EQ(filtered[0]["name"], "sw");
  EXPECT_EQ(filtered[0]["member_count"], 3);
  EXPECT_EQ(body(client_->Get("/api/anchors?tags=woman")).size(), 2u);

  auto got = body(client_->Get("/api/anchors/sw"));
  EXPECT_EQ(got["members"].size(), 3u);
  EXPECT_EQ(got["latent_ids"].size(), 3u);

  // Anchors built from session latent ids.
  const auto id = upload(model_bytes_);
  auto samples = body(post("/api/sample", {{"model_id", id}, {"count", 3}, {"seed", 8}}));
  auto from_ids = post("/api/anchors", {{"name", "picked"}, {"latent_ids", samples["latent_ids"]}});
  EXPECT_EQ(from_ids->status, 201);
  EXPECT_EQ(body(client_->Get("/api/anchors/picked"))["latent_ids"], samples["latent_ids"]);

  EXPECT_EQ(client_->Delete("/api/anchors/sw")->status, 204);
  EXPECT_EQ(client_->Get("/api/anchors/sw")->status, 404);
  EXPECT_EQ(client_->Delete("/api/anchors/sw")->status, 404);
}

TEST_F(ServiceTest, SessionLatentsSurviveRestart) {
  const auto id = upload(model_bytes_);
  auto samples = body(post("/api/sample", {{"model_id", id}, {"count", 1}, {"seed", 3}}));
  Service again(ServiceConfig{dir_ / "cache", dir_ / "anchors.json", std::nullopt});
  httplib::Server other;
  again.register_routes(other);
  const int port = other.bind_to_any_port("127.0.0.1");
  std::thread t([&] { other.listen_after_bind(); });
  other.wait_until_ready();
  httplib::Client c("127.0.0.1", port);
  auto r = c.Get("/api/latents/" + samples["latent_ids"][0].get<std::string>());
  EXPECT_EQ(r->status, 200);
  auto m = c.Post("/api/sample", json{{"model_id", id}, {"count", 1}, {"seed", 3}}.dump(), "application/json");
  EXPECT_EQ(json::parse(m->body)["image_urls"], samples["image_urls"]);
  other.stop();
  t.join();
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(ErrorCode::Format), 400);
  EXPECT_EQ(http_status(ErrorCode::Validation), 400);
  EXPECT_EQ(http_status(ErrorCode::NotFound), 404);
  EXPECT_EQ(http_status(ErrorCode::Resolution), 404);
  EXPECT_EQ(http_status(ErrorCode::Conflict), 409);
  EXPECT_EQ(http_status(ErrorCode::Shape), 422);
  EXPECT_EQ(http_status(ErrorCode::Io), 500);
}
