#include <gtest/gtest.h>

#include <filesystem>
#include <future>

#include "taue/service.hpp"

using namespace taue;
using nlohmann::json;

namespace {

json defaults() {
  return {{"prompt_fg", "a red apple"},
          {"prompt_bg", "a wooden table"},
          {"width", 64},
          {"height", 64},
          {"steps", 8},
          {"seed", 5},
          {"boxes", {{{"cx", 4}, {"cy", 4}, {"w", 5}, {"h", 5}}}}};
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    home_ = std::filesystem::temp_directory_path() /
            ("taue_service_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(home_);
  }
  void TearDown() override { std::filesystem::remove_all(home_); }

  ServiceOptions options(std::size_t workers = 1) const { return {home_, workers}; }

  static json done(JobService& s, const std::string& id) {
    const json j = s.wait(id);
    EXPECT_EQ(j["state"], "done") << j.dump();
    return j;
  }

  std::filesystem::path home_;
};

std::uint8_t png_bit_depth(const std::vector<std::uint8_t>& bytes) { return bytes.at(24); }

}  // namespace

TEST_F(ServiceTest, SessionsHaveDistinctIds) {
  JobService s(options());
  std::set<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.insert(s.create_session(defaults()));
  EXPECT_EQ(ids.size(), 20u);
  EXPECT_NO_THROW(s.create_session());
}

TEST_F(ServiceTest, InvalidDefaultsNameTheField) {
  JobService s(options());
  json bad = defaults();
  bad["alpha"] = 3.0;
  try {
    s.create_session(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "alpha");
  }
  bad = defaults();
  bad["bogus"] = 1;
  EXPECT_THROW(s.create_session(bad), ConfigError);
}

TEST_F(ServiceTest, PhasePreconditions) {
  JobService s(options());
  const std::string sid = s.create_session(defaults());
  EXPECT_THROW(s.submit(sid, "composite", {}), DependencyError);
  EXPECT_THROW(s.submit(sid, "background", {}), DependencyError);
  EXPECT_THROW(s.submit(sid, "replace_bg", {}), DependencyError);
  EXPECT_THROW(s.submit(sid, "sideways", {}), ConfigError);
  EXPECT_THROW(s.submit("nope", "full", {}), NotFoundError);
  EXPECT_THROW(s.get_job("0123"), NotFoundError);
  json delta{{"steps", 0}};
  EXPECT_THROW(s.submit(sid, "full", delta), ConfigError);
}

TEST_F(ServiceTest, PhasedJobsMatchFullRun) {
  JobService s(options());
  const std::string sid = s.create_session(defaults());
  const json fg = done(s, s.submit(sid, "foreground", {}));
  EXPECT_EQ(fg["result"]["kind"], "foreground");
  const json comp = done(s, s.submit(sid, "composite", {}));
  const json bg = done(s, s.submit(sid, "background", {}));
  const json full = done(s, s.submit(sid, "full", {}));
  const LayerSet a = s.get_layerset(sid, bg["result"]["layerset"]);
  const LayerSet b = s.get_layerset(sid, full["result"]["layerset"]);
  EXPECT_EQ(a.composite, b.composite);
  EXPECT_EQ(a.background, b.background);
  EXPECT_EQ(a.foreground, b.foreground);
  EXPECT_EQ(checksum(a.fg_bundle), fg["result"]["bundle_checksum"].get<std::uint64_t>());
  EXPECT_EQ(checksum(a.comp_bundle), comp["result"]["bundle_checksum"].get<std::uint64_t>());
}

TEST_F(ServiceTest, LayersAreServedAsStored) {
  JobService s(options());
  const std::string sid = s.create_session(defaults());
  const json j = done(s, s.submit(sid, "full", {}));
  EXPECT_DOUBLE_EQ(j["progress"].get<double>(), 1.0);
  const std::string ls = j["result"]["layerset"];
  const LayerSet stored = s.get_layerset(sid, ls);
  const auto fg = s.get_layer(sid, ls, "foreground");
  const Image fg_img = decode_png(fg);
  EXPECT_EQ(fg_img.channels, 4u);
  EXPECT_EQ(fg_img, stored.foreground);
  EXPECT_EQ(decode_png(s.get_layer(sid, ls, "composite")), stored.composite);
  EXPECT_EQ(decode_png(s.get_layer(sid, ls, "background")), stored.background);
  const auto mask = s.get_layer(sid, ls, "mask");
  EXPECT_EQ(png_bit_depth(mask), 1);
  EXPECT_EQ(decode_png(mask).width, 64u);
  EXPECT_THROW(s.get_layer(sid, ls, "depth"), InvalidArgument);
  EXPECT_THROW(s.get_layer(sid, "ffff", "composite"), NotFoundError);
  const json info = s.get_session(sid);
  EXPECT_EQ(info["layersets"].size(), 1u);
  EXPECT_EQ(info["config_history"].size(), 1u);
}

TEST_F(ServiceTest, ReplaceBackgroundKeepsSourceIntact) {
  JobService s(options());
  const std::string sid = s.create_session(defaults());
  const std::string src = done(s, s.submit(sid, "full", {}))["result"]["layerset"];
  const LayerSet before = s.get_layerset(sid, src);
  const json r = done(s, s.submit(sid, "replace_bg", {{"prompt_bg", "a beach"}}, {src, 1, 0}));
  const LayerSet after = s.get_layerset(sid, r["result"]["layerset"]);
  const LayerSet again = s.get_layerset(sid, src);
  EXPECT_EQ(checksum(again.fg_bundle), checksum(before.fg_bundle));
  EXPECT_EQ(again.composite, before.composite);
  EXPECT_EQ(after.config.prompt_bg, "a beach");
  EXPECT_EQ(after.config.boxes[0].box.cx, before.config.boxes[0].box.cx + 1);
  EXPECT_EQ(after.metadata["source_layerset"], src);
}

TEST_F(ServiceTest, FailedJobReportsTaggedError) {
  JobService s(options());
  const std::string sid = s.create_session(defaults());
  const json j = s.wait(s.submit(sid, "full", {{"backend", {{"name", "ldm"}}}}));
  EXPECT_EQ(j["state"], "error");
  EXPECT_EQ(j["error"]["kind"], "backend");
}

TEST_F(ServiceTest, ProgressMonotoneAndPollsStayLive) {
  JobService s(options());
  const std::string sid = s.create_session(defaults());
  const std::string id = s.submit(sid, "full", {{"backend", {{"toy", {{"step_delay_ms", 10}}}}}});
  double last = 0.0;
  std::size_t polls = 0, running_polls = 0;
  for (;;) {
    const auto t0 = std::chrono::steady_clock::now();
    const json j = s.get_job(id);
    EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(100));
    const double p = j["progress"];
    EXPECT_GE(p, last);
    last = p;
    ++polls;
    if (j["state"] == "running") ++running_polls;
    if (j["state"] == "done" || j["state"] == "error") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  EXPECT_EQ(last, 1.0);
  EXPECT_GT(running_polls, 3u);
}

TEST_F(ServiceTest, ConcurrentSessionsAreIndependent) {
  JobService s(options(3));
  std::vector<std::string> sids, jobs;
  for (int i = 0; i < 3; ++i) sids.push_back(s.create_session(defaults()));
  for (const auto& sid : sids) jobs.push_back(s.submit(sid, "full", {}));
  std::vector<Image> comps;
  for (std::size_t i = 0; i < 3; ++i) comps.push_back(s.get_layerset(sids[i], done(s, jobs[i])["result"]["layerset"]).composite);
  EXPECT_EQ(comps[0], comps[1]);
  EXPECT_EQ(comps[1], comps[2]);
}

TEST_F(ServiceTest, RestartRestoresSessionsAndReproduces) {
  std::string sid, ls;
  Image composite;
  {
    JobService s(options());
    sid = s.create_session(defaults());
    ls = done(s, s.submit(sid, "full", {{"seed", 11}}))["result"]["layerset"];
    composite = s.get_layerset(sid, ls).composite;
  }
  JobService s(options());
  const json info = s.get_session(sid);
  ASSERT_EQ(info["jobs"].size(), 1u);
  const json old = s.get_job(info["jobs"][0]);
  EXPECT_EQ(old["state"], "done");
  EXPECT_EQ(s.get_layerset(sid, ls).composite, composite);
  // Re-running the recorded config reproduces the layer set exactly.
  json delta = old["config"];
  const std::string again = done(s, s.submit(sid, "full", delta))["result"]["layerset"];
  EXPECT_EQ(s.get_layerset(sid, again).composite, composite);
  // A follow-up phase works against restored artifacts.
  EXPECT_NO_THROW(done(s, s.submit(sid, "replace_bg", {{"prompt_bg", "fog"}})));
}

TEST_F(ServiceTest, UnfinishedJobsMarkedAfterRestart) {
  std::string sid, running;
  {
    JobService s(options());
    sid = s.create_session(defaults());
    running = s.submit(sid, "full", {{"backend", {{"toy", {{"step_delay_ms", 20}}}}}});
    const std::string queued = s.submit(sid, "full", {});
    while (s.get_job(running)["state"] == "queued") std::this_thread::sleep_for(std::chrono::milliseconds(1));
    s.shutdown();
    EXPECT_EQ(s.get_job(running)["state"], "done");
    const json q = s.get_job(queued);
    EXPECT_EQ(q["state"], "error");
    EXPECT_EQ(q["error"]["kind"], "shutdown");
    EXPECT_THROW(s.submit(sid, "full", {}), IoError);
  }
  // Simulate a crash mid-job: a job event with no completion.
  {
    std::ofstream log(home_ / "sessions" / sid / "events.jsonl", std::ios::app);
    log << json{{"type", "job"}, {"id", "abcdef0123456789"}, {"phase", "full"}, {"config", defaults()}}.dump() << '\n';
    log << "{\"type\": \"job_do";  // torn write
  }
  JobService s(options());
  const json j = s.get_job("abcdef0123456789");
  EXPECT_EQ(j["state"], "error");
  EXPECT_EQ(j["error"]["message"], "interrupted by service restart");
  EXPECT_EQ(s.get_job(running)["state"], "done");
}

TEST_F(ServiceTest, HttpEndpoints) {
  JobService s(options());
  HttpServer server(s);
  ASSERT_TRUE(server.start("127.0.0.1", 0));
  httplib::Client c("127.0.0.1", server.port());

  auto res = c.Get("/healthz");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  json bad = defaults();
  bad["boxes"][0]["cx"] = "left";
  res = c.Post("/sessions", json{{"config", bad}}.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["error"]["path"], "boxes[0].cx");
  res = c.Post("/sessions", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);

  res = c.Post("/sessions", json{{"config", defaults()}}.dump(), "application/json");
  ASSERT_EQ(res->status, 201);
  const std::string sid = json::parse(res->body)["session_id"];

  res = c.Post("/sessions/" + sid + "/jobs", json{{"phase", "composite"}}.dump(), "application/json");
  EXPECT_EQ(res->status, 409);
  res = c.Post("/sessions/" + sid + "/jobs", json{{"phase", "full"}, {"offset", "x"}}.dump(), "application/json");
  EXPECT_EQ(res->status, 400);

  res = c.Post("/sessions/" + sid + "/jobs", json{{"phase", "full"}}.dump(), "application/json");
  ASSERT_EQ(res->status, 202);
  const std::string jid = json::parse(res->body)["job_id"];
  json job;
  for (int i = 0; i < 5000; ++i) {
    res = c.Get("/jobs/" + jid);
    ASSERT_EQ(res->status, 200);
    job = json::parse(res->body);
    if (job["state"] == "done" || job["state"] == "error") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ASSERT_EQ(job["state"], "done");
  const std::string ls = job["result"]["layerset"];
  res = c.Get("/sessions/" + sid + "/layersets/" + ls + "/composite");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(decode_png(std::span(reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size())),
            s.get_layerset(sid, ls).composite);
  EXPECT_EQ(c.Get("/sessions/" + sid + "/layersets/" + ls + "/depth")->status, 400);
  EXPECT_EQ(c.Get("/jobs/0000")->status, 404);
  EXPECT_EQ(c.Get("/sessions/0000")->status, 404);
  res = c.Get("/sessions/" + sid);
  EXPECT_EQ(json::parse(res->body)["id"], sid);
  server.stop();
}

TEST(ParseAddress, HostAndPort) {
  EXPECT_EQ(parse_address("0.0.0.0:9000"), (std::pair<std::string, int>{"0.0.0.0", 9000}));
  EXPECT_EQ(parse_address(":81"), (std::pair<std::string, int>{"127.0.0.1", 81}));
  EXPECT_EQ(parse_address("localhost").second, 8080);
  EXPECT_THROW(parse_address("h:abc"), ConfigError);
  EXPECT_THROW(parse_address("h:70000"), ConfigError);
}
