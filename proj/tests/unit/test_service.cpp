#include "scatfit/service.hpp"

#include <chrono>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "fixtures.hpp"
#include "scatfit/output.hpp"

namespace fs = std::filesystem;
using namespace scatfit;
using scatfit::testing::ScratchDir;
using scatfit::testing::slurp;

namespace {

const fs::path kModels = SCATFIT_MODELS_DIR;

struct Reply {
  int status = 0;
  Json body;
};

class Api {
 public:
  explicit Api(int port) : client_("127.0.0.1", port) { client_.set_read_timeout(30, 0); }

  Reply get(const std::string& path, const httplib::Params& params = {}) {
    return wrap(client_.Get(path, params, httplib::Headers{}));
  }
  Reply patch(const std::string& path, const Json& body) {
    return wrap(client_.Patch(path, body.dump(), "application/json"));
  }
  Reply patch_raw(const std::string& path, const std::string& body) {
    return wrap(client_.Patch(path, body, "application/json"));
  }
  Reply post(const std::string& path, const Json& body = Json::object()) {
    return wrap(client_.Post(path, body.dump(), "application/json"));
  }
  Reply put(const std::string& path, const Json& body) {
    return wrap(client_.Put(path, body.dump(), "application/json"));
  }

  // Reads the whole event stream and returns the decoded messages.
  std::vector<Json> events(int fit_id) {
    std::string buf;
    auto res = client_.Get("/api/fit/events?fit=" + std::to_string(fit_id),
                           [&](const char* data, std::size_t len) {
                             buf.append(data, len);
                             return true;
                           });
    EXPECT_TRUE(res);
    std::vector<Json> out;
    std::size_t pos = 0;
    while ((pos = buf.find("data: ", pos)) != std::string::npos) {
      const auto end = buf.find("\n\n", pos);
      out.push_back(Json::parse(buf.substr(pos + 6, end - pos - 6)));
      pos = end;
    }
    return out;
  }

 private:
  static Reply wrap(const httplib::Result& r) {
    if (!r) return {-1, nullptr};
    return {r->status, r->body.empty() ? Json() : Json::parse(r->body)};
  }
  httplib::Client client_;
};

// A fit that runs until interrupted.
const Json kLongFit = {{"optimizer", "de"},
                       {"options", {{"population_size", 30}, {"max_generations", 1000000}, {"seed", 5}}}};

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    doc_ = scatfit::testing::sphere_fit_document(7.875);
    service_ = std::make_unique<Service>(ModelFile::from_json(doc_));
    port_ = service_->start();
    api_ = std::make_unique<Api>(port_);
  }
  void TearDown() override {
    api_.reset();
    service_->stop();
  }

  const Parameter& R() const { return *service_->model().find_parameter("p0"); }

  Json doc_;
  int port_ = 0;
  std::unique_ptr<Service> service_;
  std::unique_ptr<Api> api_;
};

}  // namespace

TEST_F(ServiceTest, Health) {
  const Reply r = api_->get("/api/health");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["status"], "ok");
}

TEST_F(ServiceTest, SessionInventory) {
  const Reply r = api_->get("/api/session");
  ASSERT_EQ(r.status, 200);
  const Json& s = r.body;
  EXPECT_EQ(s["revision"], 0);
  ASSERT_EQ(s["parameters"].size(), 4u);
  EXPECT_EQ(s["parameters"][0]["id"], "p0");
  EXPECT_EQ(s["parameters"][0]["name"], "R");
  EXPECT_EQ(s["parameters"][0]["raw_value"], 7.875);
  EXPECT_EQ(s["parameters"][1]["value"], 1.2e-3);
  ASSERT_EQ(s["dependents"].size(), 1u);
  EXPECT_NEAR(s["dependents"][0]["value"].get<double>(), 4.0 / 3.0 * M_PI * std::pow(7.875, 3), 1e-9);
  EXPECT_EQ(s["functors"][0]["name"], "I");
  ASSERT_EQ(s["models"].size(), 1u);
  const ModelFile lib = ModelFile::from_json(doc_);
  EXPECT_EQ(s["models"][0]["chi2"].get<double>(), lib.objective()->chi2());
  EXPECT_EQ(s["fit"]["running"], false);
}

TEST_F(ServiceTest, PatchThenCurveMatchesLibrary) {
  const Reply p = api_->patch("/api/params", {{"p0", 8.0}});
  ASSERT_EQ(p.status, 200) << p.body;
  EXPECT_EQ(p.body["revision"], 1);
  EXPECT_EQ(p.body["parameters"][0]["raw_value"], 8.0);

  const Reply c = api_->get("/api/curve", {{"functor", "I"}, {"grid", "q=0.01:1:0.01"}});
  ASSERT_EQ(c.status, 200) << c.body;
  EXPECT_EQ(c.body["revision"], 1);

  const ModelFile lib = ModelFile::from_json(doc_);
  Parameter r = *lib.find_parameter("p0");
  r.set_raw_value(8.0);
  const auto q = parse_axis("q=0.01:1:0.01").values;
  const auto expect = lib.find_functor("I")->evaluate(std::vector<std::vector<double>>{q});
  const auto got = c.body["values"].get<std::vector<double>>();
  ASSERT_EQ(got.size(), expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], expect[i]) << i;
  EXPECT_EQ(c.body["coordinates"][0].get<std::vector<double>>(), q);
}

TEST_F(ServiceTest, CurveWithoutGridUsesModelData) {
  const Reply c = api_->get("/api/curve", {{"functor", "I"}});
  ASSERT_EQ(c.status, 200) << c.body;
  EXPECT_EQ(c.body["values"].size(), 120u);
  EXPECT_EQ(api_->get("/api/curve", {{"functor", "nope"}}).status, 404);
  EXPECT_EQ(api_->get("/api/curve", {{"functor", "I"}, {"grid", "q=1:0:1"}}).status, 422);
  EXPECT_EQ(api_->get("/api/curve", {{"functor", "I"}, {"grid", "x=1"}}).status, 422);
  EXPECT_EQ(api_->get("/api/curve").status, 422);
}

TEST_F(ServiceTest, PatchValidation) {
  EXPECT_EQ(api_->patch("/api/params", {{"zzz", 1.0}}).status, 404);
  EXPECT_EQ(api_->patch("/api/params", {{"p0", 50.0}}).status, 422);
  EXPECT_EQ(api_->patch("/api/params", {{"p0", {{"raw", 6.0}}}}).status, 422);
  EXPECT_EQ(api_->patch_raw("/api/params", "{not json").status, 422);
  // The batch is all or nothing.
  EXPECT_EQ(api_->patch("/api/params", {{"p0", 9.0}, {"p2", 100.0}}).status, 422);
  EXPECT_EQ(R().raw_value(), 7.875);
  EXPECT_EQ(service_->revision(), 0u);

  const Reply moved = api_->patch("/api/params", {{"p0", {{"raw_value", 30.0}, {"bounds", {20.0, 40.0}}}}});
  ASSERT_EQ(moved.status, 200) << moved.body;
  EXPECT_EQ(R().raw_value(), 30.0);
  EXPECT_EQ(R().bounds()->lo, 20.0);
  const Reply fixed = api_->patch("/api/params", {{"p1", {{"fixed", false}}}});
  ASSERT_EQ(fixed.status, 200);
  EXPECT_FALSE(service_->model().find_parameter("p1")->fixed());
}

TEST_F(ServiceTest, ModelEndpoint) {
  const Reply m = api_->get("/api/model", {{"model", "m"}});
  ASSERT_EQ(m.status, 200) << m.body;
  EXPECT_EQ(m.body["intensity"].size(), 120u);
  EXPECT_EQ(m.body["values"].size(), 120u);
  EXPECT_EQ(m.body["chi2"].get<double>(), ModelFile::from_json(doc_).objective()->chi2());
  EXPECT_EQ(api_->get("/api/model", {{"model", "x"}}).status, 404);
}

TEST_F(ServiceTest, FitStreamsOrderedEventsAndOneTerminal) {
  const Reply start = api_->post("/api/fit", {{"optimizer", "lm"}});
  ASSERT_EQ(start.status, 202) << start.body;
  const int id = start.body["fit_id"];
  const auto events = api_->events(id);
  ASSERT_GE(events.size(), 1u);
  int terminals = 0;
  double last_chi2 = INFINITY;
  int last_iter = -1;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Json& e = events[i];
    EXPECT_EQ(e["fit_id"], id);
    const bool terminal = e.value("terminal", false);
    terminals += terminal;
    if (terminal) EXPECT_EQ(i, events.size() - 1);
    EXPECT_LE(e["chi2"].get<double>(), last_chi2);
    EXPECT_GE(e["iteration"].get<int>(), last_iter);
    if (!terminal) EXPECT_GT(e["iteration"].get<int>(), last_iter);
    last_chi2 = e["chi2"];
    last_iter = e["iteration"];
  }
  EXPECT_EQ(terminals, 1);
  const Json& done = events.back();
  EXPECT_EQ(done["status"], "converged");
  EXPECT_NEAR(done["params"]["p0"].get<double>(), 7.5, 1e-4);
  EXPECT_TRUE(done["errors"].contains("p0"));

  service_->wait_for_fit();
  EXPECT_NEAR(R().raw_value(), 7.5, 1e-4);
  const Reply s = api_->get("/api/session");
  EXPECT_EQ(s.body["revision"], 1);
  EXPECT_EQ(s.body["fit"]["status"], "converged");
  EXPECT_LT(s.body["models"][0]["chi2"].get<double>(), 1e-10);
  // Replaying a finished fit gives just the terminal message.
  const auto replay = api_->events(id);
  ASSERT_EQ(replay.size(), 1u);
  EXPECT_EQ(replay[0]["terminal"], true);
}

TEST_F(ServiceTest, WritesAreRejectedWhileFitting) {
  const Reply start = api_->post("/api/fit", kLongFit);
  ASSERT_EQ(start.status, 202) << start.body;
  std::vector<Json> events;
  std::thread reader([&] {
    Api own(port_);
    events = own.events(start.body["fit_id"]);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(400));
  EXPECT_TRUE(service_->fit_running());

  const Reply p = api_->patch("/api/params", {{"p0", 6.0}});
  EXPECT_EQ(p.status, 409);
  EXPECT_EQ(api_->post("/api/fit", {{"optimizer", "lm"}}).status, 409);
  EXPECT_EQ(api_->put("/api/params/snapshot", api_->get("/api/params/snapshot").body).status, 409);
  EXPECT_EQ(api_->get("/api/session").body["fit"]["running"], true);

  const Reply stop = api_->post("/api/fit/interrupt");
  EXPECT_EQ(stop.status, 200);
  EXPECT_EQ(stop.body["interrupted"], true);
  reader.join();
  service_->wait_for_fit();

  ASSERT_FALSE(events.empty());
  const Json& last = events.back();
  EXPECT_EQ(last["terminal"], true);
  EXPECT_EQ(last["status"], "interrupted");
  // The session keeps the best point found so far.
  EXPECT_EQ(R().raw_value(), last["params"]["p0"].get<double>());
  EXPECT_NE(R().raw_value(), 6.0);
  const Reply m = api_->get("/api/model", {{"model", "m"}});
  EXPECT_DOUBLE_EQ(m.body["chi2"].get<double>(), last["chi2"].get<double>());
  // Progress is coalesced to one message per 50 ms at most.
  const double elapsed = events.size() > 1 ? events[events.size() - 2]["elapsed"].get<double>() : 0.0;
  EXPECT_LE(static_cast<double>(events.size() - 1), elapsed / 0.05 + 2);

  EXPECT_EQ(api_->patch("/api/params", {{"p0", 6.0}}).status, 200);
}

TEST_F(ServiceTest, DifferentialEvolutionNeedsFiniteBounds) {
  ASSERT_EQ(api_->patch("/api/params", {{"p0", {{"bounds", nullptr}}}}).status, 200);
  const Reply r = api_->post("/api/fit", {{"optimizer", "de"}});
  EXPECT_EQ(r.status, 422);
  EXPECT_NE(r.body["error"].get<std::string>().find("'R'"), std::string::npos) << r.body;
  EXPECT_EQ(api_->post("/api/fit", {{"optimizer", "xx"}}).status, 422);
  EXPECT_EQ(api_->post("/api/fit", {{"models", {"none"}}}).status, 422);
  EXPECT_EQ(api_->get("/api/fit").body["id"], nullptr);
  EXPECT_EQ(api_->get("/api/fit/events").status, 404);
}

TEST_F(ServiceTest, SnapshotRoundTrip) {
  const Reply snap = api_->get("/api/params/snapshot");
  ASSERT_EQ(snap.status, 200);
  EXPECT_EQ(snap.body["format"], "scatfit-parameters");
  ASSERT_EQ(api_->patch("/api/params", {{"p0", 9.0}, {"p2", {{"fixed", false}}}}).status, 200);
  const Reply put = api_->put("/api/params/snapshot", snap.body);
  ASSERT_EQ(put.status, 200) << put.body;
  EXPECT_EQ(put.body["revision"], 2);
  EXPECT_EQ(R().raw_value(), 7.875);
  EXPECT_TRUE(service_->model().find_parameter("p2")->fixed());
  EXPECT_EQ(api_->get("/api/params/snapshot").body["parameters"], snap.body["parameters"]);

  Json unknown = snap.body;
  unknown["parameters"][0]["id"] = "q9";
  EXPECT_EQ(api_->put("/api/params/snapshot", unknown).status, 404);
  Json bad = snap.body;
  bad["parameters"][0]["raw_value"] = 1.0;
  EXPECT_EQ(api_->put("/api/params/snapshot", bad).status, 422);
  EXPECT_EQ(R().raw_value(), 7.875);
}

TEST(Service, ProfileOfMultilayer) {
  Service service(ModelFile::load(kModels / "trilayer.json"));
  Api api(service.start());
  const Reply r = api.get("/api/profile", {{"sample", "trilayer"}, {"zmin", "-5"}, {"zmax", "30"}, {"n", "71"}});
  ASSERT_EQ(r.status, 200) << r.body;
  const auto z = r.body["z"].get<std::vector<double>>();
  const auto re = r.body["sld_re"].get<std::vector<double>>();
  const auto m = r.body["msld"].get<std::vector<double>>();
  ASSERT_EQ(z.size(), 71u);
  EXPECT_NEAR(re.front(), 0.0, 1e-9);
  EXPECT_NEAR(re.back(), 2.074e-4, 1e-9);
  // Middle of the top Fe layer.
  EXPECT_NEAR(re[15], 8.024e-4, 1e-7);
  EXPECT_NEAR(m[15], 4.5e-4, 1e-7);
  EXPECT_EQ(api.get("/api/profile", {{"sample", "x"}}).status, 404);
  EXPECT_EQ(api.get("/api/profile", {{"sample", "trilayer"}, {"n", "1"}}).status, 422);
  service.stop();

  Service fins(ModelFile::load(kModels / "fins.json"));
  Api fapi(fins.start());
  EXPECT_EQ(fapi.get("/api/profile", {{"sample", "fins"}}).status, 422);
  const Reply c = fapi.get("/api/curve", {{"functor", "I"}, {"grid", "qx=-0.1:0.1/5;qy=0;qz=0"}});
  ASSERT_EQ(c.status, 200) << c.body;
  EXPECT_EQ(c.body["shape"], Json::parse("[5, 1, 1]"));
}

TEST(Service, StopDuringFitPersistsSnapshot) {
  ScratchDir dir("scatfit_service_stop");
  ServiceOptions opts;
  opts.snapshot_out = dir / "snap.json";
  Service service(ModelFile::from_json(scatfit::testing::sphere_fit_document(9.0)), opts);
  Api api(service.start());
  ASSERT_EQ(api.post("/api/fit", kLongFit).status, 202);
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  service.stop();
  EXPECT_FALSE(service.fit_running());
  const Json snap = Json::parse(slurp(dir / "snap.json"));
  EXPECT_EQ(snap["status"], "interrupted");
  EXPECT_EQ(snap["parameters"][0]["raw_value"].get<double>(), service.model().find_parameter("p0")->raw_value());
  EXPECT_LT(snap["chi2"].get<double>(), ModelFile::from_json(scatfit::testing::sphere_fit_document(9.0))
                                            .objective()
                                            ->chi2());
}

TEST(Service, PortInUse) {
  Service first(ModelFile::load(kModels / "sphere.json"));
  const int port = first.start();
  ServiceOptions opts;
  opts.port = port;
  Service second(ModelFile::load(kModels / "sphere.json"), opts);
  EXPECT_THROW(second.bind(), Error);
}
