#include "scatfit/service.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "scatfit/output.hpp"

namespace scatfit {

namespace {

struct HttpError {
  int status;
  std::string message;
};

Json error_body(const std::string& message) { return Json{{"error", message}}; }

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw HttpError{422, std::string("invalid JSON body: ") + e.what()};
  }
}

std::string query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) throw HttpError{422, std::string("missing query parameter '") + key + "'"};
  return req.get_param_value(key);
}

double query_number(const httplib::Request& req, const char* key, double fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string s = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw HttpError{422, std::string("query parameter '") + key + "' is not a number"};
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string make_session_id() {
  std::random_device rd;
  std::ostringstream os;
  os << std::hex << rd() << rd();
  return os.str();
}

}  // namespace

struct Service::Impl {
  struct FitRun {
    int id = 0;
    Optimizer optimizer = Optimizer::lm;
    std::shared_ptr<const Objective> target;
    std::vector<Parameter> params;
    std::unique_ptr<FitController> controller;
    std::thread monitor;
    // Set under pool_mutex once the result is applied and the revision bumped.
    bool finalized = false;
    std::optional<FitResult> result;
  };

  ModelFile model;
  ServiceOptions options;
  std::string session_id = make_session_id();
  httplib::Server server;
  std::thread server_thread;
  int port = -1;

  // Writers (PATCH, snapshot PUT, fit start/finalize) take it exclusively;
  // evaluations share it so a response matches its revision.
  mutable std::shared_mutex pool_mutex;
  std::atomic<std::uint64_t> revision{0};
  std::vector<std::shared_ptr<FitRun>> fits;
  std::condition_variable_any fit_cv;
  std::atomic<bool> stopping{false};
  std::once_flag stop_once;

  Impl(ModelFile m, ServiceOptions o) : model(std::move(m)), options(std::move(o)) {
    // httplib's default adds SO_REUSEPORT, which lets a second server share a
    // busy port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
  }

  bool fit_active() const {
    return !fits.empty() && !fits.back()->finalized;
  }

  std::shared_ptr<FitRun> latest_fit() const { return fits.empty() ? nullptr : fits.back(); }

  std::shared_ptr<FitRun> fit_by_id(const httplib::Request& req) const {
    if (!req.has_param("fit")) {
      auto f = latest_fit();
      if (!f) throw HttpError{404, "no fit has been started"};
      return f;
    }
    const std::string id = req.get_param_value("fit");
    for (const auto& f : fits)
      if (std::to_string(f->id) == id) return f;
    throw HttpError{404, "unknown fit id '" + id + "'"};
  }

  // ---------------------------------------------------------------- helpers

  Json param_entry(const Parameter& p) const {
    Json r = parameter_record(p);
    r["value"] = p.value();
    return r;
  }

  Json params_by_id(const std::vector<Parameter>& ps, const std::vector<double>& raw) const {
    Json j = Json::object();
    for (std::size_t i = 0; i < ps.size() && i < raw.size(); ++i) j[ps[i].id()] = raw[i];
    return j;
  }

  Json session_json() const {
    std::shared_lock lock(pool_mutex);
    Json s;
    s["id"] = session_id;
    s["revision"] = revision.load();
    Json params = Json::array();
    for (const auto& p : model.parameters()) params.push_back(param_entry(p));
    s["parameters"] = params;
    Json deps = Json::array();
    for (const auto& d : model.dependents()) {
      Json e{{"name", d.name}};
      try {
        e["value"] = d.expr.value();
      } catch (const Error&) {
        e["value"] = nullptr;
      }
      deps.push_back(e);
    }
    s["dependents"] = deps;
    Json functors = Json::array();
    for (const auto& f : model.functors()) {
      Json vars = Json::array();
      for (const auto& v : f.variables()) vars.push_back(v.name());
      functors.push_back({{"name", f.name()},
                          {"variables", vars},
                          {"complex", f.is_complex()},
                          {"grid", model.default_grid(f.name())}});
    }
    s["functors"] = functors;
    Json samples = Json::array();
    for (const auto& smp : model.samples())
      samples.push_back({{"name", smp.name},
                         {"type", std::holds_alternative<Multilayer>(smp.sample) ? "multilayer" : "potential"}});
    s["samples"] = samples;
    Json datasets = Json::array();
    for (const auto& d : model.datasets())
      datasets.push_back({{"name", d->name()}, {"size", d->size()}, {"dims", d->dims()},
                          {"active", d->active_count()}});
    s["datasets"] = datasets;
    Json models = Json::array();
    for (const auto& m : model.models()) {
      Json e{{"name", m->name()},
             {"functor", m->functor().name()},
             {"dataset", m->data().name()},
             {"scaling", std::string(scaling_name(m->scaling()))}};
      try {
        e["chi2"] = m->chi2();
      } catch (const Error& ex) {
        e["chi2"] = nullptr;
        e["chi2_error"] = ex.what();
      }
      models.push_back(e);
    }
    s["models"] = models;
    s["fit"] = fit_state_json();
    return s;
  }

  Json fit_state_json() const {
    auto f = latest_fit();
    if (!f) return Json{{"id", nullptr}, {"running", false}, {"status", nullptr}};
    Json j{{"id", f->id}, {"running", !f->finalized}};
    const std::string optimizer = f->optimizer == Optimizer::lm ? "lm" : "de";
    j["optimizer"] = optimizer;
    if (f->result) {
      j["status"] = std::string(status_name(f->result->status));
      j["chi2"] = f->result->chi2();
      j["chi2_history"] = f->result->chi2_history;
      j["message"] = f->result->message;
    } else {
      j["status"] = "running";
    }
    return j;
  }

  // ---------------------------------------------------------------- fits

  void finalize(const std::shared_ptr<FitRun>& run) {
    const FitResult& r = run->controller->wait();
    {
      std::unique_lock lock(pool_mutex);
      run->result = r;
      run->finalized = true;
      revision.fetch_add(1);
    }
    fit_cv.notify_all();
  }

  Json start_fit(const Json& body) {
    if (!body.is_object()) throw HttpError{422, "fit request must be an object"};
    Json section = Json::object();
    for (const auto& [k, v] : body.items()) {
      if (k == "options") continue;
      section[k] = v;
    }
    FitConfig cfg = model.fit_config();
    try {
      if (section.contains("optimizer"))
        cfg.optimizer = optimizer_from_name(section["optimizer"].get<std::string>());
      if (auto it = body.find("options"); it != body.end())
        section[cfg.optimizer == Optimizer::lm ? "lm" : "de"] = *it;
      cfg = parse_fit_config(section, "fit", cfg);
    } catch (const Error& e) {
      throw HttpError{422, e.what()};
    } catch (const nlohmann::json::exception& e) {
      throw HttpError{422, e.what()};
    }
    std::shared_ptr<const Objective> target;
    try {
      target = model.objective(cfg.models);
    } catch (const SchemaError& e) {
      throw HttpError{422, e.what()};
    }
    const auto params = target->parameters();
    if (params.empty()) throw HttpError{422, "no free parameters"};
    if (cfg.optimizer == Optimizer::de)
      for (const auto& p : params) {
        const auto b = p.bounds();
        if (!b || !b->finite())
          throw HttpError{422, "differential evolution needs finite bounds on parameter '" + p.name() + "'"};
      }

    std::unique_lock lock(pool_mutex);
    if (fit_active()) throw HttpError{409, "a fit is already running"};
    if (stopping) throw HttpError{409, "service is shutting down"};
    auto run = std::make_shared<FitRun>();
    run->id = static_cast<int>(fits.size()) + 1;
    run->optimizer = cfg.optimizer;
    run->target = target;
    run->params = params;
    run->controller = std::make_unique<FitController>(target, cfg.optimizer, cfg.lm, cfg.de);
    try {
      run->controller->start();
    } catch (const FitError& e) {
      throw HttpError{409, e.what()};
    }
    fits.push_back(run);
    run->monitor = std::thread([this, run] { finalize(run); });
    return Json{{"fit_id", run->id}, {"status", "running"}};
  }

  // Server-sent events for one fit. Progress messages are coalesced so that
  // at most one is sent per event_interval; the stream ends with exactly one
  // terminal message.
  // Returns false when the client went away before the end.
  bool stream_events(const std::shared_ptr<FitRun>& run, httplib::DataSink& sink) {
    std::size_t seen = 0;
    int last_sent = -1;
    auto last_time = std::chrono::steady_clock::now() - options.event_interval;
    std::optional<ProgressEvent> pending;
    auto write = [&](const Json& msg) {
      const std::string frame = "data: " + msg.dump() + "\n\n";
      return sink.write(frame.data(), frame.size());
    };
    auto progress_msg = [&](const ProgressEvent& e) {
      return Json{{"fit_id", run->id},
                  {"iteration", e.iteration},
                  {"chi2", e.chi2},
                  {"elapsed", e.elapsed},
                  {"params", params_by_id(run->params, e.raw_values)},
                  {"status", "running"}};
    };
    while (true) {
      const bool done = run->controller->finished();
      for (auto& e : run->controller->events(seen)) {
        ++seen;
        pending = std::move(e);
      }
      const auto now = std::chrono::steady_clock::now();
      if (pending && !done && now - last_time >= options.event_interval) {
        if (!write(progress_msg(*pending))) return false;
        last_sent = pending->iteration;
        last_time = now;
        pending.reset();
      }
      if (done) break;
      if (!sink.is_writable()) return false;
      run->controller->wait_for_events(seen, std::chrono::milliseconds(20));
      if (pending) std::this_thread::sleep_until(last_time + options.event_interval);
    }
    {
      std::shared_lock lock(pool_mutex);
      fit_cv.wait(lock, [&] { return run->finalized; });
    }
    const FitResult& r = *run->result;
    const int final_iter = std::max(last_sent, static_cast<int>(r.chi2_history.size()) - 1);
    Json errors = Json::object();
    for (std::size_t i = 0; i < r.parameters.size(); ++i) {
      if (i < r.errors.size() && r.errors[i])
        errors[r.parameters[i].id()] = *r.errors[i];
      else
        errors[r.parameters[i].id()] = nullptr;
    }
    Json terminal{{"fit_id", run->id},
                  {"iteration", final_iter},
                  {"chi2", r.chi2()},
                  {"params", params_by_id(r.parameters, r.raw_values)},
                  {"errors", errors},
                  {"status", std::string(status_name(r.status))},
                  {"message", r.message},
                  {"terminal", true}};
    if (!write(terminal)) return false;
    sink.done();
    return true;
  }

  // ---------------------------------------------------------------- curves

  Json curve_json(const httplib::Request& req) {
    const std::string name = query(req, "functor");
    const Functor* f = model.find_functor(name);
    if (!f) throw HttpError{404, "unknown functor '" + name + "'"};
    std::vector<std::vector<double>> coords;
    std::vector<std::size_t> shape;
    std::vector<std::string> specs =
        req.has_param("grid") ? split(req.get_param_value("grid"), ';') : model.default_grid(name);
    if (!specs.empty()) {
      try {
        std::vector<GridAxis> axes;
        for (const auto& s : specs) axes.push_back(parse_axis(s));
        GridColumns g = grid_columns(axes, f->variables());
        coords = std::move(g.columns);
        shape = std::move(g.shape);
      } catch (const ValueError& e) {
        throw HttpError{422, e.what()};
      }
    } else {
      for (const auto& m : model.models())
        if (m->functor().name() == name) {
          coords = m->data().coords();
          shape = {m->data().size()};
          break;
        }
      if (coords.empty()) throw HttpError{422, "functor '" + name + "' needs a grid"};
    }
    const std::size_t points = coords.empty() ? 0 : coords.front().size();
    if (points > 4'000'000) throw HttpError{422, "grid too large"};
    Json out;
    std::shared_lock lock(pool_mutex);
    out["functor"] = name;
    Json vars = Json::array();
    for (const auto& v : f->variables()) vars.push_back(v.name());
    out["variables"] = vars;
    out["coordinates"] = coords;
    out["shape"] = shape;
    out["revision"] = revision.load();
    EvalDiagnostics diag;
    try {
      if (f->is_complex()) {
        const auto v = f->evaluate_complex(coords, &diag);
        std::vector<double> re(v.size()), im(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
          re[i] = v[i].real();
          im[i] = v[i].imag();
        }
        out["values"] = re;
        out["imag"] = im;
      } else {
        out["values"] = f->evaluate(coords, &diag);
      }
    } catch (const EvalError& e) {
      throw HttpError{422, e.what()};
    }
    out["nonconverged_integrals"] = diag.nonconverged_integrals;
    return out;
  }

  Json model_json(const httplib::Request& req) {
    const std::string name = query(req, "model");
    auto m = model.find_model(name);
    if (!m) throw HttpError{404, "unknown model '" + name + "'"};
    std::shared_lock lock(pool_mutex);
    const DataSet& d = m->data();
    Json out{{"model", name}, {"functor", m->functor().name()}, {"revision", revision.load()}};
    out["coordinates"] = d.coords();
    out["intensity"] = d.intensity();
    out["sigma"] = d.sigma();
    std::vector<bool> mask = d.mask();
    out["mask"] = mask;
    try {
      const std::vector<std::vector<double>> all = d.coords();
      out["values"] = m->functor().evaluate(all);
      out["chi2"] = m->chi2();
    } catch (const Error& e) {
      throw HttpError{422, e.what()};
    }
    return out;
  }

  Json profile_json(const httplib::Request& req) {
    const std::string name = query(req, "sample");
    const NamedSample* s = model.find_sample(name);
    if (!s) throw HttpError{404, "unknown sample '" + name + "'"};
    const Multilayer* ml = std::get_if<Multilayer>(&s->sample);
    if (!ml) throw HttpError{422, "sample '" + name + "' is not a multilayer"};
    std::shared_lock lock(pool_mutex);
    double total = 0.0;
    try {
      for (const auto& l : flatten(*ml).layers) total += l.thickness;
    } catch (const EvalError& e) {
      throw HttpError{422, e.what()};
    }
    const double zmin = query_number(req, "zmin", -0.1 * total - 10.0);
    const double zmax = query_number(req, "zmax", 1.1 * total + 10.0);
    const double nd = query_number(req, "n", 501);
    if (!(nd >= 2 && nd <= 1e6) || nd != std::floor(nd)) throw HttpError{422, "n must be an integer >= 2"};
    if (!(zmax > zmin)) throw HttpError{422, "zmax must exceed zmin"};
    const auto n = static_cast<std::size_t>(nd);
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = zmin + (zmax - zmin) * static_cast<double>(i) / static_cast<double>(n - 1);
    Json out{{"sample", name}, {"revision", revision.load()}};
    out["z"] = z;
    try {
      out["sld_re"] = sld_profile(*ml, z, ProfileComponent::sld_re);
      out["sld_im"] = sld_profile(*ml, z, ProfileComponent::sld_im);
      out["msld"] = sld_profile(*ml, z, ProfileComponent::msld);
    } catch (const EvalError& e) {
      throw HttpError{422, e.what()};
    }
    return out;
  }

  // ---------------------------------------------------------------- writes

  Json patch_params(const Json& body) {
    if (!body.is_object()) throw HttpError{422, "expected an object {id: update}"};
    std::unique_lock lock(pool_mutex);
    if (fit_active()) throw HttpError{409, "parameters are read-only while a fit is running"};
    std::vector<std::pair<Parameter, ParameterUpdate>> updates;
    for (const auto& [id, value] : body.items()) {
      const Parameter* p = model.find_parameter(id);
      if (!p) throw HttpError{404, "unknown parameter id '" + id + "'"};
      try {
        ParameterUpdate u = parse_update(value, id);
        validate_update(*p, u);
        updates.emplace_back(*p, std::move(u));
      } catch (const Error& e) {
        throw HttpError{422, e.what()};
      }
    }
    for (auto& [p, u] : updates) apply_update(p, u);
    const auto rev = revision.fetch_add(1) + 1;
    Json params = Json::array();
    for (const auto& [p, u] : updates) params.push_back(param_entry(p));
    return Json{{"revision", rev}, {"parameters", params}};
  }

  Json snapshot_json() const {
    std::shared_lock lock(pool_mutex);
    auto f = latest_fit();
    const FitResult* r = f && f->result ? &*f->result : nullptr;
    Json doc = snapshot_document(model.parameters(), r);
    doc["revision"] = revision.load();
    return doc;
  }

  Json put_snapshot(const Json& doc) {
    std::unique_lock lock(pool_mutex);
    if (fit_active()) throw HttpError{409, "parameters are read-only while a fit is running"};
    if (doc.is_object() && doc.contains("parameters") && doc["parameters"].is_array())
      for (const auto& rec : doc["parameters"])
        if (rec.is_object() && rec.contains("id") && rec["id"].is_string() &&
            !model.find_parameter(rec["id"].get<std::string>()))
          throw HttpError{404, "unknown parameter id '" + rec["id"].get<std::string>() + "'"};
    try {
      apply_snapshot(doc, model.parameters());
    } catch (const Error& e) {
      throw HttpError{422, e.what()};
    }
    return Json{{"revision", revision.fetch_add(1) + 1}};
  }

  // ---------------------------------------------------------------- routing

  template <class F>
  auto handler(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, error_body(e.message), e.status);
      } catch (const std::exception& e) {
        send_json(res, error_body(e.what()), 500);
      }
    };
  }

  void routes() {
    server.Get("/api/health", handler([](const auto&, auto& res) { send_json(res, {{"status", "ok"}}); }));
    server.Get("/api/session", handler([this](const auto&, auto& res) { send_json(res, session_json()); }));
    server.Patch("/api/params",
                 handler([this](const auto& req, auto& res) { send_json(res, patch_params(parse_body(req))); }));
    server.Get("/api/curve", handler([this](const auto& req, auto& res) { send_json(res, curve_json(req)); }));
    server.Get("/api/model", handler([this](const auto& req, auto& res) { send_json(res, model_json(req)); }));
    server.Get("/api/profile",
               handler([this](const auto& req, auto& res) { send_json(res, profile_json(req)); }));
    server.Post("/api/fit", handler([this](const auto& req, auto& res) {
                  const Json body = req.body.empty() ? Json::object() : parse_body(req);
                  send_json(res, start_fit(body), 202);
                }));
    server.Post("/api/fit/interrupt", handler([this](const auto&, auto& res) {
                  std::shared_lock lock(pool_mutex);
                  auto f = latest_fit();
                  const bool active = f && !f->finalized;
                  if (active) f->controller->interrupt();
                  send_json(res, {{"interrupted", active}, {"fit_id", f ? Json(f->id) : Json(nullptr)}});
                }));
    server.Get("/api/fit", handler([this](const auto&, auto& res) {
                 std::shared_lock lock(pool_mutex);
                 send_json(res, fit_state_json());
               }));
    server.Get("/api/fit/events", handler([this](const auto& req, auto& res) {
                 std::shared_ptr<FitRun> run;
                 {
                   std::shared_lock lock(pool_mutex);
                   run = fit_by_id(req);
                 }
                 res.set_header("Cache-Control", "no-cache");
                 res.set_chunked_content_provider(
                     "text/event-stream", [this, run](std::size_t, httplib::DataSink& sink) {
                       return stream_events(run, sink);
                     });
               }));
    server.Get("/api/params/snapshot",
               handler([this](const auto&, auto& res) { send_json(res, snapshot_json()); }));
    server.Put("/api/params/snapshot",
               handler([this](const auto& req, auto& res) { send_json(res, put_snapshot(parse_body(req))); }));
    if (!options.static_dir.empty()) {
      if (!server.set_mount_point("/", options.static_dir.string()))
        throw ValueError("static directory '" + options.static_dir.string() + "' does not exist");
    }
  }

  void shutdown() {
    stopping = true;
    std::vector<std::shared_ptr<FitRun>> runs;
    {
      std::shared_lock lock(pool_mutex);
      runs = fits;
      for (const auto& f : runs)
        if (!f->finalized) f->controller->interrupt();
    }
    for (const auto& f : runs)
      if (f->monitor.joinable()) f->monitor.join();
    if (options.snapshot_out) {
      std::ofstream out(*options.snapshot_out);
      out << snapshot_json().dump(2) << '\n';
    }
    server.stop();
    if (server_thread.joinable() && server_thread.get_id() != std::this_thread::get_id())
      server_thread.join();
  }
};

Service::Service(ModelFile model, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(options))) {}

Service::~Service() { stop(); }

int Service::bind() {
  Impl& s = *impl_;
  if (s.options.port == 0)
    s.port = s.server.bind_to_any_port(s.options.host);
  else
    s.port = s.server.bind_to_port(s.options.host, s.options.port) ? s.options.port : -1;
  if (s.port < 0)
    throw Error("cannot bind " + s.options.host + ":" + std::to_string(s.options.port));
  return s.port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

int Service::start() {
  const int port = bind();
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  std::call_once(impl_->stop_once, [this] { impl_->shutdown(); });
}

const ModelFile& Service::model() const noexcept { return impl_->model; }
std::uint64_t Service::revision() const noexcept { return impl_->revision.load(); }

bool Service::fit_running() const noexcept {
  std::shared_lock lock(impl_->pool_mutex);
  return impl_->fit_active();
}

void Service::wait_for_fit() {
  std::shared_lock lock(impl_->pool_mutex);
  impl_->fit_cv.wait(lock, [this] { return !impl_->fit_active(); });
}

}  // namespace scatfit
