#include "uhi/service.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <optional>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "uhi/error.hpp"
#include "uhi/geotiff.hpp"
#include "uhi/io_util.hpp"
#include "uhi/scenario.hpp"
#include "uhi/store.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace uhi {

namespace fs = std::filesystem;

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  ServiceConfig c;
  if (j.contains("store")) c.store_dir = j["store"].get<std::string>();
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.workers = j.value("workers", c.workers);
  if (j.contains("ui_dir")) c.ui_dir = j["ui_dir"].get<std::string>();
  if (j.contains("colormap")) c.colormap = colormap_from_json(j["colormap"]);
  if (c.workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be at least 1");
  return c;
}

struct Service::Impl {
  ServiceConfig config;
  Store store;
  httplib::Server server;
  std::thread listener;
  std::vector<std::thread> workers;
  int bound_port = 0;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> queue;    // job ids
  std::set<std::string> active;     // scenario ids with a queued or running job
  bool paused = false;
  bool stopping = false;
  bool stopped_listening = false;

  std::mutex ckpt_mu;
  std::map<std::string, std::shared_ptr<const Checkpoint>> checkpoints;

  explicit Impl(ServiceConfig c) : config(std::move(c)), store(config.store_dir), paused(config.start_paused) {
    routes();
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"error", code}, {"message", message}});
  }

  static int status_for(ErrorCode c) {
    switch (c) {
      case ErrorCode::UnknownSample:
      case ErrorCode::UnknownCheckpoint:
        return 404;
      case ErrorCode::InvalidArgument:
      case ErrorCode::BboxOutOfBounds:
      case ErrorCode::UnreachableTarget:
      case ErrorCode::ClassAbsent:
      case ErrorCode::MissingHorizon:
        return 422;
      default:
        return 500;
    }
  }

  // Wraps a handler so library errors map onto HTTP status codes.
  template <typename F>
  httplib::Server::Handler guard(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), std::string(to_string(e.code())), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
      }
    };
  }

  std::shared_ptr<const Checkpoint> checkpoint(const std::string& id) {
    std::lock_guard lock(ckpt_mu);
    auto it = checkpoints.find(id);
    if (it != checkpoints.end()) return it->second;
    auto ck = std::make_shared<const Checkpoint>(store.load_checkpoint(id));
    checkpoints[id] = ck;
    return ck;
  }

  ColorMapSpec query_colormap(const httplib::Request& req, ColorMapSpec spec) {
    if (req.has_param("palette")) spec.palette = palette_from_string(req.get_param_value("palette"));
    try {
      if (req.has_param("min")) spec.min_c = std::stod(req.get_param_value("min"));
      if (req.has_param("max")) spec.max_c = std::stod(req.get_param_value("max"));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "min/max must be numbers");
    }
    spec.validate();
    return spec;
  }

  void send_image(const httplib::Request& req, httplib::Response& res, const Grid& g, const ColorMapSpec& spec) {
    const RgbImage img = render_map(g, spec);
    if (req.get_param_value("format") == "ppm") {
      const auto bytes = encode_ppm(img);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/x-portable-pixmap");
    } else {
      const auto bytes = encode_png(img);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    }
    res.status = 200;
  }

  void send_bytes(httplib::Response& res, const std::vector<std::uint8_t>& bytes, const char* type) {
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), type);
  }

  void routes() {
    server.set_payload_max_length(16 << 20);

    server.Get("/api/scenes", guard([this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& id : store.sample_ids()) {
        const auto doc = store.get("samples", id);
        if (!doc) continue;
        out.push_back({{"id", id},
                       {"scene_id", doc->value("scene_id", id)},
                       {"date", doc->value("date", "")},
                       {"width", doc->value("width", 0)},
                       {"height", doc->value("height", 0)}});
      }
      send_json(res, 200, out);
    }));

    server.Get("/api/scenes/:id", guard([this](const httplib::Request& req, httplib::Response& res) {
      const auto doc = store.get("samples", req.path_params.at("id"));
      if (!doc) return send_error(res, 404, "UnknownSample", "unknown scene");
      send_json(res, 200, *doc);
    }));

    server.Get("/api/scenes/:id/lst.png", guard([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.path_params.at("id");
      if (!store.exists("samples", id)) return send_error(res, 404, "UnknownSample", "unknown scene");
      const Grid label = read_geotiff(store.payload_dir("samples", id) / "label.tif", Units::celsius).grids.at(0);
      const Grid* grids[] = {&label};
      send_image(req, res, label, query_colormap(req, config.colormap.value_or(auto_colormap(Palette::thermal, grids))));
    }));

    server.Get("/api/scenarios", guard([this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& id : store.list("scenarios")) {
        if (auto doc = store.get("scenarios", id)) out.push_back(*doc);
      }
      send_json(res, 200, out);
    }));

    server.Post("/api/scenarios", guard([this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        return send_error(res, 422, "InvalidArgument", std::string("body is not valid JSON: ") + e.what());
      }
      ScenarioDef def;
      try {
        def = scenario_def_from_json(body);
        const auto sample = store.get("samples", def.base_sample_id);
        if (!sample) throw Error(ErrorCode::InvalidArgument, "unknown base_sample_id '" + def.base_sample_id + "'");
        def.region(sample->at("width").get<int>(), sample->at("height").get<int>())
            .check_within(sample->at("width").get<int>(), sample->at("height").get<int>());
        if (!store.exists("checkpoints", def.checkpoint_id)) {
          throw Error(ErrorCode::InvalidArgument, "unknown checkpoint_id '" + def.checkpoint_id + "'");
        }
      } catch (const Error& e) {
        return send_error(res, 422, std::string(to_string(e.code())), e.what());
      }
      def.scenario_id = store.mint_id("scn");
      def.created_at = utc_now();
      store.put_scenario(def);
      send_json(res, 201, {{"scenario_id", def.scenario_id}, {"scenario", to_json(def)}});
    }));

    server.Get("/api/scenarios/:id", guard([this](const httplib::Request& req, httplib::Response& res) {
      const auto doc = store.get("scenarios", req.path_params.at("id"));
      if (!doc) return send_error(res, 404, "UnknownScenario", "unknown scenario");
      send_json(res, 200, *doc);
    }));

    server.Delete("/api/scenarios/:id", guard([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.path_params.at("id");
      std::lock_guard lock(mu);
      if (!store.exists("scenarios", id)) return send_error(res, 404, "UnknownScenario", "unknown scenario");
      if (active.count(id)) return send_error(res, 409, "Conflict", "scenario has a queued or running job");
      store.remove("results", id);
      store.remove("scenarios", id);
      res.status = 204;
    }));

    server.Post("/api/scenarios/:id/run", guard([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.path_params.at("id");
      std::unique_lock lock(mu);
      if (!store.exists("scenarios", id)) return send_error(res, 404, "UnknownScenario", "unknown scenario");
      if (active.count(id)) return send_error(res, 409, "Conflict", "scenario is already queued or running");
      if (store.exists("results", id)) {
        std::string job_id;
        for (const auto& j : store.jobs_for(id)) {
          if (j.status == JobStatus::done) job_id = j.job_id;
        }
        return send_json(res, 200,
                         {{"scenario_id", id}, {"job_id", job_id}, {"status", "done"}, {"result_ref", "results/" + id}});
      }
      const JobRecord job = store.create_job(JobKind::scenario, id);
      active.insert(id);
      queue.push_back(job.job_id);
      lock.unlock();
      cv.notify_one();
      send_json(res, 202, {{"job_id", job.job_id}, {"scenario_id", id}, {"status", "queued"}});
    }));

    server.Get("/api/jobs/:id", guard([this](const httplib::Request& req, httplib::Response& res) {
      const auto job = store.load_job(req.path_params.at("id"));
      if (!job) return send_error(res, 404, "UnknownJob", "unknown job");
      send_json(res, 200, job->to_json());
    }));

    server.Get("/api/results/:id", guard([this](const httplib::Request& req, httplib::Response& res) {
      const auto doc = store.load_result_doc(req.path_params.at("id"));
      if (!doc) return send_error(res, 404, "UnknownResult", "no result for this scenario");
      send_json(res, 200, *doc);
    }));

    auto need_result = [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.path_params.at("id");
      if (!store.exists("results", id)) {
        send_error(res, 404, "UnknownResult", "no result for this scenario");
        return std::string();
      }
      return id;
    };

    server.Get("/api/results/:id/map.png", guard([this, need_result](const httplib::Request& req, httplib::Response& res) {
      const std::string id = need_result(req, res);
      if (id.empty()) return;
      const Grid pred = store.load_result_grid(id, "predicted");
      const Grid base = store.load_result_grid(id, "baseline");
      const Grid* grids[] = {&pred, &base};
      send_image(req, res, pred, query_colormap(req, config.colormap.value_or(auto_colormap(Palette::thermal, grids))));
    }));

    server.Get("/api/results/:id/diff.png", guard([this, need_result](const httplib::Request& req, httplib::Response& res) {
      const std::string id = need_result(req, res);
      if (id.empty()) return;
      const Grid diff = store.load_result_grid(id, "diff");
      const Grid* grids[] = {&diff};
      ColorMapSpec spec = auto_colormap(Palette::diverging, grids);
      if (config.colormap) spec.nodata = config.colormap->nodata;
      send_image(req, res, diff, query_colormap(req, spec));
    }));

    server.Get("/api/results/:id/profile.csv", guard([this, need_result](const httplib::Request& req, httplib::Response& res) {
      const std::string id = need_result(req, res);
      if (id.empty()) return;
      res.status = 200;
      res.set_content(read_text(store.payload_dir("results", id) / "profile.csv"), "text/csv");
    }));

    for (const char* which : {"predicted", "baseline", "diff"}) {
      server.Get(std::string("/api/results/:id/") + which + ".tif",
                 guard([this, need_result, which](const httplib::Request& req, httplib::Response& res) {
                   const std::string id = need_result(req, res);
                   if (id.empty()) return;
                   send_bytes(res, read_file(store.payload_dir("results", id) / (std::string(which) + ".tif")),
                              "image/tiff");
                 }));
    }

    std::error_code ec;
    if (!config.ui_dir.empty() && fs::is_directory(config.ui_dir, ec)) {
      server.set_mount_point("/ui", config.ui_dir.string());
    } else {
      server.Get("/ui(/.*)?", [](const httplib::Request&, httplib::Response& res) {
        send_error(res, 404, "NotBuilt", "editor assets are not installed");
      });
    }
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send_error(res, res.status, "NotFound", "no such endpoint");
    });
  }

  void run_job(const std::string& job_id) {
    std::string scenario_id;
    std::optional<ScenarioResult> result;
    std::string failure;
    try {
      const JobRecord job = store.transition_job(job_id, JobStatus::running);
      scenario_id = job.target_id;
      const auto def = store.load_scenario(scenario_id);
      if (!def) throw Error(ErrorCode::InvalidArgument, "scenario '" + scenario_id + "' disappeared");
      const Sample base = store.load_sample(def->base_sample_id);
      const auto ck = checkpoint(def->checkpoint_id);
      std::optional<ForcingRecord> forcing;
      if (const auto* f = std::get_if<Forcing>(&def->modification)) forcing = store.load_forcing(f->source);
      result = run_scenario(*def, base, ck->params, forcing ? &*forcing : nullptr);
      store.put_result(*result);
    } catch (const std::exception& e) {
      result.reset();
      failure = e.what();
    }
    // Terminal status and release of the scenario under one lock.
    std::lock_guard lock(mu);
    try {
      if (result) {
        store.transition_job(job_id, JobStatus::done, "results/" + scenario_id);
      } else {
        store.transition_job(job_id, JobStatus::failed, {}, failure);
      }
    } catch (const std::exception&) {
    }
    if (scenario_id.empty()) {
      if (auto job = store.load_job(job_id)) scenario_id = job->target_id;
    }
    active.erase(scenario_id);
  }

  void worker_loop() {
    for (;;) {
      std::string job_id;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [this] { return stopping || (!paused && !queue.empty()); });
        if (stopping) return;
        job_id = queue.front();
        queue.pop_front();
      }
      run_job(job_id);
    }
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::start() {
  Impl& m = *impl_;
  if (m.config.port == 0) {
    m.bound_port = m.server.bind_to_any_port(m.config.host);
    if (m.bound_port < 0) throw Error(ErrorCode::IoError, "cannot bind " + m.config.host);
  } else {
    if (!m.server.bind_to_port(m.config.host, m.config.port)) {
      throw Error(ErrorCode::IoError, "cannot bind " + m.config.host + ":" + std::to_string(m.config.port));
    }
    m.bound_port = m.config.port;
  }
  for (int i = 0; i < m.config.workers; ++i) m.workers.emplace_back([&m] { m.worker_loop(); });
  m.listener = std::thread([&m] { m.server.listen_after_bind(); });
  m.server.wait_until_ready();
  return m.bound_port;
}

void Service::wait() {
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Service::stop() {
  Impl& m = *impl_;
  m.server.stop();
  if (m.listener.joinable()) m.listener.join();
  {
    std::lock_guard lock(m.mu);
    m.stopping = true;
  }
  m.cv.notify_all();
  for (auto& t : m.workers) {
    if (t.joinable()) t.join();
  }
  m.workers.clear();
}

void Service::resume_workers() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->paused = false;
  }
  impl_->cv.notify_all();
}

int Service::port() const { return impl_->bound_port; }

}  // namespace uhi
