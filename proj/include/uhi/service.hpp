#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "uhi/render.hpp"

namespace uhi {

struct ServiceConfig {
  std::filesystem::path store_dir = "store";
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int workers = 2;
  std::filesystem::path ui_dir;              // built editor assets served under /ui/
  std::optional<ColorMapSpec> colormap;      // fixed map.png range; auto when absent
  bool start_paused = false;                 // workers wait for resume_workers()

  static ServiceConfig from_json(const nlohmann::json& j);
};

// JSON-over-HTTP scenario service backed by a Store directory. Scenario
// runs execute on a bounded worker pool.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and starts serving in background threads; returns the bound port.
  int start();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();
  void resume_workers();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace uhi
