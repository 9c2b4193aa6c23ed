#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "uhi/catalog.hpp"
#include "uhi/checkpoint.hpp"
#include "uhi/scenario.hpp"

namespace uhi {

enum class JobKind { train, evaluate, scenario };
enum class JobStatus { queued, running, done, failed };

std::string_view to_string(JobKind k);
std::string_view to_string(JobStatus s);
JobKind job_kind_from_string(std::string_view s);
JobStatus job_status_from_string(std::string_view s);

// queued -> running -> {done, failed}
bool job_transition_allowed(JobStatus from, JobStatus to);

struct JobRecord {
  std::string job_id;
  JobKind kind = JobKind::scenario;
  JobStatus status = JobStatus::queued;
  std::string created_at;
  std::string updated_at;
  std::string target_id;  // scenario id for scenario jobs
  std::string result_ref;
  std::string error_message;

  nlohmann::json to_json() const;
  static JobRecord from_json(const nlohmann::json& j);
};

// UTC timestamp, ISO-8601 with milliseconds.
std::string utc_now();
// Throws InvalidArgument unless the id is [A-Za-z0-9._-]+ and not "." / "..".
void check_record_id(std::string_view id);

// File-backed record store: one JSON document per record under
// <root>/<kind>/<id>.json, written atomically. Raster payloads live in
// <root>/<kind>/<id>/.
class Store {
 public:
  explicit Store(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path record_path(std::string_view kind, std::string_view id) const;
  std::filesystem::path payload_dir(std::string_view kind, std::string_view id) const;

  void put(std::string_view kind, std::string_view id, const nlohmann::json& doc) const;
  std::optional<nlohmann::json> get(std::string_view kind, std::string_view id) const;
  bool exists(std::string_view kind, std::string_view id) const;
  // Removes the record and its payload directory; false if absent.
  bool remove(std::string_view kind, std::string_view id) const;
  std::vector<std::string> list(std::string_view kind) const;  // sorted

  void put_sample(const Sample& s) const;
  Sample load_sample(std::string_view id) const;  // UnknownSample
  std::vector<std::string> sample_ids() const { return list("samples"); }

  std::filesystem::path checkpoint_path(std::string_view id) const;
  void put_checkpoint(std::string_view id, const Checkpoint& ckpt) const;
  Checkpoint load_checkpoint(std::string_view id) const;  // UnknownCheckpoint

  // forcings/<source>/<year>.tif (or a <year>.json sidecar).
  void put_forcing_grid(Source source, int year, const Grid& t2m) const;
  ForcingRecord load_forcing(Source source) const;

  void put_scenario(const ScenarioDef& def) const;
  std::optional<ScenarioDef> load_scenario(std::string_view id) const;

  // results/<id>.json plus results/<id>/{predicted,baseline,diff}.tif
  void put_result(const ScenarioResult& r) const;
  std::optional<nlohmann::json> load_result_doc(std::string_view id) const;
  Grid load_result_grid(std::string_view id, std::string_view which) const;

  // Job records; transitions are validated under a store-wide lock.
  JobRecord create_job(JobKind kind, std::string_view target_id) const;
  std::optional<JobRecord> load_job(std::string_view id) const;
  JobRecord transition_job(std::string_view id, JobStatus to, std::string_view result_ref = {},
                           std::string_view error_message = {}) const;
  std::vector<JobRecord> jobs_for(std::string_view target_id) const;

  std::string mint_id(std::string_view prefix) const;

 private:
  std::filesystem::path root_;
  std::shared_ptr<std::mutex> jobs_mutex_;
};

// Runs a stored scenario definition against a stored checkpoint.
ScenarioResult run_scenario(const ScenarioDef& def, const Store& store);

}  // namespace uhi
