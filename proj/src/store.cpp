#include "uhi/store.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <random>

#include "uhi/error.hpp"
#include "uhi/geotiff.hpp"
#include "uhi/io_util.hpp"
#include "uhi/sidecar.hpp"

namespace uhi {

namespace fs = std::filesystem;

std::string_view to_string(JobKind k) {
  switch (k) {
    case JobKind::train: return "train";
    case JobKind::evaluate: return "evaluate";
    case JobKind::scenario: return "scenario";
  }
  return "?";
}

std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

JobKind job_kind_from_string(std::string_view s) {
  for (JobKind k : {JobKind::train, JobKind::evaluate, JobKind::scenario}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown job kind '" + std::string(s) + "'");
}

JobStatus job_status_from_string(std::string_view s) {
  for (JobStatus k : {JobStatus::queued, JobStatus::running, JobStatus::done, JobStatus::failed}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown job status '" + std::string(s) + "'");
}

bool job_transition_allowed(JobStatus from, JobStatus to) {
  if (from == JobStatus::queued) return to == JobStatus::running;
  if (from == JobStatus::running) return to == JobStatus::done || to == JobStatus::failed;
  return false;
}

nlohmann::json JobRecord::to_json() const {
  return {{"job_id", job_id},         {"kind", to_string(kind)},       {"status", to_string(status)},
          {"created_at", created_at}, {"updated_at", updated_at},       {"target_id", target_id},
          {"result_ref", result_ref}, {"error_message", error_message}};
}

JobRecord JobRecord::from_json(const nlohmann::json& j) {
  JobRecord r;
  r.job_id = j.at("job_id").get<std::string>();
  r.kind = job_kind_from_string(j.at("kind").get<std::string>());
  r.status = job_status_from_string(j.at("status").get<std::string>());
  r.created_at = j.value("created_at", "");
  r.updated_at = j.value("updated_at", "");
  r.target_id = j.value("target_id", "");
  r.result_ref = j.value("result_ref", "");
  r.error_message = j.value("error_message", "");
  return r;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

void check_record_id(std::string_view id) {
  const bool ok = !id.empty() && id.size() <= 200 && id != "." && id != ".." &&
                  std::all_of(id.begin(), id.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
                  });
  if (!ok) throw Error(ErrorCode::InvalidArgument, "invalid record id '" + std::string(id) + "'");
}

Store::Store(fs::path root) : root_(std::move(root)), jobs_mutex_(std::make_shared<std::mutex>()) {
  std::error_code ec;
  for (const char* kind : {"samples", "checkpoints", "scenarios", "jobs", "results", "forcings", "runs"}) {
    fs::create_directories(root_ / kind, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + (root_ / kind).string() + ": " + ec.message());
  }
}

fs::path Store::record_path(std::string_view kind, std::string_view id) const {
  check_record_id(id);
  return root_ / std::string(kind) / (std::string(id) + ".json");
}

fs::path Store::payload_dir(std::string_view kind, std::string_view id) const {
  check_record_id(id);
  return root_ / std::string(kind) / std::string(id);
}

void Store::put(std::string_view kind, std::string_view id, const nlohmann::json& doc) const {
  write_atomic(record_path(kind, id), doc.dump(2) + "\n");
}

std::optional<nlohmann::json> Store::get(std::string_view kind, std::string_view id) const {
  const fs::path p = record_path(kind, id);
  if (!fs::exists(p)) return std::nullopt;
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, p.string() + ": " + e.what());
  }
}

bool Store::exists(std::string_view kind, std::string_view id) const { return fs::exists(record_path(kind, id)); }

bool Store::remove(std::string_view kind, std::string_view id) const {
  std::error_code ec;
  const bool had = fs::remove(record_path(kind, id), ec);
  fs::remove_all(payload_dir(kind, id), ec);
  return had;
}

std::vector<std::string> Store::list(std::string_view kind) const {
  std::vector<std::string> ids;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(root_ / std::string(kind), ec)) {
    if (e.is_regular_file() && e.path().extension() == ".json") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Store::put_sample(const Sample& s) const {
  s.validate();
  const fs::path dir = payload_dir("samples", s.id);
  const auto roles = s.inputs.roles();
  std::vector<Grid> inputs;
  for (const auto& [r, g] : s.inputs.bands()) inputs.push_back(g);
  write_atomic(dir / "inputs.tif", encode_geotiff(inputs, roles));
  const Role lst = Role::lst, lulc = Role::lulc;
  write_atomic(dir / "label.tif", encode_geotiff(std::span(&s.label, 1), std::span(&lst, 1)));
  write_atomic(dir / "lulc.tif", encode_geotiff(std::span(&s.lulc, 1), std::span(&lulc, 1)));
  nlohmann::json role_names = nlohmann::json::array();
  for (Role r : roles) role_names.push_back(to_string(r));
  put("samples", s.id,
      {{"id", s.id},
       {"scene_id", s.scene_id},
       {"date", s.date},
       {"width", s.width()},
       {"height", s.height()},
       {"georef", georef_to_json(s.inputs.georef())},
       {"roles", role_names},
       {"files", {{"inputs", s.id + "/inputs.tif"}, {"label", s.id + "/label.tif"}, {"lulc", s.id + "/lulc.tif"}}}});
}

Sample Store::load_sample(std::string_view id) const {
  check_record_id(id);
  const auto doc = get("samples", id);
  if (!doc) throw Error(ErrorCode::UnknownSample, "unknown sample '" + std::string(id) + "'");
  const fs::path dir = payload_dir("samples", id);
  Sample s;
  s.id = doc->at("id").get<std::string>();
  s.scene_id = doc->value("scene_id", s.id);
  s.date = doc->value("date", "");
  s.inputs = read_geotiff_stack(dir / "inputs.tif");
  s.label = read_geotiff(dir / "label.tif", Units::celsius).grids.at(0);
  s.lulc = read_geotiff(dir / "lulc.tif", Units::class_id).grids.at(0);
  s.validate();
  return s;
}

fs::path Store::checkpoint_path(std::string_view id) const { return record_path("checkpoints", id); }

void Store::put_checkpoint(std::string_view id, const Checkpoint& ckpt) const {
  write_checkpoint(checkpoint_path(id), ckpt);
}

Checkpoint Store::load_checkpoint(std::string_view id) const {
  const fs::path p = checkpoint_path(id);
  if (!fs::exists(p)) throw Error(ErrorCode::UnknownCheckpoint, "unknown checkpoint '" + std::string(id) + "'");
  return read_checkpoint(p);
}

void Store::put_forcing_grid(Source source, int year, const Grid& t2m) const {
  const Role r = Role::t2m;
  write_atomic(root_ / "forcings" / std::string(to_string(source)) / (std::to_string(year) + ".tif"),
               encode_geotiff(std::span(&t2m, 1), std::span(&r, 1)));
}

ForcingRecord Store::load_forcing(Source source) const {
  ForcingRecord rec;
  rec.source = source;
  rec.metadata = forcing_metadata(source);
  const fs::path dir = root_ / "forcings" / std::string(to_string(source));
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    const fs::path p = e.path();
    const std::string stem = p.stem().string();
    if (stem.size() != 4 || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    const int year = std::stoi(stem);
    if (p.extension() == ".tif" || p.extension() == ".tiff") {
      rec.t2m[year] = read_geotiff(p, Units::kelvin).grids.at(0);
    } else if (p.extension() == ".json") {
      rec.t2m[year] = read_sidecar(p).grids.at(0);
    }
  }
  return rec;
}

void Store::put_scenario(const ScenarioDef& def) const { put("scenarios", def.scenario_id, to_json(def)); }

std::optional<ScenarioDef> Store::load_scenario(std::string_view id) const {
  const auto doc = get("scenarios", id);
  if (!doc) return std::nullopt;
  return scenario_def_from_json(*doc);
}

void Store::put_result(const ScenarioResult& r) const {
  const fs::path dir = payload_dir("results", r.scenario_id);
  const Role lst = Role::lst;
  write_atomic(dir / "predicted.tif", encode_geotiff(std::span(&r.predicted_lst, 1), std::span(&lst, 1)));
  write_atomic(dir / "baseline.tif", encode_geotiff(std::span(&r.baseline_lst, 1), std::span(&lst, 1)));
  write_atomic(dir / "diff.tif", encode_geotiff(std::span(&r.diff, 1)));
  write_atomic(dir / "profile.csv", profile_csv(r.profile));
  nlohmann::json doc = r.to_json();
  doc["files"] = {{"predicted", "predicted.tif"}, {"baseline", "baseline.tif"}, {"diff", "diff.tif"},
                  {"profile", "profile.csv"}};
  doc["completed_at"] = utc_now();
  put("results", r.scenario_id, doc);
}

std::optional<nlohmann::json> Store::load_result_doc(std::string_view id) const { return get("results", id); }

Grid Store::load_result_grid(std::string_view id, std::string_view which) const {
  if (which != "predicted" && which != "baseline" && which != "diff") {
    throw Error(ErrorCode::InvalidArgument, "unknown result grid '" + std::string(which) + "'");
  }
  const fs::path p = payload_dir("results", id) / (std::string(which) + ".tif");
  if (!fs::exists(p)) throw Error(ErrorCode::UnknownSample, "no result grid for '" + std::string(id) + "'");
  return read_geotiff(p, Units::celsius).grids.at(0);
}

std::string Store::mint_id(std::string_view prefix) const {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = std::random_device{}();
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(now).count();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*s-%011llx-%04llx", static_cast<int>(prefix.size()), prefix.data(),
                static_cast<unsigned long long>(us),
                static_cast<unsigned long long>((salt + counter.fetch_add(1)) & 0xffff));
  return buf;
}

JobRecord Store::create_job(JobKind kind, std::string_view target_id) const {
  JobRecord j;
  j.job_id = mint_id("job");
  j.kind = kind;
  j.status = JobStatus::queued;
  j.created_at = j.updated_at = utc_now();
  j.target_id = target_id;
  std::lock_guard lock(*jobs_mutex_);
  put("jobs", j.job_id, j.to_json());
  return j;
}

std::optional<JobRecord> Store::load_job(std::string_view id) const {
  std::lock_guard lock(*jobs_mutex_);
  const auto doc = get("jobs", id);
  if (!doc) return std::nullopt;
  return JobRecord::from_json(*doc);
}

JobRecord Store::transition_job(std::string_view id, JobStatus to, std::string_view result_ref,
                                std::string_view error_message) const {
  std::lock_guard lock(*jobs_mutex_);
  const auto doc = get("jobs", id);
  if (!doc) throw Error(ErrorCode::InvalidArgument, "unknown job '" + std::string(id) + "'");
  JobRecord j = JobRecord::from_json(*doc);
  if (!job_transition_allowed(j.status, to)) {
    throw Error(ErrorCode::InvalidArgument, "job " + j.job_id + ": illegal transition " +
                                                std::string(to_string(j.status)) + " -> " + std::string(to_string(to)));
  }
  j.status = to;
  j.updated_at = utc_now();
  if (!result_ref.empty()) j.result_ref = result_ref;
  if (!error_message.empty()) j.error_message = error_message;
  put("jobs", j.job_id, j.to_json());
  return j;
}

std::vector<JobRecord> Store::jobs_for(std::string_view target_id) const {
  std::lock_guard lock(*jobs_mutex_);
  std::vector<JobRecord> out;
  for (const auto& id : list("jobs")) {
    const auto doc = get("jobs", id);
    if (!doc) continue;
    JobRecord j = JobRecord::from_json(*doc);
    if (j.target_id == target_id) out.push_back(std::move(j));
  }
  return out;
}

ScenarioResult run_scenario(const ScenarioDef& def, const Store& store) {
  const Sample base = store.load_sample(def.base_sample_id);
  const Checkpoint ckpt = store.load_checkpoint(def.checkpoint_id);
  std::optional<ForcingRecord> forcing;
  if (const auto* f = std::get_if<Forcing>(&def.modification)) forcing = store.load_forcing(f->source);
  return run_scenario(def, base, ckpt.params, forcing ? &*forcing : nullptr);
}

}  // namespace uhi
