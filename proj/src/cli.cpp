#include "uhi/cli.hpp"

#include <csignal>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "uhi/checkpoint.hpp"
#include "uhi/error.hpp"
#include "uhi/eval.hpp"
#include "uhi/io_util.hpp"
#include "uhi/render.hpp"
#include "uhi/service.hpp"
#include "uhi/store.hpp"
#include "uhi/synthetic.hpp"
#include "uhi/train.hpp"

namespace uhi {

namespace fs = std::filesystem;

namespace {

nlohmann::json load_json_file(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, p.string() + ": " + e.what());
  }
}

std::vector<Sample> load_all_samples(const Store& store) {
  std::vector<Sample> out;
  for (const auto& id : store.sample_ids()) out.push_back(store.load_sample(id));
  if (out.empty()) throw Error(ErrorCode::EmptyCatalog, "store has no samples; run ingest or synth first");
  return out;
}

struct Common {
  std::string store = "store";
};

struct IngestOpts {
  std::string dir;
  std::string config;
  int tile = 64;
};

struct SynthOpts {
  SyntheticConfig cfg;
};

struct TrainOpts {
  std::string split = "random";
  double percentile = 90.0;
  TrainSchedule schedule;
  std::string init;
  std::string out;
  std::string model_config;
  double mask_ratio = 0.0;
};

struct EvalOpts {
  std::string checkpoint = "default";
  bool per_lulc = false;
  std::string set = "test";
  std::string out;
  std::string csv;
};

struct SimOpts {
  std::string scenario;
  std::string checkpoint;
};

struct ServeOpts {
  std::string config;
  int port = 8080;
  std::string host = "127.0.0.1";
  int workers = 2;
  std::string ui_dir;
};

struct ExportOpts {
  std::string result;
  std::string scene;
  std::string map;
  std::string diff;
  std::string profile;
  std::string format = "png";
  std::string palette;
  std::optional<double> min_c;
  std::optional<double> max_c;
};

int run_ingest(const Common& c, const IngestOpts& o, std::ostream& out, std::ostream& err) {
  const CatalogConfig cfg = o.config.empty() ? CatalogConfig::defaults() : CatalogConfig::from_json(load_json_file(o.config));
  const Catalog catalog = catalog_scan(o.dir, cfg);
  const Store store(c.store);
  write_atomic(store.root() / "catalog.json", catalog.to_json().dump(2) + "\n");
  nlohmann::json written = nlohmann::json::array(), skipped = nlohmann::json::array();
  for (const SceneRecord* ls : catalog.by_source(Source::landsat8)) {
    const SceneRecord* era5 = match_era5(catalog, *ls);
    const SceneRecord* lulc = match_lulc(catalog, *ls);
    if (!era5 || !lulc) {
      skipped.push_back({{"scene_id", ls->scene_id}, {"reason", !era5 ? "no ERA5 record" : "no LULC record"}});
      err << "skipping " << ls->scene_id << ": " << (!era5 ? "no ERA5 record" : "no LULC record") << "\n";
      continue;
    }
    const Sample full = build_sample(*ls, *era5, *lulc, catalog);
    std::vector<Sample> parts;
    if (o.tile > 0 && (full.width() > o.tile || full.height() > o.tile)) {
      parts = tile_sample(full, o.tile);
    } else {
      parts.push_back(full);
    }
    for (const Sample& s : parts) {
      if (s.label.nodata_count() == s.label.size()) continue;
      store.put_sample(s);
      written.push_back(s.id);
    }
  }
  out << nlohmann::json{{"records", catalog.records.size()},
                        {"ignored", catalog.ignored},
                        {"samples", written},
                        {"skipped", skipped}}
             .dump(2)
      << "\n";
  return 0;
}

int run_synth(const Common& c, const SynthOpts& o, std::ostream& out) {
  const Store store(c.store);
  const auto samples = synthetic_samples(o.cfg);
  for (const Sample& s : samples) store.put_sample(s);
  out << nlohmann::json{{"samples", samples.size()}, {"size", o.cfg.size}, {"slope", o.cfg.slope}}.dump() << "\n";
  return 0;
}

TinyViTConfig model_config(const TrainOpts& o, const std::optional<Checkpoint>& init) {
  TinyViTConfig cfg = init ? init->params.config : TinyViTConfig{};
  if (!o.model_config.empty()) cfg = vit_config_from_json(load_json_file(o.model_config));
  if (o.mask_ratio > 0.0) cfg.mask_ratio = o.mask_ratio;
  cfg.validate();
  return cfg;
}

int run_train(const Common& c, TrainOpts o, bool pretrain_only, std::ostream& out, std::ostream& err) {
  const Store store(c.store);
  const auto samples = load_all_samples(store);
  std::optional<Checkpoint> init;
  if (!o.init.empty()) init = store.load_checkpoint(o.init);
  const TinyViTConfig cfg = model_config(o, init);

  SplitPlan plan;
  if (pretrain_only) {
    // Masked pretraining needs no labels: every sample is training data.
    plan.protocol = SplitProtocol::random;
    plan.seed = o.schedule.seed;
    for (const Sample& s : samples) plan.assignments[s.id] = SplitSet::train;
    o.schedule.pretrain_epochs = o.schedule.epochs;
    o.schedule.epochs = 0;
  } else {
    const SplitProtocol protocol = split_protocol_from_string(o.split);
    if (protocol == SplitProtocol::high_heat) {
      plan = heat_split(samples, o.percentile, o.schedule.seed);
    } else {
      std::vector<std::string> ids;
      for (const Sample& s : samples) ids.push_back(s.id);
      plan = random_split(ids, {}, o.schedule.seed);
    }
  }

  const TrainResult r = train(samples, plan, cfg, o.schedule, init ? &init->params : nullptr, [&](const LogEntry& e) {
    err << e.phase << " epoch " << e.epoch << " loss " << e.loss;
    if (e.val_mae) err << " val_mae " << *e.val_mae;
    err << "\n";
  });

  const std::string id = o.out.empty() ? (pretrain_only ? "pretrained" : "default") : o.out;
  Checkpoint ck;
  ck.params = r.params;
  ck.seed = o.schedule.seed;
  ck.epoch = pretrain_only ? o.schedule.pretrain_epochs : r.best_epoch;
  nlohmann::json split_summary = plan.to_json();
  split_summary.erase("assignments");
  ck.extra = {{"stage", pretrain_only ? "pretrain" : "finetune"}, {"schedule", to_json(o.schedule)},
              {"split", split_summary}, {"init", o.init}};
  store.put_checkpoint(id, ck);

  nlohmann::json manifest = {{"checkpoint", id},
                             {"stage", pretrain_only ? "pretrain" : "finetune"},
                             {"config", to_json(cfg)},
                             {"schedule", to_json(o.schedule)},
                             {"init", o.init},
                             {"split_plan", plan.to_json()},
                             {"best_epoch", r.best_epoch},
                             {"best_val_mae", r.best_val_mae ? nlohmann::json(*r.best_val_mae) : nlohmann::json(nullptr)},
                             {"log", id + "/log.csv"},
                             {"created_at", utc_now()}};
  write_atomic(store.payload_dir("runs", id) / "log.csv", r.log.to_csv());
  store.put("runs", id, manifest);

  manifest["split_plan"].erase("assignments");
  out << manifest.dump(2) << "\n";
  return 0;
}

int run_evaluate(const Common& c, const EvalOpts& o, std::ostream& out) {
  const Store store(c.store);
  const Checkpoint ck = store.load_checkpoint(o.checkpoint);
  const auto run = store.get("runs", o.checkpoint);
  std::optional<SplitPlan> plan;
  if (run && run->contains("split_plan")) plan = SplitPlan::from_json(run->at("split_plan"));

  std::vector<std::string> ids;
  if (plan && o.set != "all") {
    ids = plan->ids(split_set_from_string(o.set));
  } else {
    ids = store.sample_ids();
  }
  if (ids.empty()) throw Error(ErrorCode::EmptySplit, "no samples in the '" + o.set + "' set");

  MetricAccumulator acc;
  std::vector<Grid> predictions;
  for (const auto& id : ids) {
    const Sample s = store.load_sample(id);
    Grid pred = predict_stack(ck.params, s.inputs);
    acc.add(pred, s.label, {}, o.per_lulc ? &s.lulc : nullptr);
    predictions.push_back(std::move(pred));
  }
  const MetricReport report = acc.finish();
  nlohmann::json doc = {{"checkpoint", o.checkpoint},
                        {"set", plan ? o.set : "all"},
                        {"n_samples", ids.size()},
                        {"metrics", report.to_json()}};
  if (plan) doc["split_protocol"] = to_string(plan->protocol);
  if (plan && plan->threshold_celsius) {
    doc["threshold_celsius"] = *plan->threshold_celsius;
    doc["extrapolation_capacity"] = extrapolation_capacity(predictions, *plan->threshold_celsius);
  }
  if (o.per_lulc) {
    const fs::path csv = o.csv.empty() ? store.payload_dir("runs", o.checkpoint) / "per_lulc.csv" : fs::path(o.csv);
    write_atomic(csv, report.to_csv());
    doc["per_lulc_csv"] = csv.string();
  }
  if (!o.out.empty()) write_atomic(o.out, doc.dump(2) + "\n");
  out << doc.dump(2) << "\n";
  return 0;
}

int run_simulate(const Common& c, const SimOpts& o, std::ostream& out) {
  const Store store(c.store);
  ScenarioDef def = scenario_def_from_json(load_json_file(o.scenario));
  if (!o.checkpoint.empty()) def.checkpoint_id = o.checkpoint;
  if (def.scenario_id.empty()) def.scenario_id = store.mint_id("scn");
  check_record_id(def.scenario_id);
  if (def.created_at.empty()) def.created_at = utc_now();
  const ScenarioResult r = run_scenario(def, store);
  store.put_scenario(def);
  store.put_result(r);
  out << r.to_json().dump(2) << "\n";
  return 0;
}

int run_serve(const Common& c, const ServeOpts& o, const CLI::App& app, std::ostream& out) {
  ServiceConfig cfg;
  if (!o.config.empty()) cfg = ServiceConfig::from_json(load_json_file(o.config));
  if (app.count("--store") || o.config.empty()) cfg.store_dir = c.store;
  if (app.count("--port") || o.config.empty()) cfg.port = o.port;
  if (app.count("--host") || o.config.empty()) cfg.host = o.host;
  if (app.count("--workers") || o.config.empty()) cfg.workers = o.workers;
  if (!o.ui_dir.empty()) cfg.ui_dir = o.ui_dir;

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  Service service(cfg);
  const int port = service.start();
  out << "serving " << cfg.store_dir.string() << " on http://" << cfg.host << ":" << port << "/\n" << std::flush;
  int sig = 0;
  sigwait(&set, &sig);
  service.stop();
  return 0;
}

int run_export(const Common& c, const ExportOpts& o, std::ostream& out) {
  const Store store(c.store);
  if (o.result.empty() == o.scene.empty()) throw Error(ErrorCode::InvalidArgument, "give exactly one of --result / --scene");
  auto spec_for = [&](Palette default_palette, std::vector<const Grid*> grids) {
    const Palette p = o.palette.empty() ? default_palette : palette_from_string(o.palette);
    ColorMapSpec s = auto_colormap(p, grids);
    if (o.min_c) s.min_c = *o.min_c;
    if (o.max_c) s.max_c = *o.max_c;
    s.validate();
    return s;
  };
  auto write_image = [&](const fs::path& path, const Grid& g, const ColorMapSpec& s) {
    const RgbImage img = render_map(g, s);
    write_atomic(path, o.format == "ppm" ? encode_ppm(img) : encode_png(img));
    out << path.string() << "\n";
  };
  int written = 0;
  if (!o.scene.empty()) {
    const Sample s = store.load_sample(o.scene);
    if (!o.map.empty()) write_image(o.map, s.label, spec_for(Palette::thermal, {&s.label})), ++written;
    if (!o.diff.empty() || !o.profile.empty()) {
      throw Error(ErrorCode::InvalidArgument, "--diff and --profile need --result");
    }
  } else {
    if (!store.exists("results", o.result)) {
      throw Error(ErrorCode::UnknownSample, "no result for scenario '" + o.result + "'");
    }
    if (!o.map.empty()) {
      const Grid pred = store.load_result_grid(o.result, "predicted");
      const Grid base = store.load_result_grid(o.result, "baseline");
      write_image(o.map, pred, spec_for(Palette::thermal, {&pred, &base}));
      ++written;
    }
    if (!o.diff.empty()) {
      const Grid diff = store.load_result_grid(o.result, "diff");
      write_image(o.diff, diff, spec_for(Palette::diverging, {&diff}));
      ++written;
    }
    if (!o.profile.empty()) {
      write_atomic(o.profile, read_text(store.payload_dir("results", o.result) / "profile.csv"));
      out << o.profile << "\n";
      ++written;
    }
  }
  if (written == 0) throw Error(ErrorCode::InvalidArgument, "nothing to export: give --map, --diff or --profile");
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Urban heat island simulation engine", "uhi"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--store", common.store, "Store directory")->capture_default_str();

  IngestOpts ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Catalog a raster directory and persist training samples");
  c_ingest->add_option("dir", ingest.dir, "Directory of GeoTIFF / sidecar rasters")->required()->check(CLI::ExistingDirectory);
  c_ingest->add_option("--config", ingest.config, "Catalog config JSON")->check(CLI::ExistingFile);
  c_ingest->add_option("--tile", ingest.tile, "Tile size for large scenes (0 keeps whole scenes)")->capture_default_str();
  c_ingest->add_option("--store", common.store, "Store directory");

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "Write synthetic linear-in-NDVI samples");
  c_synth->add_option("--count", synth.cfg.count)->capture_default_str();
  c_synth->add_option("--size", synth.cfg.size)->capture_default_str();
  c_synth->add_option("--slope", synth.cfg.slope)->capture_default_str();
  c_synth->add_option("--intercept", synth.cfg.intercept)->capture_default_str();
  c_synth->add_option("--noise", synth.cfg.noise_sigma)->capture_default_str();
  c_synth->add_option("--seed", synth.cfg.seed)->capture_default_str();
  c_synth->add_option("--store", common.store, "Store directory");

  auto add_train_opts = [&](CLI::App* cmd, TrainOpts& o) {
    cmd->add_option("--epochs", o.schedule.epochs)->capture_default_str();
    cmd->add_option("--batch", o.schedule.batch_size)->capture_default_str();
    cmd->add_option("--seed", o.schedule.seed)->capture_default_str();
    cmd->add_option("--lr", o.schedule.lr)->capture_default_str();
    cmd->add_option("--weight-decay", o.schedule.weight_decay)->capture_default_str();
    cmd->add_option("--workers", o.schedule.workers)->capture_default_str();
    cmd->add_option("--init", o.init, "Checkpoint id to start from");
    cmd->add_option("--out", o.out, "Checkpoint id to write");
    cmd->add_option("--model-config", o.model_config, "Model config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--store", common.store, "Store directory");
  };
  TrainOpts pretrain;
  pretrain.schedule.epochs = 10;
  auto* c_pretrain = app.add_subcommand("pretrain", "Masked-autoencoder pretraining on all stored samples");
  add_train_opts(c_pretrain, pretrain);
  c_pretrain->add_option("--mask-ratio", pretrain.mask_ratio, "Fraction of tokens masked");

  TrainOpts finetune;
  auto* c_finetune = app.add_subcommand("finetune", "Regression fine-tuning under a split protocol");
  add_train_opts(c_finetune, finetune);
  c_finetune->add_option("--split", finetune.split, "random | high-heat")
      ->check(CLI::IsMember({"random", "high-heat", "high_heat"}))
      ->capture_default_str();
  c_finetune->add_option("--percentile", finetune.percentile, "High-heat holdout percentile")->capture_default_str();
  c_finetune->add_option("--pretrain-epochs", finetune.schedule.pretrain_epochs)->capture_default_str();

  EvalOpts eval;
  auto* c_eval = app.add_subcommand("evaluate", "Score a checkpoint on its held-out split");
  c_eval->add_option("--checkpoint", eval.checkpoint)->capture_default_str();
  c_eval->add_flag("--per-lulc", eval.per_lulc, "Per land-cover class table (CSV)");
  c_eval->add_option("--set", eval.set, "train | val | test | all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  c_eval->add_option("--out", eval.out, "Write the JSON report here");
  c_eval->add_option("--csv", eval.csv, "Write the per-class CSV here");
  c_eval->add_option("--store", common.store, "Store directory");

  SimOpts sim;
  auto* c_sim = app.add_subcommand("simulate", "Run a scenario definition synchronously");
  c_sim->add_option("--scenario", sim.scenario, "ScenarioDef JSON")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--checkpoint", sim.checkpoint, "Override the definition's checkpoint id");
  c_sim->add_option("--store", common.store, "Store directory");

  ServeOpts serve;
  auto* c_serve = app.add_subcommand("serve", "HTTP scenario service");
  c_serve->add_option("--port", serve.port)->capture_default_str();
  c_serve->add_option("--host", serve.host)->capture_default_str();
  c_serve->add_option("--workers", serve.workers)->capture_default_str();
  c_serve->add_option("--ui-dir", serve.ui_dir, "Built editor assets for /ui/");
  c_serve->add_option("--config", serve.config, "Service config JSON")->check(CLI::ExistingFile);
  c_serve->add_option("--store", common.store, "Store directory");

  ExportOpts exp;
  auto* c_export = app.add_subcommand("export", "Render maps and profiles");
  c_export->add_option("--result", exp.result, "Scenario id with a completed result");
  c_export->add_option("--scene", exp.scene, "Sample id (label map)");
  c_export->add_option("--map", exp.map, "Predicted LST map image path");
  c_export->add_option("--diff", exp.diff, "Diff map image path");
  c_export->add_option("--profile", exp.profile, "Profile CSV path");
  c_export->add_option("--format", exp.format)->check(CLI::IsMember({"png", "ppm"}))->capture_default_str();
  c_export->add_option("--palette", exp.palette)->check(CLI::IsMember({"thermal", "diverging"}));
  c_export->add_option("--min", exp.min_c);
  c_export->add_option("--max", exp.max_c);
  c_export->add_option("--store", common.store, "Store directory");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) known = known || sub->get_name() == argv[1];
    if (!known) {
      err << "unknown subcommand '" << argv[1] << "'\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return 2;
  }

  try {
    if (*c_ingest) return run_ingest(common, ingest, out, err);
    if (*c_synth) return run_synth(common, synth, out);
    if (*c_pretrain) return run_train(common, pretrain, true, out, err);
    if (*c_finetune) return run_train(common, finetune, false, out, err);
    if (*c_eval) return run_evaluate(common, eval, out);
    if (*c_sim) return run_simulate(common, sim, out);
    if (*c_serve) return run_serve(common, serve, *c_serve, out);
    if (*c_export) return run_export(common, exp, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace uhi
