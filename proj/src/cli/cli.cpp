#include "tapd/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "tapd/error.hpp"
#include "tapd/evalkit/evaluate.hpp"
#include "tapd/scenegen/dataset_io.hpp"
#include "tapd/train/checkpoint.hpp"
#include "tapd/train/json_reader.hpp"
#include "tapd/train/train.hpp"

namespace tapd::cli {

namespace fs = std::filesystem;
using train::Json;
using train::ObjectReader;

namespace {

constexpr const char* kVersion = "1.0.0";

std::vector<int> all_lengths(int h, bool include_full) {
  std::vector<int> out;
  for (int t = 1; t <= (include_full ? h : h - 1); ++t) out.push_back(t);
  return out;
}

int max_length(const RunConfig& c) { return static_cast<int>(c.generator.layout.intervals); }

void stage_defaults(RunConfig& c) {
  const int h = max_length(c);
  for (int s = 1; s <= 3; ++s) {
    c.stages[s - 1].stage = s;
    c.stages[s - 1].lengths = all_lengths(h, s != 2);
  }
}

const std::set<std::string> kPathKeys = {"out", "data", "log", "oaf", "tbm", "ori", "it", "tapd_oaf", "tapd_tbm", "in"};
const std::set<std::string> kBundles = {"ori", "it", "tapd"};

}  // namespace

RunConfig RunConfig::defaults(std::uint64_t seed) {
  RunConfig c;
  stage_defaults(c);
  c.reseed(seed);
  return c;
}

void RunConfig::reseed(std::uint64_t s) {
  seed = s;
  oaf.seed = s;
  tbm.seed = s + 1;
  for (auto& st : stages) st.seed = s;
}

void RunConfig::validate() const {
  generator.validate();
  if (!(data.val_ratio >= 0.0 && data.val_ratio < 1.0)) throw ConfigError("data.val_ratio must be in [0, 1)");
  if (data.scenes < 1) throw ConfigError("data.scenes must be >= 1");
  const int h = max_length(*this);
  for (const auto& st : stages) st.validate(h);
  if (oaf.hidden < 1 || oaf.modes < 1 || tbm.hidden < 1 || tbm.modes < 1) throw ConfigError("model sizes must be >= 1");
  if (!(oaf.norm_eps > 0.0) || !(tbm.norm_eps > 0.0)) throw ConfigError("norm_eps must be > 0");
  if (eval.taus.empty()) throw ConfigError("eval.taus must be non-empty");
  for (int t : eval.taus)
    if (t < 1 || t > h) throw ConfigError("eval.taus: " + std::to_string(t) + " outside [1, " + std::to_string(h) + "]");
  if (eval.ks.empty()) throw ConfigError("eval.ks must be non-empty");
  for (std::size_t k : eval.ks)
    if (k < 1 || k > oaf.modes) throw ConfigError("eval.ks: " + std::to_string(k) + " outside [1, " + std::to_string(oaf.modes) + "]");
  for (const auto& b : eval.bundles)
    if (!kBundles.count(b)) throw ConfigError("eval.bundles: unknown bundle '" + b + "' (expected ori, it or tapd)");
  for (const auto& [name, path] : eval.models) {
    if (name.empty() || name.find_first_of(",\n\"") != std::string::npos) throw ConfigError("eval.models: bad method name '" + name + "'");
  }
  for (const auto& [k, v] : paths)
    if (!kPathKeys.count(k)) throw ConfigError("paths: unknown key '" + k + "'");
}

RunConfig parse_run_config(const Json& j, std::uint64_t fallback_seed) {
  ObjectReader r(j, "config");
  std::uint64_t seed = fallback_seed;
  r.get("seed", seed);
  RunConfig c = RunConfig::defaults(seed);
  if (const Json* g = r.child("generator")) train::from_json_strict(*g, c.generator);
  stage_defaults(c);
  for (auto& st : c.stages) st.seed = seed;
  if (const Json* d = r.child("data")) {
    ObjectReader dr(*d, "data");
    dr.get("scenes", c.data.scenes);
    dr.get("val_ratio", c.data.val_ratio);
    dr.finish();
  }
  if (const Json* o = r.child("oaf")) {
    if (o->is_object() && o->contains("layout")) throw ConfigError("oaf.layout: set the layout under generator");
    train::from_json_strict(*o, c.oaf);
  }
  if (const Json* t = r.child("tbm")) {
    if (t->is_object() && t->contains("layout")) throw ConfigError("tbm.layout: set the layout under generator");
    train::from_json_strict(*t, c.tbm);
  }
  c.oaf.layout = c.tbm.layout = c.generator.layout;
  if (const Json* t = r.child("train")) {
    ObjectReader tr(*t, "train");
    const char* keys[] = {"stage1", "stage2", "stage3"};
    for (int s = 0; s < 3; ++s) {
      if (const Json* st = tr.child(keys[s])) {
        train::from_json_strict(*st, c.stages[s]);
        if (c.stages[s].stage != s + 1) throw ConfigError(std::string("train.") + keys[s] + ".stage must be " + std::to_string(s + 1));
      }
    }
    tr.finish();
  }
  if (const Json* e = r.child("eval")) {
    ObjectReader er(*e, "eval");
    er.get("taus", c.eval.taus);
    er.get("ks", c.eval.ks);
    er.get("bundles", c.eval.bundles);
    er.get("svg", c.eval.svg);
    er.get("models", c.eval.models);
    er.finish();
  }
  if (const Json* p = r.child("paths")) {
    if (!p->is_object()) throw ConfigError("paths: expected an object");
    for (const auto& [k, v] : p->items()) {
      if (!v.is_string()) throw ConfigError("paths." + k + ": expected a string");
      c.paths[k] = v.get<std::string>();
    }
  }
  r.finish();
  return c;
}

Json to_json(const RunConfig& c) {
  Json stages = Json::object();
  for (int s = 0; s < 3; ++s) stages["stage" + std::to_string(s + 1)] = train::to_json(c.stages[s]);
  Json oaf = train::to_json(c.oaf), tbm = train::to_json(c.tbm);
  oaf.erase("layout");
  tbm.erase("layout");
  return Json{{"seed", c.seed},
              {"generator", train::to_json(c.generator)},
              {"data", {{"scenes", c.data.scenes}, {"val_ratio", c.data.val_ratio}}},
              {"oaf", oaf},
              {"tbm", tbm},
              {"train", stages},
              {"eval",
               {{"taus", c.eval.taus}, {"ks", c.eval.ks}, {"bundles", c.eval.bundles}, {"svg", c.eval.svg}, {"models", c.eval.models}}},
              {"paths", c.paths}};
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("TAPD_SEED");
  if (!v || !*v) return std::nullopt;
  const std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 19) {
    throw ConfigError("TAPD_SEED must be a non-negative integer, got '" + s + "'");
  }
  return std::stoull(s);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ValueError*>(&e)) return kExitUsage;
  if (dynamic_cast<const DependencyError*>(&e)) return kExitDependency;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kExitFormat;
  return kExitOther;
}

namespace {

// Command-line state shared by every subcommand.
struct Invocation {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::vector<std::string> args;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

// Flag values; an option applies only when it was given.
struct Flags {
  std::size_t scenes = 0;
  double val_ratio = 0.0;
  int stage = 0;
  std::vector<int> lengths;
  int epochs = 0;
  double lr = 0.0, weight_decay = 0.0, clip_norm = 0.0;
  std::size_t batch_size = 0;
  std::string lr_schedule;
  bool no_pkd = false;
  std::size_t hidden = 0;
  int tau = 0;
  std::vector<int> taus;
  std::vector<std::size_t> ks;
  std::vector<std::string> bundles, formats, models;
  std::string format = "markdown", metric = "min_fde";
  std::size_t k = 6, delta_t = 5;
  std::map<std::string, std::string> paths;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw DependencyError(what + ": no path given");
  if (!fs::is_regular_file(path)) throw DependencyError(what + " not found: " + path);
}

std::string need_path(const RunConfig& c, const std::string& key, const std::string& flag) {
  const auto it = c.paths.find(key);
  if (it == c.paths.end() || it->second.empty()) throw ConfigError("missing " + flag + " (or paths." + key + " in the config)");
  return it->second;
}

std::string opt_path(const RunConfig& c, const std::string& key, const std::string& fallback = "") {
  const auto it = c.paths.find(key);
  return it == c.paths.end() ? fallback : it->second;
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw Error("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DependencyError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunConfig load_config(const Invocation& inv) {
  std::uint64_t seed = 0;
  if (const auto e = env_seed()) seed = *e;
  RunConfig c = RunConfig::defaults(seed);
  if (!inv.config_path.empty()) {
    if (!fs::is_regular_file(inv.config_path)) throw ConfigError("config file not found: " + inv.config_path);
    Json j;
    try {
      j = Json::parse(read_text(inv.config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config " + inv.config_path + ": " + e.what());
    }
    c = parse_run_config(j, seed);
  }
  if (inv.seed) c.reseed(*inv.seed);
  return c;
}

void apply_flags(RunConfig& c, const CLI::App& app, const Flags& f) {
  const auto given = [&](const char* name) { return app.get_option(name)->count() > 0; };
  const auto has = [&](const char* name) {
    try {
      return given(name);
    } catch (const CLI::OptionNotFound&) {
      return false;
    }
  };
  if (has("--scenes")) c.data.scenes = f.scenes;
  if (has("--val-ratio")) c.data.val_ratio = f.val_ratio;
  if (has("--hidden")) c.oaf.hidden = c.tbm.hidden = f.hidden;
  if (has("--stage")) {
    if (f.stage < 1 || f.stage > 3) throw ConfigError("--stage must be 1, 2 or 3");
    auto& st = c.stages[f.stage - 1];
    if (has("--lengths")) st.lengths = f.lengths;
    if (has("--epochs")) st.epochs = f.epochs;
    if (has("--lr")) st.lr = f.lr;
    if (has("--weight-decay")) st.weight_decay = f.weight_decay;
    if (has("--batch-size")) st.batch_size = f.batch_size;
    if (has("--clip-norm")) st.clip_norm = f.clip_norm;
    if (has("--lr-schedule")) st.lr_schedule = f.lr_schedule;
    if (has("--no-pkd") && f.no_pkd) st.pkd = false;
  }
  if (has("--taus")) c.eval.taus = f.taus;
  if (has("--ks")) c.eval.ks = f.ks;
  if (has("--bundles")) {
    c.eval.bundles.clear();
    for (const auto& b : f.bundles)
      if (!b.empty()) c.eval.bundles.push_back(b);
  }
  if (has("--format") && app.get_name() == "eval") {
    for (const auto& fmt : f.formats) {
      if (fmt == "svg") {
        c.eval.svg = true;
      } else if (fmt != "csv" && fmt != "markdown" && fmt != "md") {
        throw ConfigError("--format: unknown format '" + fmt + "'");
      }
    }
  }
  if (has("--model")) {
    for (const auto& m : f.models) {
      const auto eq = m.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) throw ConfigError("--model expects NAME=CHECKPOINT, got '" + m + "'");
      c.eval.models[m.substr(0, eq)] = m.substr(eq + 1);
    }
  }
  for (const auto& [k, v] : f.paths) c.paths[k] = v;
}

void write_manifest(const std::string& path, const Invocation& inv, const RunConfig& c, const Json& extra = Json::object()) {
  Json m{{"tool", "tapd"}, {"version", kVersion}, {"command", inv.command}, {"args", inv.args}, {"config", to_json(c)}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_text(path, train::canonical(m));
}

std::vector<scenegen::Scene> load_scenes(const std::string& path, scenegen::DatasetHeader& header) {
  require_file(path, "dataset");
  auto ds = scenegen::read_dataset(path);
  if (ds.scenes.empty()) throw FormatError("dataset " + path + " has no records");
  header = ds.header;
  return std::move(ds.scenes);
}

train::Checkpoint load_kind(const std::string& path, const std::string& kind, const std::string& what) {
  require_file(path, what);
  auto ck = train::load_checkpoint(path);
  if (ck.model != kind) throw FormatError(what + " " + path + " holds a '" + ck.model + "' model, expected '" + kind + "'");
  return ck;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// gen-data ------------------------------------------------------------------

int cmd_gen_data(const Invocation& inv, RunConfig& c) {
  const std::string dir = need_path(c, "out", "--out");
  c.validate();
  auto scenes = scenegen::generate_scenes(c.data.scenes, c.seed, c.generator);
  auto [train_set, val_set] = scenegen::split_dataset(std::move(scenes), {1.0 - c.data.val_ratio, c.data.val_ratio}, c.seed);
  const scenegen::DatasetHeader header{c.generator.layout};
  fs::create_directories(dir);
  scenegen::write_dataset((fs::path(dir) / "train.tapd").string(), header, train_set);
  scenegen::write_dataset((fs::path(dir) / "val.tapd").string(), header, val_set);
  const Json summary{{"scenes", c.data.scenes},
                     {"train", train_set.size()},
                     {"val", val_set.size()},
                     {"seed", c.seed},
                     {"header",
                      {{"layout", train::to_json(header.layout)},
                       {"state_dim", header.state_dim},
                       {"map_dim", header.map_dim},
                       {"reconstructed", header.reconstructed}}}};
  write_text((fs::path(dir) / "summary.json").string(), train::canonical(summary));
  write_manifest((fs::path(dir) / "manifest.json").string(), inv, c);
  *inv.out << "wrote " << train_set.size() << " train and " << val_set.size() << " val scenes to " << dir << "\n";
  return kExitOk;
}

// train ---------------------------------------------------------------------

int cmd_train(const Invocation& inv, RunConfig& c, int stage) {
  auto& cfg = c.stages[stage - 1];
  const std::string data = need_path(c, "data", "--data");
  const std::string out = need_path(c, "out", "--out");
  const std::string log_path = opt_path(c, "log", out + ".log.jsonl");
  if (stage == 1 && cfg.pkd && cfg.pkd_pairs().empty()) {
    *inv.err << "warning: lengths have no adjacent pair; training without distillation\n";
    cfg.pkd = false;
  }
  c.validate();
  std::string oaf_path, tbm_path;
  if (stage == 3) {
    oaf_path = opt_path(c, "oaf");
    tbm_path = opt_path(c, "tbm");
    require_file(oaf_path, "stage-1 forecaster checkpoint");
    require_file(tbm_path, "stage-2 backfilling checkpoint");
  }
  require_file(data, "training dataset");

  scenegen::DatasetHeader header;
  const auto scenes = load_scenes(data, header);
  if (!(header.layout == c.generator.layout)) {
    throw FormatError("dataset layout (dT=" + std::to_string(header.layout.delta_t) + ", H=" + std::to_string(header.layout.intervals) +
                      ") differs from the configured generator layout");
  }

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw Error("cannot open " + log_path + " for writing");
  const auto on_epoch = [&](const train::EpochRecord& rec) {
    log << train::to_jsonl(rec);
    log.flush();
    if (!inv.quiet) {
      *inv.err << "stage " << rec.stage << " epoch " << rec.epoch << "/" << cfg.epochs << " total=" << fixed(rec.total) << " l_reg="
               << fixed(rec.l_reg) << " l_cls=" << fixed(rec.l_cls) << " l_f=" << fixed(rec.l_f) << " alpha=" << fixed(rec.alpha, 4) << "\n";
    }
  };

  train::Checkpoint ckpt;
  Json extra = Json::object();
  if (stage == 1) {
    auto res = train::stage1_pretrain(cfg, c.oaf, scenes, on_epoch);
    ckpt = train::snapshot(res.params.store(), res.optim, 1, "oaf",
                           train::canonical({{"model", train::to_json(c.oaf)}, {"train", train::to_json(cfg)}}));
  } else if (stage == 2) {
    auto res = train::stage2_train_tbm(cfg, c.tbm, scenes, on_epoch);
    ckpt = train::snapshot(res.params.store(), res.optim, 2, "tbm",
                           train::canonical({{"model", train::to_json(c.tbm)}, {"train", train::to_json(cfg)}}));
  } else {
    const auto oaf_ck = load_kind(oaf_path, "oaf", "forecaster checkpoint");
    const auto tbm_ck = load_kind(tbm_path, "tbm", "backfilling checkpoint");
    const auto initial = train::load_oaf(oaf_ck);
    const auto tbm = train::load_tbm(tbm_ck);
    if (!(initial.config().layout == header.layout) || !(tbm.config().layout == header.layout)) {
      throw FormatError("checkpoint layout differs from the dataset layout");
    }
    auto res = train::stage3_finetune(cfg, initial, tbm, scenes, on_epoch);
    ckpt = train::snapshot(res.params.store(), res.optim, 3, "oaf",
                           train::canonical({{"model", train::to_json(initial.config())}, {"train", train::to_json(cfg)}}));
    extra["stage3"] = {{"tbm_calls", res.stats.tbm_calls},
                       {"samples_per_length", res.stats.samples_per_length},
                       {"tbm_calls_per_length", res.stats.tbm_calls_per_length}};
    extra["inputs"] = {{"oaf", oaf_path}, {"tbm", tbm_path}};
  }
  train::save_checkpoint(out, ckpt);
  write_manifest(out + ".manifest.json", inv, c, extra);
  *inv.out << "stage " << stage << ": wrote " << out << " (" << ckpt.scalar_count() << " parameters)\n";
  return kExitOk;
}

// backfill ------------------------------------------------------------------

int cmd_backfill(const Invocation& inv, RunConfig& c, int tau) {
  const std::string tbm_path = need_path(c, "tbm", "--tbm");
  const std::string data = need_path(c, "data", "--data");
  const std::string out = need_path(c, "out", "--out");
  const int h = max_length(c);
  if (tau < 1 || tau >= h) {
    throw ConfigError("--tau must be in [1, " + std::to_string(h - 1) + "]; a full-length history needs no backfilling");
  }
  c.validate();
  const auto ck = load_kind(tbm_path, "tbm", "backfilling checkpoint");
  scenegen::DatasetHeader header;
  auto scenes = load_scenes(data, header);
  const auto tbm = train::load_tbm(ck);
  if (!(tbm.config().layout == header.layout)) throw FormatError("checkpoint layout differs from the dataset layout");

  const auto& layout = header.layout;
  const std::size_t t_obs = layout.observed(), prefix = t_obs - layout.observed_for(tau);
  double err_sum = 0.0;
  std::size_t err_count = 0;
  for (auto& scene : scenes) {
    const auto observed = scenegen::truncate_history(scene, {layout, tau});
    const auto res = tbm::backfill(observed, scene.map, scene.aoi_indices, tau, tbm);
    for (std::size_t i = 0; i < scene.agents.size(); ++i) {
      auto& states = scene.agents[i].states;
      for (std::size_t t = 0; t < t_obs; ++t) {
        const double* src = res.completed.data().data() + (i * t_obs + t) * scenegen::kStateDim;
        if (t < prefix && !header.reconstructed) {
          err_sum += std::hypot(src[0] - states[t * scenegen::kStateDim], src[1] - states[t * scenegen::kStateDim + 1]);
          ++err_count;
        }
        std::copy(src, src + scenegen::kStateDim, states.begin() + static_cast<long>(t * scenegen::kStateDim));
      }
    }
  }
  scenegen::DatasetHeader out_header = header;
  out_header.reconstructed = true;
  scenegen::write_dataset(out, out_header, scenes);
  Json extra{{"tau", tau}, {"records", scenes.size()}};
  if (err_count) extra["mean_prefix_error"] = err_sum / static_cast<double>(err_count);
  write_manifest(out + ".manifest.json", inv, c, extra);
  *inv.out << "backfilled " << scenes.size() << " scenes at tau=" << tau << " -> " << out << "\n";
  if (err_count) *inv.out << "mean prefix error: " << fixed(err_sum / static_cast<double>(err_count)) << " m\n";
  return kExitOk;
}

// eval ----------------------------------------------------------------------

std::string it_path(const std::string& pattern, int tau) {
  const auto pos = pattern.find("{tau}");
  if (pos == std::string::npos) throw ConfigError("--it pattern must contain {tau}: " + pattern);
  std::string p = pattern;
  p.replace(pos, 5, std::to_string(tau));
  return p;
}

int cmd_eval(const Invocation& inv, RunConfig& c) {
  const std::string data = need_path(c, "data", "--data");
  const std::string dir = need_path(c, "out", "--out");
  c.validate();
  const bool want_ori = std::count(c.eval.bundles.begin(), c.eval.bundles.end(), "ori") > 0;
  const bool want_it = std::count(c.eval.bundles.begin(), c.eval.bundles.end(), "it") > 0;
  const bool want_tapd = std::count(c.eval.bundles.begin(), c.eval.bundles.end(), "tapd") > 0;
  if (c.eval.bundles.empty() && c.eval.models.empty()) throw ConfigError("nothing to evaluate: no bundles or models");

  // Resolve every dependency before any work starts.
  std::map<std::string, std::string> deps;
  if (want_ori) require_file(deps["ori"] = opt_path(c, "ori"), "ori checkpoint (--ori)");
  if (want_it) {
    const std::string pattern = opt_path(c, "it");
    if (pattern.empty()) throw DependencyError("it checkpoints (--it): no path pattern given");
    for (int tau : c.eval.taus) require_file(deps["it" + std::to_string(tau)] = it_path(pattern, tau), "it checkpoint for tau=" + std::to_string(tau));
  }
  if (want_tapd) {
    require_file(deps["tapd_oaf"] = opt_path(c, "tapd_oaf"), "tapd forecaster checkpoint (--tapd-oaf)");
    require_file(deps["tapd_tbm"] = opt_path(c, "tapd_tbm"), "tapd backfilling checkpoint (--tapd-tbm)");
  }
  for (const auto& [name, path] : c.eval.models) require_file(path, "checkpoint for model '" + name + "'");

  scenegen::DatasetHeader header;
  const auto scenes = load_scenes(data, header);
  const int h = static_cast<int>(header.layout.intervals);

  evalkit::MetricReport report;
  const auto run_model = [&](const evalkit::Forecaster& f, std::span<const int> taus) {
    if (!inv.quiet) *inv.err << "evaluating " << f.name() << "\n";
    report.append(evalkit::evaluate_variable_length(f, scenes, header.layout, taus, c.eval.ks));
  };
  for (const auto& bundle : c.eval.bundles) {
    if (bundle == "ori") {
      const auto params = train::load_oaf(load_kind(deps["ori"], "oaf", "ori checkpoint"));
      run_model(evalkit::OafForecaster("Ori", params, h), c.eval.taus);
    } else if (bundle == "it") {
      std::vector<oaf::OafParams> models;
      models.reserve(c.eval.taus.size());
      std::map<int, const oaf::OafParams*> by_length;
      for (int tau : c.eval.taus) models.push_back(train::load_oaf(load_kind(deps["it" + std::to_string(tau)], "oaf", "it checkpoint")));
      for (std::size_t i = 0; i < c.eval.taus.size(); ++i) by_length[c.eval.taus[i]] = &models[i];
      run_model(evalkit::IsolatedForecaster("IT", by_length), c.eval.taus);
    } else if (bundle == "tapd") {
      const auto oafp = train::load_oaf(load_kind(deps["tapd_oaf"], "oaf", "tapd forecaster checkpoint"));
      const auto tbmp = train::load_tbm(load_kind(deps["tapd_tbm"], "tbm", "tapd backfilling checkpoint"));
      run_model(evalkit::BackfillForecaster("TaPD", oafp, tbmp), c.eval.taus);
    }
  }
  for (const auto& [name, path] : c.eval.models) {
    const auto params = train::load_oaf(load_kind(path, "oaf", "checkpoint for model '" + name + "'"));
    run_model(evalkit::OafForecaster(name, params), c.eval.taus);
  }

  fs::create_directories(dir);
  const fs::path d(dir);
  write_text((d / "report.csv").string(), evalkit::render_csv(report));
  write_text((d / "report.md").string(), evalkit::render_markdown(report, header.layout.delta_t));
  const std::size_t k_plot = *std::max_element(c.eval.ks.begin(), c.eval.ks.end());
  if (c.eval.svg) {
    for (const char* metric : {"min_ade", "min_fde", "mr"}) {
      write_text((d / (std::string("report_") + metric + ".svg")).string(), evalkit::render_svg(report, metric, k_plot));
    }
  }
  Json gaps = Json::object();
  const int t_short = *std::min_element(c.eval.taus.begin(), c.eval.taus.end());
  const int t_full = *std::max_element(c.eval.taus.begin(), c.eval.taus.end());
  if (t_short != t_full) {
    for (const auto& m : report.methods())
      for (std::size_t k : c.eval.ks) gaps[m]["K" + std::to_string(k)] = evalkit::gap(report, m, t_short, t_full, k);
  }
  write_text((d / "gaps.json").string(), train::canonical({{"tau_short", t_short}, {"tau_full", t_full}, {"gaps", gaps}}));
  write_manifest((d / "manifest.json").string(), inv, c, {{"inputs", deps}});
  *inv.out << evalkit::render_markdown(report, header.layout.delta_t);
  return kExitOk;
}

// report --------------------------------------------------------------------

int cmd_report(const Invocation& inv, RunConfig& c, const Flags& f) {
  const std::string in = need_path(c, "in", "--in");
  require_file(in, "report csv");
  const auto format = evalkit::parse_format(f.format);
  const auto report = evalkit::parse_csv(read_text(in));
  const std::string text = evalkit::render_report(report, format, f.delta_t, f.metric, f.k);
  const std::string out = opt_path(c, "out");
  if (out.empty()) {
    *inv.out << text;
  } else {
    write_text(out, text);
    *inv.out << "wrote " << out << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Observation-adaptive trajectory forecasting: data, staged training, backfilling, evaluation", "tapd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Invocation inv;
  inv.args = args;
  inv.out = &out;
  inv.err = &err;
  Flags f;
  std::uint64_t seed_flag = 0;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config_path, "JSON config file");
    sub->add_option("--seed", seed_flag, "global seed (overrides config and TAPD_SEED)");
    sub->add_flag("--quiet", inv.quiet, "suppress progress output");
  };
  const auto path_opt = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.paths[key] = v; }, help);
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and split it into train/val");
  common(gen);
  gen->add_option("--scenes", f.scenes, "number of scenes");
  gen->add_option("--val-ratio", f.val_ratio, "validation fraction");
  path_opt(gen, "--out", "out", "output directory");

  auto* tr = app.add_subcommand("train", "run one training stage");
  common(tr);
  tr->add_option("--stage", f.stage, "1: forecaster, 2: backfilling, 3: finetune on backfilled input")->required();
  tr->add_option("--lengths", f.lengths, "observation lengths")->delimiter(',');
  tr->add_option("--epochs", f.epochs, "epochs");
  tr->add_option("--lr", f.lr, "learning rate");
  tr->add_option("--lr-schedule", f.lr_schedule, "cosine or constant");
  tr->add_option("--weight-decay", f.weight_decay, "AdamW weight decay");
  tr->add_option("--batch-size", f.batch_size, "scenes per batch");
  tr->add_option("--clip-norm", f.clip_norm, "global gradient norm bound");
  tr->add_option("--hidden", f.hidden, "hidden width of new models");
  tr->add_flag("--no-pkd", f.no_pkd, "disable distillation in stage 1");
  path_opt(tr, "--data", "data", "training dataset");
  path_opt(tr, "--out", "out", "output checkpoint");
  path_opt(tr, "--log", "log", "JSON-lines training log (default: <out>.log.jsonl)");
  path_opt(tr, "--oaf", "oaf", "stage-1 forecaster checkpoint (stage 3)");
  path_opt(tr, "--tbm", "tbm", "stage-2 backfilling checkpoint (stage 3)");

  auto* bf = app.add_subcommand("backfill", "complete truncated histories with a trained backfilling model");
  common(bf);
  bf->add_option("--tau", f.tau, "observed length in intervals")->required();
  path_opt(bf, "--tbm", "tbm", "backfilling checkpoint");
  path_opt(bf, "--data", "data", "input dataset");
  path_opt(bf, "--out", "out", "output dataset");

  auto* ev = app.add_subcommand("eval", "variable-length evaluation of trained bundles");
  common(ev);
  ev->add_option("--bundles", f.bundles, "ori, it, tapd")->delimiter(',');
  ev->add_option("--taus", f.taus, "observation lengths")->delimiter(',');
  ev->add_option("--ks", f.ks, "candidate counts")->delimiter(',');
  ev->add_option("--format", f.formats, "csv, markdown (always written), svg")->delimiter(',');
  ev->add_option("--model", f.models, "extra forecaster NAME=CHECKPOINT evaluated directly");
  path_opt(ev, "--data", "data", "evaluation dataset");
  path_opt(ev, "--out", "out", "output directory");
  path_opt(ev, "--ori", "ori", "full-length-only forecaster checkpoint");
  path_opt(ev, "--it", "it", "per-length checkpoints, pattern containing {tau}");
  path_opt(ev, "--tapd-oaf", "tapd_oaf", "stage-3 forecaster checkpoint");
  path_opt(ev, "--tapd-tbm", "tapd_tbm", "stage-2 backfilling checkpoint");

  auto* rp = app.add_subcommand("report", "re-render a report CSV");
  common(rp);
  rp->add_option("--format", f.format, "csv, markdown or svg");
  rp->add_option("--metric", f.metric, "svg metric: min_ade, min_fde or mr");
  rp->add_option("--k", f.k, "svg candidate count");
  rp->add_option("--delta-t", f.delta_t, "steps per interval for markdown headers");
  path_opt(rp, "--in", "in", "report CSV");
  path_opt(rp, "--out", "out", "output file (default: stdout)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    inv.command = sub->get_name();
    if (sub->get_option("--seed")->count() > 0) inv.seed = seed_flag;
    RunConfig c = load_config(inv);
    apply_flags(c, *sub, f);
    if (sub == gen) return cmd_gen_data(inv, c);
    if (sub == tr) return cmd_train(inv, c, f.stage);
    if (sub == bf) return cmd_backfill(inv, c, f.tau);
    if (sub == ev) return cmd_eval(inv, c);
    return cmd_report(inv, c, f);
  } catch (const std::exception& e) {
    err << "tapd: error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace tapd::cli
