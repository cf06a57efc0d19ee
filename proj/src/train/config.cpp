#include "tapd/train/config.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "tapd/error.hpp"
#include "tapd/train/json_reader.hpp"

namespace tapd::train {

void TrainConfig::validate(int max_length) const {
  if (stage < 1 || stage > 3) throw ConfigError("train.stage must be 1, 2 or 3");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be > 0");
  if (lr_schedule != "cosine" && lr_schedule != "constant") throw ConfigError("train.lr_schedule must be \"cosine\" or \"constant\"");
  if (lengths.empty()) throw ConfigError("train.lengths must be non-empty");
  std::set<int> unique;
  for (int t : lengths) {
    if (t < 1 || t > max_length) {
      throw ConfigError("train.lengths: " + std::to_string(t) + " outside [1, " + std::to_string(max_length) + "]");
    }
    if (!unique.insert(t).second) throw ConfigError("train.lengths: duplicate length " + std::to_string(t));
  }
  if (!std::is_sorted(lengths.begin(), lengths.end())) throw ConfigError("train.lengths must be increasing");
  if (stage == 1 && pkd && pkd_pairs().empty()) {
    throw ConfigError("train.pkd needs at least two consecutive lengths");
  }
  if (stage == 2 && std::none_of(lengths.begin(), lengths.end(), [&](int t) { return t < max_length; })) {
    throw ConfigError("train.lengths: stage 2 needs a length below H");
  }
}

double TrainConfig::epoch_lr(int epoch) const {
  if (lr_schedule == "constant") return lr;
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

std::vector<std::pair<int, int>> TrainConfig::pkd_pairs() const {
  std::vector<std::pair<int, int>> out;
  for (int t : lengths)
    if (std::find(lengths.begin(), lengths.end(), t + 1) != lengths.end()) out.emplace_back(t, t + 1);
  return out;
}

Json to_json(const scenegen::TimeLayout& l) {
  return Json{{"delta_t", l.delta_t}, {"intervals", l.intervals}, {"future", l.future}};
}

Json to_json(const scenegen::GeneratorConfig& c) {
  return Json{{"layout", to_json(c.layout)},
              {"min_agents", c.min_agents},
              {"max_agents", c.max_agents},
              {"min_polylines", c.min_polylines},
              {"max_polylines", c.max_polylines},
              {"segments_per_polyline", c.segments_per_polyline},
              {"segment_length", c.segment_length},
              {"aoi_per_scene", c.aoi_per_scene},
              {"behavior_weights", c.behavior_weights},
              {"min_speed", c.min_speed},
              {"max_speed", c.max_speed},
              {"min_yaw_rate", c.min_yaw_rate},
              {"max_yaw_rate", c.max_yaw_rate},
              {"max_lane_curvature", c.max_lane_curvature},
              {"position_noise", c.position_noise},
              {"spawn_radius", c.spawn_radius},
              {"scene_radius", c.scene_radius}};
}

Json to_json(const oaf::OafConfig& c) {
  return Json{{"layout", to_json(c.layout)}, {"hidden", c.hidden}, {"modes", c.modes}, {"seed", c.seed}, {"norm_eps", c.norm_eps}};
}

Json to_json(const tbm::TbmConfig& c) {
  return Json{{"layout", to_json(c.layout)}, {"hidden", c.hidden}, {"modes", c.modes}, {"seed", c.seed}, {"norm_eps", c.norm_eps}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"stage", c.stage},     {"epochs", c.epochs},       {"lr", c.lr},
              {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size}, {"lengths", c.lengths},
              {"seed", c.seed},       {"pkd", c.pkd},             {"clip_norm", c.clip_norm},
              {"lr_schedule", c.lr_schedule}};
}

void from_json_strict(const Json& j, scenegen::TimeLayout& out) {
  ObjectReader r(j, "layout");
  r.get("delta_t", out.delta_t);
  r.get("intervals", out.intervals);
  r.get("future", out.future);
  r.finish();
  if (out.delta_t < 1 || out.intervals < 1 || out.future < 1) throw ConfigError("layout values must be >= 1");
}

void from_json_strict(const Json& j, scenegen::GeneratorConfig& out) {
  ObjectReader r(j, "generator");
  if (const Json* l = r.child("layout")) from_json_strict(*l, out.layout);
  r.get("min_agents", out.min_agents);
  r.get("max_agents", out.max_agents);
  r.get("min_polylines", out.min_polylines);
  r.get("max_polylines", out.max_polylines);
  r.get("segments_per_polyline", out.segments_per_polyline);
  r.get("segment_length", out.segment_length);
  r.get("aoi_per_scene", out.aoi_per_scene);
  r.get("behavior_weights", out.behavior_weights);
  r.get("min_speed", out.min_speed);
  r.get("max_speed", out.max_speed);
  r.get("min_yaw_rate", out.min_yaw_rate);
  r.get("max_yaw_rate", out.max_yaw_rate);
  r.get("max_lane_curvature", out.max_lane_curvature);
  r.get("position_noise", out.position_noise);
  r.get("spawn_radius", out.spawn_radius);
  r.get("scene_radius", out.scene_radius);
  r.finish();
}

namespace {

template <typename Config>
void model_from_json(const Json& j, Config& out, const char* what) {
  ObjectReader r(j, what);
  if (const Json* l = r.child("layout")) from_json_strict(*l, out.layout);
  r.get("hidden", out.hidden);
  r.get("modes", out.modes);
  r.get("seed", out.seed);
  r.get("norm_eps", out.norm_eps);
  r.finish();
}

}  // namespace

void from_json_strict(const Json& j, oaf::OafConfig& out) { model_from_json(j, out, "oaf"); }
void from_json_strict(const Json& j, tbm::TbmConfig& out) { model_from_json(j, out, "tbm"); }

void from_json_strict(const Json& j, TrainConfig& out) {
  ObjectReader r(j, "train");
  r.get("stage", out.stage);
  r.get("epochs", out.epochs);
  r.get("lr", out.lr);
  r.get("weight_decay", out.weight_decay);
  r.get("batch_size", out.batch_size);
  r.get("lengths", out.lengths);
  r.get("seed", out.seed);
  r.get("pkd", out.pkd);
  r.get("clip_norm", out.clip_norm);
  r.get("lr_schedule", out.lr_schedule);
  r.finish();
}

std::string canonical(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace tapd::train
