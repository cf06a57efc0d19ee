#include "tapd/scenegen/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "tapd/error.hpp"

namespace tapd::scenegen {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::uint32_t uniform_int(Rng& rng, std::uint32_t lo, std::uint32_t hi) {
  return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
}

// One lane centerline: vertex positions and per-segment headings.
struct Lane {
  std::vector<std::array<double, 2>> vertices;  // segments + 1
  std::vector<double> headings;                 // per segment
  double segment_length = 0.0;

  double length() const { return segment_length * static_cast<double>(headings.size()); }

  // Position and heading at arc length s; straight extrapolation past either end.
  std::array<double, 3> at(double s) const {
    const std::size_t n = headings.size();
    if (s <= 0.0) {
      const double h = headings.front();
      return {vertices.front()[0] + s * std::cos(h), vertices.front()[1] + s * std::sin(h), h};
    }
    const auto idx = static_cast<std::size_t>(s / segment_length);
    if (idx >= n) {
      const double h = headings.back();
      const double rem = s - length();
      return {vertices.back()[0] + rem * std::cos(h), vertices.back()[1] + rem * std::sin(h), h};
    }
    const double frac = s - static_cast<double>(idx) * segment_length;
    const double h = headings[idx];
    return {vertices[idx][0] + frac * std::cos(h), vertices[idx][1] + frac * std::sin(h), h};
  }
};

Lane make_lane(Rng& rng, const GeneratorConfig& cfg) {
  Lane lane;
  lane.segment_length = cfg.segment_length;
  const double r = cfg.spawn_radius * std::sqrt(uniform(rng, 0.0, 1.0));
  const double a = uniform(rng, -std::numbers::pi, std::numbers::pi);
  double h = uniform(rng, -std::numbers::pi, std::numbers::pi);
  // Half the lanes bend in their second half, like a turn at an intersection.
  const bool curved = uniform(rng, 0.0, 1.0) < 0.5;
  const double kappa = curved ? uniform(rng, -cfg.max_lane_curvature, cfg.max_lane_curvature) : 0.0;
  std::array<double, 2> p = {r * std::cos(a), r * std::sin(a)};
  lane.vertices.push_back(p);
  const std::uint32_t s_m = cfg.segments_per_polyline;
  for (std::uint32_t i = 0; i < s_m; ++i) {
    lane.headings.push_back(h);
    p = {p[0] + cfg.segment_length * std::cos(h), p[1] + cfg.segment_length * std::sin(h)};
    lane.vertices.push_back(p);
    if (2 * (i + 1) >= s_m) h += kappa * cfg.segment_length;
  }
  return lane;
}

AgentKind sample_kind(Rng& rng, const std::array<double, 4>& w) {
  std::discrete_distribution<int> d(w.begin(), w.end());
  return static_cast<AgentKind>(d(rng));
}

// Clean (noise-free) positions and headings for `steps` steps.
void simulate(Rng& rng, const GeneratorConfig& cfg, AgentKind kind, const std::vector<Lane>& lanes, std::size_t steps,
              std::vector<std::array<double, 2>>& pos, std::vector<double>& heading) {
  pos.resize(steps);
  heading.resize(steps);
  const double speed = uniform(rng, cfg.min_speed, cfg.max_speed);
  const double r = cfg.spawn_radius * std::sqrt(uniform(rng, 0.0, 1.0));
  const double a = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const double x0 = r * std::cos(a), y0 = r * std::sin(a);
  const double h0 = uniform(rng, -std::numbers::pi, std::numbers::pi);

  switch (kind) {
    case AgentKind::kConstantVelocity: {
      const double vx = speed * std::cos(h0), vy = speed * std::sin(h0);
      for (std::size_t t = 0; t < steps; ++t) {
        const double tt = static_cast<double>(t);
        pos[t] = {x0 + tt * vx, y0 + tt * vy};
        heading[t] = h0;
      }
      break;
    }
    case AgentKind::kConstantTurn: {
      double w = uniform(rng, cfg.min_yaw_rate, cfg.max_yaw_rate);
      if (uniform(rng, 0.0, 1.0) < 0.5) w = -w;
      const double rad = speed / w;
      for (std::size_t t = 0; t < steps; ++t) {
        const double h = h0 + w * static_cast<double>(t);
        pos[t] = {x0 + rad * (std::sin(h) - std::sin(h0)), y0 + rad * (std::cos(h0) - std::cos(h))};
        heading[t] = h;
      }
      break;
    }
    case AgentKind::kLaneFollow: {
      const Lane& lane = lanes[uniform_int(rng, 0, static_cast<std::uint32_t>(lanes.size() - 1))];
      const double s0 = uniform(rng, 0.0, 0.25 * lane.length());
      for (std::size_t t = 0; t < steps; ++t) {
        const auto p = lane.at(s0 + speed * static_cast<double>(t));
        pos[t] = {p[0], p[1]};
        heading[t] = p[2];
      }
      break;
    }
    case AgentKind::kStopAndGo: {
      const double period = uniform(rng, 30.0, 50.0);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double cx = std::cos(h0), cy = std::sin(h0);
      double s = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        pos[t] = {x0 + s * cx, y0 + s * cy};
        heading[t] = h0;
        s += speed * (0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase));
      }
      break;
    }
  }
}

}  // namespace

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("generator: " + m); };
  if (layout.delta_t < 1 || layout.intervals < 1 || layout.future < 1) fail("time layout entries must be >= 1");
  if (min_agents < 2 || max_agents > 8 || min_agents > max_agents) fail("agent count range must lie within [2, 8]");
  if (min_polylines < 2 || max_polylines > 6 || min_polylines > max_polylines) fail("polyline count range must lie within [2, 6]");
  if (segments_per_polyline < 1) fail("segments_per_polyline must be >= 1");
  if (!(segment_length > 0.0)) fail("segment_length must be positive");
  if (aoi_per_scene < 1 || aoi_per_scene > min_agents) fail("aoi_per_scene must lie within [1, min_agents]");
  double wsum = 0.0;
  for (double w : behavior_weights) {
    if (!(w >= 0.0)) fail("behavior weights must be non-negative");
    wsum += w;
  }
  if (!(wsum > 0.0)) fail("behavior weights must not all be zero");
  if (!(min_speed > 0.0) || min_speed > max_speed) fail("speed range must satisfy 0 < min <= max");
  if (!(min_yaw_rate > 0.0) || min_yaw_rate > max_yaw_rate) fail("yaw-rate range must satisfy 0 < min <= max");
  if (!(max_lane_curvature >= 0.0)) fail("max_lane_curvature must be non-negative");
  if (!(position_noise >= 0.0)) fail("position_noise must be non-negative");
  if (!(spawn_radius > 0.0)) fail("spawn_radius must be positive");
  const double lane_len = segment_length * segments_per_polyline;
  const double reach = spawn_radius + 0.25 * lane_len + static_cast<double>(layout.total()) * max_speed +
                       3.0 * std::sqrt(2.0) * position_noise;
  if (reach > scene_radius) fail("agents could leave the scene radius; reduce spawn radius, speed, or horizon");
}

double GeneratorConfig::max_step_displacement() const { return max_speed + 6.0 * std::sqrt(2.0) * position_noise; }

Scene generate_scene(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;

  const std::uint32_t n_poly = uniform_int(rng, config.min_polylines, config.max_polylines);
  std::vector<Lane> lanes;
  for (std::uint32_t i = 0; i < n_poly; ++i) lanes.push_back(make_lane(rng, config));
  scene.map.polylines = n_poly;
  scene.map.segments = config.segments_per_polyline;
  for (const Lane& lane : lanes) {
    const double type = lane.headings.front() == lane.headings.back() ? 0.0 : 1.0;
    for (std::size_t s = 0; s < lane.headings.size(); ++s) {
      const auto& v0 = lane.vertices[s];
      const auto& v1 = lane.vertices[s + 1];
      scene.map.data.insert(scene.map.data.end(), {v0[0], v0[1], v1[0] - v0[0], v1[1] - v0[1], type});
    }
  }

  const std::size_t steps = config.layout.total();
  const std::uint32_t n_agents = uniform_int(rng, config.min_agents, config.max_agents);
  std::normal_distribution<double> noise(0.0, config.position_noise > 0.0 ? config.position_noise : 1.0);
  const double clip = 3.0 * config.position_noise;
  std::vector<std::array<double, 2>> pos;
  std::vector<double> heading;
  for (std::uint32_t i = 0; i < n_agents; ++i) {
    AgentTrack track;
    track.kind = sample_kind(rng, config.behavior_weights);
    track.is_aoi = i < config.aoi_per_scene;
    simulate(rng, config, track.kind, lanes, steps, pos, heading);
    if (config.position_noise > 0.0) {
      for (auto& p : pos) {
        p[0] += std::clamp(noise(rng), -clip, clip);
        p[1] += std::clamp(noise(rng), -clip, clip);
      }
    }
    track.states.resize(steps * kStateDim);
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t a = t == 0 ? 0 : t - 1;
      const std::size_t b = t == 0 ? std::min<std::size_t>(1, steps - 1) : t;
      auto s = track.state(t);
      s[0] = pos[t][0];
      s[1] = pos[t][1];
      s[2] = pos[b][0] - pos[a][0];
      s[3] = pos[b][1] - pos[a][1];
      s[4] = std::cos(heading[t]);
      s[5] = std::sin(heading[t]);
    }
    scene.agents.push_back(std::move(track));
    if (i < config.aoi_per_scene) scene.aoi_indices.push_back(i);
  }
  return scene;
}

std::vector<Scene> generate_scenes(std::size_t count, std::uint64_t base_seed, const GeneratorConfig& config) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_scene(base_seed + i, config));
    out.back().id = i;
  }
  return out;
}

void validate_scene(const Scene& scene, const TimeLayout& layout) {
  if (scene.agents.empty()) throw ValueError("scene " + std::to_string(scene.id) + ": no agents");
  if (scene.aoi_indices.empty() || scene.aoi_indices.size() > scene.agents.size()) {
    throw ValueError("scene " + std::to_string(scene.id) + ": AOI count out of range");
  }
  for (auto i : scene.aoi_indices) {
    if (i >= scene.agents.size()) throw ValueError("scene " + std::to_string(scene.id) + ": AOI index out of range");
  }
  for (const auto& a : scene.agents) {
    if (a.states.size() != layout.total() * kStateDim) {
      throw ValueError("scene " + std::to_string(scene.id) + ": agent has " + std::to_string(a.steps()) + " steps, expected " +
                       std::to_string(layout.total()));
    }
  }
  const auto& m = scene.map;
  if (m.data.size() != m.polylines * m.segments * kMapDim) throw ValueError("scene map: size mismatch");
  for (std::size_t p = 0; p < m.polylines; ++p) {
    for (std::size_t s = 0; s + 1 < m.segments; ++s) {
      const auto a = m.segment(p, s);
      const auto b = m.segment(p, s + 1);
      if (std::fabs(a[0] + a[2] - b[0]) > 1e-9 || std::fabs(a[1] + a[3] - b[1]) > 1e-9) {
        throw ValueError("scene map: polyline " + std::to_string(p) + " disconnected at segment " + std::to_string(s));
      }
    }
  }
}

void TruncationSpec::validate() const {
  if (tau < 1 || tau > static_cast<int>(layout.intervals)) {
    throw ValueError("truncation: tau " + std::to_string(tau) + " outside [1, " + std::to_string(layout.intervals) + "]");
  }
}

numkit::Tensor truncate_history(const Scene& scene, const TruncationSpec& spec) {
  spec.validate();
  const std::size_t t_obs = spec.layout.observed();
  const std::size_t keep = spec.steps();
  const std::size_t n = scene.agents.size();
  std::vector<double> out;
  out.reserve(n * keep * kStateDim);
  for (const auto& a : scene.agents) {
    if (a.steps() < t_obs) throw ValueError("truncation: agent track shorter than the observation window");
    const auto first = a.states.begin() + static_cast<long>((t_obs - keep) * kStateDim);
    out.insert(out.end(), first, first + static_cast<long>(keep * kStateDim));
  }
  return numkit::Tensor::raw({n, keep, kStateDim}, std::move(out));
}

numkit::Tensor full_history(const Scene& scene, const TimeLayout& layout) {
  return truncate_history(scene, TruncationSpec{layout, static_cast<int>(layout.intervals)});
}

std::pair<std::vector<Scene>, std::vector<Scene>> split_dataset(std::vector<Scene> scenes, std::array<double, 2> ratios,
                                                                std::uint64_t seed) {
  if (!(ratios[0] >= 0.0) || !(ratios[1] >= 0.0) || std::fabs(ratios[0] + ratios[1] - 1.0) > 1e-9) {
    throw ValueError("split: ratios must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(scenes.size())));
  std::pair<std::vector<Scene>, std::vector<Scene>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(std::move(scenes[order[i]]));
  }
  return out;
}

}  // namespace tapd::scenegen
