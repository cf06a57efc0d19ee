#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "tapd/numkit/tensor.hpp"
#include "tapd/scenegen/scene.hpp"

namespace tapd::scenegen {

struct GeneratorConfig {
  TimeLayout layout;
  std::uint32_t min_agents = 3;
  std::uint32_t max_agents = 6;
  std::uint32_t min_polylines = 2;
  std::uint32_t max_polylines = 4;
  std::uint32_t segments_per_polyline = 8;
  double segment_length = 8.0;  // m
  std::uint32_t aoi_per_scene = 1;
  // Weights over {constant-velocity, constant-turn, lane-follow, stop-and-go}.
  std::array<double, 4> behavior_weights = {0.3, 0.2, 0.4, 0.1};
  double min_speed = 0.4;       // m/step
  double max_speed = 1.4;       // m/step
  double min_yaw_rate = 0.01;   // rad/step
  double max_yaw_rate = 0.05;   // rad/step
  double max_lane_curvature = 0.03;  // 1/m
  double position_noise = 0.03;  // m, Gaussian sigma, clipped at 3 sigma
  double spawn_radius = 40.0;   // m
  double scene_radius = 150.0;  // m

  // Throws ConfigError.
  void validate() const;
  // Upper bound on per-step displacement of any generated agent.
  double max_step_displacement() const;
};

Scene generate_scene(std::uint64_t seed, const GeneratorConfig& config);
// Scene i uses seed `base_seed + i` and id i.
std::vector<Scene> generate_scenes(std::size_t count, std::uint64_t base_seed, const GeneratorConfig& config);

struct TruncationSpec {
  TimeLayout layout;
  int tau = 4;

  std::size_t steps() const { return layout.observed_for(tau); }
  void validate() const;
};

// Last tau*dT observed steps of every agent: (N, tau*dT, kStateDim), world
// coordinates. The window always ends at the last observed step.
numkit::Tensor truncate_history(const Scene& scene, const TruncationSpec& spec);
// Observed window (N, T_obs, kStateDim).
numkit::Tensor full_history(const Scene& scene, const TimeLayout& layout);

// Deterministic shuffled partition by ratios {train, val}; ratios must be
// non-negative and sum to 1.
std::pair<std::vector<Scene>, std::vector<Scene>> split_dataset(std::vector<Scene> scenes, std::array<double, 2> ratios,
                                                                std::uint64_t seed);

}  // namespace tapd::scenegen
