#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tapd::scenegen {

// Agent state channels: x, y (m), vx, vy (m/step), cos(heading), sin(heading).
inline constexpr std::size_t kStateDim = 6;
// Map segment channels: start x, start y, dx, dy (m), lane-type flag.
inline constexpr std::size_t kMapDim = 5;

enum class AgentKind : std::uint32_t {
  kConstantVelocity = 0,
  kConstantTurn = 1,
  kLaneFollow = 2,
  kStopAndGo = 3,
};

/// Time layout shared by every scene of a dataset.
struct TimeLayout {
  std::uint32_t delta_t = 5;   // steps per interval
  std::uint32_t intervals = 4; // H
  std::uint32_t future = 30;   // T_f

  std::size_t observed() const { return std::size_t{delta_t} * intervals; }  // T_obs
  std::size_t total() const { return observed() + future; }
  std::size_t observed_for(int tau) const { return std::size_t{delta_t} * static_cast<std::size_t>(tau); }

  friend bool operator==(const TimeLayout&, const TimeLayout&) = default;
};

/// P polylines x S segments x kMapDim features, row-major. Segment i+1
/// starts where segment i ends (start + (dx, dy)).
struct MapPolylines {
  std::size_t polylines = 0;
  std::size_t segments = 0;
  std::vector<double> data;

  std::size_t segment_count() const { return polylines * segments; }
  std::span<const double> segment(std::size_t p, std::size_t s) const {
    return std::span<const double>(data).subspan((p * segments + s) * kMapDim, kMapDim);
  }

  friend bool operator==(const MapPolylines&, const MapPolylines&) = default;
};

/// One agent over the full observed + future window, steps x kStateDim.
struct AgentTrack {
  AgentKind kind = AgentKind::kConstantVelocity;
  bool is_aoi = false;
  std::vector<double> states;

  std::size_t steps() const { return states.size() / kStateDim; }
  std::span<const double> state(std::size_t t) const {
    return std::span<const double>(states).subspan(t * kStateDim, kStateDim);
  }
  std::span<double> state(std::size_t t) { return std::span<double>(states).subspan(t * kStateDim, kStateDim); }

  friend bool operator==(const AgentTrack&, const AgentTrack&) = default;
};

/// World-coordinate scenario. The first entry of `aoi_indices` is the
/// primary AOI whose last observed state defines the model frame.
struct Scene {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  MapPolylines map;
  std::vector<AgentTrack> agents;
  std::vector<std::uint32_t> aoi_indices;

  std::size_t agent_count() const { return agents.size(); }

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Throws ValueError when a scene breaks its structural invariants for the
// given layout (step counts, AOI indices, map connectivity).
void validate_scene(const Scene& scene, const TimeLayout& layout);

}  // namespace tapd::scenegen
