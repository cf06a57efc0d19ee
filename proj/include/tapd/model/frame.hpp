#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "tapd/numkit/tensor.hpp"
#include "tapd/scenegen/scene.hpp"

namespace tapd::model {

/// Rigid transform into the primary AOI's frame at the last observed step:
/// origin at its position, x axis along its heading.
struct AoiFrame {
  double ox = 0.0, oy = 0.0;
  double c = 1.0, s = 0.0;

  static AoiFrame from_state(std::span<const double> state);

  std::array<double, 2> point_to_local(double x, double y) const;
  std::array<double, 2> point_to_world(double x, double y) const;
  std::array<double, 2> vec_to_local(double x, double y) const;
  std::array<double, 2> vec_to_world(double x, double y) const;
};

AoiFrame scene_frame(const scenegen::Scene& scene, const scenegen::TimeLayout& layout);

// (N, T, kStateDim) state tensors between world and frame coordinates.
numkit::Tensor states_to_local(const numkit::Tensor& states, const AoiFrame& frame);
numkit::Tensor states_to_world(const numkit::Tensor& states, const AoiFrame& frame);

// Future positions of each AOI, relative to that AOI's last observed
// position, in frame orientation: (A, T_f, 2).
numkit::Tensor future_targets(const scenegen::Scene& scene, const scenegen::TimeLayout& layout, const AoiFrame& frame);

/// Scene prepared for the encoders: frame, frame-local history, targets.
struct PreparedScene {
  AoiFrame frame;
  numkit::Tensor full_local;  // (N, T_obs, kStateDim)
  numkit::Tensor targets;     // (A, T_f, 2)
  const scenegen::Scene* scene = nullptr;
};

PreparedScene prepare_scene(const scenegen::Scene& scene, const scenegen::TimeLayout& layout);

// Steps [begin, end) of an (N, T, C) tensor.
numkit::Tensor time_slice(const numkit::Tensor& states, std::size_t begin, std::size_t end);
// Last tau*dT steps of a full (N, T_obs, C) history.
numkit::Tensor local_window(const numkit::Tensor& full, const scenegen::TimeLayout& layout, int tau);

// Width of the per-step feature vector fed to the encoders.
inline constexpr std::size_t kStepFeatures = 7;

/// Encoder-ready constants for one (scene, observed window) pair.
struct ModelInput {
  std::size_t agents = 0;
  std::size_t steps = 0;
  numkit::Tensor step_features;   // (N*T, kStepFeatures)
  numkit::Tensor first_step;      // (N, kStepFeatures)
  numkit::Tensor last_step;       // (N, kStepFeatures)
  numkit::Tensor agent_position;  // (N, 2)
  numkit::Tensor map_features;    // (S, kMapDim)
};

// `observed_local` is (N, T, kStateDim) in frame coordinates; the window
// ends at the last observed step of a T_obs-step observation.
ModelInput build_input(const numkit::Tensor& observed_local, const scenegen::MapPolylines& map, const AoiFrame& frame,
                       std::size_t observation_steps);

// Encoder input for the last tau*dT steps of a prepared scene.
ModelInput window_input(const PreparedScene& prepared, const scenegen::TimeLayout& layout, int tau);

}  // namespace tapd::model
