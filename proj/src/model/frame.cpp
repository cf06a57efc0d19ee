#include "tapd/model/frame.hpp"

#include <cmath>

#include "tapd/error.hpp"
#include "tapd/scenegen/scenegen.hpp"

namespace tapd::model {

using numkit::Tensor;
using scenegen::kMapDim;
using scenegen::kStateDim;

namespace {

constexpr double kRelPosScale = 0.1;    // 1/m, positions relative to the agent's last state
constexpr double kAgentPosScale = 0.02; // 1/m, agent and map positions in the frame
constexpr double kSegmentScale = 0.125; // 1/m, segment direction vectors

}  // namespace

AoiFrame AoiFrame::from_state(std::span<const double> state) {
  AoiFrame f;
  f.ox = state[0];
  f.oy = state[1];
  const double n = std::hypot(state[4], state[5]);
  f.c = state[4] / n;
  f.s = state[5] / n;
  return f;
}

std::array<double, 2> AoiFrame::point_to_local(double x, double y) const { return vec_to_local(x - ox, y - oy); }

std::array<double, 2> AoiFrame::point_to_world(double x, double y) const {
  const auto v = vec_to_world(x, y);
  return {v[0] + ox, v[1] + oy};
}

std::array<double, 2> AoiFrame::vec_to_local(double x, double y) const { return {c * x + s * y, -s * x + c * y}; }

std::array<double, 2> AoiFrame::vec_to_world(double x, double y) const { return {c * x - s * y, s * x + c * y}; }

AoiFrame scene_frame(const scenegen::Scene& scene, const scenegen::TimeLayout& layout) {
  if (scene.aoi_indices.empty()) throw ValueError("scene has no AOI");
  return AoiFrame::from_state(scene.agents.at(scene.aoi_indices.front()).state(layout.observed() - 1));
}

namespace {

Tensor map_states(const Tensor& states, const AoiFrame& f, bool to_local) {
  if (states.rank() != 3 || states.dim(2) != kStateDim) throw ShapeError("states must be (N, T, 6), got " + numkit::shape_str(states.shape()));
  std::vector<double> out(states.size());
  for (std::size_t i = 0; i < states.size(); i += kStateDim) {
    const double* s = states.data().data() + i;
    const auto p = to_local ? f.point_to_local(s[0], s[1]) : f.point_to_world(s[0], s[1]);
    const auto v = to_local ? f.vec_to_local(s[2], s[3]) : f.vec_to_world(s[2], s[3]);
    const auto h = to_local ? f.vec_to_local(s[4], s[5]) : f.vec_to_world(s[4], s[5]);
    out[i] = p[0];
    out[i + 1] = p[1];
    out[i + 2] = v[0];
    out[i + 3] = v[1];
    out[i + 4] = h[0];
    out[i + 5] = h[1];
  }
  return Tensor::raw(states.shape(), std::move(out));
}

}  // namespace

Tensor states_to_local(const Tensor& states, const AoiFrame& frame) { return map_states(states, frame, true); }
Tensor states_to_world(const Tensor& states, const AoiFrame& frame) { return map_states(states, frame, false); }

Tensor future_targets(const scenegen::Scene& scene, const scenegen::TimeLayout& layout, const AoiFrame& frame) {
  const std::size_t t_obs = layout.observed();
  const std::size_t t_f = layout.future;
  std::vector<double> out;
  out.reserve(scene.aoi_indices.size() * t_f * 2);
  for (auto a : scene.aoi_indices) {
    const auto& track = scene.agents.at(a);
    const auto last = track.state(t_obs - 1);
    for (std::size_t t = 0; t < t_f; ++t) {
      const auto st = track.state(t_obs + t);
      const auto d = frame.vec_to_local(st[0] - last[0], st[1] - last[1]);
      out.push_back(d[0]);
      out.push_back(d[1]);
    }
  }
  return Tensor::raw({scene.aoi_indices.size(), t_f, 2}, std::move(out));
}

PreparedScene prepare_scene(const scenegen::Scene& scene, const scenegen::TimeLayout& layout) {
  PreparedScene p;
  p.scene = &scene;
  p.frame = scene_frame(scene, layout);
  p.full_local = states_to_local(scenegen::full_history(scene, layout), p.frame);
  p.targets = future_targets(scene, layout, p.frame);
  return p;
}

Tensor time_slice(const Tensor& states, std::size_t begin, std::size_t end) {
  if (states.rank() != 3 || begin > end || end > states.dim(1)) {
    throw ShapeError("time_slice: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     numkit::shape_str(states.shape()));
  }
  const std::size_t n = states.dim(0), t = states.dim(1), c = states.dim(2);
  std::vector<double> out;
  out.reserve(n * (end - begin) * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = states.vec().begin() + static_cast<long>((i * t + begin) * c);
    out.insert(out.end(), first, first + static_cast<long>((end - begin) * c));
  }
  return Tensor::raw({n, end - begin, c}, std::move(out));
}

Tensor local_window(const Tensor& full, const scenegen::TimeLayout& layout, int tau) {
  if (tau < 1 || tau > static_cast<int>(layout.intervals)) throw ValueError("tau " + std::to_string(tau) + " out of range");
  const std::size_t t_obs = layout.observed();
  if (full.rank() != 3 || full.dim(1) != t_obs) throw ShapeError("full history must have " + std::to_string(t_obs) + " steps");
  return time_slice(full, t_obs - layout.observed_for(tau), t_obs);
}

ModelInput build_input(const Tensor& observed_local, const scenegen::MapPolylines& map, const AoiFrame& frame,
                       std::size_t observation_steps) {
  if (observed_local.rank() != 3 || observed_local.dim(2) != kStateDim) {
    throw ShapeError("observed history must be (N, T, 6), got " + numkit::shape_str(observed_local.shape()));
  }
  ModelInput in;
  in.agents = observed_local.dim(0);
  in.steps = observed_local.dim(1);
  const std::size_t n = in.agents, t_len = in.steps;
  std::vector<double> steps(n * t_len * kStepFeatures);
  std::vector<double> first(n * kStepFeatures), last(n * kStepFeatures), pos(n * 2);
  const double inv_obs = 1.0 / static_cast<double>(observation_steps);
  for (std::size_t i = 0; i < n; ++i) {
    const double* lastst = observed_local.data().data() + (i * t_len + t_len - 1) * kStateDim;
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* s = observed_local.data().data() + (i * t_len + t) * kStateDim;
      double* f = steps.data() + (i * t_len + t) * kStepFeatures;
      f[0] = (s[0] - lastst[0]) * kRelPosScale;
      f[1] = (s[1] - lastst[1]) * kRelPosScale;
      f[2] = s[2];
      f[3] = s[3];
      f[4] = s[4];
      f[5] = s[5];
      f[6] = -static_cast<double>(t_len - 1 - t) * inv_obs;  // age, 0 at the last observed step
    }
    std::copy_n(steps.data() + i * t_len * kStepFeatures, kStepFeatures, first.data() + i * kStepFeatures);
    std::copy_n(steps.data() + (i * t_len + t_len - 1) * kStepFeatures, kStepFeatures, last.data() + i * kStepFeatures);
    pos[2 * i] = lastst[0] * kAgentPosScale;
    pos[2 * i + 1] = lastst[1] * kAgentPosScale;
  }
  in.step_features = Tensor::raw({n * t_len, kStepFeatures}, std::move(steps));
  in.first_step = Tensor::raw({n, kStepFeatures}, std::move(first));
  in.last_step = Tensor::raw({n, kStepFeatures}, std::move(last));
  in.agent_position = Tensor::raw({n, 2}, std::move(pos));

  const std::size_t segs = map.segment_count();
  if (segs == 0) throw ShapeError("map has no segments");
  std::vector<double> m(segs * kMapDim);
  for (std::size_t p = 0; p < map.polylines; ++p) {
    for (std::size_t s = 0; s < map.segments; ++s) {
      const auto seg = map.segment(p, s);
      const auto start = frame.point_to_local(seg[0], seg[1]);
      const auto dir = frame.vec_to_local(seg[2], seg[3]);
      double* o = m.data() + (p * map.segments + s) * kMapDim;
      o[0] = start[0] * kAgentPosScale;
      o[1] = start[1] * kAgentPosScale;
      o[2] = dir[0] * kSegmentScale;
      o[3] = dir[1] * kSegmentScale;
      o[4] = seg[4];
    }
  }
  in.map_features = Tensor::raw({segs, kMapDim}, std::move(m));
  return in;
}

ModelInput window_input(const PreparedScene& prepared, const scenegen::TimeLayout& layout, int tau) {
  return build_input(local_window(prepared.full_local, layout, tau), prepared.scene->map, prepared.frame, layout.observed());
}

}  // namespace tapd::model
