#include "tapd/oaf/oaf.hpp"

#include <cmath>
#include <random>

#include "tapd/error.hpp"
#include "tapd/scenegen/scenegen.hpp"

namespace tapd::oaf {

using numkit::Shape;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

OafParams::OafParams(const OafConfig& config) : config_(config), store_(std::make_unique<numkit::ParamStore>()) {
  if (config.layout.intervals < 1) throw ConfigError("oaf: H must be >= 1");
  if (config.modes < 1 || config.hidden < 1) throw ConfigError("oaf: modes and hidden size must be >= 1");
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.hidden;
  encoder_ = model::make_encoder(*store_, rng, "oaf.enc", d, config.layout.intervals);
  decoder_hidden = model::make_linear(*store_, rng, "oaf.dec.hidden", d, d, true);
  decoder_traj = model::make_linear(*store_, rng, "oaf.dec.traj", d, config.modes * config.layout.future * 2, true, 0.5);
  decoder_logits = model::make_linear(*store_, rng, "oaf.dec.logits", d, config.modes, true);
}

OafParams OafParams::clone() const {
  OafParams out(config_);
  for (std::size_t i = 0; i < store_->count(); ++i) out.store().at(i).value = store_->at(i).value;
  return out;
}

EncodedScene encode(Tape& tape, const model::ModelInput& input, int tau, const OafParams& params,
                    const model::MapContext* map, int norm_tau) {
  const int h = params.max_length();
  if (tau < 1 || tau > h) throw ValueError("oaf encode: tau " + std::to_string(tau) + " outside [1, " + std::to_string(h) + "]");
  if (input.steps != params.config().layout.observed_for(tau)) {
    throw ShapeError("oaf encode: " + std::to_string(input.steps) + " observed steps inconsistent with tau=" +
                     std::to_string(tau) + " (expected " + std::to_string(params.config().layout.observed_for(tau)) + ")");
  }
  const int nt = norm_tau == 0 ? tau : norm_tau;
  if (nt < 1 || nt > h) throw ValueError("oaf encode: normalization length out of range");
  model::MapContext local;
  if (!map) {
    local = model::encode_map(tape, params.encoder(), input);
    map = &local;
  }
  Var f = model::encode_scene(tape, params.encoder(), input, static_cast<std::size_t>(nt - 1), *map, params.config().norm_eps);
  return {f, tau};
}

Var extract_aoi(const EncodedScene& enc, std::span<const std::uint32_t> aoi_indices) {
  std::vector<std::size_t> rows(aoi_indices.begin(), aoi_indices.end());
  return numkit::gather_rows(enc.features, std::move(rows));
}

Var extract_agents(const EncodedScene& enc) { return enc.features; }

ModePrediction decode(Tape& tape, Var aoi_features, const OafParams& params) {
  const std::size_t d = params.config().hidden;
  if (aoi_features.value().rank() != 2 || aoi_features.dim(1) != d) {
    throw ShapeError("oaf decode: features " + numkit::shape_str(aoi_features.shape()) + " do not have width " + std::to_string(d));
  }
  const std::size_t a = aoi_features.dim(0), k = params.config().modes, t_f = params.config().layout.future;
  Var hidden = numkit::tanh(model::apply(tape, params.decoder_hidden, aoi_features));
  Var steps = numkit::reshape(model::apply(tape, params.decoder_traj, hidden), {a * k, t_f, 2});
  Var traj = numkit::reshape(numkit::cumsum(steps, 1), {a, k, t_f, 2});
  Var logits = model::apply(tape, params.decoder_logits, hidden);
  return {traj, logits};
}

Var pkd_loss(std::span<const Var> features) {
  if (features.size() < 2) throw ValueError("pkd_loss: needs at least two lengths");
  const Shape& s0 = features.front().shape();
  for (const Var& f : features) {
    if (f.shape() != s0) throw ShapeError("pkd_loss: feature shapes differ: " + numkit::shape_str(s0) + " vs " + numkit::shape_str(f.shape()));
  }
  Tape& tape = *features.front().tape();
  Var total;
  for (std::size_t i = 0; i + 1 < features.size(); ++i) {
    Var term = numkit::l1_mean(features[i], tape.detach(features[i + 1]));
    total = total.valid() ? numkit::add(total, term) : term;
  }
  return numkit::scale(total, 1.0 / static_cast<double>(features.size() - 1));
}

std::vector<std::size_t> winner_modes(const Tensor& trajectories, const Tensor& gt) {
  if (trajectories.rank() != 4 || gt.rank() != 3 || trajectories.dim(0) != gt.dim(0) || trajectories.dim(2) != gt.dim(1) ||
      trajectories.dim(3) != 2 || gt.dim(2) != 2) {
    throw ShapeError("winner_modes: trajectories " + numkit::shape_str(trajectories.shape()) + " vs ground truth " +
                     numkit::shape_str(gt.shape()));
  }
  const std::size_t a = trajectories.dim(0), k = trajectories.dim(1), t = trajectories.dim(2);
  std::vector<std::size_t> out(a);
  for (std::size_t i = 0; i < a; ++i) {
    const double gx = gt[(i * t + t - 1) * 2], gy = gt[(i * t + t - 1) * 2 + 1];
    double best = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t off = ((i * k + m) * t + t - 1) * 2;
      const double dist = std::hypot(trajectories[off] - gx, trajectories[off + 1] - gy);
      if (m == 0 || dist < best) {
        best = dist;
        out[i] = m;
      }
    }
  }
  return out;
}

PredictionLoss prediction_loss(const ModePrediction& pred, const Tensor& gt) {
  Tape& tape = *pred.trajectories.tape();
  const Tensor& traj = pred.trajectories.value();
  PredictionLoss out;
  out.winners = winner_modes(traj, gt);
  const std::size_t a = traj.dim(0), k = traj.dim(1), t = traj.dim(2);
  std::vector<std::size_t> rows(a);
  for (std::size_t i = 0; i < a; ++i) rows[i] = i * k + out.winners[i];
  Var best = numkit::gather_rows(numkit::reshape(pred.trajectories, {a * k, t * 2}), std::move(rows));
  out.reg = numkit::smooth_l1_loss(best, tape.constant(Tensor::raw({a, t * 2}, gt.vec())));
  out.cls = numkit::cross_entropy_loss(pred.logits, out.winners);
  return out;
}

std::vector<LengthOutput> forward_all_lengths(Tape& tape, const model::PreparedScene& prepared, const OafParams& params,
                                              std::span<const int> lengths) {
  if (lengths.empty()) throw ValueError("forward_all_lengths: no lengths requested");
  const auto& layout = params.config().layout;
  const auto& scene = *prepared.scene;
  std::vector<LengthOutput> out;
  model::MapContext map;
  for (int tau : lengths) {
    const model::ModelInput input = model::window_input(prepared, layout, tau);
    if (!map.keys.valid()) map = model::encode_map(tape, params.encoder(), input);
    const EncodedScene enc = encode(tape, input, tau, params, &map);
    out.push_back({tau, decode(tape, extract_aoi(enc, scene.aoi_indices), params), extract_agents(enc)});
  }
  return out;
}

}  // namespace tapd::oaf
