#include "tapd/tbm/tbm.hpp"

#include <cmath>
#include <random>

#include "tapd/error.hpp"

namespace tapd::tbm {

using numkit::Tape;
using numkit::Tensor;
using numkit::Var;
using scenegen::kStateDim;

namespace {

constexpr double kStillSpeed = 1e-6;  // m/step below which heading is not taken from velocity

void check_tau(int tau, const TbmParams& params) {
  if (tau < 1 || tau > params.max_length()) {
    throw ValueError("tbm: tau " + std::to_string(tau) + " outside [1, " + std::to_string(params.max_length()) +
                     "] (a full-length history needs no backfilling)");
  }
}

}  // namespace

TbmParams::TbmParams(const TbmConfig& config) : config_(config), store_(std::make_unique<numkit::ParamStore>()) {
  if (config.layout.intervals < 2) throw ConfigError("tbm: H must be >= 2");
  if (config.modes < 1 || config.hidden < 1) throw ConfigError("tbm: modes and hidden size must be >= 1");
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.hidden;
  encoder_ = model::make_encoder(*store_, rng, "tbm.enc", d, config.layout.intervals - 1);
  decoder_hidden = model::make_linear(*store_, rng, "tbm.dec.hidden", d, d, true);
  decoder_prefix = model::make_linear(*store_, rng, "tbm.dec.prefix", d, config.modes * max_prefix() * kStateDim, true, 0.5);
  decoder_logits = model::make_linear(*store_, rng, "tbm.dec.logits", d, config.modes, true);
}

TbmParams TbmParams::clone() const {
  TbmParams out(config_);
  for (std::size_t i = 0; i < store_->count(); ++i) out.store().at(i).value = store_->at(i).value;
  return out;
}

std::size_t TbmParams::prefix_steps(int tau) const {
  check_tau(tau, *this);
  return config_.layout.observed() - config_.layout.observed_for(tau);
}

Var tbm_encode(Tape& tape, const model::ModelInput& input, int tau, const TbmParams& params, const model::MapContext* map) {
  check_tau(tau, params);
  if (input.steps != params.config().layout.observed_for(tau)) {
    throw ShapeError("tbm encode: " + std::to_string(input.steps) + " observed steps inconsistent with tau=" + std::to_string(tau));
  }
  model::MapContext local;
  if (!map) {
    local = model::encode_map(tape, params.encoder(), input);
    map = &local;
  }
  return model::encode_scene(tape, params.encoder(), input, static_cast<std::size_t>(tau - 1), *map, params.config().norm_eps);
}

PrefixCandidates tbm_decode(Tape& tape, Var features, int tau, const TbmParams& params) {
  const std::size_t len = params.prefix_steps(tau);
  const std::size_t d = params.config().hidden;
  if (features.value().rank() != 2 || features.dim(1) != d) {
    throw ShapeError("tbm decode: features " + numkit::shape_str(features.shape()) + " do not have width " + std::to_string(d));
  }
  const std::size_t n = features.dim(0), k = params.config().modes, lmax = params.max_prefix();
  Var hidden = numkit::tanh(model::apply(tape, params.decoder_hidden, features));
  Var raw = numkit::reshape(model::apply(tape, params.decoder_prefix, hidden), {n * k, lmax, kStateDim});
  // The steps nearest the observed window are shared by every length.
  raw = numkit::slice(raw, 1, lmax - len, lmax);
  // Position channels are backward displacements; suffix sums place each
  // step relative to the earliest observed position.
  Var pos = numkit::scale(numkit::cumsum(numkit::slice(raw, 2, 0, 2), 1, true), -1.0);
  const std::array<Var, 2> parts{pos, numkit::slice(raw, 2, 2, kStateDim)};
  Var states = numkit::reshape(numkit::concat(parts, 2), {n, k, len, kStateDim});
  return {states, model::apply(tape, params.decoder_logits, hidden), tau};
}

Tensor prefix_targets(const Tensor& full_local, const scenegen::TimeLayout& layout, int tau) {
  const std::size_t t_obs = layout.observed();
  if (tau < 1 || tau >= static_cast<int>(layout.intervals)) throw ValueError("prefix_targets: tau out of range");
  if (full_local.rank() != 3 || full_local.dim(1) != t_obs || full_local.dim(2) != kStateDim) {
    throw ShapeError("prefix_targets: expected (N, " + std::to_string(t_obs) + ", 6), got " + numkit::shape_str(full_local.shape()));
  }
  const std::size_t first = t_obs - layout.observed_for(tau);
  Tensor out = model::time_slice(full_local, 0, first);
  const std::size_t n = full_local.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    const double ax = full_local[(i * t_obs + first) * kStateDim];
    const double ay = full_local[(i * t_obs + first) * kStateDim + 1];
    for (std::size_t t = 0; t < first; ++t) {
      out[(i * first + t) * kStateDim] -= ax;
      out[(i * first + t) * kStateDim + 1] -= ay;
    }
  }
  return out;
}

std::vector<std::size_t> winner_candidates(const Tensor& candidates, const Tensor& gt) {
  if (candidates.rank() != 4 || gt.rank() != 3 || candidates.dim(0) != gt.dim(0) || candidates.dim(2) != gt.dim(1) ||
      candidates.dim(3) != kStateDim || gt.dim(2) != kStateDim) {
    throw ShapeError("tbm: candidates " + numkit::shape_str(candidates.shape()) + " vs ground truth " +
                     numkit::shape_str(gt.shape()));
  }
  const std::size_t n = candidates.dim(0), k = candidates.dim(1), len = candidates.dim(2);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gx = gt[i * len * kStateDim], gy = gt[i * len * kStateDim + 1];
    double best = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t off = (i * k + m) * len * kStateDim;
      const double dist = std::hypot(candidates[off] - gx, candidates[off + 1] - gy);
      if (m == 0 || dist < best) {
        best = dist;
        out[i] = m;
      }
    }
  }
  return out;
}

ReconstructionLoss tbm_loss(const PrefixCandidates& pred, const Tensor& gt) {
  Tape& tape = *pred.states.tape();
  const Tensor& cand = pred.states.value();
  ReconstructionLoss out;
  out.winners = winner_candidates(cand, gt);
  const std::size_t n = cand.dim(0), k = cand.dim(1), width = cand.dim(2) * kStateDim;
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i * k + out.winners[i];
  Var best = numkit::gather_rows(numkit::reshape(pred.states, {n * k, width}), std::move(rows));
  out.reg = numkit::smooth_l1_loss(best, tape.constant(Tensor::raw({n, width}, gt.vec())));
  out.cls = numkit::cross_entropy_loss(pred.logits, out.winners);
  return out;
}

ReconstructionLoss tbm_scene_loss(Tape& tape, const model::PreparedScene& prepared, const TbmParams& params,
                                  std::span<const int> lengths) {
  const auto& layout = params.config().layout;
  std::vector<int> taus(lengths.begin(), lengths.end());
  if (taus.empty())
    for (int tau = 1; tau <= params.max_length(); ++tau) taus.push_back(tau);
  ReconstructionLoss total;
  model::MapContext map;
  for (int tau : taus) {
    const model::ModelInput input = model::window_input(prepared, layout, tau);
    if (!map.keys.valid()) map = model::encode_map(tape, params.encoder(), input);
    const auto pred = tbm_decode(tape, tbm_encode(tape, input, tau, params, &map), tau, params);
    auto l = tbm_loss(pred, prefix_targets(prepared.full_local, layout, tau));
    if (!total.reg.valid()) {
      total = std::move(l);
    } else {
      total.reg = numkit::add(total.reg, l.reg);
      total.cls = numkit::add(total.cls, l.cls);
    }
  }
  return total;
}

Tensor complete_history(const Tensor& observed, const Tensor& prefix, std::size_t total_steps) {
  if (observed.rank() != 3 || prefix.rank() != 3 || observed.dim(0) != prefix.dim(0) || observed.dim(2) != prefix.dim(2)) {
    throw ShapeError("complete_history: observed " + numkit::shape_str(observed.shape()) + " vs prefix " +
                     numkit::shape_str(prefix.shape()));
  }
  const std::size_t n = observed.dim(0), to = observed.dim(1), tp = prefix.dim(1), c = observed.dim(2);
  if (to + tp != total_steps) {
    throw ShapeError("complete_history: " + std::to_string(tp) + " prefix + " + std::to_string(to) + " observed steps != " +
                     std::to_string(total_steps));
  }
  std::vector<double> out;
  out.reserve(n * total_steps * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = prefix.vec().begin() + static_cast<long>(i * tp * c);
    out.insert(out.end(), p, p + static_cast<long>(tp * c));
    const auto o = observed.vec().begin() + static_cast<long>(i * to * c);
    out.insert(out.end(), o, o + static_cast<long>(to * c));
  }
  return Tensor::raw({n, total_steps, c}, std::move(out));
}

BackfillResult backfill(const Tensor& observed, const scenegen::MapPolylines& map, std::span<const std::uint32_t> aoi_indices,
                        int tau, const TbmParams& params) {
  check_tau(tau, params);
  const auto& layout = params.config().layout;
  if (observed.rank() != 3 || observed.dim(1) != layout.observed_for(tau) || observed.dim(2) != kStateDim) {
    throw ShapeError("backfill: observed " + numkit::shape_str(observed.shape()) + " inconsistent with tau=" + std::to_string(tau));
  }
  if (aoi_indices.empty() || aoi_indices[0] >= observed.dim(0)) throw ValueError("backfill: invalid AOI index");
  const std::size_t n = observed.dim(0), t_obs = observed.dim(1), len = params.prefix_steps(tau);
  const std::size_t k = params.config().modes;

  const double* anchor = observed.data().data() + (aoi_indices[0] * t_obs + t_obs - 1) * kStateDim;
  const model::AoiFrame frame = model::AoiFrame::from_state({anchor, kStateDim});
  const Tensor local = model::states_to_local(observed, frame);

  Tape tape(false);
  const model::ModelInput input = model::build_input(local, map, frame, layout.observed());
  const PrefixCandidates pred = tbm_decode(tape, tbm_encode(tape, input, tau, params), tau, params);
  const Tensor& cand = pred.states.value();
  const Tensor& logits = pred.logits.value();

  BackfillResult res;
  res.logits = logits;
  res.chosen.resize(n);
  std::vector<double> prefix(n * len * kStateDim);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < k; ++m)
      if (logits[i * k + m] > logits[i * k + best]) best = m;
    res.chosen[i] = best;

    const double* first_obs = local.data().data() + i * t_obs * kStateDim;
    const double* src = cand.data().data() + (i * k + best) * len * kStateDim;
    double* dst = prefix.data() + i * len * kStateDim;
    for (std::size_t t = 0; t < len; ++t) {
      dst[t * kStateDim] = src[t * kStateDim] + first_obs[0];
      dst[t * kStateDim + 1] = src[t * kStateDim + 1] + first_obs[1];
    }
    // Kinematic channels follow from the reconstructed positions.
    for (std::size_t t = 0; t < len; ++t) {
      const double* a = t == 0 ? dst : dst + (t - 1) * kStateDim;
      const double* b = t == 0 ? (len > 1 ? dst + kStateDim : first_obs) : dst + t * kStateDim;
      double* s = dst + t * kStateDim;
      s[2] = b[0] - a[0];
      s[3] = b[1] - a[1];
      const double speed = std::hypot(s[2], s[3]);
      double hc = src[t * kStateDim + 4], hs = src[t * kStateDim + 5];
      if (speed > kStillSpeed) {
        hc = s[2] / speed;
        hs = s[3] / speed;
      } else if (std::hypot(hc, hs) > kStillSpeed) {
        const double norm = std::hypot(hc, hs);
        hc /= norm;
        hs /= norm;
      } else {
        hc = first_obs[4];
        hs = first_obs[5];
      }
      s[4] = hc;
      s[5] = hs;
    }
  }
  res.prefix = model::states_to_world(Tensor::raw({n, len, kStateDim}, std::move(prefix)), frame);
  res.completed = complete_history(observed, res.prefix, layout.observed());
  return res;
}

}  // namespace tapd::tbm
