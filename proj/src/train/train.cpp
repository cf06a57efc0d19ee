#include "tapd/train/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "tapd/error.hpp"
#include "tapd/scenegen/scenegen.hpp"

namespace tapd::train {

using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

namespace {

struct SceneTerms {
  Var total;
  double l_f = 0.0;
  double l_reg = 0.0;
  double l_cls = 0.0;
};

numkit::OptimState fresh_optimizer(const TrainConfig& config) {
  numkit::AdamWConfig a;
  a.lr = config.lr;
  a.weight_decay = config.weight_decay;
  return numkit::OptimState(a);
}

std::vector<model::PreparedScene> prepare_all(std::span<const scenegen::Scene> scenes, const scenegen::TimeLayout& layout) {
  if (scenes.empty()) throw ValueError("training set is empty");
  std::vector<model::PreparedScene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    if (s.agents.empty() || s.agents.front().steps() != layout.total()) {
      throw ValueError("scene " + std::to_string(s.id) + " does not match the model's time layout");
    }
    out.push_back(model::prepare_scene(s, layout));
  }
  return out;
}

// Shuffled mini-batches; every scene contributes loss/batch_size so the
// step follows the batch-mean gradient. Parameters that no loss reached in a
// batch are left untouched.
template <typename SceneFn>
std::vector<EpochRecord> run_epochs(const TrainConfig& config, numkit::ParamStore& store, numkit::OptimState& optim,
                                    std::size_t scene_count, SceneFn scene_fn, const EpochCallback& on_epoch) {
  std::mt19937_64 order_rng(config.seed);
  std::vector<std::size_t> order(scene_count);
  std::vector<EpochRecord> log;
  std::vector<std::size_t> stepped;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < scene_count; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), order_rng);

    EpochRecord rec;
    rec.stage = config.stage;
    rec.epoch = epoch;
    rec.alpha = config.stage == 1 ? numkit::cosine_alpha(epoch, config.epochs) : 0.0;
    rec.lr = optim.config.lr = config.epoch_lr(epoch);
    double sum_total = 0.0;
    for (std::size_t b0 = 0; b0 < scene_count; b0 += config.batch_size) {
      const std::size_t b1 = std::min(scene_count, b0 + config.batch_size);
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      store.clear_grad();
      for (std::size_t k = b0; k < b1; ++k) {
        Tape tape;
        const SceneTerms t = scene_fn(tape, order[k], rec.alpha);
        sum_total += t.total.value().item();
        rec.l_f += t.l_f;
        rec.l_reg += t.l_reg;
        rec.l_cls += t.l_cls;
        tape.backward(numkit::scale(t.total, inv));
      }
      const double norm = numkit::clip_grad_norm(store, config.clip_norm);
      rec.max_grad_norm = std::max(rec.max_grad_norm, norm);
      if (norm > config.clip_norm) ++rec.clipped_batches;
      stepped.clear();
      for (std::size_t i = 0; i < store.count(); ++i)
        if (store.at(i).has_grad()) stepped.push_back(i);
      numkit::adamw_step(store, stepped, optim);
      ++rec.batches;
    }
    const double n = static_cast<double>(scene_count);
    rec.total = sum_total / n;
    rec.l_f /= n;
    rec.l_reg /= n;
    rec.l_cls /= n;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  store.clear_grad();
  return log;
}

Var sum_vars(const std::vector<Var>& v) {
  Var out = v.front();
  for (std::size_t i = 1; i < v.size(); ++i) out = numkit::add(out, v[i]);
  return out;
}

}  // namespace

std::string to_jsonl(const EpochRecord& r) {
  const Json j{{"stage", r.stage},
               {"epoch", r.epoch},
               {"alpha", r.alpha},
               {"lr", r.lr},
               {"l_f", r.l_f},
               {"l_reg", r.l_reg},
               {"l_cls", r.l_cls},
               {"total", r.total},
               {"batches", r.batches},
               {"clipped_batches", r.clipped_batches},
               {"max_grad_norm", r.max_grad_norm},
               {"wall_seconds", r.wall_seconds}};
  return j.dump() + "\n";
}

Stage1SceneLoss stage1_scene_loss(Tape& tape, const model::PreparedScene& prepared, const oaf::OafParams& params,
                                  const TrainConfig& config, double alpha) {
  const auto outs = oaf::forward_all_lengths(tape, prepared, params, config.lengths);
  Stage1SceneLoss out;
  std::vector<Var> reg, cls;
  for (const auto& o : outs) {
    const auto l = oaf::prediction_loss(o.prediction, prepared.targets);
    reg.push_back(l.reg);
    cls.push_back(l.cls);
  }
  out.l_reg = sum_vars(reg);
  out.l_cls = sum_vars(cls);
  out.total = numkit::add(out.l_reg, out.l_cls);
  if (config.pkd) {
    std::vector<Var> terms;
    for (const auto& [s, t] : config.pkd_pairs()) {
      const auto find = [&](int tau) {
        return std::find_if(outs.begin(), outs.end(), [&](const oaf::LengthOutput& o) { return o.tau == tau; })->agent_features;
      };
      const std::array<Var, 2> pair{find(s), find(t)};
      terms.push_back(oaf::pkd_loss(pair));
    }
    if (!terms.empty()) {
      out.l_f = numkit::scale(sum_vars(terms), 1.0 / static_cast<double>(terms.size()));
      out.total = numkit::add(numkit::scale(out.l_f, alpha), out.total);
    }
  }
  return out;
}

OafTrainResult stage1_pretrain(const TrainConfig& config, const oaf::OafConfig& model, std::span<const scenegen::Scene> scenes,
                               const EpochCallback& on_epoch) {
  if (config.stage != 1) throw ConfigError("stage1_pretrain needs train.stage = 1");
  config.validate(static_cast<int>(model.layout.intervals));
  const auto prepared = prepare_all(scenes, model.layout);
  OafTrainResult res{oaf::OafParams(model), fresh_optimizer(config), {}};
  const auto fn = [&](Tape& tape, std::size_t i, double alpha) {
    const auto l = stage1_scene_loss(tape, prepared[i], res.params, config, alpha);
    return SceneTerms{l.total, l.l_f.valid() ? l.l_f.value().item() : 0.0, l.l_reg.value().item(), l.l_cls.value().item()};
  };
  res.log = run_epochs(config, res.params.store(), res.optim, prepared.size(), fn, on_epoch);
  return res;
}

TbmTrainResult stage2_train_tbm(const TrainConfig& config, const tbm::TbmConfig& model, std::span<const scenegen::Scene> scenes,
                                const EpochCallback& on_epoch) {
  if (config.stage != 2) throw ConfigError("stage2_train_tbm needs train.stage = 2");
  const int h = static_cast<int>(model.layout.intervals);
  config.validate(h);
  std::vector<int> lengths;
  for (int t : config.lengths)
    if (t < h) lengths.push_back(t);
  const auto prepared = prepare_all(scenes, model.layout);
  TbmTrainResult res{tbm::TbmParams(model), fresh_optimizer(config), {}};
  const auto fn = [&](Tape& tape, std::size_t i, double) {
    const auto l = tbm::tbm_scene_loss(tape, prepared[i], res.params, lengths);
    return SceneTerms{numkit::add(l.reg, l.cls), 0.0, l.reg.value().item(), l.cls.value().item()};
  };
  res.log = run_epochs(config, res.params.store(), res.optim, prepared.size(), fn, on_epoch);
  return res;
}

Tensor stage3_history(const scenegen::Scene& scene, int tau, const tbm::TbmParams& tbm, Stage3Stats& stats) {
  const auto& layout = tbm.config().layout;
  const int h = static_cast<int>(layout.intervals);
  const std::size_t slot = static_cast<std::size_t>(tau - 1);
  if (stats.samples_per_length.size() < static_cast<std::size_t>(h)) {
    stats.samples_per_length.resize(static_cast<std::size_t>(h));
    stats.tbm_calls_per_length.resize(static_cast<std::size_t>(h));
  }
  ++stats.samples_per_length.at(slot);
  if (tau == h) return scenegen::full_history(scene, layout);
  ++stats.tbm_calls;
  ++stats.tbm_calls_per_length[slot];
  const Tensor observed = scenegen::truncate_history(scene, {layout, tau});
  return tbm::backfill(observed, scene.map, scene.aoi_indices, tau, tbm).completed;
}

oaf::PredictionLoss full_length_loss(Tape& tape, const model::PreparedScene& prepared, const Tensor& history_world,
                                     const oaf::OafParams& params) {
  const auto& layout = params.config().layout;
  const int h = params.max_length();
  const Tensor local = model::states_to_local(history_world, prepared.frame);
  const model::ModelInput input = model::build_input(local, prepared.scene->map, prepared.frame, layout.observed());
  const oaf::EncodedScene enc = oaf::encode(tape, input, h, params);
  const auto pred = oaf::decode(tape, oaf::extract_aoi(enc, prepared.scene->aoi_indices), params);
  return oaf::prediction_loss(pred, prepared.targets);
}

OafFinetuneResult stage3_finetune(const TrainConfig& config, const oaf::OafParams& initial, const tbm::TbmParams& tbm,
                                  std::span<const scenegen::Scene> scenes, const EpochCallback& on_epoch) {
  if (config.stage != 3) throw ConfigError("stage3_finetune needs train.stage = 3");
  const auto& layout = initial.config().layout;
  if (!(tbm.config().layout == layout)) throw ConfigError("stage 3: TBM time layout differs from the forecaster's");
  config.validate(initial.max_length());
  const auto prepared = prepare_all(scenes, layout);
  OafFinetuneResult res{initial.clone(), fresh_optimizer(config), {}, {}};
  std::mt19937_64 tau_rng(config.seed ^ 0x5eed3ULL);
  std::uniform_int_distribution<std::size_t> pick(0, config.lengths.size() - 1);
  const auto fn = [&](Tape& tape, std::size_t i, double) {
    const int tau = config.lengths[pick(tau_rng)];
    const Tensor history = stage3_history(*prepared[i].scene, tau, tbm, res.stats);
    const auto l = full_length_loss(tape, prepared[i], history, res.params);
    return SceneTerms{numkit::add(l.reg, l.cls), 0.0, l.reg.value().item(), l.cls.value().item()};
  };
  res.log = run_epochs(config, res.params.store(), res.optim, prepared.size(), fn, on_epoch);
  return res;
}

}  // namespace tapd::train
