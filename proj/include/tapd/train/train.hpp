#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tapd/numkit/optim.hpp"
#include "tapd/oaf/oaf.hpp"
#include "tapd/scenegen/scene.hpp"
#include "tapd/tbm/tbm.hpp"
#include "tapd/train/config.hpp"

namespace tapd::train {

/// Per-epoch means over training scenes. For stage 1, `total` is the mean of
/// the optimized per-scene losses alpha*l_f + l_reg + l_cls.
struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  double alpha = 0.0;
  double lr = 0.0;
  double l_f = 0.0;
  double l_reg = 0.0;
  double l_cls = 0.0;
  double total = 0.0;
  std::size_t batches = 0;
  std::size_t clipped_batches = 0;
  double max_grad_norm = 0.0;
  double wall_seconds = 0.0;
};

std::string to_jsonl(const EpochRecord& rec);

using EpochCallback = std::function<void(const EpochRecord&)>;

struct OafTrainResult {
  oaf::OafParams params;
  numkit::OptimState optim;
  std::vector<EpochRecord> log;
};

struct TbmTrainResult {
  tbm::TbmParams params;
  numkit::OptimState optim;
  std::vector<EpochRecord> log;
};

/// Loss of one scene in stage 1, before batch averaging.
struct Stage1SceneLoss {
  numkit::Var total;
  numkit::Var l_f;  // invalid when no PKD pair is trained
  numkit::Var l_reg;
  numkit::Var l_cls;
};

Stage1SceneLoss stage1_scene_loss(numkit::Tape& tape, const model::PreparedScene& prepared, const oaf::OafParams& params,
                                  const TrainConfig& config, double alpha);

// Multi-length OAF pretraining on full scenes with alpha-weighted PKD.
OafTrainResult stage1_pretrain(const TrainConfig& config, const oaf::OafConfig& model, std::span<const scenegen::Scene> scenes,
                               const EpochCallback& on_epoch = {});

// Standalone TBM training over config.lengths below H.
TbmTrainResult stage2_train_tbm(const TrainConfig& config, const tbm::TbmConfig& model, std::span<const scenegen::Scene> scenes,
                                const EpochCallback& on_epoch = {});

struct Stage3Stats {
  std::size_t tbm_calls = 0;
  std::vector<std::size_t> samples_per_length;  // index tau-1
  std::vector<std::size_t> tbm_calls_per_length;
};

// Full-length input for a stage-3 sample: the backfilled history when
// tau < H, otherwise the observed one. World coordinates, (N, T_obs, 6).
numkit::Tensor stage3_history(const scenegen::Scene& scene, int tau, const tbm::TbmParams& tbm, Stage3Stats& stats);

// Prediction loss L_reg^H + L_cls^H of the forecaster on a full-length history.
oaf::PredictionLoss full_length_loss(numkit::Tape& tape, const model::PreparedScene& prepared, const numkit::Tensor& history_world,
                                     const oaf::OafParams& params);

struct OafFinetuneResult {
  oaf::OafParams params;
  numkit::OptimState optim;
  std::vector<EpochRecord> log;
  Stage3Stats stats;
};

// Finetunes a copy of `initial` on backfilled inputs; `tbm` is read only.
OafFinetuneResult stage3_finetune(const TrainConfig& config, const oaf::OafParams& initial, const tbm::TbmParams& tbm,
                                  std::span<const scenegen::Scene> scenes, const EpochCallback& on_epoch = {});

}  // namespace tapd::train
