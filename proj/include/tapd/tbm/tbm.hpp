#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tapd/model/encoder.hpp"
#include "tapd/model/frame.hpp"
#include "tapd/numkit/tape.hpp"
#include "tapd/scenegen/scene.hpp"

namespace tapd::tbm {

struct TbmConfig {
  scenegen::TimeLayout layout;
  std::size_t hidden = 64;
  std::size_t modes = 3;
  std::uint64_t seed = 0;
  double norm_eps = 1e-5;
};

/// Backfilling module parameters: an encoder with the same block inventory
/// as the forecaster, LayerNorm entries for lengths 1..H-1, and one prefix
/// head sized for the longest missing segment.
class TbmParams {
 public:
  explicit TbmParams(const TbmConfig& config);
  TbmParams(TbmParams&&) = default;
  TbmParams& operator=(TbmParams&&) = default;
  TbmParams(const TbmParams&) = delete;
  TbmParams& operator=(const TbmParams&) = delete;

  TbmParams clone() const;

  const TbmConfig& config() const { return config_; }
  int max_length() const { return static_cast<int>(config_.layout.intervals) - 1; }
  // Steps produced by the shared head, (H-1)*dT.
  std::size_t max_prefix() const { return config_.layout.observed() - config_.layout.delta_t; }
  std::size_t prefix_steps(int tau) const;

  numkit::ParamStore& store() { return *store_; }
  const numkit::ParamStore& store() const { return *store_; }
  const model::EncoderWeights& encoder() const { return encoder_; }

  model::Linear decoder_hidden;
  model::Linear decoder_prefix;  // hidden -> K_rec * max_prefix * kStateDim
  model::Linear decoder_logits;  // hidden -> K_rec

 private:
  TbmConfig config_;
  std::unique_ptr<numkit::ParamStore> store_;
  model::EncoderWeights encoder_;
};

numkit::Var tbm_encode(numkit::Tape& tape, const model::ModelInput& input, int tau, const TbmParams& params,
                       const model::MapContext* map = nullptr);

/// Candidate prefixes in the frame, chronological, positions relative to
/// each agent's earliest observed position.
struct PrefixCandidates {
  numkit::Var states;  // (N, K_rec, L, kStateDim)
  numkit::Var logits;  // (N, K_rec)
  int tau = 0;
};

PrefixCandidates tbm_decode(numkit::Tape& tape, numkit::Var features, int tau, const TbmParams& params);

// Ground-truth prefix in the candidate representation: (N, L, kStateDim).
numkit::Tensor prefix_targets(const numkit::Tensor& full_local, const scenegen::TimeLayout& layout, int tau);

struct ReconstructionLoss {
  numkit::Var reg;
  numkit::Var cls;
  std::vector<std::size_t> winners;  // per agent
};

// Lowest-index argmin of the displacement at the earliest missing step.
std::vector<std::size_t> winner_candidates(const numkit::Tensor& candidates, const numkit::Tensor& gt);

ReconstructionLoss tbm_loss(const PrefixCandidates& pred, const numkit::Tensor& gt);

// Sum of reconstruction losses over `lengths` (default: every length
// 1..H-1) for one scene.
ReconstructionLoss tbm_scene_loss(numkit::Tape& tape, const model::PreparedScene& prepared, const TbmParams& params,
                                  std::span<const int> lengths = {});

// prefix || observed along time; the observed suffix is copied verbatim.
numkit::Tensor complete_history(const numkit::Tensor& observed, const numkit::Tensor& prefix, std::size_t total_steps);

struct BackfillResult {
  numkit::Tensor prefix;     // (N, L, kStateDim), world
  numkit::Tensor completed;  // (N, T_obs, kStateDim), world
  std::vector<std::size_t> chosen;
  numkit::Tensor logits;  // (N, K_rec)
};

// `observed` is (N, tau*dT, kStateDim) in world coordinates ending at the
// last observed step; the frame is taken from aoi_indices[0].
BackfillResult backfill(const numkit::Tensor& observed, const scenegen::MapPolylines& map,
                        std::span<const std::uint32_t> aoi_indices, int tau, const TbmParams& params);

}  // namespace tapd::tbm
