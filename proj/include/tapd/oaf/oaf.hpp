#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tapd/model/encoder.hpp"
#include "tapd/model/frame.hpp"
#include "tapd/numkit/tape.hpp"
#include "tapd/scenegen/scene.hpp"

namespace tapd::oaf {

struct OafConfig {
  scenegen::TimeLayout layout;
  std::size_t hidden = 64;
  std::size_t modes = 6;
  std::uint64_t seed = 0;
  double norm_eps = 1e-5;
};

/// Observation-adaptive forecaster parameters. The encoder's shared weights
/// and the decoder are single objects used for every length; only the
/// LayerNorm table has one entry per length 1..H.
class OafParams {
 public:
  explicit OafParams(const OafConfig& config);
  OafParams(OafParams&&) = default;
  OafParams& operator=(OafParams&&) = default;
  OafParams(const OafParams&) = delete;
  OafParams& operator=(const OafParams&) = delete;

  // Same config and values, independent storage.
  OafParams clone() const;

  const OafConfig& config() const { return config_; }
  int max_length() const { return static_cast<int>(config_.layout.intervals); }

  numkit::ParamStore& store() { return *store_; }
  const numkit::ParamStore& store() const { return *store_; }
  const model::EncoderWeights& encoder() const { return encoder_; }

  model::Linear decoder_hidden;
  model::Linear decoder_traj;    // hidden -> K * T_f * 2 per-step displacements
  model::Linear decoder_logits;  // hidden -> K

 private:
  OafConfig config_;
  std::unique_ptr<numkit::ParamStore> store_;
  model::EncoderWeights encoder_;
};

struct EncodedScene {
  numkit::Var features;  // F_e, (N, d)
  int tau = 0;
  std::size_t agents() const { return features.dim(0); }
};

// `norm_tau` selects the LayerNorm entry; 0 means "same as tau".
EncodedScene encode(numkit::Tape& tape, const model::ModelInput& input, int tau, const OafParams& params,
                    const model::MapContext* map = nullptr, int norm_tau = 0);

numkit::Var extract_aoi(const EncodedScene& enc, std::span<const std::uint32_t> aoi_indices);
numkit::Var extract_agents(const EncodedScene& enc);

struct ModePrediction {
  numkit::Var trajectories;  // (A, K, T_f, 2), offsets from each AOI's last observed position
  numkit::Var logits;        // (A, K)
};

ModePrediction decode(numkit::Tape& tape, numkit::Var aoi_features, const OafParams& params);

// Mean over adjacent pairs of mean |F^tau - detach(F^{tau+1})|. `features`
// is ordered by increasing length, consecutive lengths only.
numkit::Var pkd_loss(std::span<const numkit::Var> features);

struct PredictionLoss {
  numkit::Var reg;
  numkit::Var cls;
  std::vector<std::size_t> winners;  // per AOI
};

// Lowest-index argmin of final-step displacement between each mode and `gt`.
std::vector<std::size_t> winner_modes(const numkit::Tensor& trajectories, const numkit::Tensor& gt);

// Winner-take-all smooth-L1 on the best mode plus cross-entropy on its index.
PredictionLoss prediction_loss(const ModePrediction& pred, const numkit::Tensor& gt);

struct LengthOutput {
  int tau = 0;
  ModePrediction prediction;
  numkit::Var agent_features;  // F_ag^tau
};

// One encode/decode per requested length, sharing one map context.
std::vector<LengthOutput> forward_all_lengths(numkit::Tape& tape, const model::PreparedScene& prepared, const OafParams& params,
                                              std::span<const int> lengths);

}  // namespace tapd::oaf
