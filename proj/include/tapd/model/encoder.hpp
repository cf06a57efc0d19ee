#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tapd/model/frame.hpp"
#include "tapd/numkit/tape.hpp"

namespace tapd::model {

struct Linear {
  numkit::Param* w = nullptr;  // (in, out)
  numkit::Param* b = nullptr;  // (out), optional

  std::size_t in() const { return w->value.dim(0); }
  std::size_t out() const { return w->value.dim(1); }
};

// Xavier-uniform weights scaled by `gain`, zero bias.
Linear make_linear(numkit::ParamStore& store, std::mt19937_64& rng, const std::string& name, std::size_t in,
                   std::size_t out, bool bias, double gain = 1.0);
numkit::Var apply(numkit::Tape& tape, const Linear& layer, numkit::Var x);

struct NormSite {
  numkit::Param* gamma = nullptr;
  numkit::Param* beta = nullptr;
};

inline constexpr std::size_t kNormSites = 3;

/// Scene encoder shared by the forecaster and the backfilling module.
/// Everything except `norms` is shared across observation lengths;
/// `norms[e]` holds the LayerNorm sites of length entry e.
struct EncoderWeights {
  Linear step_embed;
  Linear temporal;
  Linear agent_q, agent_k, agent_v, agent_o;
  Linear map_embed;
  Linear map_q, map_k, map_v, map_o;
  Linear fusion;
  std::vector<std::array<NormSite, kNormSites>> norms;

  std::size_t hidden() const { return fusion.out(); }
};

EncoderWeights make_encoder(numkit::ParamStore& store, std::mt19937_64& rng, const std::string& prefix,
                            std::size_t hidden, std::size_t norm_entries);

// Map keys/values depend only on the map and shared weights, so one
// context serves every observation length on the same tape.
struct MapContext {
  numkit::Var keys;
  numkit::Var values;
};

MapContext encode_map(numkit::Tape& tape, const EncoderWeights& w, const ModelInput& input);

// step embedding -> mean+max temporal pooling -> LN -> agent attention ->
// LN -> map cross-attention -> LN -> fusion. Returns (N, hidden).
numkit::Var encode_scene(numkit::Tape& tape, const EncoderWeights& w, const ModelInput& input, std::size_t norm_entry,
                         const MapContext& map, double eps = 1e-5);

}  // namespace tapd::model
