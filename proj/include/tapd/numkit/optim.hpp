#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tapd/numkit/tape.hpp"

namespace tapd::numkit {

struct AdamWConfig {
  double lr = 6e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW moments for every parameter of one ParamStore, indexed by store
/// position. Moments are allocated on a parameter's first update.
struct OptimState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit OptimState(AdamWConfig cfg = {}) : config(cfg) {}
};

// Decoupled-weight-decay Adam with bias correction over the listed store
// indices, then zeroes their grads. Throws ValueError if a listed
// parameter has no gradient.
void adamw_step(ParamStore& store, std::span<const std::size_t> indices, OptimState& state);
// Steps every parameter of the store.
void adamw_step(ParamStore& store, OptimState& state);

// Scales grads so their joint L2 norm is at most max_norm. Returns the norm
// before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

// (1 - cos(e*pi/E)) / 2 for 0 <= e <= E, E >= 1.
double cosine_alpha(int epoch, int total_epochs);

}  // namespace tapd::numkit
