#include "tapd/numkit/optim.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "tapd/error.hpp"

namespace tapd::numkit {

void adamw_step(ParamStore& store, std::span<const std::size_t> indices, OptimState& state) {
  for (std::size_t i : indices) {
    if (i >= store.count()) throw ValueError("adamw: parameter index out of range");
    if (!store.at(i).has_grad()) throw ValueError("adamw: missing gradient for '" + store.at(i).name + "'");
  }
  if (state.m.size() < store.count()) {
    state.m.resize(store.count());
    state.v.resize(store.count());
  }
  const AdamWConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i : indices) {
    Param& p = store.at(i);
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.empty()) {
      m.assign(p.value.size(), 0.0);
      v.assign(p.value.size(), 0.0);
    }
    auto w = p.value.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = p.grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * w[j]);
    }
    p.zero_grad();
  }
}

void adamw_step(ParamStore& store, OptimState& state) {
  std::vector<std::size_t> all(store.count());
  std::iota(all.begin(), all.end(), std::size_t{0});
  adamw_step(store, all, state);
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < store.count(); ++i) {
    for (double g : store.at(i).grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < store.count(); ++i) {
      for (double& g : store.at(i).grad) g *= s;
    }
  }
  return norm;
}

double cosine_alpha(int epoch, int total_epochs) {
  if (total_epochs < 1) throw ValueError("cosine_alpha: total epochs must be >= 1");
  if (epoch < 0 || epoch > total_epochs) {
    throw ValueError("cosine_alpha: epoch " + std::to_string(epoch) + " outside [0," + std::to_string(total_epochs) + "]");
  }
  // Exact endpoints and midpoint, independent of cos rounding near pi/2.
  if (epoch == 0) return 0.0;
  if (epoch == total_epochs) return 1.0;
  if (2 * epoch == total_epochs) return 0.5;
  return 0.5 * (1.0 - std::cos(static_cast<double>(epoch) * std::numbers::pi / static_cast<double>(total_epochs)));
}

}  // namespace tapd::numkit
