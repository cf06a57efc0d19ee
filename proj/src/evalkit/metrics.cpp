#include "tapd/evalkit/metrics.hpp"

#include <cmath>

#include "tapd/error.hpp"

namespace tapd::evalkit {

using numkit::Tensor;

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* what) {
  if (pred.rank() != 2 || pred.dim(1) != 2 || pred.shape() != gt.shape() || pred.dim(0) == 0) {
    throw ShapeError(std::string(what) + ": prediction " + numkit::shape_str(pred.shape()) + " vs ground truth " +
                     numkit::shape_str(gt.shape()));
  }
}

void check_set(const Tensor& preds, const Tensor& gt, const char* what) {
  if (preds.rank() != 3 || preds.dim(0) == 0) throw ShapeError(std::string(what) + ": empty or malformed candidate set");
  if (gt.rank() != 2 || preds.dim(1) != gt.dim(0) || preds.dim(2) != 2 || gt.dim(1) != 2 || gt.dim(0) == 0) {
    throw ShapeError(std::string(what) + ": candidates " + numkit::shape_str(preds.shape()) + " vs ground truth " +
                     numkit::shape_str(gt.shape()));
  }
}

double dist(const double* a, const double* b) { return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])); }

// Mean per-step distance of the trajectory starting at `p`.
double ade_raw(const double* p, const double* g, std::size_t steps) {
  double s = 0.0;
  for (std::size_t t = 0; t < steps; ++t) s += dist(p + 2 * t, g + 2 * t);
  return s / static_cast<double>(steps);
}

double fde_raw(const double* p, const double* g, std::size_t steps) { return dist(p + 2 * (steps - 1), g + 2 * (steps - 1)); }

}  // namespace

double ade(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "ade");
  return ade_raw(pred.data().data(), gt.data().data(), gt.dim(0));
}

double fde(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "fde");
  return fde_raw(pred.data().data(), gt.data().data(), gt.dim(0));
}

double min_ade_k(const Tensor& preds, const Tensor& gt) {
  check_set(preds, gt, "min_ade_k");
  const std::size_t steps = gt.dim(0);
  double best = INFINITY;
  for (std::size_t k = 0; k < preds.dim(0); ++k)
    best = std::min(best, ade_raw(preds.data().data() + k * steps * 2, gt.data().data(), steps));
  return best;
}

double min_fde_k(const Tensor& preds, const Tensor& gt) {
  check_set(preds, gt, "min_fde_k");
  const std::size_t steps = gt.dim(0);
  double best = INFINITY;
  for (std::size_t k = 0; k < preds.dim(0); ++k)
    best = std::min(best, fde_raw(preds.data().data() + k * steps * 2, gt.data().data(), steps));
  return best;
}

double miss_rate_k(std::span<const Tensor> preds, std::span<const Tensor> gts, double threshold) {
  if (preds.empty()) throw ValueError("miss_rate_k: empty sample set");
  if (preds.size() != gts.size()) throw ShapeError("miss_rate_k: prediction and ground-truth counts differ");
  std::size_t missed = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (min_fde_k(preds[i], gts[i]) > threshold) ++missed;
  return static_cast<double>(missed) / static_cast<double>(preds.size());
}

Tensor candidate(const Tensor& preds, std::size_t k) {
  if (preds.rank() != 3 || k >= preds.dim(0)) throw ShapeError("candidate: index out of range");
  const std::size_t w = preds.dim(1) * preds.dim(2);
  return Tensor::raw({preds.dim(1), preds.dim(2)},
                     std::vector<double>(preds.vec().begin() + static_cast<long>(k * w), preds.vec().begin() + static_cast<long>((k + 1) * w)));
}

}  // namespace tapd::evalkit
