#pragma once

#include <span>
#include <vector>

#include "tapd/numkit/tensor.hpp"

namespace tapd::evalkit {

inline constexpr double kMissThreshold = 2.0;  // m

// Trajectories are (T, 2); candidate sets are (K, T, 2).
double ade(const numkit::Tensor& pred, const numkit::Tensor& gt);
double fde(const numkit::Tensor& pred, const numkit::Tensor& gt);

// Best-of-K; the two minima may come from different candidates.
double min_ade_k(const numkit::Tensor& preds, const numkit::Tensor& gt);
double min_fde_k(const numkit::Tensor& preds, const numkit::Tensor& gt);

// Fraction of samples whose min_fde_k is strictly above the threshold.
double miss_rate_k(std::span<const numkit::Tensor> preds, std::span<const numkit::Tensor> gts,
                   double threshold = kMissThreshold);

// Candidate row k of a (K, T, 2) set as a (T, 2) trajectory.
numkit::Tensor candidate(const numkit::Tensor& preds, std::size_t k);

}  // namespace tapd::evalkit
