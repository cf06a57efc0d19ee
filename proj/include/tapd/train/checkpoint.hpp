#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tapd/numkit/optim.hpp"
#include "tapd/numkit/tensor.hpp"
#include "tapd/oaf/oaf.hpp"
#include "tapd/tbm/tbm.hpp"

namespace tapd::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Contents of a "TAPDCKPT" file. `config_json` is the canonical JSON text
/// {"model": ..., "train": ...} of the run that produced the parameters.
struct Checkpoint {
  std::uint32_t stage = 0;
  std::string model;  // "oaf" or "tbm"
  std::string config_json;
  std::vector<std::pair<std::string, numkit::Tensor>> params;  // store order
  numkit::OptimState optim;

  std::size_t scalar_count() const;
};

// Layout: "TAPDCKPT", u32 version, u32 stage, str model, str config, u64
// param count, per param (str name, u32 rank, u64 dims..., u64 offset),
// u64 payload length, f64 payload, optimizer block, u32 CRC32 of all
// preceding bytes.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Parameter values and optimizer moments copied out of a store.
Checkpoint snapshot(const numkit::ParamStore& store, const numkit::OptimState& optim, std::uint32_t stage,
                    std::string model, std::string config_json);

// Copies checkpoint values into a store with the same parameter set.
// Throws FormatError unless the manifest covers every parameter exactly once
// with matching shapes.
void restore(numkit::ParamStore& store, const Checkpoint& ckpt);

// Rebuilds parameters from a checkpoint of the matching model kind.
oaf::OafParams load_oaf(const Checkpoint& ckpt);
tbm::TbmParams load_tbm(const Checkpoint& ckpt);

}  // namespace tapd::train
