#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tapd/oaf/oaf.hpp"
#include "tapd/scenegen/scenegen.hpp"
#include "tapd/tbm/tbm.hpp"

namespace tapd::train {

using Json = nlohmann::json;

struct TrainConfig {
  int stage = 1;
  int epochs = 30;
  double lr = 6e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 16;
  std::vector<int> lengths{1, 2, 3, 4};
  std::uint64_t seed = 0;
  bool pkd = true;
  double clip_norm = 5.0;
  // "cosine": lr decays from `lr` towards 0 over the epochs; "constant".
  std::string lr_schedule = "cosine";

  // Throws ConfigError. `max_length` is H.
  void validate(int max_length) const;
  // Adjacent pairs (tau, tau+1) both present in `lengths`.
  std::vector<std::pair<int, int>> pkd_pairs() const;
  // Learning rate used throughout epoch `epoch` (0-based).
  double epoch_lr(int epoch) const;
};

// Strict conversions: unknown or mistyped keys throw ConfigError; missing
// keys keep their defaults.
Json to_json(const scenegen::TimeLayout& layout);
Json to_json(const scenegen::GeneratorConfig& config);
Json to_json(const oaf::OafConfig& config);
Json to_json(const tbm::TbmConfig& config);
Json to_json(const TrainConfig& config);

void from_json_strict(const Json& j, scenegen::TimeLayout& out);
void from_json_strict(const Json& j, scenegen::GeneratorConfig& out);
void from_json_strict(const Json& j, oaf::OafConfig& out);
void from_json_strict(const Json& j, tbm::TbmConfig& out);
void from_json_strict(const Json& j, TrainConfig& out);

// One canonical text encoding: sorted keys, two-space indent.
std::string canonical(const Json& j);

}  // namespace tapd::train
