#pragma once

#include <array>
#include <cstdint>
#include <exception>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tapd/oaf/oaf.hpp"
#include "tapd/scenegen/scenegen.hpp"
#include "tapd/tbm/tbm.hpp"
#include "tapd/train/config.hpp"

namespace tapd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDependency = 3;
inline constexpr int kExitFormat = 4;
inline constexpr int kExitOther = 1;

struct DataConfig {
  std::size_t scenes = 2000;
  double val_ratio = 0.2;
};

struct EvalConfig {
  std::vector<int> taus{1, 2, 3, 4};
  std::vector<std::size_t> ks{1, 6};
  std::vector<std::string> bundles{"ori", "it", "tapd"};
  bool svg = false;
  std::map<std::string, std::string> models;  // extra direct forecasters, name -> checkpoint
};

/// Effective configuration of one invocation. Every section is optional in
/// the config file; missing keys keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  scenegen::GeneratorConfig generator;
  DataConfig data;
  oaf::OafConfig oaf;
  tbm::TbmConfig tbm;
  std::array<train::TrainConfig, 3> stages;  // index stage - 1
  EvalConfig eval;
  std::map<std::string, std::string> paths;

  // Defaults with every seed derived from `seed`.
  static RunConfig defaults(std::uint64_t seed);
  // Re-derives every seed from `seed`.
  void reseed(std::uint64_t seed);
  // Throws ConfigError.
  void validate() const;
};

// Strict: unknown or mistyped keys throw ConfigError. The document's "seed"
// key, when present, replaces `fallback_seed` before sections are applied.
RunConfig parse_run_config(const train::Json& j, std::uint64_t fallback_seed);
train::Json to_json(const RunConfig& config);

// Global seed fallback from TAPD_SEED; nullopt when unset.
std::optional<std::uint64_t> env_seed();

int exit_code_for(const std::exception& e);

// Runs one command; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tapd::cli
