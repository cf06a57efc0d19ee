#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tapd/scenegen/scene.hpp"

namespace tapd::scenegen {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetHeader {
  TimeLayout layout;
  std::uint32_t state_dim = kStateDim;
  std::uint32_t map_dim = kMapDim;
  bool reconstructed = false;  // histories completed by backfilling

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Scene> scenes;
};

// "TAPD" v1: magic, version, global header, record count, then per scene
// a u64 payload length, the payload, and the payload's CRC32.
std::vector<std::uint8_t> encode_dataset(const DatasetHeader& header, std::span<const Scene> scenes);
// Throws FormatError (ChecksumError names the record index).
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const std::string& path, const DatasetHeader& header, std::span<const Scene> scenes);
Dataset read_dataset(const std::string& path);

}  // namespace tapd::scenegen
