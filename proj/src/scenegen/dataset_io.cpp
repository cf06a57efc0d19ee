#include "tapd/scenegen/dataset_io.hpp"

#include <cstring>

#include "tapd/error.hpp"
#include "tapd/io/bytes.hpp"

namespace tapd::scenegen {

namespace {

constexpr char kMagic[4] = {'T', 'A', 'P', 'D'};

std::vector<std::uint8_t> encode_scene(const Scene& s, const DatasetHeader& h) {
  io::ByteWriter w;
  w.u64(s.id);
  w.u64(s.seed);
  w.u32(static_cast<std::uint32_t>(s.agents.size()));
  w.u32(static_cast<std::uint32_t>(s.aoi_indices.size()));
  w.u32(static_cast<std::uint32_t>(s.map.polylines));
  w.u32(static_cast<std::uint32_t>(s.map.segments));
  for (auto i : s.aoi_indices) w.u32(i);
  for (const auto& a : s.agents) {
    w.u32(static_cast<std::uint32_t>(a.kind));
    w.u32(a.is_aoi ? 1 : 0);
    if (a.states.size() != h.layout.total() * h.state_dim) throw ValueError("dataset: agent step count does not match header");
    w.f64s(a.states);
  }
  w.f64s(s.map.data);
  return w.take();
}

Scene decode_scene(std::span<const std::uint8_t> payload, const DatasetHeader& h, std::size_t index) {
  io::ByteReader r(payload, "dataset record " + std::to_string(index));
  Scene s;
  s.id = r.u64();
  s.seed = r.u64();
  const std::uint32_t n = r.u32();
  const std::uint32_t n_aoi = r.u32();
  s.map.polylines = r.u32();
  s.map.segments = r.u32();
  if (n_aoi > n) throw FormatError("dataset record " + std::to_string(index) + ": more AOIs than agents");
  for (std::uint32_t i = 0; i < n_aoi; ++i) s.aoi_indices.push_back(r.u32());
  const std::size_t per_agent = h.layout.total() * h.state_dim;
  for (std::uint32_t i = 0; i < n; ++i) {
    AgentTrack a;
    const std::uint32_t kind = r.u32();
    if (kind > 3) throw FormatError("dataset record " + std::to_string(index) + ": unknown agent kind");
    a.kind = static_cast<AgentKind>(kind);
    a.is_aoi = r.u32() != 0;
    a.states.resize(per_agent);
    r.f64s(a.states);
    s.agents.push_back(std::move(a));
  }
  s.map.data.resize(s.map.polylines * s.map.segments * h.map_dim);
  r.f64s(s.map.data);
  if (!r.done()) throw FormatError("dataset record " + std::to_string(index) + ": trailing bytes");
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const DatasetHeader& header, std::span<const Scene> scenes) {
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(header.layout.delta_t);
  w.u32(header.layout.intervals);
  w.u32(header.layout.future);
  w.u32(header.state_dim);
  w.u32(header.map_dim);
  w.u32(header.reconstructed ? 1u : 0u);
  w.u64(scenes.size());
  for (const Scene& s : scenes) {
    const auto payload = encode_scene(s, header);
    w.u64(payload.size());
    w.bytes(payload);
    w.u32(io::crc32(payload));
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "dataset");
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("dataset: bad magic (not a TAPD file)");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kDatasetVersion) + ")");
  }
  Dataset d;
  d.header.layout.delta_t = r.u32();
  d.header.layout.intervals = r.u32();
  d.header.layout.future = r.u32();
  d.header.state_dim = r.u32();
  d.header.map_dim = r.u32();
  d.header.reconstructed = (r.u32() & 1u) != 0;
  if (d.header.state_dim != kStateDim || d.header.map_dim != kMapDim) {
    throw FormatError("dataset: unsupported feature widths C_a=" + std::to_string(d.header.state_dim) +
                      " C_m=" + std::to_string(d.header.map_dim));
  }
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t len = r.u64();
    const auto payload = r.bytes(len);
    const std::uint32_t crc = r.u32();
    if (io::crc32(payload) != crc) throw ChecksumError("dataset: checksum mismatch in record " + std::to_string(i));
    d.scenes.push_back(decode_scene(payload, d.header, i));
  }
  if (!r.done()) throw FormatError("dataset: trailing bytes after last record");
  return d;
}

void write_dataset(const std::string& path, const DatasetHeader& header, std::span<const Scene> scenes) {
  for (const Scene& s : scenes) validate_scene(s, header.layout);
  io::write_file(path, encode_dataset(header, scenes));
}

Dataset read_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace tapd::scenegen
