#include "tapd/train/checkpoint.hpp"

#include <set>

#include "tapd/error.hpp"
#include "tapd/io/bytes.hpp"
#include "tapd/train/config.hpp"

namespace tapd::train {

using numkit::Tensor;

namespace {

constexpr std::string_view kMagic = "TAPDCKPT";

}  // namespace

std::size_t Checkpoint::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(ckpt.stage);
  w.str(ckpt.model);
  w.str(ckpt.config_json);
  w.u64(ckpt.params.size());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    w.u64(offset);
    offset += t.size();
  }
  w.u64(offset);
  for (const auto& [name, t] : ckpt.params) w.f64s(t.data());

  const auto& o = ckpt.optim;
  w.f64(o.config.lr);
  w.f64(o.config.weight_decay);
  w.f64(o.config.beta1);
  w.f64(o.config.beta2);
  w.f64(o.config.eps);
  w.u64(o.step);
  w.u64(o.m.size());
  for (std::size_t i = 0; i < o.m.size(); ++i) {
    w.u64(o.m[i].size());
    w.f64s(o.m[i]);
    w.f64s(o.v[i]);
  }
  w.u32(io::crc32(w.buffer()));
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() + 8 || std::string_view(reinterpret_cast<const char*>(bytes.data()), kMagic.size()) != kMagic) {
    throw FormatError("checkpoint: bad magic");
  }
  const std::size_t body = bytes.size() - 4;
  io::ByteReader tail(bytes.subspan(body), "checkpoint");
  if (tail.u32() != io::crc32(bytes.first(body))) throw ChecksumError("checkpoint: checksum mismatch");

  io::ByteReader r(bytes.first(body), "checkpoint");
  r.bytes(kMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.stage = r.u32();
  c.model = r.str();
  c.config_json = r.str();
  const std::uint64_t count = r.u64();
  if (count > r.remaining()) throw FormatError("checkpoint: implausible parameter count");
  std::vector<std::pair<std::string, numkit::Shape>> manifest;
  std::uint64_t expected = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: bad rank for " + name);
    numkit::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (r.u64() != expected) throw FormatError("checkpoint: manifest offset mismatch at " + name);
    expected += numkit::shape_size(shape);
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  if (r.u64() != expected || expected > r.remaining() / 8) throw FormatError("checkpoint: payload length mismatch");
  for (auto& [name, shape] : manifest) {
    std::vector<double> data(numkit::shape_size(shape));
    r.f64s(data);
    c.params.emplace_back(std::move(name), Tensor::raw(std::move(shape), std::move(data)));
  }

  auto& o = c.optim;
  o.config.lr = r.f64();
  o.config.weight_decay = r.f64();
  o.config.beta1 = r.f64();
  o.config.beta2 = r.f64();
  o.config.eps = r.f64();
  o.step = r.u64();
  const std::uint64_t slots = r.u64();
  if (slots > r.remaining()) throw FormatError("checkpoint: implausible optimizer slot count");
  o.m.resize(slots);
  o.v.resize(slots);
  for (std::uint64_t i = 0; i < slots; ++i) {
    const std::uint64_t n = r.u64();
    if (n > r.remaining() / 16) throw FormatError("checkpoint: optimizer slot overruns payload");
    o.m[i].resize(n);
    o.v[i].resize(n);
    r.f64s(o.m[i]);
    r.f64s(o.v[i]);
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { io::write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

Checkpoint snapshot(const numkit::ParamStore& store, const numkit::OptimState& optim, std::uint32_t stage, std::string model,
                    std::string config_json) {
  Checkpoint c;
  c.stage = stage;
  c.model = std::move(model);
  c.config_json = std::move(config_json);
  for (std::size_t i = 0; i < store.count(); ++i) c.params.emplace_back(store.at(i).name, store.at(i).value);
  c.optim = optim;
  return c;
}

void restore(numkit::ParamStore& store, const Checkpoint& ckpt) {
  if (ckpt.params.size() != store.count()) {
    throw FormatError("checkpoint: " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                      std::to_string(store.count()));
  }
  std::set<std::string> seen;
  for (const auto& [name, t] : ckpt.params) {
    if (!seen.insert(name).second) throw FormatError("checkpoint: duplicate parameter " + name);
    numkit::Param* p = store.find(name);
    if (!p) throw FormatError("checkpoint: unknown parameter " + name);
    if (p->value.shape() != t.shape()) {
      throw FormatError("checkpoint: shape mismatch for " + name + ": " + numkit::shape_str(t.shape()) + " vs " +
                        numkit::shape_str(p->value.shape()));
    }
    if (!t.all_finite()) throw FormatError("checkpoint: non-finite values in " + name);
    p->value = t;
  }
}

namespace {

Json model_section(const Checkpoint& ckpt, const char* kind) {
  if (ckpt.model != kind) throw FormatError("checkpoint holds a '" + ckpt.model + "' model, expected '" + kind + "'");
  Json doc;
  try {
    doc = Json::parse(ckpt.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("model")) throw FormatError("checkpoint: config has no model section");
  return doc["model"];
}

}  // namespace

oaf::OafParams load_oaf(const Checkpoint& ckpt) {
  oaf::OafConfig cfg;
  from_json_strict(model_section(ckpt, "oaf"), cfg);
  oaf::OafParams params(cfg);
  restore(params.store(), ckpt);
  return params;
}

tbm::TbmParams load_tbm(const Checkpoint& ckpt) {
  tbm::TbmConfig cfg;
  from_json_strict(model_section(ckpt, "tbm"), cfg);
  tbm::TbmParams params(cfg);
  restore(params.store(), ckpt);
  return params;
}

}  // namespace tapd::train
