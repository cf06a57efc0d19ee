#include <doctest.h>

#include <cmath>

#include "tapd/error.hpp"
#include "tapd/io/bytes.hpp"
#include "tapd/scenegen/scenegen.hpp"
#include "tapd/train/checkpoint.hpp"
#include "tapd/train/train.hpp"

using namespace tapd;
using namespace tapd::train;
using numkit::Tape;
using numkit::Tensor;

namespace {

std::vector<scenegen::Scene> scenes(std::size_t n, std::uint64_t seed = 100) {
  return scenegen::generate_scenes(n, seed, scenegen::GeneratorConfig{});
}

oaf::OafConfig small_oaf() {
  oaf::OafConfig c;
  c.hidden = 16;
  c.seed = 2;
  return c;
}

tbm::TbmConfig small_tbm() {
  tbm::TbmConfig c;
  c.hidden = 16;
  c.seed = 3;
  return c;
}

TrainConfig quick(int stage, int epochs) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = epochs;
  c.batch_size = 4;
  c.seed = 11;
  return c;
}

bool same_values(const numkit::ParamStore& a, const numkit::ParamStore& b) {
  if (a.count() != b.count()) return false;
  for (std::size_t i = 0; i < a.count(); ++i)
    if (!(a.at(i).value == b.at(i).value)) return false;
  return true;
}

}  // namespace

TEST_CASE("TrainConfig validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate(4));
  CHECK(c.pkd_pairs().size() == 3);
  c.lengths = {4};
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c.pkd = false;
  CHECK_NOTHROW(c.validate(4));
  c.lengths = {1, 2, 4};
  CHECK(c.pkd_pairs() == std::vector<std::pair<int, int>>{{1, 2}});
  c.lengths = {};
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c.lengths = {0, 1};
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c = TrainConfig{};
  c.stage = 2;
  c.lengths = {4};
  CHECK_THROWS_AS(c.validate(4), ConfigError);
}

TEST_CASE("strict JSON config") {
  TrainConfig c;
  from_json_strict(Json::parse(R"({"epochs": 3, "lengths": [2, 3]})"), c);
  CHECK(c.epochs == 3);
  CHECK(c.lengths == std::vector<int>{2, 3});
  CHECK(c.lr == 6e-4);
  CHECK_THROWS_AS(from_json_strict(Json::parse(R"({"epoch": 3})"), c), ConfigError);
  CHECK_THROWS_AS(from_json_strict(Json::parse(R"({"epochs": "3"})"), c), ConfigError);
  CHECK_THROWS_AS(from_json_strict(Json::parse(R"({"batch_size": -1})"), c), ConfigError);

  oaf::OafConfig o;
  o.hidden = 32;
  oaf::OafConfig back;
  from_json_strict(to_json(o), back);
  CHECK(back.hidden == 32);
  CHECK(canonical(to_json(o)) == canonical(to_json(back)));
  scenegen::GeneratorConfig g;
  g.position_noise = 0.05;
  scenegen::GeneratorConfig gb;
  from_json_strict(to_json(g), gb);
  CHECK(gb.position_noise == 0.05);
  CHECK_THROWS_AS(from_json_strict(Json::parse(R"({"layout": {"H": 4}})"), gb), ConfigError);
}

TEST_CASE("stage 1 scene loss") {
  const auto data = scenes(2);
  oaf::OafParams params(small_oaf());
  const auto prep = model::prepare_scene(data[0], params.config().layout);
  TrainConfig cfg = quick(1, 1);

  SUBCASE("alpha 0 gives the pure prediction loss") {
    Tape tape(false);
    const auto l = stage1_scene_loss(tape, prep, params, cfg, numkit::cosine_alpha(0, 30));
    CHECK(l.l_f.value().item() > 0.0);
    CHECK(l.total.value().item() == doctest::Approx(l.l_reg.value().item() + l.l_cls.value().item()).epsilon(1e-15));
  }
  SUBCASE("single full length has no alignment term") {
    cfg.lengths = {4};
    cfg.pkd = false;
    Tape tape(false);
    const auto l = stage1_scene_loss(tape, prep, params, cfg, 1.0);
    CHECK_FALSE(l.l_f.valid());
    CHECK(l.total.value().item() == l.l_reg.value().item() + l.l_cls.value().item());
  }
}

TEST_CASE("stage 1 training") {
  const auto data = scenes(8);
  SUBCASE("rerun is bit-identical and the loss audit holds") {
    const TrainConfig cfg = quick(1, 3);
    const auto a = stage1_pretrain(cfg, small_oaf(), data);
    const auto b = stage1_pretrain(cfg, small_oaf(), data);
    CHECK(same_values(a.params.store(), b.params.store()));
    REQUIRE(a.log.size() == 3);
    CHECK(a.log[0].alpha == 0.0);
    CHECK(a.log[1].alpha == doctest::Approx(0.25));
    for (const auto& r : a.log) {
      CHECK(std::fabs(r.total - (r.alpha * r.l_f + r.l_reg + r.l_cls)) <= 1e-12);
      CHECK(r.batches == 2);
    }
    CHECK_FALSE(same_values(a.params.store(), oaf::OafParams(small_oaf()).store()));
  }
  SUBCASE("full-length only training leaves short-length norms untouched") {
    TrainConfig cfg = quick(1, 1);
    cfg.lengths = {4};
    cfg.pkd = false;
    const auto r = stage1_pretrain(cfg, small_oaf(), data);
    const oaf::OafParams init(small_oaf());
    const auto& norms = r.params.encoder().norms;
    const auto& fresh = init.encoder().norms;
    for (std::size_t e = 0; e < 3; ++e)
      for (std::size_t s = 0; s < model::kNormSites; ++s) CHECK(norms[e][s].gamma->value == fresh[e][s].gamma->value);
    CHECK_FALSE(norms[3][0].gamma->value == fresh[3][0].gamma->value);
    CHECK(r.log[0].l_f == 0.0);
  }
  SUBCASE("wrong stage is rejected") { CHECK_THROWS_AS(stage1_pretrain(quick(2, 1), small_oaf(), data), ConfigError); }
}

TEST_CASE("stage 2 with a decoder emitting the ground truth has zero regression loss") {
  // Identical agents share one target, which a zero-weight head can emit via its bias.
  scenegen::Scene s = scenes(1, 5)[0];
  for (auto& a : s.agents) a = s.agents[0];
  const tbm::TbmParams params(small_tbm());
  const auto& layout = params.config().layout;
  const auto prep = model::prepare_scene(s, layout);
  const int tau = 3;
  const Tensor gt = tbm::prefix_targets(prep.full_local, layout, tau);
  const std::size_t len = params.prefix_steps(tau), lmax = params.max_prefix();
  for (double& v : params.decoder_prefix.w->value.data()) v = 0.0;
  auto& bias = params.decoder_prefix.b->value;
  for (std::size_t m = 0; m < params.config().modes; ++m) {
    for (std::size_t t = 0; t < len; ++t) {
      double* out = bias.data().data() + (m * lmax + lmax - len + t) * 6;
      const double* g = gt.data().data() + t * 6;
      const double* next = t + 1 < len ? g + 6 : nullptr;
      out[0] = (next ? next[0] : 0.0) - g[0];
      out[1] = (next ? next[1] : 0.0) - g[1];
      for (int c = 2; c < 6; ++c) out[c] = g[c];
    }
  }
  Tape tape(false);
  const std::vector<int> lengths{tau};
  const auto l = tbm::tbm_scene_loss(tape, prep, params, lengths);
  CHECK(l.reg.value().item() < 1e-20);
}

TEST_CASE("stage 2 training lowers the epoch loss") {
  const auto data = scenes(200, 7);
  TrainConfig cfg = quick(2, 10);
  cfg.batch_size = 16;
  tbm::TbmConfig model;
  model.seed = 4;
  const auto r = stage2_train_tbm(cfg, model, data);
  REQUIRE(r.log.size() == 10);
  int rises = 0;
  for (std::size_t e = 1; e < r.log.size(); ++e)
    if (r.log[e].total > r.log[e - 1].total) ++rises;
  CHECK(rises <= 2);
  CHECK(r.log.back().total < r.log.front().total);
  MESSAGE("stage 2 loss " << r.log.front().total << " -> " << r.log.back().total);
}

TEST_CASE("stage 3 freezes the backfilling module") {
  const auto data = scenes(8);
  const auto s1 = stage1_pretrain(quick(1, 1), small_oaf(), data);
  const auto s2 = stage2_train_tbm(quick(2, 1), small_tbm(), data);
  const tbm::TbmParams before = s2.params.clone();

  TrainConfig cfg = quick(3, 2);
  const auto r = stage3_finetune(cfg, s1.params, s2.params, data);
  CHECK(same_values(s2.params.store(), before.store()));
  for (std::size_t i = 0; i < s2.params.store().count(); ++i) CHECK_FALSE(s2.params.store().at(i).has_grad());
  REQUIRE(r.stats.samples_per_length.size() == 4);
  CHECK(r.stats.tbm_calls_per_length[3] == 0);
  std::size_t short_samples = 0, total = 0;
  for (std::size_t t = 0; t < 4; ++t) {
    total += r.stats.samples_per_length[t];
    if (t < 3) short_samples += r.stats.samples_per_length[t];
  }
  CHECK(total == 16);
  CHECK(r.stats.tbm_calls == short_samples);
  CHECK(same_values(s1.params.store(), stage1_pretrain(quick(1, 1), small_oaf(), data).params.store()));
  CHECK_FALSE(same_values(r.params.store(), s1.params.store()));
  for (const auto& rec : r.log) CHECK(rec.total == doctest::Approx(rec.l_reg + rec.l_cls).epsilon(1e-12));

  SUBCASE("probe batch gives no gradient to the backfilling module") {
    Stage3Stats stats;
    oaf::OafParams probe = s1.params.clone();
    Tape tape;
    const auto prep = model::prepare_scene(data[0], probe.config().layout);
    const Tensor hist = stage3_history(data[0], 1, s2.params, stats);
    const auto l = full_length_loss(tape, prep, hist, probe);
    tape.backward(numkit::add(l.reg, l.cls));
    for (std::size_t i = 0; i < s2.params.store().count(); ++i) CHECK_FALSE(s2.params.store().at(i).has_grad());
    CHECK(probe.decoder_traj.w->has_grad());
    CHECK(stats.tbm_calls == 1);
  }
  SUBCASE("full-length samples never call the backfilling module") {
    TrainConfig only_full = quick(3, 1);
    only_full.lengths = {4};
    const auto f = stage3_finetune(only_full, s1.params, s2.params, data);
    CHECK(f.stats.tbm_calls == 0);
  }
  SUBCASE("mismatched layouts are rejected") {
    tbm::TbmConfig other = small_tbm();
    other.layout.intervals = 3;
    const tbm::TbmParams wrong(other);
    CHECK_THROWS_AS(stage3_finetune(cfg, s1.params, wrong, data), ConfigError);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto data = scenes(4);
  const auto s1 = stage1_pretrain(quick(1, 1), small_oaf(), data);
  const Json cfg{{"model", to_json(s1.params.config())}, {"train", to_json(quick(1, 1))}};
  const Checkpoint c = snapshot(s1.params.store(), s1.optim, 1, "oaf", canonical(cfg));
  CHECK(c.params.size() == s1.params.store().count());
  CHECK(c.scalar_count() == s1.params.store().scalar_count());

  const auto bytes = encode_checkpoint(c);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "TAPDCKPT");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.optim.step == s1.optim.step);
  const oaf::OafParams loaded = load_oaf(back);
  CHECK(same_values(loaded.store(), s1.params.store()));
  CHECK_THROWS_AS(load_tbm(back), FormatError);

  SUBCASE("flipped byte") {
    for (std::size_t pos : {std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
      auto bad = bytes;
      bad[pos] ^= 0x01;
      CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    }
  }
  SUBCASE("unknown version") {
    auto bad = bytes;
    bad[8] = 2;
    bad.resize(bad.size() - 4);
    const std::uint32_t crc = io::crc32(bad);
    for (int b = 0; b < 4; ++b) bad.push_back(static_cast<std::uint8_t>(crc >> (8 * b)));
    CHECK_THROWS_WITH_AS(decode_checkpoint(bad), doctest::Contains("version"), FormatError);
  }
  SUBCASE("manifest must match the model") {
    Checkpoint partial = back;
    partial.params.pop_back();
    oaf::OafParams target(small_oaf());
    CHECK_THROWS_AS(restore(target.store(), partial), FormatError);
    Checkpoint dup = back;
    dup.params.back() = dup.params.front();
    CHECK_THROWS_AS(restore(target.store(), dup), FormatError);
  }
}
