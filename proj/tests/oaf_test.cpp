#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tapd/error.hpp"
#include "tapd/oaf/oaf.hpp"
#include "tapd/scenegen/scenegen.hpp"
#include "support/gradcheck.hpp"

using namespace tapd;
using namespace tapd::oaf;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

namespace {

OafConfig small_config(std::size_t modes = 6) {
  OafConfig c;
  c.hidden = 16;
  c.modes = modes;
  c.seed = 5;
  return c;
}

scenegen::Scene test_scene(std::uint64_t seed, std::size_t agents = 3) {
  scenegen::GeneratorConfig g;
  g.min_agents = g.max_agents = agents;
  return scenegen::generate_scene(seed, g);
}

model::ModelInput input_for(const model::PreparedScene& p, int tau) {
  scenegen::TimeLayout layout;
  return model::build_input(model::local_window(p.full_local, layout, tau), p.scene->map, p.frame, layout.observed());
}

Tensor encode_value(const model::PreparedScene& p, const OafParams& params, int tau) {
  Tape tape(false);
  return encode(tape, input_for(p, tau), tau, params).features.value();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void perturb_norms(OafParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (const auto& entry : params.encoder().norms)
    for (const auto& site : entry)
      for (auto* p : {site.gamma, site.beta})
        for (double& v : p->value.data()) v += nd(rng);
}

}  // namespace

TEST_CASE("OafParams layout") {
  OafParams params(small_config());
  CHECK(params.encoder().norms.size() == 4);
  for (const auto& entry : params.encoder().norms)
    for (std::size_t s = 0; s < model::kNormSites; ++s) {
      CHECK(entry[s].gamma->value.shape() == params.encoder().norms[0][s].gamma->value.shape());
      for (double g : entry[s].gamma->value.data()) CHECK(g == 1.0);
      for (double b : entry[s].beta->value.data()) CHECK(b == 0.0);
    }
  OafParams copy = params.clone();
  REQUIRE(copy.store().count() == params.store().count());
  for (std::size_t i = 0; i < copy.store().count(); ++i) {
    CHECK(copy.store().at(i).value == params.store().at(i).value);
    CHECK(&copy.store().at(i) != &params.store().at(i));
  }
  OafConfig bad = small_config();
  bad.modes = 0;
  CHECK_THROWS_AS(OafParams{bad}, ConfigError);
}

TEST_CASE("encode shapes and errors") {
  OafParams params(small_config());
  const auto scene = test_scene(11, 4);
  const auto prep = model::prepare_scene(scene, params.config().layout);
  for (int tau = 1; tau <= 4; ++tau) {
    const Tensor f = encode_value(prep, params, tau);
    CHECK(f.shape() == numkit::Shape{4, 16});
    CHECK(f.all_finite());
  }
  Tape tape(false);
  CHECK_THROWS_AS(encode(tape, input_for(prep, 2), 0, params), ValueError);
  CHECK_THROWS_AS(encode(tape, input_for(prep, 2), 5, params), ValueError);
  CHECK_THROWS_AS(encode(tape, input_for(prep, 2), 3, params), ShapeError);
}

TEST_CASE("swapping LayerNorm entries only affects those lengths") {
  OafParams params(small_config());
  perturb_norms(params, 1);
  const auto scene = test_scene(12, 4);
  const auto prep = model::prepare_scene(scene, params.config().layout);
  std::vector<Tensor> before;
  for (int tau = 1; tau <= 4; ++tau) before.push_back(encode_value(prep, params, tau));

  const auto& norms = params.encoder().norms;
  for (std::size_t s = 0; s < model::kNormSites; ++s) {
    std::swap(norms[0][s].gamma->value, norms[2][s].gamma->value);
    std::swap(norms[0][s].beta->value, norms[2][s].beta->value);
  }
  for (int tau = 1; tau <= 4; ++tau) {
    const double diff = max_abs_diff(before[tau - 1], encode_value(prep, params, tau));
    if (tau == 1 || tau == 3) {
      CHECK(diff > 1e-6);
    } else {
      CHECK(diff == 0.0);
    }
  }
}

TEST_CASE("mutating shared weights changes every length") {
  OafParams params(small_config());
  const auto scene = test_scene(13);
  const auto prep = model::prepare_scene(scene, params.config().layout);
  std::vector<Tensor> before;
  for (int tau = 1; tau <= 4; ++tau) before.push_back(encode_value(prep, params, tau));
  params.encoder().fusion.w->value[0] += 0.5;
  for (int tau = 1; tau <= 4; ++tau) CHECK(max_abs_diff(before[tau - 1], encode_value(prep, params, tau)) > 1e-9);
}

TEST_CASE("encode is permutation-equivariant over agents") {
  OafParams params(small_config());
  perturb_norms(params, 2);
  const auto scene = test_scene(14, 3);
  const std::vector<std::size_t> perm{2, 0, 1};  // new slot j holds old agent perm[j]
  scenegen::Scene permuted = scene;
  for (std::size_t j = 0; j < 3; ++j) permuted.agents[j] = scene.agents[perm[j]];
  for (auto& a : permuted.aoi_indices)
    a = static_cast<std::uint32_t>(std::find(perm.begin(), perm.end(), a) - perm.begin());

  const auto p0 = model::prepare_scene(scene, params.config().layout);
  const auto p1 = model::prepare_scene(permuted, params.config().layout);
  CHECK(p0.frame.ox == p1.frame.ox);
  for (int tau = 1; tau <= 4; ++tau) {
    const Tensor a = encode_value(p0, params, tau);
    const Tensor b = encode_value(p1, params, tau);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 16; ++c) CHECK(b[j * 16 + c] == doctest::Approx(a[perm[j] * 16 + c]).epsilon(1e-12));
  }
}

TEST_CASE("extract_aoi and extract_agents") {
  OafParams params(small_config());
  const auto scene = test_scene(15, 4);
  const auto prep = model::prepare_scene(scene, params.config().layout);
  Tape tape(false);
  const EncodedScene enc = encode(tape, input_for(prep, 4), 4, params);
  const std::vector<std::uint32_t> all{0, 1, 2, 3};
  CHECK(extract_aoi(enc, all).value() == enc.features.value());
  const std::vector<std::uint32_t> one{2};
  const Tensor row = extract_aoi(enc, one).value();
  CHECK(row.shape() == numkit::Shape{1, 16});
  for (std::size_t c = 0; c < 16; ++c) CHECK(row[c] == enc.features.value()[2 * 16 + c]);
  const std::vector<std::uint32_t> first{3, 1};
  const std::vector<std::uint32_t> second{1};
  const EncodedScene gathered{extract_aoi(enc, first), 4};
  const std::vector<std::uint32_t> composed{1};
  CHECK(extract_aoi(gathered, second).value() == extract_aoi(enc, composed).value());
  const std::vector<std::uint32_t> bad{9};
  CHECK_THROWS(extract_aoi(enc, bad));

  CHECK(extract_agents(enc).shape() == numkit::Shape{4, 16});
  Tape tape2(false);
  CHECK(extract_agents(encode(tape2, input_for(prep, 4), 4, params)).value() == enc.features.value());
}

TEST_CASE("decode") {
  OafParams params(small_config());
  Tape tape(false);
  const Tensor feats = Tensor::full({2, 16}, 0.3);
  const ModePrediction a = decode(tape, tape.constant(feats), params);
  CHECK(a.trajectories.shape() == numkit::Shape{2, 6, 30, 2});
  CHECK(a.logits.shape() == numkit::Shape{2, 6});
  CHECK_THROWS_AS(decode(tape, tape.constant(Tensor::zeros({2, 8})), params), ShapeError);

  SUBCASE("length-blind") {
    // Same features reached at different lengths decode identically.
    const ModePrediction b = decode(tape, tape.constant(feats), params);
    CHECK(a.trajectories.value() == b.trajectories.value());
    CHECK(a.logits.value() == b.logits.value());
  }
  SUBCASE("zero trajectory head gives zero offsets") {
    for (double& v : params.decoder_traj.w->value.data()) v = 0.0;
    for (double& v : params.decoder_traj.b->value.data()) v = 0.0;
    const ModePrediction z = decode(tape, tape.constant(feats), params);
    for (double v : z.trajectories.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("trajectories are cumulative displacements") {
    for (double& v : params.decoder_traj.w->value.data()) v = 0.0;
    for (double& v : params.decoder_traj.b->value.data()) v = 0.1;
    const ModePrediction z = decode(tape, tape.constant(feats), params);
    for (std::size_t t = 0; t < 30; ++t) CHECK(z.trajectories.value()[t * 2] == doctest::Approx(0.1 * static_cast<double>(t + 1)));
  }
}

TEST_CASE("pkd_loss") {
  Tape tape;
  SUBCASE("hand-computed H=3") {
    // |1-2|,|2-4| -> 1.5 ; |2-3|,|4-3| -> 1.0 ; average 1.25
    const std::vector<Var> f{tape.constant(Tensor({2, 1}, {1, 2})), tape.constant(Tensor({2, 1}, {2, 4})),
                             tape.constant(Tensor({2, 1}, {3, 3}))};
    CHECK(pkd_loss(f).value().item() == doctest::Approx(1.25).epsilon(1e-15));
  }
  SUBCASE("identical features give zero") {
    const Var x = tape.constant(Tensor({2, 2}, {0.1, -3, 4, 2}));
    const std::vector<Var> f{x, x, x, x};
    CHECK(pkd_loss(f).value().item() == 0.0);
  }
  SUBCASE("errors") {
    const std::vector<Var> one{tape.constant(Tensor::zeros({2, 2}))};
    CHECK_THROWS_AS(pkd_loss(one), ValueError);
    const std::vector<Var> mixed{tape.constant(Tensor::zeros({2, 2})), tape.constant(Tensor::zeros({3, 2}))};
    CHECK_THROWS_AS(pkd_loss(mixed), ShapeError);
  }
}

TEST_CASE("pkd gradient stops at the teacher") {
  OafParams params(small_config());
  perturb_norms(params, 3);
  const auto scene = test_scene(16, 4);
  const auto prep = model::prepare_scene(scene, params.config().layout);
  Tape tape;
  const std::vector<int> lengths{1, 2, 3, 4};
  const auto outs = forward_all_lengths(tape, prep, params, lengths);
  std::vector<Var> feats;
  for (const auto& o : outs) feats.push_back(o.agent_features);
  const Var loss = pkd_loss(feats);
  CHECK(loss.value().item() > 0.0);
  tape.backward(loss);
  // LN[H] only appears on the tau=H branch, which is always the teacher.
  const auto& norms = params.encoder().norms;
  for (std::size_t s = 0; s < model::kNormSites; ++s) {
    for (double g : norms[3][s].gamma->grad) CHECK(g == 0.0);
    for (double g : norms[3][s].beta->grad) CHECK(g == 0.0);
  }
  double student = 0.0;
  for (double g : norms[0][0].gamma->grad) student += std::fabs(g);
  CHECK(student > 0.0);
  // Decoder is unused by the alignment loss.
  for (double g : params.decoder_traj.w->grad) CHECK(g == 0.0);
}

TEST_CASE("winner-take-all prediction loss") {
  SUBCASE("brute-force argmin of FDE with K=2") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t a = 3, k = 2, t = 4;
      std::vector<double> tr(a * k * t * 2), gt(a * t * 2);
      for (double& v : tr) v = nd(rng);
      for (double& v : gt) v = nd(rng);
      const Tensor traj({a, k, t, 2}, tr), y({a, t, 2}, gt);
      const auto w = winner_modes(traj, y);
      for (std::size_t i = 0; i < a; ++i) {
        double best = 1e300;
        std::size_t arg = 0;
        for (std::size_t m = 0; m < k; ++m) {
          const double dx = tr[((i * k + m) * t + t - 1) * 2] - gt[(i * t + t - 1) * 2];
          const double dy = tr[((i * k + m) * t + t - 1) * 2 + 1] - gt[(i * t + t - 1) * 2 + 1];
          const double fde = std::sqrt(dx * dx + dy * dy);
          if (fde < best) {
            best = fde;
            arg = m;
          }
        }
        CHECK(w[i] == arg);
      }
    }
  }
  SUBCASE("ties go to the lowest index") {
    const Tensor traj({1, 3, 1, 2}, {1, 0, -1, 0, 1, 0});
    CHECK(winner_modes(traj, Tensor({1, 1, 2}, {0, 0}))[0] == 0);
  }
  SUBCASE("exact mode gives zero regression, K=1 gives zero classification") {
    Tape tape;
    const Tensor y({1, 3, 2}, {1, 0, 2, 0, 3, 1});
    const Var traj = tape.constant(Tensor({1, 2, 3, 2}, {0, 0, 0, 0, 0, 0, 1, 0, 2, 0, 3, 1}));
    const auto l = prediction_loss({traj, tape.constant(Tensor({1, 2}, {0.0, 0.0}))}, y);
    CHECK(l.winners[0] == 1);
    CHECK(l.reg.value().item() == 0.0);
    CHECK(l.cls.value().item() == doctest::Approx(std::log(2.0)));

    const Var single = tape.constant(Tensor({1, 1, 3, 2}, {0, 0, 0, 0, 0, 0}));
    const auto l1 = prediction_loss({single, tape.constant(Tensor({1, 1}, {0.7}))}, y);
    CHECK(l1.cls.value().item() == 0.0);
    CHECK(l1.reg.value().item() > 0.0);
  }
  SUBCASE("shape mismatch") {
    Tape tape;
    const Var traj = tape.constant(Tensor::zeros({1, 2, 3, 2}));
    CHECK_THROWS_AS(prediction_loss({traj, tape.constant(Tensor::zeros({1, 2}))}, Tensor::zeros({1, 4, 2})), ShapeError);
  }
}

TEST_CASE("forward_all_lengths matches independent calls") {
  OafParams params(small_config());
  perturb_norms(params, 4);
  const auto scene = test_scene(17, 5);
  const auto prep = model::prepare_scene(scene, params.config().layout);
  Tape tape(false);
  const std::vector<int> lengths{1, 2, 3, 4};
  const auto outs = forward_all_lengths(tape, prep, params, lengths);
  REQUIRE(outs.size() == 4);
  for (const auto& o : outs) {
    Tape solo(false);
    const EncodedScene enc = encode(solo, input_for(prep, o.tau), o.tau, params);
    const ModePrediction pred = decode(solo, extract_aoi(enc, scene.aoi_indices), params);
    CHECK(max_abs_diff(o.agent_features.value(), enc.features.value()) == 0.0);
    CHECK(max_abs_diff(o.prediction.trajectories.value(), pred.trajectories.value()) == 0.0);
    CHECK(max_abs_diff(o.prediction.logits.value(), pred.logits.value()) == 0.0);
  }
  const std::vector<int> only_h{4};
  CHECK(forward_all_lengths(tape, prep, params, only_h).size() == 1);
  CHECK_THROWS_AS(forward_all_lengths(tape, prep, params, std::vector<int>{}), ValueError);
  CHECK(prep.targets.shape() == numkit::Shape{scene.aoi_indices.size(), 30, 2});
}

TEST_CASE("full forecaster gradients vs finite differences") {
  OafParams params(small_config());
  perturb_norms(params, 6);
  const auto scene = test_scene(18, 4);
  const auto prep = model::prepare_scene(scene, params.config().layout);
  const std::vector<int> lengths{1, 2, 3, 4};

  // Finite differences also move a detached teacher, so the alignment term
  // is checked against teachers frozen at their current values.
  std::vector<Tensor> teachers;
  {
    Tape tape(false);
    for (const auto& o : forward_all_lengths(tape, prep, params, lengths)) teachers.push_back(o.agent_features.value());
  }
  const auto loss = [&](Tape& tape) {
    const auto outs = forward_all_lengths(tape, prep, params, lengths);
    Var total;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const auto l = prediction_loss(outs[i].prediction, prep.targets);
      Var term = numkit::add(l.reg, l.cls);
      if (i + 1 < outs.size()) term = numkit::add(term, numkit::scale(numkit::l1_mean(outs[i].agent_features, tape.constant(teachers[i + 1])), 0.5));
      total = total.valid() ? numkit::add(total, term) : term;
    }
    return total;
  };
  const double err = tapd::testing::max_param_grad_error(params.store(), loss, 60, 21);
  MESSAGE("forecaster max relative gradient error " << err);
  CHECK(err < 1e-4);
}
