#include "tapd/model/encoder.hpp"

#include <cmath>

#include "tapd/error.hpp"

namespace tapd::model {

using numkit::Param;
using numkit::ParamStore;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

Linear make_linear(ParamStore& store, std::mt19937_64& rng, const std::string& name, std::size_t in, std::size_t out,
                   bool bias, double gain) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> w(in * out);
  for (double& x : w) x = u(rng);
  Linear l;
  l.w = &store.add(name + ".w", Tensor({in, out}, std::move(w)));
  if (bias) l.b = &store.add(name + ".b", Tensor::zeros({out}));
  return l;
}

Var apply(Tape& tape, const Linear& layer, Var x) {
  Var y = numkit::matmul(x, tape.param(*layer.w));
  if (layer.b) y = numkit::add(y, tape.param(*layer.b));
  return y;
}

EncoderWeights make_encoder(ParamStore& store, std::mt19937_64& rng, const std::string& prefix, std::size_t hidden,
                            std::size_t norm_entries) {
  if (norm_entries == 0) throw ValueError("encoder needs at least one normalization entry");
  const std::size_t d = hidden;
  EncoderWeights w;
  w.step_embed = make_linear(store, rng, prefix + ".step_embed", kStepFeatures, d, true);
  w.temporal = make_linear(store, rng, prefix + ".temporal", 2 * d + 2 * kStepFeatures + 2, d, true);
  w.agent_q = make_linear(store, rng, prefix + ".agent_attn.q", d, d, false);
  w.agent_k = make_linear(store, rng, prefix + ".agent_attn.k", d, d, false);
  w.agent_v = make_linear(store, rng, prefix + ".agent_attn.v", d, d, false);
  w.agent_o = make_linear(store, rng, prefix + ".agent_attn.o", d, d, false);
  w.map_embed = make_linear(store, rng, prefix + ".map_embed", scenegen::kMapDim, d, true);
  w.map_q = make_linear(store, rng, prefix + ".map_attn.q", d, d, false);
  w.map_k = make_linear(store, rng, prefix + ".map_attn.k", d, d, false);
  w.map_v = make_linear(store, rng, prefix + ".map_attn.v", d, d, false);
  w.map_o = make_linear(store, rng, prefix + ".map_attn.o", d, d, false);
  w.fusion = make_linear(store, rng, prefix + ".fusion", d, d, true);
  // Every length starts from the identity affine map.
  for (std::size_t e = 0; e < norm_entries; ++e) {
    std::array<NormSite, kNormSites> sites;
    for (std::size_t s = 0; s < kNormSites; ++s) {
      const std::string base = prefix + ".norm." + std::to_string(e + 1) + "." + std::to_string(s);
      sites[s].gamma = &store.add(base + ".gamma", Tensor::full({d}, 1.0));
      sites[s].beta = &store.add(base + ".beta", Tensor::zeros({d}));
    }
    w.norms.push_back(sites);
  }
  return w;
}

MapContext encode_map(Tape& tape, const EncoderWeights& w, const ModelInput& input) {
  Var emb = numkit::tanh(apply(tape, w.map_embed, tape.constant(input.map_features)));
  return {apply(tape, w.map_k, emb), apply(tape, w.map_v, emb)};
}

Var encode_scene(Tape& tape, const EncoderWeights& w, const ModelInput& input, std::size_t norm_entry,
                 const MapContext& map, double eps) {
  if (norm_entry >= w.norms.size()) {
    throw ValueError("encoder: normalization entry " + std::to_string(norm_entry) + " out of range (" +
                     std::to_string(w.norms.size()) + " entries)");
  }
  const auto& ln = w.norms[norm_entry];
  auto norm = [&](Var x, std::size_t site) {
    return numkit::layer_norm(x, tape.param(*ln[site].gamma), tape.param(*ln[site].beta), eps);
  };
  const std::size_t n = input.agents, t = input.steps, d = w.hidden();

  Var steps = numkit::tanh(apply(tape, w.step_embed, tape.constant(input.step_features)));
  steps = numkit::reshape(steps, {n, t, d});
  const std::array<Var, 5> pooled_parts{numkit::mean(steps, 1), numkit::max(steps, 1), tape.constant(input.first_step),
                                        tape.constant(input.last_step), tape.constant(input.agent_position)};
  Var h = numkit::tanh(apply(tape, w.temporal, numkit::concat(pooled_parts, 1)));
  h = norm(h, 0);

  Var agent_ctx = numkit::attention(apply(tape, w.agent_q, h), apply(tape, w.agent_k, h), apply(tape, w.agent_v, h));
  h = norm(numkit::add(h, apply(tape, w.agent_o, agent_ctx)), 1);

  Var map_ctx = numkit::attention(apply(tape, w.map_q, h), map.keys, map.values);
  h = norm(numkit::add(h, apply(tape, w.map_o, map_ctx)), 2);

  return numkit::tanh(apply(tape, w.fusion, h));
}

}  // namespace tapd::model
