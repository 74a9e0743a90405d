#pragma once

// LightGCN-style propagation over the bipartite graph and BPR pretraining of
// the user/item embeddings (pipeline stage 1). The propagation rule is
// symmetric degree-normalized neighbor averaging with no transforms, layers
// combined by a uniform mean including layer 0.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glta/adam.hpp"
#include "glta/errors.hpp"
#include "glta/graph.hpp"
#include "glta/rng.hpp"
#include "glta/tensor.hpp"
#include "glta/trainlog.hpp"

namespace glta::cf {

// One propagation hop. Empty neighborhoods sum to the zero vector; the
// normalization term is only evaluated on existing edges, so degree 0 never
// divides by zero.
template <class S>
std::pair<nd::Tensor<S>, nd::Tensor<S>> neighbor_average(nd::Tape<S>* tape,
                                                         const InteractionGraph& g,
                                                         nd::Tensor<S> e_user,
                                                         nd::Tensor<S> e_item) {
  if (e_user.ndim() != 2 || e_item.ndim() != 2 || e_user.shape()[1] != e_item.shape()[1])
    throw DimensionError("neighbor_average: embedding shapes " + nd::shape_str(e_user.shape()) +
                         " and " + nd::shape_str(e_item.shape()));
  if (e_user.shape()[0] != g.num_users || e_item.shape()[0] != g.num_items)
    throw DimensionError("neighbor_average: embedding rows do not match graph size");
  const int64_t d = e_user.shape()[1];
  nd::Tensor<S> out_u = nd::Tensor<S>::zeros({g.num_users, d});
  nd::Tensor<S> out_i = nd::Tensor<S>::zeros({g.num_items, d});
  {
    const auto& iv = e_item.values();
    auto& ov = out_u.values();
    for (int64_t u = 0; u < g.num_users; ++u) {
      const double du = static_cast<double>(g.degree_user(static_cast<int32_t>(u)));
      for (int32_t it : g.user_items[static_cast<size_t>(u)]) {
        const double di = static_cast<double>(g.degree_item(it));
        const S w = static_cast<S>(1.0 / std::sqrt(du * di));
        for (int64_t j = 0; j < d; ++j)
          ov[u * d + j] += w * iv[static_cast<size_t>(it) * d + j];
      }
    }
    const auto& uv = e_user.values();
    auto& oi = out_i.values();
    for (int64_t i = 0; i < g.num_items; ++i) {
      const double di = static_cast<double>(g.degree_item(static_cast<int32_t>(i)));
      for (int32_t us : g.item_users[static_cast<size_t>(i)]) {
        const double du = static_cast<double>(g.degree_user(us));
        const S w = static_cast<S>(1.0 / std::sqrt(du * di));
        for (int64_t j = 0; j < d; ++j)
          oi[i * d + j] += w * uv[static_cast<size_t>(us) * d + j];
      }
    }
  }
  if (nd::detail::track(tape, {e_user.requires_grad(), e_item.requires_grad()})) {
    out_u.set_requires_grad(true);
    out_i.set_requires_grad(true);
    const InteractionGraph* gp = &g;  // graphs outlive tapes by contract
    tape->record([gp, e_user, e_item, out_u, out_i, d]() mutable {
      if (out_u.has_grad() && e_item.requires_grad()) {
        e_item.ensure_grad();
        const auto& gu = out_u.grad();
        auto& gi = e_item.grad();
        for (int64_t u = 0; u < gp->num_users; ++u) {
          const double du = static_cast<double>(gp->degree_user(static_cast<int32_t>(u)));
          for (int32_t it : gp->user_items[static_cast<size_t>(u)]) {
            const double di = static_cast<double>(gp->degree_item(it));
            const S w = static_cast<S>(1.0 / std::sqrt(du * di));
            for (int64_t j = 0; j < d; ++j)
              gi[static_cast<size_t>(it) * d + j] += w * gu[u * d + j];
          }
        }
      }
      if (out_i.has_grad() && e_user.requires_grad()) {
        e_user.ensure_grad();
        const auto& goi = out_i.grad();
        auto& gu = e_user.grad();
        for (int64_t i = 0; i < gp->num_items; ++i) {
          const double di = static_cast<double>(gp->degree_item(static_cast<int32_t>(i)));
          for (int32_t us : gp->item_users[static_cast<size_t>(i)]) {
            const double du = static_cast<double>(gp->degree_user(us));
            const S w = static_cast<S>(1.0 / std::sqrt(du * di));
            for (int64_t j = 0; j < d; ++j)
              gu[static_cast<size_t>(us) * d + j] += w * goi[i * d + j];
          }
        }
      }
    });
  }
  return {out_u, out_i};
}

// Mean of layer outputs 0..layers. Pure function of its inputs.
template <class S>
std::pair<nd::Tensor<S>, nd::Tensor<S>> lightgcn_propagate(nd::Tape<S>* tape,
                                                           const InteractionGraph& g,
                                                           const nd::Tensor<S>& e0_user,
                                                           const nd::Tensor<S>& e0_item,
                                                           int layers) {
  if (layers < 0) throw ContractError("lightgcn_propagate: negative layer count");
  nd::Tensor<S> acc_u = e0_user;
  nd::Tensor<S> acc_i = e0_item;
  nd::Tensor<S> cur_u = e0_user;
  nd::Tensor<S> cur_i = e0_item;
  for (int l = 0; l < layers; ++l) {
    auto [nu, ni] = neighbor_average(tape, g, cur_u, cur_i);
    cur_u = nu;
    cur_i = ni;
    acc_u = nd::add(tape, acc_u, cur_u);
    acc_i = nd::add(tape, acc_i, cur_i);
  }
  const double scale = 1.0 / static_cast<double>(layers + 1);
  return {nd::mul_scalar(tape, acc_u, scale), nd::mul_scalar(tape, acc_i, scale)};
}

// Frozen output of stage 1.
struct GraphEmbeddings {
  nd::Tensor<float> e_user;
  nd::Tensor<float> e_item;
  int64_t dim = 0;
  int64_t layer_count = 0;
  bool frozen = false;

  void freeze() {
    e_user.set_requires_grad(false);
    e_item.set_requires_grad(false);
    e_user.drop_grad();
    e_item.drop_grad();
    frozen = true;
  }

  uint64_t checksum() const {
    uint64_t h = e_user.checksum();
    return fnv1a64_bytes(e_item.values().data(), e_item.values().size() * sizeof(float), h);
  }

  float score(int32_t user, int32_t item) const {
    float s = 0.f;
    for (int64_t j = 0; j < dim; ++j) s += e_user.at(user, j) * e_item.at(item, j);
    return s;
  }
};

struct BprTriple {
  int32_t user, pos, neg;
};

struct BprConfig {
  int64_t d = 64;
  int layers = 2;
  double lr = 1e-3;
  int epochs = 200;
  int neg_samples = 1;
  double l2 = 1e-5;
  uint64_t seed = 42;
};

// Pairwise ranking loss -ln sigma(s+ - s-) averaged over triples, plus L2 on
// the layer-0 rows of the sampled triples.
template <class S>
nd::Tensor<S> bpr_batch_loss(nd::Tape<S>* tape, const InteractionGraph& g,
                             const nd::Tensor<S>& e0_user, const nd::Tensor<S>& e0_item,
                             int layers, const std::vector<BprTriple>& triples, double l2) {
  if (triples.empty()) throw ContractError("bpr_batch_loss: empty batch");
  auto [eu, ei] = lightgcn_propagate(tape, g, e0_user, e0_item, layers);
  std::vector<int32_t> us, ps, ns;
  us.reserve(triples.size());
  ps.reserve(triples.size());
  ns.reserve(triples.size());
  for (const auto& t : triples) {
    us.push_back(t.user);
    ps.push_back(t.pos);
    ns.push_back(t.neg);
  }
  nd::Tensor<S> u_rows = nd::gather_rows(tape, eu, us);
  nd::Tensor<S> p_rows = nd::gather_rows(tape, ei, ps);
  nd::Tensor<S> n_rows = nd::gather_rows(tape, ei, ns);
  nd::Tensor<S> s_pos = nd::sum_rows(tape, nd::mul(tape, u_rows, p_rows));
  nd::Tensor<S> s_neg = nd::sum_rows(tape, nd::mul(tape, u_rows, n_rows));
  nd::Tensor<S> diff = nd::sub(tape, s_pos, s_neg);
  nd::Tensor<S> loss = nd::mean_all(tape, nd::softplus(tape, nd::mul_scalar(tape, diff, -1.0)));
  if (l2 > 0.0) {
    nd::Tensor<S> u0 = nd::gather_rows(tape, e0_user, us);
    nd::Tensor<S> p0 = nd::gather_rows(tape, e0_item, ps);
    nd::Tensor<S> n0 = nd::gather_rows(tape, e0_item, ns);
    nd::Tensor<S> reg = nd::sum_all(
        tape, nd::add(tape, nd::mul(tape, u0, u0),
                      nd::add(tape, nd::mul(tape, p0, p0), nd::mul(tape, n0, n0))));
    loss = nd::add(tape, loss,
                   nd::mul_scalar(tape, reg, l2 / static_cast<double>(triples.size())));
  }
  return loss;
}

// Stage-1 pretraining. Deterministic per seed; the returned embeddings are
// the mean-of-layers propagation at the trained layer-0 embeddings, frozen.
inline GraphEmbeddings bpr_pretrain(const InteractionGraph& g, const BprConfig& cfg,
                                    std::vector<std::string>* warnings = nullptr,
                                    std::vector<TrainRecord>* records = nullptr) {
  if (g.edges.empty()) throw ContractError("bpr_pretrain: graph has no edges");
  Rng init_rng = Rng::derive(cfg.seed, "bpr-init");
  nd::Tensor<float> e0_u = nd::Tensor<float>::randn(init_rng, {g.num_users, cfg.d}, 0.1, true);
  nd::Tensor<float> e0_i = nd::Tensor<float>::randn(init_rng, {g.num_items, cfg.d}, 0.1, true);

  for (int64_t u = 0; u < g.num_users; ++u)
    if (g.degree_user(static_cast<int32_t>(u)) == 0 && warnings)
      warnings->push_back("bpr_pretrain: user " + std::to_string(u) +
                          " has no training edges; skipped");

  nd::Adam<float> opt({cfg.lr});
  opt.add_param("graph.e_user", e0_u);
  opt.add_param("graph.e_item", e0_i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int64_t t0 = steady_now_ms();
    Rng rng = Rng::derive(cfg.seed, "bpr-epoch", static_cast<uint64_t>(epoch));
    std::vector<BprTriple> triples;
    triples.reserve(g.edges.size() * static_cast<size_t>(cfg.neg_samples));
    for (const auto& [u, pos] : g.edges) {
      for (int s = 0; s < cfg.neg_samples; ++s) {
        int32_t neg = -1;
        for (int tries = 0; tries < 200; ++tries) {
          const int32_t cand = static_cast<int32_t>(rng.uniform_int(0, g.num_items - 1));
          if (!g.has_edge(u, cand)) {
            neg = cand;
            break;
          }
        }
        if (neg >= 0) triples.push_back({u, pos, neg});
      }
    }
    if (triples.empty()) continue;
    rng.shuffle(triples);
    nd::Tape<float> tape;
    nd::Tensor<float> loss = bpr_batch_loss(&tape, g, e0_u, e0_i, cfg.layers, triples, cfg.l2);
    tape.backward(loss);
    opt.step();
    tape.clear();
    if (records)
      records->push_back(
          {epoch, static_cast<double>(loss.scalar_value()), steady_now_ms() - t0});
  }

  auto [eu, ei] = lightgcn_propagate<float>(nullptr, g, e0_u, e0_i, cfg.layers);
  GraphEmbeddings out;
  out.e_user = eu;
  out.e_item = ei;
  out.dim = cfg.d;
  out.layer_count = cfg.layers;
  out.freeze();
  for (float x : out.e_user.values())
    if (!std::isfinite(x)) throw NumericError("bpr_pretrain: non-finite user embedding");
  for (float x : out.e_item.values())
    if (!std::isfinite(x)) throw NumericError("bpr_pretrain: non-finite item embedding");
  return out;
}

}  // namespace glta::cf
