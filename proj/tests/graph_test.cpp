#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "glta/graph.hpp"
#include "glta/lightgcn.hpp"
#include "testutil.hpp"

using glta::ContractError;
using glta::InteractionGraph;
using glta::Rng;
using glta::nd::Tensor;
using testutil::DTape;
using testutil::DTensor;

using Edge = std::pair<int32_t, int32_t>;

// Dense oracle: stack users and items into one node set, form the symmetric
// degree-normalized adjacency, and iterate matrix powers; layer mean at the
// end. Degree-0 nodes get a zero normalization factor.
static std::pair<std::vector<double>, std::vector<double>> propagate_oracle(
    const InteractionGraph& g, const std::vector<double>& e0u, const std::vector<double>& e0i,
    int64_t d, int layers) {
  const int64_t n = g.num_users + g.num_items;
  std::vector<double> norm(static_cast<size_t>(n), 0.0);
  for (int64_t u = 0; u < g.num_users; ++u) {
    const auto deg = static_cast<double>(g.degree_user(static_cast<int32_t>(u)));
    norm[u] = deg > 0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  for (int64_t i = 0; i < g.num_items; ++i) {
    const auto deg = static_cast<double>(g.degree_item(static_cast<int32_t>(i)));
    norm[g.num_users + i] = deg > 0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  std::vector<std::vector<double>> adj(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(n), 0.0));
  for (const auto& [u, it] : g.edges) {
    const double w = norm[u] * norm[g.num_users + it];
    adj[u][g.num_users + it] = w;
    adj[g.num_users + it][u] = w;
  }
  std::vector<double> cur(static_cast<size_t>(n * d), 0.0);
  for (int64_t u = 0; u < g.num_users; ++u)
    for (int64_t j = 0; j < d; ++j) cur[u * d + j] = e0u[u * d + j];
  for (int64_t i = 0; i < g.num_items; ++i)
    for (int64_t j = 0; j < d; ++j) cur[(g.num_users + i) * d + j] = e0i[i * d + j];
  std::vector<double> acc = cur;
  for (int l = 0; l < layers; ++l) {
    std::vector<double> next(static_cast<size_t>(n * d), 0.0);
    for (int64_t r = 0; r < n; ++r)
      for (int64_t c = 0; c < n; ++c) {
        if (adj[r][c] == 0.0) continue;
        for (int64_t j = 0; j < d; ++j) next[r * d + j] += adj[r][c] * cur[c * d + j];
      }
    cur = next;
    for (size_t idx = 0; idx < acc.size(); ++idx) acc[idx] += cur[idx];
  }
  for (double& x : acc) x /= static_cast<double>(layers + 1);
  std::vector<double> out_u(acc.begin(), acc.begin() + g.num_users * d);
  std::vector<double> out_i(acc.begin() + g.num_users * d, acc.end());
  return {out_u, out_i};
}

TEST(Graph, BuildValidatesIndicesAndDuplicates) {
  EXPECT_THROW(InteractionGraph::build(2, 2, {{0, 5}}), ContractError);
  EXPECT_THROW(InteractionGraph::build(2, 2, {{3, 0}}), ContractError);
  EXPECT_THROW(InteractionGraph::build(2, 2, {{0, 1}, {0, 1}}), ContractError);
  InteractionGraph g = InteractionGraph::build(2, 3, {{0, 0}, {0, 2}, {1, 1}});
  EXPECT_EQ(g.degree_user(0), 2);
  EXPECT_EQ(g.degree_item(1), 1);
  EXPECT_TRUE(g.has_edge(0, 2));
  EXPECT_FALSE(g.has_edge(1, 2));
}

TEST(Propagate, ZeroLayersReturnsInputExactly) {
  InteractionGraph g = InteractionGraph::build(2, 2, {{0, 0}, {1, 1}});
  Rng rng(3);
  auto e0u = Tensor<float>::randn(rng, {2, 4}, 1.0);
  auto e0i = Tensor<float>::randn(rng, {2, 4}, 1.0);
  auto [eu, ei] = glta::cf::lightgcn_propagate<float>(nullptr, g, e0u, e0i, 0);
  EXPECT_EQ(eu.values(), e0u.values());
  EXPECT_EQ(ei.values(), e0i.values());
}

TEST(Propagate, IsolatedNodeDecaysToScaledInput) {
  // User 1 has no edges: every propagated layer is zero for it, so the layer
  // mean is e0 / (layers + 1).
  InteractionGraph g = InteractionGraph::build(2, 1, {{0, 0}});
  auto e0u = Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f, 6.f});
  auto e0i = Tensor<float>::from({1, 2}, {4.f, 5.f});
  const int layers = 2;
  auto [eu, ei] = glta::cf::lightgcn_propagate<float>(nullptr, g, e0u, e0i, layers);
  EXPECT_FLOAT_EQ(eu.at(1, 0), 3.f / 3.f);
  EXPECT_FLOAT_EQ(eu.at(1, 1), 6.f / 3.f);
}

TEST(Propagate, MatchesDenseMatrixPowerOracleToyCase) {
  InteractionGraph g = InteractionGraph::build(2, 2, {{0, 0}, {0, 1}, {1, 1}});
  Rng rng(5);
  auto e0u = DTensor::randn(rng, {2, 2}, 1.0);
  auto e0i = DTensor::randn(rng, {2, 2}, 1.0);
  auto [eu, ei] = glta::cf::lightgcn_propagate<double>(nullptr, g, e0u, e0i, 2);
  auto [ou, oi] = propagate_oracle(g, e0u.values(), e0i.values(), 2, 2);
  for (size_t i = 0; i < ou.size(); ++i) EXPECT_NEAR(eu.values()[i], ou[i], 1e-6);
  for (size_t i = 0; i < oi.size(); ++i) EXPECT_NEAR(ei.values()[i], oi[i], 1e-6);
}

TEST(Propagate, MatchesOracleOnRandomGraphs) {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t users = 2 + rng.uniform_int(0, 8);
    const int64_t items = 2 + rng.uniform_int(0, 8);
    std::vector<Edge> edges;
    for (int32_t u = 0; u < users; ++u)
      for (int32_t i = 0; i < items; ++i)
        if (rng.uniform() < 0.35) edges.emplace_back(u, i);
    InteractionGraph g = InteractionGraph::build(users, items, edges);
    const int64_t d = 3;
    const int layers = 1 + static_cast<int>(rng.uniform_int(0, 2));
    auto e0u = DTensor::randn(rng, {users, d}, 1.0);
    auto e0i = DTensor::randn(rng, {items, d}, 1.0);
    auto [eu, ei] = glta::cf::lightgcn_propagate<double>(nullptr, g, e0u, e0i, layers);
    auto [ou, oi] = propagate_oracle(g, e0u.values(), e0i.values(), d, layers);
    double worst = 0.0;
    for (size_t i = 0; i < ou.size(); ++i)
      worst = std::max(worst, std::fabs(eu.values()[i] - ou[i]));
    for (size_t i = 0; i < oi.size(); ++i)
      worst = std::max(worst, std::fabs(ei.values()[i] - oi[i]));
    EXPECT_LT(worst, 1e-6) << "trial " << trial;
  }
}

TEST(Propagate, LinearInEmbeddings) {
  InteractionGraph g = InteractionGraph::build(3, 3, {{0, 0}, {1, 1}, {2, 2}, {0, 1}});
  Rng rng(23);
  auto e0u = Tensor<float>::randn(rng, {3, 4}, 1.0);
  auto e0i = Tensor<float>::randn(rng, {3, 4}, 1.0);
  const float alpha = 2.5f;
  auto scaled_u = e0u.clone();
  auto scaled_i = e0i.clone();
  for (auto& x : scaled_u.values()) x *= alpha;
  for (auto& x : scaled_i.values()) x *= alpha;
  auto [eu, ei] = glta::cf::lightgcn_propagate<float>(nullptr, g, e0u, e0i, 2);
  auto [su, si] = glta::cf::lightgcn_propagate<float>(nullptr, g, scaled_u, scaled_i, 2);
  for (size_t i = 0; i < eu.values().size(); ++i)
    EXPECT_NEAR(su.values()[i], alpha * eu.values()[i], 1e-4);
  for (size_t i = 0; i < ei.values().size(); ++i)
    EXPECT_NEAR(si.values()[i], alpha * ei.values()[i], 1e-4);
}

TEST(Propagate, PermutationEquivariant) {
  // Relabeling users/items permutes output rows identically.
  const std::vector<Edge> edges = {{0, 0}, {0, 2}, {1, 1}, {2, 0}, {2, 2}};
  InteractionGraph g = InteractionGraph::build(3, 3, edges);
  const std::vector<int32_t> uperm = {2, 0, 1};  // new index of old user u
  const std::vector<int32_t> iperm = {1, 2, 0};
  std::vector<Edge> pedges;
  for (const auto& [u, i] : edges) pedges.emplace_back(uperm[u], iperm[i]);
  InteractionGraph pg = InteractionGraph::build(3, 3, pedges);

  Rng rng(31);
  auto e0u = Tensor<float>::randn(rng, {3, 2}, 1.0);
  auto e0i = Tensor<float>::randn(rng, {3, 2}, 1.0);
  auto pe0u = Tensor<float>::zeros({3, 2});
  auto pe0i = Tensor<float>::zeros({3, 2});
  for (int u = 0; u < 3; ++u)
    for (int j = 0; j < 2; ++j) pe0u.at(uperm[u], j) = e0u.at(u, j);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) pe0i.at(iperm[i], j) = e0i.at(i, j);

  auto [eu, ei] = glta::cf::lightgcn_propagate<float>(nullptr, g, e0u, e0i, 2);
  auto [pu, pi] = glta::cf::lightgcn_propagate<float>(nullptr, pg, pe0u, pe0i, 2);
  for (int u = 0; u < 3; ++u)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(pu.at(uperm[u], j), eu.at(u, j), 1e-6);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(pi.at(iperm[i], j), ei.at(i, j), 1e-6);
}

TEST(Propagate, GradientsMatchFiniteDifferences) {
  InteractionGraph g = InteractionGraph::build(3, 4, {{0, 0}, {0, 3}, {1, 1}, {2, 2}, {2, 0}});
  Rng rng(41);
  DTensor e0u = DTensor::randn(rng, {3, 2}, 1.0);
  DTensor e0i = DTensor::randn(rng, {4, 2}, 1.0);
  auto build = [&](DTape* tape) {
    auto [eu, ei] = glta::cf::lightgcn_propagate(tape, g, e0u, e0i, 2);
    auto joined = glta::nd::sum_all(tape, glta::nd::mul(tape, eu, eu));
    return glta::nd::add(tape, joined, glta::nd::sum_all(tape, glta::nd::mul(tape, ei, ei)));
  };
  EXPECT_LT(testutil::max_grad_rel_err(build, {e0u, e0i}), 1e-4);
}

TEST(Bpr, AllEqualScoresGiveLnTwo) {
  InteractionGraph g = InteractionGraph::build(2, 3, {{0, 0}, {0, 1}, {1, 2}});
  auto e0u = Tensor<float>::zeros({2, 4}, true);
  auto e0i = Tensor<float>::zeros({3, 4}, true);
  glta::nd::Tape<float> tape;
  auto loss = glta::cf::bpr_batch_loss(&tape, g, e0u, e0i, 2,
                                       {{0, 0, 2}, {0, 1, 2}, {1, 2, 0}}, 0.0);
  EXPECT_NEAR(loss.scalar_value(), std::log(2.0), 1e-6);
}

TEST(Bpr, PlantedBlocksSeparateScores) {
  // 10x10 two-block graph: users 0-4 interact with items 0-4, users 5-9 with
  // items 5-9, plus one cross edge of noise.
  std::vector<Edge> edges;
  for (int32_t u = 0; u < 10; ++u)
    for (int32_t i = 0; i < 10; ++i)
      if ((u < 5) == (i < 5) && (u + i) % 2 == 0) edges.emplace_back(u, i);
  edges.emplace_back(0, 7);
  InteractionGraph g = InteractionGraph::build(10, 10, edges);

  glta::cf::BprConfig cfg;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.lr = 0.05;
  cfg.epochs = 120;
  cfg.seed = 9;
  glta::cf::GraphEmbeddings emb = glta::cf::bpr_pretrain(g, cfg);

  // Brute-force score comparison over all pairs.
  double pos_sum = 0.0, neg_sum = 0.0;
  int64_t pos_n = 0, neg_n = 0;
  for (int32_t u = 0; u < 10; ++u)
    for (int32_t i = 0; i < 10; ++i) {
      const double s = emb.score(u, i);
      if (g.has_edge(u, i)) {
        pos_sum += s;
        ++pos_n;
      } else {
        neg_sum += s;
        ++neg_n;
      }
    }
  EXPECT_GT(pos_sum / pos_n, neg_sum / neg_n);
}

TEST(Bpr, DeterministicPerSeed) {
  std::vector<Edge> edges;
  for (int32_t u = 0; u < 6; ++u)
    for (int32_t i = 0; i < 6; ++i)
      if ((u + 2 * i) % 3 == 0) edges.emplace_back(u, i);
  InteractionGraph g = InteractionGraph::build(6, 6, edges);
  glta::cf::BprConfig cfg;
  cfg.d = 4;
  cfg.epochs = 20;
  cfg.seed = 77;
  auto a = glta::cf::bpr_pretrain(g, cfg);
  auto b = glta::cf::bpr_pretrain(g, cfg);
  EXPECT_EQ(a.e_user.values(), b.e_user.values());
  EXPECT_EQ(a.e_item.values(), b.e_item.values());
  EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(Bpr, ZeroDegreeUserWarned) {
  InteractionGraph g = InteractionGraph::build(3, 2, {{0, 0}, {1, 1}});
  glta::cf::BprConfig cfg;
  cfg.d = 4;
  cfg.epochs = 2;
  std::vector<std::string> warnings;
  glta::cf::bpr_pretrain(g, cfg, &warnings);
  bool found = false;
  for (const auto& w : warnings)
    if (w.find("user 2") != std::string::npos) found = true;
  EXPECT_TRUE(found);
}

TEST(Embeddings, FrozenAfterPretraining) {
  InteractionGraph g = InteractionGraph::build(2, 2, {{0, 0}, {1, 1}});
  glta::cf::BprConfig cfg;
  cfg.d = 4;
  cfg.epochs = 3;
  auto emb = glta::cf::bpr_pretrain(g, cfg);
  EXPECT_TRUE(emb.frozen);
  EXPECT_FALSE(emb.e_user.requires_grad());
  EXPECT_FALSE(emb.e_item.requires_grad());
}
