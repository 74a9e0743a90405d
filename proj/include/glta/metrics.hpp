#pragma once

// Per-user dataset splitting and top-k ranking metrics. Evaluation ranks each
// test user against all items outside their training interactions.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "glta/errors.hpp"
#include "glta/graph.hpp"
#include "glta/rng.hpp"

namespace glta::eval {

struct EvalSplit {
  std::vector<std::pair<int32_t, int32_t>> train_edges;
  std::vector<std::pair<int32_t, int32_t>> test_edges;
  std::vector<std::vector<int32_t>> user_train;  // sorted per user
  std::vector<std::vector<int32_t>> user_test;   // sorted per user
  double ratio = 0.0;
  uint64_t seed = 0;
  int64_t users_excluded = 0;  // users with no valid train/test division
};

// Per-user random split at the given ratio. Users that cannot satisfy the
// >=1 train edge / >=1 test edge invariant keep all edges in train and are
// excluded from evaluation (counted).
inline EvalSplit split_dataset(const InteractionGraph& g, double ratio, uint64_t seed) {
  if (ratio <= 0.0 || ratio > 1.0)
    throw ConfigError("split_dataset: ratio must be in (0, 1], got " + std::to_string(ratio));
  EvalSplit s;
  s.ratio = ratio;
  s.seed = seed;
  s.user_train.resize(static_cast<size_t>(g.num_users));
  s.user_test.resize(static_cast<size_t>(g.num_users));
  for (int64_t u = 0; u < g.num_users; ++u) {
    std::vector<int32_t> items = g.user_items[static_cast<size_t>(u)];
    if (items.empty()) continue;
    const auto n = static_cast<int64_t>(items.size());
    const auto n_train = static_cast<int64_t>(std::floor(ratio * static_cast<double>(n)));
    if (n_train < 1 || n_train >= n) {
      s.user_train[static_cast<size_t>(u)] = items;
      ++s.users_excluded;
    } else {
      Rng rng = Rng::derive(seed, "split", static_cast<uint64_t>(u));
      rng.shuffle(items);
      std::vector<int32_t> train(items.begin(), items.begin() + n_train);
      std::vector<int32_t> test(items.begin() + n_train, items.end());
      std::sort(train.begin(), train.end());
      std::sort(test.begin(), test.end());
      s.user_train[static_cast<size_t>(u)] = std::move(train);
      s.user_test[static_cast<size_t>(u)] = std::move(test);
    }
    for (int32_t i : s.user_train[static_cast<size_t>(u)])
      s.train_edges.emplace_back(static_cast<int32_t>(u), i);
    for (int32_t i : s.user_test[static_cast<size_t>(u)])
      s.test_edges.emplace_back(static_cast<int32_t>(u), i);
  }
  return s;
}

inline double precision_at_k(const std::vector<int32_t>& ranked,
                             const std::unordered_set<int32_t>& relevant, int k) {
  if (k < 1) throw ContractError("precision_at_k: k must be positive");
  int hits = 0;
  const int n = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 0; r < n; ++r)
    if (relevant.count(ranked[static_cast<size_t>(r)])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

// Binary-relevance NDCG: DCG sums 1/log2(rank+1) over hits in the top k,
// IDCG places min(k, |relevant|) hits at the top.
inline double ndcg_at_k(const std::vector<int32_t>& ranked,
                        const std::unordered_set<int32_t>& relevant, int k) {
  if (k < 1) throw ContractError("ndcg_at_k: k must be positive");
  if (relevant.empty()) throw ContractError("ndcg_at_k: empty relevant set");
  double dcg = 0.0;
  const int n = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 1; r <= n; ++r)
    if (relevant.count(ranked[static_cast<size_t>(r - 1)]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  double idcg = 0.0;
  const int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
  for (int r = 1; r <= ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / idcg;
}

struct MetricReport {
  std::string mode;
  int64_t users_evaluated = 0;
  std::map<int, double> precision;  // cutoff -> mean P@k
  std::map<int, double> ndcg;       // cutoff -> mean N@k

  nlohmann::json to_json() const {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [k, v] : precision) metrics["P@" + std::to_string(k)] = v;
    for (const auto& [k, v] : ndcg) metrics["N@" + std::to_string(k)] = v;
    return nlohmann::json{
        {"mode", mode}, {"users_evaluated", users_evaluated}, {"metrics", metrics}};
  }
};

// Ranker: (user, exclusion mask over items) -> ranked item list of length >=
// max cutoff. Users with an empty test set are excluded from the means, not
// scored zero.
template <class RankerFn>
MetricReport evaluate(RankerFn&& ranker, const EvalSplit& split, const InteractionGraph& g,
                      const std::vector<int>& cutoffs, const std::string& mode) {
  if (split.test_edges.empty())
    throw ContractError("evaluate: split has no test edges (ratio too high?)");
  MetricReport report;
  report.mode = mode;
  for (int k : cutoffs) {
    report.precision[k] = 0.0;
    report.ndcg[k] = 0.0;
  }
  for (int64_t u = 0; u < g.num_users; ++u) {
    const auto& test = split.user_test[static_cast<size_t>(u)];
    if (test.empty()) continue;
    std::vector<char> excluded(static_cast<size_t>(g.num_items), 0);
    for (int32_t i : split.user_train[static_cast<size_t>(u)])
      excluded[static_cast<size_t>(i)] = 1;
    const std::vector<int32_t> ranked = ranker(static_cast<int32_t>(u), excluded);
    const std::unordered_set<int32_t> relevant(test.begin(), test.end());
    for (int k : cutoffs) {
      report.precision[k] += precision_at_k(ranked, relevant, k);
      report.ndcg[k] += ndcg_at_k(ranked, relevant, k);
    }
    ++report.users_evaluated;
  }
  if (report.users_evaluated == 0) throw ContractError("evaluate: no eligible test users");
  for (int k : cutoffs) {
    report.precision[k] /= static_cast<double>(report.users_evaluated);
    report.ndcg[k] /= static_cast<double>(report.users_evaluated);
  }
  return report;
}

}  // namespace glta::eval
