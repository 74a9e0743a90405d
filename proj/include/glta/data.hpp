#pragma once

// Dataset ingestion and synthetic fixtures.
//
// Interactions file: tab-separated `user_id<TAB>item_id[<TAB>timestamp]`,
// UTF-8, optional header line. Items file: one JSON object per line,
// {"item_id": ..., "description": ...}.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glta/errors.hpp"
#include "glta/graph.hpp"
#include "glta/rng.hpp"

namespace glta::data {

struct Catalog {
  std::vector<std::string> descriptions;          // dense item id -> text
  std::vector<std::string> item_external;         // dense -> external id
  std::vector<std::string> user_external;         // dense -> external id
  std::unordered_map<std::string, int32_t> item_index;
  std::unordered_map<std::string, int32_t> user_index;
};

struct Dataset {
  InteractionGraph graph;
  Catalog catalog;
  std::vector<int64_t> edge_times;  // parallel to graph.edges; -1 when absent
  bool has_timestamps = false;
  int64_t duplicates_collapsed = 0;
};

struct DatasetStats {
  int64_t users = 0, items = 0, interactions = 0;
  double density = 0.0;
};

inline DatasetStats dataset_stats(const InteractionGraph& g) {
  DatasetStats s;
  s.users = g.num_users;
  s.items = g.num_items;
  s.interactions = static_cast<int64_t>(g.edges.size());
  const double denom = static_cast<double>(g.num_users) * static_cast<double>(g.num_items);
  s.density = denom > 0.0 ? static_cast<double>(s.interactions) / denom : 0.0;
  return s;
}

namespace detail {

inline std::string json_id_to_string(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<int64_t>());
  if (j.is_number_unsigned()) return std::to_string(j.get<uint64_t>());
  throw ParseError("items file: item_id must be a string or integer");
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r')
    fields.back().pop_back();
  return fields;
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& interactions_path,
                            const std::filesystem::path& items_path) {
  Dataset ds;

  // Items first: every interaction must reference a cataloged item.
  {
    std::ifstream in(items_path);
    if (!in) throw ParseError("items file: cannot open " + items_path.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("item_id") ||
          !j.contains("description"))
        throw ParseError("items file: malformed record at line " + std::to_string(line_no));
      const std::string ext = detail::json_id_to_string(j["item_id"]);
      if (ds.catalog.item_index.count(ext))
        throw ParseError("items file: duplicate item_id '" + ext + "' at line " +
                         std::to_string(line_no));
      ds.catalog.item_index.emplace(ext, static_cast<int32_t>(ds.catalog.item_external.size()));
      ds.catalog.item_external.push_back(ext);
      ds.catalog.descriptions.push_back(j["description"].get<std::string>());
    }
    if (ds.catalog.item_external.empty())
      throw ParseError("items file: no items in " + items_path.string());
  }

  std::vector<std::pair<int32_t, int32_t>> raw_edges;
  std::vector<int64_t> raw_times;
  {
    std::ifstream in(interactions_path);
    if (!in) throw ParseError("interactions file: cannot open " + interactions_path.string());
    std::string line;
    size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto fields = detail::split_tabs(line);
      if (first) {
        first = false;
        if (fields.size() >= 2 && fields[0] == "user_id" && fields[1] == "item_id") continue;
      }
      if (fields.size() != 2 && fields.size() != 3)
        throw ParseError("interactions file: expected 2 or 3 tab-separated fields at line " +
                         std::to_string(line_no));
      const std::string& uext = fields[0];
      const std::string& iext = fields[1];
      if (uext.empty() || iext.empty())
        throw ParseError("interactions file: empty id at line " + std::to_string(line_no));
      auto item_it = ds.catalog.item_index.find(iext);
      if (item_it == ds.catalog.item_index.end())
        throw Error("interactions file: unknown item '" + iext + "' at line " +
                    std::to_string(line_no));
      auto [user_it, inserted] = ds.catalog.user_index.emplace(
          uext, static_cast<int32_t>(ds.catalog.user_external.size()));
      if (inserted) ds.catalog.user_external.push_back(uext);
      int64_t ts = -1;
      if (fields.size() == 3) {
        try {
          size_t consumed = 0;
          ts = std::stoll(fields[2], &consumed);
          if (consumed != fields[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw ParseError("interactions file: bad timestamp '" + fields[2] + "' at line " +
                           std::to_string(line_no));
        }
        ds.has_timestamps = true;
      }
      raw_edges.emplace_back(user_it->second, item_it->second);
      raw_times.push_back(ts);
    }
  }

  // Collapse duplicate (user, item) pairs, keeping the first timestamp seen.
  std::unordered_map<int64_t, int64_t> seen;  // packed edge -> timestamp
  std::vector<std::pair<int32_t, int32_t>> edges;
  for (size_t i = 0; i < raw_edges.size(); ++i) {
    const int64_t key = (static_cast<int64_t>(raw_edges[i].first) << 32) |
                        static_cast<uint32_t>(raw_edges[i].second);
    auto [it, inserted] = seen.emplace(key, raw_times[i]);
    if (inserted)
      edges.push_back(raw_edges[i]);
    else
      ++ds.duplicates_collapsed;
  }

  ds.graph = InteractionGraph::build(static_cast<int64_t>(ds.catalog.user_external.size()),
                                     static_cast<int64_t>(ds.catalog.item_external.size()),
                                     std::move(edges));
  ds.edge_times.resize(ds.graph.edges.size(), -1);
  for (size_t i = 0; i < ds.graph.edges.size(); ++i) {
    const int64_t key = (static_cast<int64_t>(ds.graph.edges[i].first) << 32) |
                        static_cast<uint32_t>(ds.graph.edges[i].second);
    ds.edge_times[i] = seen.at(key);
  }
  return ds;
}

// Writes the two files back out; loading them reproduces the dataset exactly
// (dense user ids are assigned in first-seen order, and edges are written
// sorted by user).
inline void write_dataset(const Dataset& ds, const std::filesystem::path& interactions_path,
                          const std::filesystem::path& items_path) {
  {
    std::ofstream out(items_path);
    for (size_t i = 0; i < ds.catalog.item_external.size(); ++i) {
      nlohmann::json j = {{"item_id", ds.catalog.item_external[i]},
                          {"description", ds.catalog.descriptions[i]}};
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(interactions_path);
    for (size_t i = 0; i < ds.graph.edges.size(); ++i) {
      const auto& [u, it] = ds.graph.edges[i];
      out << ds.catalog.user_external[static_cast<size_t>(u)] << '\t'
          << ds.catalog.item_external[static_cast<size_t>(it)];
      if (ds.has_timestamps && ds.edge_times[i] >= 0) out << '\t' << ds.edge_times[i];
      out << "\n";
    }
  }
}

struct SynthConfig {
  int64_t users = 40;
  int64_t items = 60;
  int clusters = 2;
  double in_cluster_p = 0.3;
  double noise_p = 0.02;
  int vocab_per_cluster = 12;
  int desc_words = 5;
  int min_degree = 2;
  uint64_t seed = 7;
};

// Planted-cluster fixture: users and items are partitioned into contiguous
// cluster blocks, edges are sampled within-cluster with in_cluster_p and
// across clusters with noise_p, and each item's description is drawn from its
// cluster's disjoint word pool so the text carries the planted signal.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.users <= 0 || cfg.items <= 0 || cfg.clusters <= 0)
    throw ContractError("generate_synthetic: sizes must be positive");
  auto user_cluster = [&](int64_t u) {
    return static_cast<int>(u * cfg.clusters / cfg.users);
  };
  auto item_cluster = [&](int64_t i) {
    return static_cast<int>(i * cfg.clusters / cfg.items);
  };

  Rng edge_rng = Rng::derive(cfg.seed, "synth-edges");
  std::vector<std::pair<int32_t, int32_t>> edges;
  std::vector<std::vector<char>> has(static_cast<size_t>(cfg.users),
                                     std::vector<char>(static_cast<size_t>(cfg.items), 0));
  for (int64_t u = 0; u < cfg.users; ++u) {
    for (int64_t i = 0; i < cfg.items; ++i) {
      const double p = user_cluster(u) == item_cluster(i) ? cfg.in_cluster_p : cfg.noise_p;
      if (edge_rng.uniform() < p) {
        edges.emplace_back(static_cast<int32_t>(u), static_cast<int32_t>(i));
        has[static_cast<size_t>(u)][static_cast<size_t>(i)] = 1;
      }
    }
  }
  // Degree repair keeps every user trainable; added edges stay within-cluster.
  for (int64_t u = 0; u < cfg.users; ++u) {
    int64_t deg = 0;
    for (int64_t i = 0; i < cfg.items; ++i) deg += has[u][i];
    for (int64_t i = 0; i < cfg.items && deg < cfg.min_degree; ++i) {
      if (!has[u][i] && user_cluster(u) == item_cluster(i)) {
        edges.emplace_back(static_cast<int32_t>(u), static_cast<int32_t>(i));
        has[u][i] = 1;
        ++deg;
      }
    }
  }

  Rng text_rng = Rng::derive(cfg.seed, "synth-text");
  Dataset ds;
  for (int64_t i = 0; i < cfg.items; ++i) {
    const int c = item_cluster(i);
    std::vector<std::string> pool;
    for (int wi = 0; wi < cfg.vocab_per_cluster; ++wi)
      pool.push_back("c" + std::to_string(c) + "w" + std::to_string(wi));
    text_rng.shuffle(pool);
    std::string desc;
    const int n = std::min<int>(cfg.desc_words, static_cast<int>(pool.size()));
    for (int wi = 0; wi < n; ++wi) {
      if (wi) desc.push_back(' ');
      desc += pool[static_cast<size_t>(wi)];
    }
    const std::string ext = "it" + std::to_string(i);
    ds.catalog.item_index.emplace(ext, static_cast<int32_t>(i));
    ds.catalog.item_external.push_back(ext);
    ds.catalog.descriptions.push_back(desc);
  }
  for (int64_t u = 0; u < cfg.users; ++u) {
    const std::string ext = "u" + std::to_string(u);
    ds.catalog.user_index.emplace(ext, static_cast<int32_t>(u));
    ds.catalog.user_external.push_back(ext);
  }
  ds.graph = InteractionGraph::build(cfg.users, cfg.items, std::move(edges));
  ds.edge_times.assign(ds.graph.edges.size(), -1);
  return ds;
}

}  // namespace glta::data
