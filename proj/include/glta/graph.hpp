#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glta/errors.hpp"

namespace glta {

// Bipartite user-item interaction graph. Immutable after build; adjacency is
// kept in both directions and sorted so lookups and iteration are
// reproducible.
struct InteractionGraph {
  int64_t num_users = 0;
  int64_t num_items = 0;
  std::vector<std::pair<int32_t, int32_t>> edges;  // sorted, unique
  std::vector<std::vector<int32_t>> user_items;
  std::vector<std::vector<int32_t>> item_users;

  static InteractionGraph build(int64_t users, int64_t items,
                                std::vector<std::pair<int32_t, int32_t>> edge_list) {
    if (users < 0 || items < 0) throw ContractError("graph: negative node count");
    InteractionGraph g;
    g.num_users = users;
    g.num_items = items;
    std::sort(edge_list.begin(), edge_list.end());
    for (size_t i = 0; i < edge_list.size(); ++i) {
      const auto [u, it] = edge_list[i];
      if (u < 0 || u >= users)
        throw ContractError("graph: user index " + std::to_string(u) + " out of range");
      if (it < 0 || it >= items)
        throw ContractError("graph: item index " + std::to_string(it) + " out of range");
      if (i > 0 && edge_list[i] == edge_list[i - 1])
        throw ContractError("graph: duplicate edge (" + std::to_string(u) + ", " +
                            std::to_string(it) + ")");
    }
    g.edges = std::move(edge_list);
    g.user_items.resize(static_cast<size_t>(users));
    g.item_users.resize(static_cast<size_t>(items));
    for (const auto& [u, it] : g.edges) {
      g.user_items[static_cast<size_t>(u)].push_back(it);
      g.item_users[static_cast<size_t>(it)].push_back(u);
    }
    return g;
  }

  int64_t degree_user(int32_t u) const { return static_cast<int64_t>(user_items[u].size()); }
  int64_t degree_item(int32_t i) const { return static_cast<int64_t>(item_users[i].size()); }

  bool has_edge(int32_t u, int32_t i) const {
    const auto& v = user_items[static_cast<size_t>(u)];
    return std::binary_search(v.begin(), v.end(), i);
  }
};

}  // namespace glta
