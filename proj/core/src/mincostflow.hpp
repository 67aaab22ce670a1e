#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace idlora::detail {

// Successive-shortest-path min-cost max-flow, Dijkstra over reduced costs.
// Edge costs must be non-negative. Deterministic: identical inputs produce
// identical flows.
class MinCostFlow {
 public:
  explicit MinCostFlow(std::size_t nodes) : graph_(nodes) {}

  // Returns an id usable with flow_on().
  std::size_t add_edge(std::size_t from, std::size_t to, long long capacity, double cost);

  // Pushes up to `limit` units from s to t; returns achieved flow and cost.
  std::pair<long long, double> solve(std::size_t s, std::size_t t, long long limit);

  long long flow_on(std::size_t edge_id) const;

 private:
  struct Edge {
    std::size_t to;
    long long cap;
    double cost;
    std::size_t rev;  // index of the reverse edge in graph_[to]
  };

  std::vector<std::vector<Edge>> graph_;
  std::vector<std::pair<std::size_t, std::size_t>> edge_refs_;  // node, slot
};

}  // namespace idlora::detail
