#include "mincostflow.hpp"

#include <limits>
#include <queue>

namespace idlora::detail {

std::size_t MinCostFlow::add_edge(std::size_t from, std::size_t to, long long capacity,
                                  double cost) {
  graph_[from].push_back({to, capacity, cost, graph_[to].size()});
  graph_[to].push_back({from, 0, -cost, graph_[from].size() - 1});
  edge_refs_.emplace_back(from, graph_[from].size() - 1);
  return edge_refs_.size() - 1;
}

std::pair<long long, double> MinCostFlow::solve(std::size_t s, std::size_t t, long long limit) {
  const double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = graph_.size();
  std::vector<double> potential(n, 0.0);  // costs are non-negative, zero init is valid
  std::vector<double> dist(n);
  std::vector<std::size_t> prev_node(n), prev_edge(n);

  long long flow = 0;
  double total_cost = 0.0;
  while (flow < limit) {
    std::fill(dist.begin(), dist.end(), inf);
    dist[s] = 0.0;
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.push({0.0, s});
    while (!heap.empty()) {
      auto [d, node] = heap.top();
      heap.pop();
      if (d > dist[node]) continue;
      for (std::size_t idx = 0; idx < graph_[node].size(); ++idx) {
        const Edge& e = graph_[node][idx];
        if (e.cap <= 0) continue;
        const double nd = d + e.cost + potential[node] - potential[e.to];
        if (nd < dist[e.to]) {
          dist[e.to] = nd;
          prev_node[e.to] = node;
          prev_edge[e.to] = idx;
          heap.push({nd, e.to});
        }
      }
    }
    if (dist[t] == inf) break;
    for (std::size_t v = 0; v < n; ++v) {
      if (dist[v] < inf) potential[v] += dist[v];
    }
    long long push = limit - flow;
    for (std::size_t v = t; v != s; v = prev_node[v]) {
      push = std::min(push, graph_[prev_node[v]][prev_edge[v]].cap);
    }
    for (std::size_t v = t; v != s; v = prev_node[v]) {
      Edge& e = graph_[prev_node[v]][prev_edge[v]];
      e.cap -= push;
      graph_[e.to][e.rev].cap += push;
      total_cost += e.cost * static_cast<double>(push);
    }
    flow += push;
  }
  return {flow, total_cost};
}

long long MinCostFlow::flow_on(std::size_t edge_id) const {
  const auto [node, slot] = edge_refs_[edge_id];
  const Edge& e = graph_[node][slot];
  return graph_[e.to][e.rev].cap;  // reverse capacity equals pushed flow
}

}  // namespace idlora::detail
