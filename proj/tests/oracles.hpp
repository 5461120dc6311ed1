#pragma once

// Reference implementations used to check the library independently.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ted/hetgraph.hpp"
#include "ted/rng.hpp"
#include "ted/rpt.hpp"

namespace ted::oracle {

// Random graph over the default tax schema with at most `max_nodes` nodes.
inline HetGraph random_tax_graph(std::uint64_t seed, std::size_t max_nodes, double density = 0.15) {
  Rng rng(seed);
  const auto schema = default_tax_schema(2, 1);
  const std::size_t n = 8 + rng.below(max_nodes - 7);
  std::vector<NodeRecord> nodes;
  std::map<std::string, std::vector<std::string>> by_type;
  static const char* kTypes[] = {"company", "person", "item", "event"};
  for (std::size_t i = 0; i < n; ++i) {
    // At least two companies and two persons.
    const std::string type = i < 2 ? "company" : i < 4 ? "person" : kTypes[rng.below(i % 5 == 0 ? 4 : 3)];
    const std::string id = type.substr(0, 1) + std::to_string(i);
    nodes.push_back({id, type, std::vector<double>(schema.node_types()[schema.node_type(type)].dim, 0.0)});
    by_type[type].push_back(id);
  }
  std::vector<EdgeRecord> edges;
  for (const auto& et : schema.edge_types()) {
    const auto& src = by_type[schema.node_types()[et.source].name];
    const auto& dst = by_type[schema.node_types()[et.target].name];
    for (const auto& s : src) {
      for (const auto& t : dst) {
        if (rng.bernoulli(density)) edges.push_back({s, t, et.name});
      }
    }
  }
  return HetGraph::build(schema, nodes, edges);
}

// Exhaustive search over type-respecting role assignments in declaration
// order, deduplicated by (anchor node, node multiset) keeping the
// lexicographically smallest assignment.
inline std::vector<RptInstance> brute_force_instances(const HetGraph& g, const RptPattern& p, bool injective) {
  const auto& schema = g.schema();
  std::set<std::tuple<NodeIndex, NodeIndex, TypeId>> edge_set;
  for (const auto& e : g.edges()) {
    edge_set.insert({e.source, e.target, e.type});
    if (!schema.edge_types()[e.type].directed) edge_set.insert({e.target, e.source, e.type});
  }
  std::vector<std::vector<NodeIndex>> candidates;
  for (const auto& r : p.roles()) {
    std::vector<NodeIndex> c;
    const auto t = schema.node_type(r.type);
    for (NodeIndex v = 0; v < g.num_nodes(); ++v) {
      if (g.type(v) == t) c.push_back(v);
    }
    candidates.push_back(std::move(c));
  }
  std::vector<std::tuple<std::size_t, std::size_t, TypeId>> pedges;
  for (const auto& e : p.edges()) pedges.push_back({e.source, e.target, schema.edge_type(e.type)});

  std::map<std::pair<NodeIndex, std::vector<NodeIndex>>, std::vector<NodeIndex>> best;
  std::vector<NodeIndex> assign(p.size());
  auto rec = [&](auto&& self, std::size_t k) -> void {
    if (k == p.size()) {
      for (const auto& [s, t, et] : pedges) {
        if (!edge_set.count({assign[s], assign[t], et})) return;
      }
      if (injective) {
        std::set<NodeIndex> distinct(assign.begin(), assign.end());
        if (distinct.size() != assign.size()) return;
      }
      auto ms = assign;
      std::sort(ms.begin(), ms.end());
      auto key = std::make_pair(assign[p.anchor()], ms);
      auto it = best.find(key);
      if (it == best.end() || assign < it->second) best[key] = assign;
      return;
    }
    for (const auto v : candidates[k]) {
      assign[k] = v;
      // Prune on edges whose endpoints are both assigned.
      bool ok = true;
      for (const auto& [s, t, et] : pedges) {
        if (std::max(s, t) == k && !edge_set.count({assign[s], assign[t], et})) {
          ok = false;
          break;
        }
      }
      if (ok) self(self, k + 1);
    }
  };
  rec(rec, 0);
  std::vector<RptInstance> out;
  for (const auto& [key, nodes] : best) out.push_back({p.id(), nodes, key.first});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.nodes < b.nodes; });
  return out;
}

}  // namespace ted::oracle
