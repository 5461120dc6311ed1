#pragma once

// RPT-group patterns, homomorphic instance enumeration, per-node instance
// neighbour index, and the neighbour-definition label statistics.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ted/hetgraph.hpp"

namespace ted {

struct PatternRole {
  std::string name;
  std::string type;  // node type name
};

struct PatternEdge {
  std::size_t source;  // role index
  std::size_t target;  // role index
  std::string type;    // edge type name
};

// A small typed pattern graph. Roles are kept in declaration order, which is
// the canonical order of every instance's node list.
class RptPattern {
 public:
  RptPattern() = default;

  // Throws MalformedPattern unless the pattern is connected (ignoring edge
  // direction), edges reference declared roles, and the anchor role exists.
  RptPattern(std::string id, std::vector<PatternRole> roles, std::vector<PatternEdge> edges,
             std::size_t anchor);

  const std::string& id() const { return id_; }
  const std::vector<PatternRole>& roles() const { return roles_; }
  const std::vector<PatternEdge>& edges() const { return edges_; }
  std::size_t anchor() const { return anchor_; }
  std::size_t size() const { return roles_.size(); }

  // Anchor role first, then the remaining roles in canonical order. This is
  // the slot order used when instance members are concatenated.
  std::vector<std::size_t> slot_order() const;

  // Every referenced type exists in `schema`, edge endpoint types agree, and
  // the anchor role has the company type.
  bool applicable_to(const Schema& schema) const;

 private:
  std::string id_;
  std::vector<PatternRole> roles_;
  std::vector<PatternEdge> edges_;
  std::size_t anchor_ = 0;
};

std::vector<RptPattern> parse_patterns(const std::string& json_text);
std::string serialize_patterns(const std::vector<RptPattern>& patterns);
std::vector<RptPattern> load_patterns(const std::filesystem::path& file);

// PCCP, PCCCP, PCICP, PCPCP, PCPCCP over the default tax schema.
std::vector<RptPattern> default_patterns();

// Drops patterns whose types are absent from the schema.
std::vector<RptPattern> applicable_patterns(const Schema& schema,
                                            const std::vector<RptPattern>& patterns);

struct RptInstance {
  std::string pattern_id;
  std::vector<NodeIndex> nodes;  // node per role, canonical role order
  NodeIndex anchor = 0;

  bool operator==(const RptInstance&) const = default;
};

enum class MatchMode { Homomorphism, Injective };
enum class CapMode { Error, Truncate };

struct MatchOptions {
  MatchMode mode = MatchMode::Homomorphism;
  // Per-anchor limit on distinct instances; 0 disables the cap.
  std::size_t cap = 64;
  CapMode cap_mode = CapMode::Error;
  // 0 = hardware concurrency.
  std::size_t threads = 0;
};

struct MatchReport {
  std::size_t truncated_anchors = 0;
};

// Every occurrence of `pattern` in `graph`, one per (anchor node, node
// multiset): among role assignments sharing that key, the lexicographically
// smallest canonical node list is kept. Output sorted lexicographically by
// canonical node list. Throws PatternTypeUnknown, InstanceCapExceeded.
std::vector<RptInstance> enumerate_instances(const HetGraph& graph, const RptPattern& pattern,
                                             const MatchOptions& options = {},
                                             MatchReport* report = nullptr);

// Instance lists per (pattern, company node). Immutable after build.
class NeighborIndex {
 public:
  NeighborIndex() = default;

  std::size_t num_patterns() const { return patterns_.size(); }
  const RptPattern& pattern(std::size_t m) const { return patterns_[m]; }
  const std::vector<RptPattern>& patterns() const { return patterns_; }
  std::size_t num_nodes() const { return num_nodes_; }

  std::size_t count(std::size_t m, NodeIndex i) const;
  std::size_t total_instances(std::size_t m) const;
  // Canonical role-ordered node list of the k-th instance anchored at i.
  std::span<const NodeIndex> instance(std::size_t m, NodeIndex i, std::size_t k) const;
  // N_ik^M: distinct nodes of that instance, sorted; always contains i.
  std::vector<NodeIndex> neighbors(std::size_t m, NodeIndex i, std::size_t k) const;
  bool has_any_instance(NodeIndex i) const;

  friend NeighborIndex build_neighbor_index(const HetGraph&, const std::vector<RptPattern>&,
                                            const MatchOptions&, MatchReport*);

 private:
  struct Slots {
    std::size_t width = 0;
    std::vector<std::size_t> offsets;  // per node, instance ranges; size n + 1
    std::vector<NodeIndex> nodes;      // flattened canonical lists
  };
  std::vector<RptPattern> patterns_;
  std::vector<Slots> slots_;
  std::size_t num_nodes_ = 0;
};

NeighborIndex build_neighbor_index(const HetGraph& graph, const std::vector<RptPattern>& patterns,
                                   const MatchOptions& options = {}, MatchReport* report = nullptr);

// Alternating node/edge type sequence, e.g. company-holds-person-holds-company.
// An edge step may be walked in whichever orientation matches its endpoint
// types; same-type relations are walked both ways.
struct Metapath {
  std::string name;
  std::vector<std::string> node_types;
  std::vector<std::string> edge_types;  // size node_types.size() - 1
};

Metapath parse_metapath(const std::string& name, const std::string& spec);

// CIC, CPC, CC over the default tax schema.
std::vector<Metapath> default_metapaths();

using NeighborMap = std::map<NodeIndex, std::set<NodeIndex>>;

// For each node of the metapath's start type: end nodes reachable along the
// typed path, excluding the start node. Throws MalformedMetapath.
NeighborMap metapath_neighbors(const HetGraph& graph, const Metapath& metapath);

// For each company node: company nodes within k undirected hops, excluding
// the centre. k >= 1.
NeighborMap k_order_neighbors(const HetGraph& graph, std::size_t k);

// RPT neighbours per company node and pattern (union over instances, centre
// excluded), and the union over all patterns.
NeighborMap rpt_neighbors(const NeighborIndex& index, std::optional<std::size_t> pattern = {});

struct NeighborDefinition {
  std::string name;
  std::string kind;  // "rpt", "metapath", "k-order", "background"
  NeighborMap neighbors;
};

struct EvasionStat {
  std::string name;
  std::string kind;
  std::size_t pairs = 0;
  std::size_t evading_pairs = 0;
  std::optional<double> probability;  // nullopt when no labelled pairs
  std::optional<double> rpt_ratio;    // P(rpt) / P(this definition)
};

struct EvasionStatsInput {
  const NeighborIndex* index = nullptr;
  std::vector<std::pair<std::string, NeighborMap>> metapaths;
  std::vector<std::pair<std::size_t, NeighborMap>> k_orders;
  // Optional reference population (e.g. companies outside planted
  // communities); reported as the plain evasion rate of its labelled members.
  std::optional<std::set<NodeIndex>> background;
};

// P(neighbour evades | centre evades) over labelled (centre, neighbour)
// pairs for each neighbour definition, plus the ratio of the all-pattern RPT
// probability to each definition. Pairs with an unlabelled neighbour are
// excluded. Definitions without labelled pairs report no probability.
std::vector<EvasionStat> evasion_ratio_stats(const HetGraph& graph, const EvasionStatsInput& input,
                                             const LabelSet& labels);

std::string format_stats_table(const std::vector<EvasionStat>& stats);

}  // namespace ted
