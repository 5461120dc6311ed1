#pragma once

// Typed heterogeneous multigraph with per-type attribute vectors, plus the
// flat-file formats used to persist it.
//
// File layout (all UTF-8):
//   schema.json  {"company_type": "company",
//                 "node_types": [{"name": "company", "dim": 16}, ...],
//                 "edge_types": [{"name": "holds", "source": "person",
//                                 "target": "company", "directed": true}, ...]}
//   nodes.csv    header "id,type,attributes..."; each row is
//                id,type,x_0,...,x_{dim-1}
//   edges.csv    header "source,target,type"
//   labels.csv   header "id,label" with label in {0,1}

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ted {

using NodeIndex = std::uint32_t;
using TypeId = std::uint16_t;

struct NodeType {
  std::string name;
  std::size_t dim = 0;

  bool operator==(const NodeType&) const = default;
};

struct EdgeType {
  std::string name;
  TypeId source = 0;
  TypeId target = 0;
  // Undirected relations are traversable from either endpoint; they require
  // source == target.
  bool directed = true;

  bool operator==(const EdgeType&) const = default;
};

class Schema {
 public:
  Schema() = default;

  // Validates the heterogeneity condition |A| + |R| > 2, endpoint references,
  // and name uniqueness. Throws Error on violation.
  Schema(std::vector<NodeType> node_types, std::vector<EdgeType> edge_types,
         std::string company_type);

  const std::vector<NodeType>& node_types() const { return node_types_; }
  const std::vector<EdgeType>& edge_types() const { return edge_types_; }

  std::optional<TypeId> find_node_type(std::string_view name) const;
  std::optional<TypeId> find_edge_type(std::string_view name) const;
  TypeId node_type(std::string_view name) const;  // throws UnknownType
  TypeId edge_type(std::string_view name) const;  // throws UnknownType

  TypeId company_type() const { return company_type_; }
  const std::string& company_type_name() const { return node_types_[company_type_].name; }

  bool operator==(const Schema&) const = default;

 private:
  std::vector<NodeType> node_types_;
  std::vector<EdgeType> edge_types_;
  TypeId company_type_ = 0;
};

Schema parse_schema(const std::string& json_text);
std::string serialize_schema(const Schema& schema);

// The four-node-type, six-relation tax schema (company, person, item, event).
Schema default_tax_schema(std::size_t company_dim = 16, std::size_t other_dim = 8);

struct NodeRecord {
  std::string id;
  std::string type;
  std::vector<double> attributes;
};

struct EdgeRecord {
  std::string source;
  std::string target;
  std::string type;
};

struct Edge {
  NodeIndex source = 0;
  NodeIndex target = 0;
  TypeId type = 0;

  bool operator==(const Edge&) const = default;
};

// One adjacency entry: neighbour reachable through an edge of `type`.
struct Adjacent {
  TypeId type;
  NodeIndex node;

  auto operator<=>(const Adjacent&) const = default;
};

// Immutable after construction; safe for concurrent reads.
class HetGraph {
 public:
  HetGraph() = default;

  // Builds and validates a graph. Any violation rejects the whole input:
  // UnknownType, DanglingEdge, DimensionMismatch, DuplicateNodeId.
  static HetGraph build(Schema schema, const std::vector<NodeRecord>& nodes,
                        const std::vector<EdgeRecord>& edges);

  const Schema& schema() const { return schema_; }
  std::size_t num_nodes() const { return types_.size(); }
  std::size_t num_edges() const { return edges_.size(); }

  const std::string& id(NodeIndex v) const { return ids_[v]; }
  std::optional<NodeIndex> find(std::string_view id) const;
  TypeId type(NodeIndex v) const { return types_[v]; }
  bool is_company(NodeIndex v) const { return types_[v] == schema_.company_type(); }
  std::span<const double> attributes(NodeIndex v) const;
  const std::vector<Edge>& edges() const { return edges_; }

  // Deduplicated neighbours in the edge direction (plus both directions for
  // undirected relations), sorted by (edge type, node).
  std::span<const Adjacent> out(NodeIndex v) const;
  std::span<const Adjacent> in(NodeIndex v) const;
  std::span<const Adjacent> out(NodeIndex v, TypeId edge_type) const;
  std::span<const Adjacent> in(NodeIndex v, TypeId edge_type) const;
  bool has_edge(NodeIndex source, NodeIndex target, TypeId edge_type) const;

  // Distinct neighbours ignoring direction and edge type, sorted.
  std::vector<NodeIndex> undirected_neighbors(NodeIndex v) const;

  std::vector<NodeIndex> nodes_of_type(TypeId type) const;

  bool operator==(const HetGraph& other) const;

 private:
  Schema schema_;
  std::vector<std::string> ids_;
  std::vector<TypeId> types_;
  std::vector<std::size_t> attr_offsets_;  // size num_nodes + 1
  std::vector<double> attrs_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> out_offsets_, in_offsets_;
  std::vector<Adjacent> out_adj_, in_adj_;
  std::unordered_map<std::string, NodeIndex> lookup_;
};

// Company node id -> label in {0,1}. Unlabelled companies are absent.
using LabelSet = std::map<std::string, int>;

HetGraph load_graph(const std::filesystem::path& schema_file,
                    const std::filesystem::path& nodes_file,
                    const std::filesystem::path& edges_file);
HetGraph load_graph(Schema schema, const std::filesystem::path& nodes_file,
                    const std::filesystem::path& edges_file);

// Reads <dir>/schema.json, nodes.csv, edges.csv.
HetGraph load_graph_dir(const std::filesystem::path& dir);

LabelSet load_labels(const std::filesystem::path& labels_file);

std::string serialize_nodes(const HetGraph& graph);
std::string serialize_edges(const HetGraph& graph);
std::string serialize_labels(const LabelSet& labels);

// Writes schema.json, nodes.csv, edges.csv (and labels.csv when given).
void save_graph(const HetGraph& graph, const std::filesystem::path& dir,
                const LabelSet* labels = nullptr);

struct DegreeBin {
  std::size_t degree;
  std::size_t count;

  bool operator==(const DegreeBin&) const = default;
};

// Histogram of total (in + out) degree counted over the raw edge list, so
// parallel edges each count. Bins are sorted by degree; counts sum to |V|.
std::vector<DegreeBin> degree_histogram(const HetGraph& graph);

struct LabelViolation {
  std::string id;
  std::string reason;
};

// Empty iff every key names an existing company node and every label is 0/1.
std::vector<LabelViolation> validate_labels(const HetGraph& graph, const LabelSet& labels);

// Shared helpers for the text formats.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string format_double(double value);

}  // namespace ted
