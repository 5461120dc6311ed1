#include "ted/hetgraph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ted/error.hpp"

namespace ted {

namespace {

using nlohmann::json;

std::vector<std::string> split(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

double parse_double(std::string_view text, std::string_view context) {
  const auto s = trim(text);
  double value = 0.0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw Error(ErrorCode::ParseError, "bad number '" + s + "' in " + std::string(context));
  }
  return value;
}

// Rows of a delimited file, header checked and stripped, blank lines skipped.
std::vector<std::vector<std::string>> read_table(const std::filesystem::path& path,
                                                 std::string_view expected_header_prefix) {
  const auto text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!header_seen) {
      if (line.rfind(expected_header_prefix, 0) != 0) {
        throw Error(ErrorCode::ParseError, path.string() + ": expected header starting with '" +
                                               std::string(expected_header_prefix) + "'");
      }
      header_seen = true;
      continue;
    }
    auto fields = split(line, ',');
    for (auto& f : fields) f = trim(f);
    rows.push_back(std::move(fields));
  }
  if (!header_seen) {
    throw Error(ErrorCode::ParseError, path.string() + ": missing header row");
  }
  return rows;
}

void build_adjacency(std::size_t n, const std::vector<std::pair<NodeIndex, Adjacent>>& entries,
                     std::vector<std::size_t>& offsets, std::vector<Adjacent>& adj) {
  std::vector<std::vector<Adjacent>> lists(n);
  for (const auto& [v, a] : entries) lists[v].push_back(a);
  offsets.assign(n + 1, 0);
  adj.clear();
  for (std::size_t v = 0; v < n; ++v) {
    auto& l = lists[v];
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
    offsets[v] = adj.size();
    adj.insert(adj.end(), l.begin(), l.end());
  }
  offsets[n] = adj.size();
}

std::span<const Adjacent> typed_range(std::span<const Adjacent> all, TypeId type) {
  const auto lo = std::lower_bound(all.begin(), all.end(), Adjacent{type, 0});
  auto hi = lo;
  while (hi != all.end() && hi->type == type) ++hi;
  return {lo, hi};
}

}  // namespace

// ---------------------------------------------------------------- Schema

Schema::Schema(std::vector<NodeType> node_types, std::vector<EdgeType> edge_types,
               std::string company_type)
    : node_types_(std::move(node_types)), edge_types_(std::move(edge_types)) {
  if (node_types_.size() + edge_types_.size() <= 2) {
    throw Error(ErrorCode::ParseError,
                "schema is not heterogeneous: needs |node types| + |edge types| > 2");
  }
  std::set<std::string> seen;
  for (const auto& t : node_types_) {
    if (t.name.empty() || !seen.insert(t.name).second) {
      throw Error(ErrorCode::ParseError, "duplicate or empty node type name '" + t.name + "'");
    }
  }
  seen.clear();
  for (const auto& e : edge_types_) {
    if (e.name.empty() || !seen.insert(e.name).second) {
      throw Error(ErrorCode::ParseError, "duplicate or empty edge type name '" + e.name + "'");
    }
    if (e.source >= node_types_.size() || e.target >= node_types_.size()) {
      throw Error(ErrorCode::UnknownType, "edge type '" + e.name + "' references unknown node type");
    }
    if (!e.directed && e.source != e.target) {
      throw Error(ErrorCode::ParseError,
                  "undirected edge type '" + e.name + "' must join a node type to itself");
    }
  }
  const auto company = find_node_type(company_type);
  if (!company) {
    throw Error(ErrorCode::UnknownType, "company type '" + company_type + "' not declared");
  }
  company_type_ = *company;
}

std::optional<TypeId> Schema::find_node_type(std::string_view name) const {
  for (std::size_t i = 0; i < node_types_.size(); ++i) {
    if (node_types_[i].name == name) return static_cast<TypeId>(i);
  }
  return std::nullopt;
}

std::optional<TypeId> Schema::find_edge_type(std::string_view name) const {
  for (std::size_t i = 0; i < edge_types_.size(); ++i) {
    if (edge_types_[i].name == name) return static_cast<TypeId>(i);
  }
  return std::nullopt;
}

TypeId Schema::node_type(std::string_view name) const {
  if (auto t = find_node_type(name)) return *t;
  throw Error(ErrorCode::UnknownType, "unknown node type '" + std::string(name) + "'");
}

TypeId Schema::edge_type(std::string_view name) const {
  if (auto t = find_edge_type(name)) return *t;
  throw Error(ErrorCode::UnknownType, "unknown edge type '" + std::string(name) + "'");
}

Schema parse_schema(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("schema: ") + e.what());
  }
  try {
    const std::size_t default_dim = doc.value("default_dim", std::size_t{0});
    std::vector<NodeType> node_types;
    for (const auto& n : doc.at("node_types")) {
      NodeType t;
      t.name = n.at("name").get<std::string>();
      t.dim = n.value("dim", default_dim);
      if (t.dim == 0) {
        throw Error(ErrorCode::ParseError, "node type '" + t.name + "' has no attribute dimension");
      }
      node_types.push_back(std::move(t));
    }
    auto lookup = [&](const std::string& name) -> TypeId {
      for (std::size_t i = 0; i < node_types.size(); ++i) {
        if (node_types[i].name == name) return static_cast<TypeId>(i);
      }
      throw Error(ErrorCode::UnknownType, "edge endpoint references unknown node type '" + name + "'");
    };
    std::vector<EdgeType> edge_types;
    for (const auto& e : doc.at("edge_types")) {
      EdgeType t;
      t.name = e.at("name").get<std::string>();
      t.source = lookup(e.at("source").get<std::string>());
      t.target = lookup(e.at("target").get<std::string>());
      t.directed = e.value("directed", true);
      edge_types.push_back(std::move(t));
    }
    return Schema(std::move(node_types), std::move(edge_types),
                  doc.value("company_type", std::string("company")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("schema: ") + e.what());
  }
}

std::string serialize_schema(const Schema& schema) {
  json doc;
  doc["company_type"] = schema.company_type_name();
  doc["node_types"] = json::array();
  for (const auto& t : schema.node_types()) {
    doc["node_types"].push_back({{"name", t.name}, {"dim", t.dim}});
  }
  doc["edge_types"] = json::array();
  for (const auto& e : schema.edge_types()) {
    doc["edge_types"].push_back({{"name", e.name},
                                 {"source", schema.node_types()[e.source].name},
                                 {"target", schema.node_types()[e.target].name},
                                 {"directed", e.directed}});
  }
  return doc.dump(2) + "\n";
}

Schema default_tax_schema(std::size_t company_dim, std::size_t other_dim) {
  std::vector<NodeType> nodes = {
      {"company", company_dim}, {"person", other_dim}, {"item", other_dim}, {"event", other_dim}};
  constexpr TypeId C = 0, P = 1, I = 2, E = 3;
  std::vector<EdgeType> edges = {
      {"transaction", C, C, true},  // seller -> buyer
      {"holds", P, C, true},        // holding or investment
      {"sells", C, I, true},
      {"buys", C, I, true},
      {"belongs", E, C, true},
      {"category", I, I, false},
  };
  return Schema(std::move(nodes), std::move(edges), "company");
}

// ---------------------------------------------------------------- HetGraph

HetGraph HetGraph::build(Schema schema, const std::vector<NodeRecord>& nodes,
                         const std::vector<EdgeRecord>& edges) {
  HetGraph g;
  g.schema_ = std::move(schema);
  const auto n = nodes.size();
  g.ids_.reserve(n);
  g.types_.reserve(n);
  g.attr_offsets_.reserve(n + 1);
  g.attr_offsets_.push_back(0);
  g.lookup_.reserve(n);
  for (const auto& rec : nodes) {
    if (rec.id.empty() || rec.id.find(',') != std::string::npos) {
      throw Error(ErrorCode::ParseError, "node id '" + rec.id + "' is empty or contains a comma");
    }
    const auto type = g.schema_.find_node_type(rec.type);
    if (!type) {
      throw Error(ErrorCode::UnknownType, "node '" + rec.id + "' has unknown type '" + rec.type + "'");
    }
    const auto dim = g.schema_.node_types()[*type].dim;
    if (rec.attributes.size() != dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "node '" + rec.id + "' has " + std::to_string(rec.attributes.size()) +
                      " attributes, type '" + rec.type + "' declares " + std::to_string(dim));
    }
    const auto index = static_cast<NodeIndex>(g.ids_.size());
    if (!g.lookup_.emplace(rec.id, index).second) {
      throw Error(ErrorCode::DuplicateNodeId, "node id '" + rec.id + "' appears twice");
    }
    g.ids_.push_back(rec.id);
    g.types_.push_back(*type);
    g.attrs_.insert(g.attrs_.end(), rec.attributes.begin(), rec.attributes.end());
    g.attr_offsets_.push_back(g.attrs_.size());
  }

  std::vector<std::pair<NodeIndex, Adjacent>> out_entries, in_entries;
  out_entries.reserve(edges.size());
  in_entries.reserve(edges.size());
  g.edges_.reserve(edges.size());
  for (const auto& rec : edges) {
    const auto type = g.schema_.find_edge_type(rec.type);
    if (!type) {
      throw Error(ErrorCode::UnknownType, "edge " + rec.source + "->" + rec.target +
                                              " has unknown type '" + rec.type + "'");
    }
    const auto s = g.find(rec.source);
    const auto t = g.find(rec.target);
    if (!s || !t) {
      throw Error(ErrorCode::DanglingEdge, "edge " + rec.source + "->" + rec.target +
                                               " references a missing node");
    }
    const auto& et = g.schema_.edge_types()[*type];
    if (g.types_[*s] != et.source || g.types_[*t] != et.target) {
      throw Error(ErrorCode::UnknownType, "edge " + rec.source + "->" + rec.target + " of type '" +
                                              rec.type + "' joins the wrong node types");
    }
    g.edges_.push_back({*s, *t, *type});
    out_entries.push_back({*s, {*type, *t}});
    in_entries.push_back({*t, {*type, *s}});
    if (!et.directed) {
      out_entries.push_back({*t, {*type, *s}});
      in_entries.push_back({*s, {*type, *t}});
    }
  }
  build_adjacency(n, out_entries, g.out_offsets_, g.out_adj_);
  build_adjacency(n, in_entries, g.in_offsets_, g.in_adj_);
  return g;
}

std::optional<NodeIndex> HetGraph::find(std::string_view id) const {
  const auto it = lookup_.find(std::string(id));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::span<const double> HetGraph::attributes(NodeIndex v) const {
  return {attrs_.data() + attr_offsets_[v], attr_offsets_[v + 1] - attr_offsets_[v]};
}

std::span<const Adjacent> HetGraph::out(NodeIndex v) const {
  return {out_adj_.data() + out_offsets_[v], out_offsets_[v + 1] - out_offsets_[v]};
}

std::span<const Adjacent> HetGraph::in(NodeIndex v) const {
  return {in_adj_.data() + in_offsets_[v], in_offsets_[v + 1] - in_offsets_[v]};
}

std::span<const Adjacent> HetGraph::out(NodeIndex v, TypeId edge_type) const {
  return typed_range(out(v), edge_type);
}

std::span<const Adjacent> HetGraph::in(NodeIndex v, TypeId edge_type) const {
  return typed_range(in(v), edge_type);
}

bool HetGraph::has_edge(NodeIndex source, NodeIndex target, TypeId edge_type) const {
  const auto all = out(source);
  return std::binary_search(all.begin(), all.end(), Adjacent{edge_type, target});
}

std::vector<NodeIndex> HetGraph::undirected_neighbors(NodeIndex v) const {
  std::vector<NodeIndex> result;
  for (const auto& a : out(v)) result.push_back(a.node);
  for (const auto& a : in(v)) result.push_back(a.node);
  std::sort(result.begin(), result.end());
  result.erase(std::unique(result.begin(), result.end()), result.end());
  return result;
}

std::vector<NodeIndex> HetGraph::nodes_of_type(TypeId type) const {
  std::vector<NodeIndex> result;
  for (std::size_t v = 0; v < types_.size(); ++v) {
    if (types_[v] == type) result.push_back(static_cast<NodeIndex>(v));
  }
  return result;
}

bool HetGraph::operator==(const HetGraph& other) const {
  return schema_ == other.schema_ && ids_ == other.ids_ && types_ == other.types_ &&
         attr_offsets_ == other.attr_offsets_ && attrs_ == other.attrs_ && edges_ == other.edges_;
}

// ---------------------------------------------------------------- files

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

HetGraph load_graph(const std::filesystem::path& schema_file,
                    const std::filesystem::path& nodes_file,
                    const std::filesystem::path& edges_file) {
  return load_graph(parse_schema(read_text_file(schema_file)), nodes_file, edges_file);
}

HetGraph load_graph(Schema schema, const std::filesystem::path& nodes_file,
                    const std::filesystem::path& edges_file) {

  std::vector<NodeRecord> nodes;
  for (auto& row : read_table(nodes_file, "id,type")) {
    if (row.size() < 2) {
      throw Error(ErrorCode::ParseError, nodes_file.string() + ": node row needs id and type");
    }
    NodeRecord rec;
    rec.id = row[0];
    rec.type = row[1];
    for (std::size_t i = 2; i < row.size(); ++i) {
      rec.attributes.push_back(parse_double(row[i], nodes_file.string()));
    }
    nodes.push_back(std::move(rec));
  }

  std::vector<EdgeRecord> edges;
  for (auto& row : read_table(edges_file, "source,target,type")) {
    if (row.size() != 3) {
      throw Error(ErrorCode::ParseError, edges_file.string() + ": edge row needs 3 columns");
    }
    edges.push_back({row[0], row[1], row[2]});
  }
  return HetGraph::build(std::move(schema), nodes, edges);
}

HetGraph load_graph_dir(const std::filesystem::path& dir) {
  return load_graph(dir / "schema.json", dir / "nodes.csv", dir / "edges.csv");
}

LabelSet load_labels(const std::filesystem::path& labels_file) {
  LabelSet labels;
  for (auto& row : read_table(labels_file, "id,label")) {
    if (row.size() != 2) {
      throw Error(ErrorCode::ParseError, labels_file.string() + ": label row needs 2 columns");
    }
    const double y = parse_double(row[1], labels_file.string());
    labels[row[0]] = static_cast<int>(y);
  }
  return labels;
}

std::string serialize_nodes(const HetGraph& graph) {
  std::string out = "id,type,attributes...\n";
  for (NodeIndex v = 0; v < graph.num_nodes(); ++v) {
    out += graph.id(v);
    out += ',';
    out += graph.schema().node_types()[graph.type(v)].name;
    for (double x : graph.attributes(v)) {
      out += ',';
      out += format_double(x);
    }
    out += '\n';
  }
  return out;
}

std::string serialize_edges(const HetGraph& graph) {
  std::string out = "source,target,type\n";
  for (const auto& e : graph.edges()) {
    out += graph.id(e.source);
    out += ',';
    out += graph.id(e.target);
    out += ',';
    out += graph.schema().edge_types()[e.type].name;
    out += '\n';
  }
  return out;
}

std::string serialize_labels(const LabelSet& labels) {
  std::string out = "id,label\n";
  for (const auto& [id, y] : labels) {
    out += id;
    out += ',';
    out += std::to_string(y);
    out += '\n';
  }
  return out;
}

void save_graph(const HetGraph& graph, const std::filesystem::path& dir, const LabelSet* labels) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string());
  write_text_file(dir / "schema.json", serialize_schema(graph.schema()));
  write_text_file(dir / "nodes.csv", serialize_nodes(graph));
  write_text_file(dir / "edges.csv", serialize_edges(graph));
  if (labels) write_text_file(dir / "labels.csv", serialize_labels(*labels));
}

// ---------------------------------------------------------------- analysis

std::vector<DegreeBin> degree_histogram(const HetGraph& graph) {
  std::vector<std::size_t> degree(graph.num_nodes(), 0);
  for (const auto& e : graph.edges()) {
    ++degree[e.source];
    ++degree[e.target];
  }
  std::map<std::size_t, std::size_t> bins;
  for (auto d : degree) ++bins[d];
  std::vector<DegreeBin> result;
  result.reserve(bins.size());
  for (const auto& [d, c] : bins) result.push_back({d, c});
  return result;
}

std::vector<LabelViolation> validate_labels(const HetGraph& graph, const LabelSet& labels) {
  std::vector<LabelViolation> report;
  for (const auto& [id, y] : labels) {
    const auto v = graph.find(id);
    if (!v) {
      report.push_back({id, "unknown node id"});
      continue;
    }
    if (!graph.is_company(*v)) {
      report.push_back({id, "labelled node is not of type '" + graph.schema().company_type_name() + "'"});
    }
    if (y != 0 && y != 1) {
      report.push_back({id, "label must be 0 or 1"});
    }
  }
  return report;
}

}  // namespace ted
