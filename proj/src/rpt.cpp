#include "ted/rpt.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <queue>
#include <thread>

#include <json.hpp>

#include "ted/error.hpp"

namespace ted {

namespace {

using nlohmann::json;

// ------------------------------------------------------------ pattern setup

RptPattern make_pattern(std::string id, std::vector<PatternRole> roles,
                        std::vector<std::tuple<std::string, std::string, std::string>> edges,
                        const std::string& anchor) {
  auto role_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t r = 0; r < roles.size(); ++r) {
      if (roles[r].name == name) return r;
    }
    throw Error(ErrorCode::MalformedPattern, "pattern '" + id + "' has no role '" + name + "'");
  };
  std::vector<PatternEdge> resolved;
  for (const auto& [s, t, type] : edges) resolved.push_back({role_index(s), role_index(t), type});
  const auto a = role_index(anchor);
  return RptPattern(std::move(id), std::move(roles), std::move(resolved), a);
}

struct ResolvedEdge {
  std::size_t source;
  std::size_t target;
  TypeId type;
};

// A pattern bound to a concrete schema plus the search plan used for every
// anchor: roles are visited anchor first, then most-constrained next.
struct SearchPlan {
  std::size_t num_roles = 0;
  std::vector<TypeId> role_type;
  std::vector<std::size_t> order;  // visiting order of roles; order[0] is the anchor
  struct Step {
    std::size_t role;
    std::size_t driver_role;  // already-assigned role the candidates hang off
    TypeId driver_type;
    bool role_is_target;  // candidates = out(driver) if true, in(driver) otherwise
    std::vector<ResolvedEdge> checks;  // edges to verify once `role` is placed
  };
  std::vector<Step> steps;  // one per order[1..]
  std::vector<ResolvedEdge> anchor_checks;  // anchor self-loops
  // Per role: (edge type, is_outgoing) the node must have at least once.
  std::vector<std::vector<std::pair<TypeId, bool>>> requirements;
};

SearchPlan make_plan(const HetGraph& graph, const RptPattern& pattern) {
  const auto& schema = graph.schema();
  if (!pattern.applicable_to(schema)) {
    throw Error(ErrorCode::PatternTypeUnknown,
                "pattern '" + pattern.id() + "' references types not in the graph schema");
  }
  SearchPlan plan;
  plan.num_roles = pattern.size();
  for (const auto& role : pattern.roles()) plan.role_type.push_back(schema.node_type(role.type));
  std::vector<ResolvedEdge> edges;
  for (const auto& e : pattern.edges()) edges.push_back({e.source, e.target, schema.edge_type(e.type)});

  plan.requirements.resize(plan.num_roles);
  for (const auto& e : edges) {
    plan.requirements[e.source].push_back({e.type, true});
    plan.requirements[e.target].push_back({e.type, false});
  }
  for (auto& req : plan.requirements) {
    std::sort(req.begin(), req.end());
    req.erase(std::unique(req.begin(), req.end()), req.end());
  }

  std::vector<std::size_t> type_population(schema.node_types().size(), 0);
  for (NodeIndex v = 0; v < graph.num_nodes(); ++v) ++type_population[graph.type(v)];

  std::vector<bool> placed(plan.num_roles, false);
  plan.order.push_back(pattern.anchor());
  placed[pattern.anchor()] = true;
  for (const auto& e : edges) {
    if (e.source == pattern.anchor() && e.target == pattern.anchor()) plan.anchor_checks.push_back(e);
  }
  while (plan.order.size() < plan.num_roles) {
    std::size_t best = plan.num_roles;
    std::size_t best_links = 0;
    for (std::size_t r = 0; r < plan.num_roles; ++r) {
      if (placed[r]) continue;
      std::size_t links = 0;
      for (const auto& e : edges) {
        if ((e.source == r && placed[e.target]) || (e.target == r && placed[e.source])) ++links;
      }
      if (links == 0) continue;
      const bool better =
          best == plan.num_roles || links > best_links ||
          (links == best_links &&
           type_population[plan.role_type[r]] < type_population[plan.role_type[best]]);
      if (better) {
        best = r;
        best_links = links;
      }
    }
    SearchPlan::Step step{};
    step.role = best;
    bool have_driver = false;
    for (const auto& e : edges) {
      const bool touches = (e.source == best && (placed[e.target] || e.target == best)) ||
                           (e.target == best && placed[e.source]);
      if (!touches) continue;
      step.checks.push_back(e);
      if (!have_driver && e.source != e.target) {
        have_driver = true;
        step.role_is_target = e.target == best;
        step.driver_role = step.role_is_target ? e.source : e.target;
        step.driver_type = e.type;
      }
    }
    plan.steps.push_back(std::move(step));
    placed[best] = true;
    plan.order.push_back(best);
  }
  return plan;
}

bool meets_requirements(const HetGraph& graph, const SearchPlan& plan, std::size_t role, NodeIndex v) {
  if (graph.type(v) != plan.role_type[role]) return false;
  for (const auto& [type, outgoing] : plan.requirements[role]) {
    if ((outgoing ? graph.out(v, type) : graph.in(v, type)).empty()) return false;
  }
  return true;
}

struct AnchorSearch {
  const HetGraph& graph;
  const SearchPlan& plan;
  MatchMode mode;
  std::vector<NodeIndex> assignment;
  // sorted multiset -> smallest canonical list seen
  std::map<std::vector<NodeIndex>, std::vector<NodeIndex>> found;

  void run(NodeIndex anchor) {
    found.clear();
    assignment.assign(plan.num_roles, 0);
    const auto anchor_role = plan.order[0];
    if (!meets_requirements(graph, plan, anchor_role, anchor)) return;
    for (const auto& e : plan.anchor_checks) {
      if (!graph.has_edge(anchor, anchor, e.type)) return;
    }
    assignment[anchor_role] = anchor;
    extend(0);
  }

  void extend(std::size_t depth) {
    if (depth == plan.steps.size()) {
      auto key = assignment;
      std::sort(key.begin(), key.end());
      auto [it, inserted] = found.try_emplace(std::move(key), assignment);
      if (!inserted && assignment < it->second) it->second = assignment;
      return;
    }
    const auto& step = plan.steps[depth];
    const auto driver = assignment[step.driver_role];
    const auto candidates = step.role_is_target ? graph.out(driver, step.driver_type)
                                                : graph.in(driver, step.driver_type);
    for (const auto& cand : candidates) {
      const auto v = cand.node;
      if (!meets_requirements(graph, plan, step.role, v)) continue;
      if (mode == MatchMode::Injective) {
        bool used = false;
        for (std::size_t d = 0; d <= depth && !used; ++d) used = assignment[plan.order[d]] == v;
        if (used) continue;
      }
      assignment[step.role] = v;
      bool ok = true;
      for (const auto& e : step.checks) {
        if (!graph.has_edge(assignment[e.source], assignment[e.target], e.type)) {
          ok = false;
          break;
        }
      }
      if (ok) extend(depth + 1);
    }
  }
};

}  // namespace

// ---------------------------------------------------------------- RptPattern

RptPattern::RptPattern(std::string id, std::vector<PatternRole> roles, std::vector<PatternEdge> edges,
                       std::size_t anchor)
    : id_(std::move(id)), roles_(std::move(roles)), edges_(std::move(edges)), anchor_(anchor) {
  if (id_.empty() || roles_.empty()) {
    throw Error(ErrorCode::MalformedPattern, "pattern needs an id and at least one role");
  }
  if (anchor_ >= roles_.size()) {
    throw Error(ErrorCode::MalformedPattern, "pattern '" + id_ + "' anchor role out of range");
  }
  for (const auto& e : edges_) {
    if (e.source >= roles_.size() || e.target >= roles_.size()) {
      throw Error(ErrorCode::MalformedPattern, "pattern '" + id_ + "' edge references unknown role");
    }
  }
  std::vector<bool> seen(roles_.size(), false);
  std::vector<std::size_t> stack = {anchor_};
  seen[anchor_] = true;
  while (!stack.empty()) {
    const auto r = stack.back();
    stack.pop_back();
    for (const auto& e : edges_) {
      for (auto [a, b] : {std::pair{e.source, e.target}, std::pair{e.target, e.source}}) {
        if (a == r && !seen[b]) {
          seen[b] = true;
          stack.push_back(b);
        }
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(ErrorCode::MalformedPattern, "pattern '" + id_ + "' is not connected");
  }
}

std::vector<std::size_t> RptPattern::slot_order() const {
  std::vector<std::size_t> order = {anchor_};
  for (std::size_t r = 0; r < roles_.size(); ++r) {
    if (r != anchor_) order.push_back(r);
  }
  return order;
}

bool RptPattern::applicable_to(const Schema& schema) const {
  for (const auto& role : roles_) {
    if (!schema.find_node_type(role.type)) return false;
  }
  if (roles_[anchor_].type != schema.company_type_name()) return false;
  for (const auto& e : edges_) {
    const auto t = schema.find_edge_type(e.type);
    if (!t) return false;
    const auto& et = schema.edge_types()[*t];
    if (schema.node_type(roles_[e.source].type) != et.source ||
        schema.node_type(roles_[e.target].type) != et.target) {
      return false;
    }
  }
  return true;
}

std::vector<RptPattern> parse_patterns(const std::string& json_text) {
  std::vector<RptPattern> patterns;
  try {
    const auto doc = json::parse(json_text);
    for (const auto& p : doc.at("patterns")) {
      std::vector<PatternRole> roles;
      for (const auto& r : p.at("roles")) {
        roles.push_back({r.at("name").get<std::string>(), r.at("type").get<std::string>()});
      }
      std::vector<std::tuple<std::string, std::string, std::string>> edges;
      for (const auto& e : p.at("edges")) {
        edges.emplace_back(e.at("source").get<std::string>(), e.at("target").get<std::string>(),
                           e.at("type").get<std::string>());
      }
      patterns.push_back(make_pattern(p.at("id").get<std::string>(), std::move(roles),
                                      std::move(edges), p.at("anchor").get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("patterns: ") + e.what());
  }
  return patterns;
}

std::string serialize_patterns(const std::vector<RptPattern>& patterns) {
  json doc;
  doc["patterns"] = json::array();
  for (const auto& p : patterns) {
    json entry;
    entry["id"] = p.id();
    entry["anchor"] = p.roles()[p.anchor()].name;
    entry["roles"] = json::array();
    for (const auto& r : p.roles()) entry["roles"].push_back({{"name", r.name}, {"type", r.type}});
    entry["edges"] = json::array();
    for (const auto& e : p.edges()) {
      entry["edges"].push_back({{"source", p.roles()[e.source].name},
                                {"target", p.roles()[e.target].name},
                                {"type", e.type}});
    }
    doc["patterns"].push_back(std::move(entry));
  }
  return doc.dump(2) + "\n";
}

std::vector<RptPattern> load_patterns(const std::filesystem::path& file) {
  return parse_patterns(read_text_file(file));
}

std::vector<RptPattern> default_patterns() {
  const PatternRole p1{"p1", "person"}, p2{"p2", "person"}, p3{"p3", "person"};
  const PatternRole c1{"c1", "company"}, c2{"c2", "company"}, c3{"c3", "company"};
  const PatternRole item{"i", "item"};
  std::vector<RptPattern> patterns;
  // Two traders that share an owner or investor.
  patterns.push_back(make_pattern("PCCP", {p1, c1, c2, p2},
                                  {{"p1", "c1", "holds"}, {"p2", "c2", "holds"}, {"c1", "c2", "transaction"}},
                                  "c1"));
  patterns.push_back(make_pattern("PCCCP", {p1, c1, c2, c3, p2},
                                  {{"p1", "c1", "holds"},
                                   {"c1", "c2", "transaction"},
                                   {"c2", "c3", "transaction"},
                                   {"p2", "c3", "holds"}},
                                  "c1"));
  patterns.push_back(make_pattern("PCICP", {p1, c1, item, c2, p2},
                                  {{"p1", "c1", "holds"}, {"c1", "i", "sells"}, {"c2", "i", "buys"}, {"p2", "c2", "holds"}},
                                  "c1"));
  patterns.push_back(make_pattern("PCPCP", {p1, c1, p2, c2, p3},
                                  {{"p1", "c1", "holds"}, {"p2", "c1", "holds"}, {"p2", "c2", "holds"}, {"p3", "c2", "holds"}},
                                  "c1"));
  patterns.push_back(make_pattern("PCPCCP", {p1, c1, p2, c2, c3, p3},
                                  {{"p1", "c1", "holds"},
                                   {"p2", "c1", "holds"},
                                   {"p2", "c2", "holds"},
                                   {"c2", "c3", "transaction"},
                                   {"p3", "c3", "holds"}},
                                  "c1"));
  return patterns;
}

std::vector<RptPattern> applicable_patterns(const Schema& schema, const std::vector<RptPattern>& patterns) {
  std::vector<RptPattern> kept;
  for (const auto& p : patterns) {
    if (p.applicable_to(schema)) kept.push_back(p);
  }
  return kept;
}

// ---------------------------------------------------------------- matching

std::vector<RptInstance> enumerate_instances(const HetGraph& graph, const RptPattern& pattern,
                                             const MatchOptions& options, MatchReport* report) {
  const auto plan = make_plan(graph, pattern);
  const auto anchors = graph.nodes_of_type(plan.role_type[pattern.anchor()]);

  std::size_t threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, anchors.size() / 64 + 1));

  struct Chunk {
    std::vector<std::vector<NodeIndex>> lists;
    std::size_t truncated = 0;
    std::exception_ptr error;
  };
  std::vector<Chunk> chunks(threads);
  auto work = [&](std::size_t t) {
    auto& chunk = chunks[t];
    try {
      AnchorSearch search{graph, plan, options.mode, {}, {}};
      const auto begin = anchors.size() * t / threads;
      const auto end = anchors.size() * (t + 1) / threads;
      for (auto a = begin; a < end; ++a) {
        search.run(anchors[a]);
        std::vector<std::vector<NodeIndex>> lists;
        lists.reserve(search.found.size());
        for (auto& [key, canonical] : search.found) lists.push_back(std::move(canonical));
        std::sort(lists.begin(), lists.end());
        if (options.cap != 0 && lists.size() > options.cap) {
          if (options.cap_mode == CapMode::Error) {
            throw Error(ErrorCode::InstanceCapExceeded,
                        "pattern '" + pattern.id() + "' has " + std::to_string(lists.size()) +
                            " instances at node '" + graph.id(anchors[a]) + "' (cap " +
                            std::to_string(options.cap) + ")");
          }
          lists.resize(options.cap);
          ++chunk.truncated;
        }
        for (auto& l : lists) chunk.lists.push_back(std::move(l));
      }
    } catch (...) {
      chunk.error = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }

  std::vector<std::vector<NodeIndex>> all;
  std::size_t truncated = 0;
  for (auto& chunk : chunks) {
    if (chunk.error) std::rethrow_exception(chunk.error);
    truncated += chunk.truncated;
    for (auto& l : chunk.lists) all.push_back(std::move(l));
  }
  std::sort(all.begin(), all.end());
  if (report) report->truncated_anchors += truncated;

  std::vector<RptInstance> result;
  result.reserve(all.size());
  for (auto& l : all) {
    const auto anchor = l[pattern.anchor()];
    result.push_back({pattern.id(), std::move(l), anchor});
  }
  return result;
}

// ---------------------------------------------------------------- index

NeighborIndex build_neighbor_index(const HetGraph& graph, const std::vector<RptPattern>& patterns,
                                   const MatchOptions& options, MatchReport* report) {
  NeighborIndex index;
  index.patterns_ = patterns;
  index.num_nodes_ = graph.num_nodes();
  for (const auto& pattern : patterns) {
    auto instances = enumerate_instances(graph, pattern, options, report);
    std::stable_sort(instances.begin(), instances.end(),
                     [](const RptInstance& a, const RptInstance& b) { return a.anchor < b.anchor; });
    NeighborIndex::Slots slots;
    slots.width = pattern.size();
    slots.offsets.assign(graph.num_nodes() + 1, 0);
    for (const auto& inst : instances) ++slots.offsets[inst.anchor + 1];
    for (std::size_t v = 0; v < graph.num_nodes(); ++v) slots.offsets[v + 1] += slots.offsets[v];
    slots.nodes.reserve(instances.size() * slots.width);
    for (const auto& inst : instances) slots.nodes.insert(slots.nodes.end(), inst.nodes.begin(), inst.nodes.end());
    index.slots_.push_back(std::move(slots));
  }
  return index;
}

std::size_t NeighborIndex::count(std::size_t m, NodeIndex i) const {
  const auto& s = slots_[m];
  return s.offsets[i + 1] - s.offsets[i];
}

std::size_t NeighborIndex::total_instances(std::size_t m) const { return slots_[m].offsets.back(); }

std::span<const NodeIndex> NeighborIndex::instance(std::size_t m, NodeIndex i, std::size_t k) const {
  const auto& s = slots_[m];
  return {s.nodes.data() + (s.offsets[i] + k) * s.width, s.width};
}

std::vector<NodeIndex> NeighborIndex::neighbors(std::size_t m, NodeIndex i, std::size_t k) const {
  const auto inst = instance(m, i, k);
  std::vector<NodeIndex> nodes(inst.begin(), inst.end());
  nodes.push_back(i);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

bool NeighborIndex::has_any_instance(NodeIndex i) const {
  for (std::size_t m = 0; m < slots_.size(); ++m) {
    if (count(m, i) > 0) return true;
  }
  return false;
}

// ---------------------------------------------------------------- baselines

Metapath parse_metapath(const std::string& name, const std::string& spec) {
  Metapath mp;
  mp.name = name;
  std::size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    const auto pos = spec.find('-', start);
    parts.push_back(spec.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (parts.size() < 3 || parts.size() % 2 == 0) {
    throw Error(ErrorCode::MalformedMetapath, "metapath '" + spec + "' must alternate node-edge-node");
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    (i % 2 == 0 ? mp.node_types : mp.edge_types).push_back(parts[i]);
  }
  return mp;
}

std::vector<Metapath> default_metapaths() {
  return {parse_metapath("CIC", "company-sells-item-buys-company"),
          parse_metapath("CPC", "company-holds-person-holds-company"),
          parse_metapath("CC", "company-transaction-company")};
}

NeighborMap metapath_neighbors(const HetGraph& graph, const Metapath& metapath) {
  const auto& schema = graph.schema();
  if (metapath.node_types.size() < 2 || metapath.edge_types.size() + 1 != metapath.node_types.size()) {
    throw Error(ErrorCode::MalformedMetapath, "metapath '" + metapath.name + "' has inconsistent length");
  }
  struct Step {
    TypeId edge;
    bool forward;
    bool backward;
  };
  std::vector<TypeId> node_types;
  for (const auto& n : metapath.node_types) {
    const auto t = schema.find_node_type(n);
    if (!t) throw Error(ErrorCode::MalformedMetapath, "metapath '" + metapath.name + "': unknown node type " + n);
    node_types.push_back(*t);
  }
  std::vector<Step> steps;
  for (std::size_t k = 0; k < metapath.edge_types.size(); ++k) {
    const auto t = schema.find_edge_type(metapath.edge_types[k]);
    if (!t) {
      throw Error(ErrorCode::MalformedMetapath,
                  "metapath '" + metapath.name + "': unknown edge type " + metapath.edge_types[k]);
    }
    const auto& et = schema.edge_types()[*t];
    Step step{*t, et.source == node_types[k] && et.target == node_types[k + 1],
              et.target == node_types[k] && et.source == node_types[k + 1]};
    if (!step.forward && !step.backward) {
      throw Error(ErrorCode::MalformedMetapath, "metapath '" + metapath.name + "': edge type " +
                                                    et.name + " does not join the adjacent node types");
    }
    steps.push_back(step);
  }

  NeighborMap result;
  for (const auto start : graph.nodes_of_type(node_types.front())) {
    std::vector<NodeIndex> frontier = {start};
    for (const auto& step : steps) {
      std::vector<NodeIndex> next;
      for (const auto v : frontier) {
        if (step.forward) {
          for (const auto& a : graph.out(v, step.edge)) next.push_back(a.node);
        }
        if (step.backward) {
          for (const auto& a : graph.in(v, step.edge)) next.push_back(a.node);
        }
      }
      std::sort(next.begin(), next.end());
      next.erase(std::unique(next.begin(), next.end()), next.end());
      frontier = std::move(next);
    }
    auto& ends = result[start];
    for (const auto v : frontier) {
      if (v != start) ends.insert(v);
    }
  }
  return result;
}

NeighborMap k_order_neighbors(const HetGraph& graph, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::UsageError, "k-order neighbours need k >= 1");
  std::vector<std::vector<NodeIndex>> adj(graph.num_nodes());
  for (NodeIndex v = 0; v < graph.num_nodes(); ++v) adj[v] = graph.undirected_neighbors(v);

  NeighborMap result;
  std::vector<std::size_t> depth(graph.num_nodes(), SIZE_MAX);
  std::vector<NodeIndex> touched;
  for (const auto center : graph.nodes_of_type(graph.schema().company_type())) {
    auto& members = result[center];
    std::queue<NodeIndex> queue;
    depth[center] = 0;
    touched.push_back(center);
    queue.push(center);
    while (!queue.empty()) {
      const auto v = queue.front();
      queue.pop();
      if (depth[v] == k) continue;
      for (const auto w : adj[v]) {
        if (depth[w] != SIZE_MAX) continue;
        depth[w] = depth[v] + 1;
        touched.push_back(w);
        queue.push(w);
        if (graph.is_company(w)) members.insert(w);
      }
    }
    for (const auto v : touched) depth[v] = SIZE_MAX;
    touched.clear();
  }
  return result;
}

NeighborMap rpt_neighbors(const NeighborIndex& index, std::optional<std::size_t> pattern) {
  NeighborMap result;
  for (NodeIndex i = 0; i < index.num_nodes(); ++i) {
    for (std::size_t m = 0; m < index.num_patterns(); ++m) {
      if (pattern && *pattern != m) continue;
      const auto n = index.count(m, i);
      if (n == 0) continue;
      auto& set = result[i];
      for (std::size_t k = 0; k < n; ++k) {
        for (const auto v : index.instance(m, i, k)) {
          if (v != i) set.insert(v);
        }
      }
    }
  }
  return result;
}

std::vector<EvasionStat> evasion_ratio_stats(const HetGraph& graph, const EvasionStatsInput& input,
                                             const LabelSet& labels) {
  std::vector<int> label(graph.num_nodes(), -1);
  for (const auto& [id, y] : labels) {
    if (const auto v = graph.find(id)) label[*v] = y;
  }

  auto pair_stat = [&](std::string name, std::string kind, const NeighborMap& neighbors) {
    EvasionStat s{std::move(name), std::move(kind), 0, 0, std::nullopt, std::nullopt};
    for (const auto& [center, set] : neighbors) {
      if (label[center] != 1) continue;
      for (const auto v : set) {
        if (v == center || label[v] < 0) continue;
        ++s.pairs;
        s.evading_pairs += static_cast<std::size_t>(label[v]);
      }
    }
    if (s.pairs > 0) s.probability = static_cast<double>(s.evading_pairs) / static_cast<double>(s.pairs);
    return s;
  };

  std::vector<EvasionStat> stats;
  if (input.index) {
    stats.push_back(pair_stat("RPT", "rpt", rpt_neighbors(*input.index)));
    for (std::size_t m = 0; m < input.index->num_patterns(); ++m) {
      stats.push_back(pair_stat("RPT:" + input.index->pattern(m).id(), "rpt", rpt_neighbors(*input.index, m)));
    }
  }
  for (const auto& [name, map] : input.metapaths) stats.push_back(pair_stat(name, "metapath", map));
  for (const auto& [k, map] : input.k_orders) {
    stats.push_back(pair_stat("k=" + std::to_string(k), "k-order", map));
  }
  if (input.background) {
    EvasionStat s{"background", "background", 0, 0, std::nullopt, std::nullopt};
    for (const auto v : *input.background) {
      if (label[v] < 0) continue;
      ++s.pairs;
      s.evading_pairs += static_cast<std::size_t>(label[v]);
    }
    if (s.pairs > 0) s.probability = static_cast<double>(s.evading_pairs) / static_cast<double>(s.pairs);
    stats.push_back(std::move(s));
  }

  if (!stats.empty() && stats.front().name == "RPT" && stats.front().probability) {
    const double rpt = *stats.front().probability;
    for (auto& s : stats) {
      if (s.probability && *s.probability > 0.0) s.rpt_ratio = rpt / *s.probability;
    }
  }
  return stats;
}

std::string format_stats_table(const std::vector<EvasionStat>& stats) {
  std::string out = "definition,kind,pairs,evading_pairs,probability,rpt_ratio\n";
  for (const auto& s : stats) {
    out += s.name + "," + s.kind + "," + std::to_string(s.pairs) + "," + std::to_string(s.evading_pairs) + ",";
    out += s.probability ? format_double(*s.probability) : std::string("undefined");
    out += ",";
    out += s.rpt_ratio ? format_double(*s.rpt_ratio) : std::string("undefined");
    out += "\n";
  }
  return out;
}

}  // namespace ted
