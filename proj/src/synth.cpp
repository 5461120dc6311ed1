#include "ted/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "ted/error.hpp"
#include "ted/rng.hpp"

namespace ted {

void GenConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InfeasibleConfig, what); };
  auto probability = [&](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(std::string(name) + " must lie in [0, 1], got " + format_double(p));
  };
  probability(p_rpt, "p_rpt");
  probability(p_bg, "p_bg");
  probability(label_coverage, "label coverage");
  for (const double d : {transaction_density, holds_density, sells_density, buys_density, belongs_density,
                         category_density})
    if (!(d >= 0.0) || !std::isfinite(d)) fail("edge densities must be finite and non-negative");
  if (!(power_exponent > 1.0)) fail("power exponent must exceed 1");
  if (!std::isfinite(delta)) fail("feature shift must be finite");
  if (companies == 0) fail("at least one company is required");
  if (company_dim == 0 || other_dim == 0) fail("feature dimensions must be positive");
  if (communities > 0) {
    if (community_size < 3) fail("communities need at least 3 companies");
    if (communities * community_size > companies)
      fail(std::to_string(communities) + " communities of " + std::to_string(community_size) + " exceed " +
           std::to_string(companies) + " companies");
    if (communities * 3 > persons)
      fail(std::to_string(communities) + " communities need " + std::to_string(communities * 3) +
           " persons, only " + std::to_string(persons) + " configured");
    if (communities > items)
      fail(std::to_string(communities) + " communities need as many items, only " + std::to_string(items) +
           " configured");
  }
}

std::set<NodeIndex> SynthData::community_companies() const {
  std::set<NodeIndex> s;
  for (const auto& c : communities) s.insert(c.companies.begin(), c.companies.end());
  return s;
}

std::set<NodeIndex> SynthData::background_companies() const {
  const auto inside = community_companies();
  std::set<NodeIndex> s;
  for (NodeIndex v = 0; v < graph.num_nodes(); ++v)
    if (graph.is_company(v) && !inside.count(v)) s.insert(v);
  return s;
}

namespace {

// Chung-Lu style endpoint sampler: node weights follow a power law in a
// random rank order, giving heavy-tailed expected degrees.
class WeightedSampler {
 public:
  WeightedSampler(std::vector<NodeIndex> nodes, double exponent, Rng& rng) : nodes_(std::move(nodes)) {
    rng.shuffle(nodes_);
    cumulative_.reserve(nodes_.size());
    double total = 0.0;
    for (std::size_t r = 0; r < nodes_.size(); ++r) {
      total += std::pow(static_cast<double>(r + 1), -1.0 / (exponent - 1.0));
      cumulative_.push_back(total);
    }
  }

  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }

  NodeIndex draw(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto k = std::min(static_cast<std::size_t>(it - cumulative_.begin()), nodes_.size() - 1);
    return nodes_[k];
  }

 private:
  std::vector<NodeIndex> nodes_;
  std::vector<double> cumulative_;
};

// Draws round(density * source pool size) distinct edges; self loops are
// rejected and undirected pairs are stored once.
std::vector<std::pair<NodeIndex, NodeIndex>> sample_edges(const WeightedSampler& sources,
                                                          const WeightedSampler& targets, double density,
                                                          bool same_pool, bool undirected, Rng& rng) {
  std::vector<std::pair<NodeIndex, NodeIndex>> out;
  if (sources.empty() || targets.empty()) return out;
  if (same_pool && sources.size() < 2) return out;
  const auto want = static_cast<std::size_t>(std::llround(density * static_cast<double>(sources.size())));
  std::set<std::pair<NodeIndex, NodeIndex>> seen;
  for (std::size_t attempt = 0; out.size() < want && attempt < 20 * want + 100; ++attempt) {
    auto s = sources.draw(rng);
    auto t = targets.draw(rng);
    if (same_pool && s == t) continue;
    if (undirected && t < s) std::swap(s, t);
    if (!seen.insert({s, t}).second) continue;
    out.emplace_back(s, t);
  }
  return out;
}

std::string node_id(char prefix, std::size_t k) { return std::string(1, prefix) + std::to_string(k); }

}  // namespace

SynthData generate(const GenConfig& config) {
  config.validate();
  Rng root(config.seed);
  Rng topo = root.fork(1);
  Rng label_rng = root.fork(2);
  Rng feature_rng = root.fork(3);

  const NodeIndex c0 = 0;
  const auto p0 = static_cast<NodeIndex>(config.companies);
  const auto i0 = static_cast<NodeIndex>(p0 + config.persons);
  const auto e0 = static_cast<NodeIndex>(i0 + config.items);
  const auto total = static_cast<std::size_t>(e0) + config.events;

  auto range = [](NodeIndex first, std::size_t n) {
    std::vector<NodeIndex> v(n);
    std::iota(v.begin(), v.end(), first);
    return v;
  };
  auto companies = range(c0, config.companies);
  auto persons = range(p0, config.persons);
  auto items = range(i0, config.items);
  const auto events = range(e0, config.events);

  // Reserve community members.
  topo.shuffle(companies);
  topo.shuffle(persons);
  topo.shuffle(items);
  SynthData data;
  std::vector<char> reserved(total, 0);
  for (std::size_t c = 0; c < config.communities; ++c) {
    Community com;
    for (std::size_t j = 0; j < config.community_size; ++j)
      com.companies.push_back(companies[c * config.community_size + j]);
    for (std::size_t j = 0; j < 3; ++j) com.persons.push_back(persons[c * 3 + j]);
    com.item = items[c];
    std::sort(com.companies.begin(), com.companies.end());
    for (const auto v : com.companies) reserved[v] = 1;
    for (const auto v : com.persons) reserved[v] = 1;
    reserved[com.item] = 1;
    data.communities.push_back(std::move(com));
  }
  auto pool = [&](std::vector<NodeIndex> v) {
    std::sort(v.begin(), v.end());
    if (config.isolate_communities)
      v.erase(std::remove_if(v.begin(), v.end(), [&](NodeIndex x) { return reserved[x] != 0; }), v.end());
    return v;
  };
  const WeightedSampler bg_companies(pool(companies), config.power_exponent, topo);
  const WeightedSampler bg_persons(pool(persons), config.power_exponent, topo);
  const WeightedSampler bg_items(pool(items), config.power_exponent, topo);
  const WeightedSampler all_companies(range(c0, config.companies), config.power_exponent, topo);
  const WeightedSampler all_events(events, config.power_exponent, topo);

  std::vector<EdgeRecord> edges;
  const auto& ids_of = [&](NodeIndex v) {
    if (v < p0) return node_id('c', v - c0);
    if (v < i0) return node_id('p', v - p0);
    if (v < e0) return node_id('i', v - i0);
    return node_id('e', v - e0);
  };
  auto emit = [&](const std::vector<std::pair<NodeIndex, NodeIndex>>& list, const char* type) {
    for (const auto& [s, t] : list) edges.push_back({ids_of(s), ids_of(t), type});
  };

  emit(sample_edges(bg_companies, bg_companies, config.transaction_density, true, false, topo), "transaction");
  emit(sample_edges(bg_persons, bg_companies, config.holds_density, false, false, topo), "holds");
  emit(sample_edges(bg_companies, bg_items, config.sells_density, false, false, topo), "sells");
  emit(sample_edges(bg_companies, bg_items, config.buys_density, false, false, topo), "buys");
  emit(sample_edges(all_events, all_companies, config.belongs_density, false, false, topo), "belongs");
  emit(sample_edges(bg_items, bg_items, config.category_density, true, true, topo), "category");

  for (const auto& com : data.communities) {
    const auto k = com.companies.size();
    for (std::size_t j = 0; j < k; ++j) {
      const auto m = com.companies[j];
      edges.push_back({ids_of(m), ids_of(com.companies[(j + 1) % k]), "transaction"});
      for (const auto p : com.persons) edges.push_back({ids_of(p), ids_of(m), "holds"});
      edges.push_back({ids_of(m), ids_of(com.item), "sells"});
      edges.push_back({ids_of(m), ids_of(com.item), "buys"});
    }
  }

  // Latent labels for every company; coverage decides which are published.
  std::vector<char> inside(total, 0);
  for (const auto& com : data.communities)
    for (const auto v : com.companies) inside[v] = 1;
  std::vector<int> y(config.companies, 0);
  for (std::size_t c = 0; c < config.companies; ++c) {
    y[c] = label_rng.bernoulli(inside[c] ? config.p_rpt : config.p_bg) ? 1 : 0;
    if (label_rng.bernoulli(config.label_coverage)) data.labels[ids_of(static_cast<NodeIndex>(c))] = y[c];
  }

  const auto schema = default_tax_schema(config.company_dim, config.other_dim);
  std::vector<std::vector<double>> means;
  for (const auto& t : schema.node_types()) {
    std::vector<double> mu(t.dim);
    for (auto& v : mu) v = feature_rng.normal();
    means.push_back(std::move(mu));
  }
  std::vector<double> direction(config.company_dim);
  double norm = 0.0;
  for (auto& v : direction) {
    v = feature_rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : direction) v /= norm;

  std::vector<NodeRecord> nodes;
  nodes.reserve(total);
  for (NodeIndex v = 0; v < total; ++v) {
    const std::size_t t = v < p0 ? 0 : v < i0 ? 1 : v < e0 ? 2 : 3;
    NodeRecord rec{ids_of(v), schema.node_types()[t].name, means[t]};
    for (auto& x : rec.attributes) x += feature_rng.normal();
    if (t == 0 && y[v])
      for (std::size_t k = 0; k < rec.attributes.size(); ++k) rec.attributes[k] += config.delta * direction[k];
    nodes.push_back(std::move(rec));
  }
  data.graph = HetGraph::build(schema, nodes, edges);

  for (const auto& com : data.communities) {
    const auto k = com.companies.size();
    const auto a = com.persons[0], b = com.persons[1], c = com.persons[2];
    for (std::size_t j = 0; j < k; ++j) {
      const auto m0 = com.companies[j], m1 = com.companies[(j + 1) % k], m2 = com.companies[(j + 2) % k];
      data.planted.push_back({"PCCP", {a, m0, m1, b}, m0});
      data.planted.push_back({"PCCCP", {a, m0, m1, m2, b}, m0});
      data.planted.push_back({"PCICP", {a, m0, com.item, m1, b}, m0});
      data.planted.push_back({"PCPCP", {a, m0, b, m1, c}, m0});
      data.planted.push_back({"PCPCCP", {a, m0, b, m1, m2, c}, m0});
    }
  }
  return data;
}

std::string serialize_communities(const SynthData& data) {
  std::string s = "community,id,role\n";
  for (std::size_t c = 0; c < data.communities.size(); ++c) {
    const auto& com = data.communities[c];
    const auto tag = std::to_string(c) + ",";
    for (const auto v : com.companies) s += tag + data.graph.id(v) + ",company\n";
    for (const auto v : com.persons) s += tag + data.graph.id(v) + ",person\n";
    s += tag + data.graph.id(com.item) + ",item\n";
  }
  return s;
}

void export_synth(const SynthData& data, const std::filesystem::path& dir) {
  save_graph(data.graph, dir, &data.labels);
  write_text_file(dir / "communities.csv", serialize_communities(data));
}

bool contains_instance(const std::vector<RptInstance>& instances, const RptInstance& planted) {
  auto key = planted.nodes;
  std::sort(key.begin(), key.end());
  return std::any_of(instances.begin(), instances.end(), [&](const RptInstance& inst) {
    if (inst.pattern_id != planted.pattern_id || inst.anchor != planted.anchor) return false;
    auto k = inst.nodes;
    std::sort(k.begin(), k.end());
    return k == key;
  });
}

}  // namespace ted
