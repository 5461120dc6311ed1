#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>

#include "ted/error.hpp"
#include "ted/synth.hpp"

namespace fs = std::filesystem;
using namespace ted;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ted::Error thrown";
  return ErrorCode::UsageError;
}

GenConfig medium(std::uint64_t seed = 1) {
  GenConfig c;
  c.companies = 600;
  c.persons = 300;
  c.items = 60;
  c.events = 30;
  c.communities = 25;
  c.seed = seed;
  return c;
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("ted_synth_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(GenConfigTest, InfeasibleConfigs) {
  auto c = medium();
  c.communities = 200;  // 800 community companies > 600
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InfeasibleConfig);
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::InfeasibleConfig);
  c = medium();
  c.community_size = 2;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InfeasibleConfig);
  c = medium();
  c.p_rpt = 1.5;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InfeasibleConfig);
  c = medium();
  c.label_coverage = -0.1;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InfeasibleConfig);
  c = medium();
  c.persons = 10;  // three dedicated persons per community
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InfeasibleConfig);
}

TEST(Generate, CountsAndTypes) {
  const auto d = generate(medium());
  const auto& g = d.graph;
  EXPECT_EQ(g.num_nodes(), 990u);
  EXPECT_EQ(g.nodes_of_type(g.schema().company_type()).size(), 600u);
  EXPECT_EQ(d.communities.size(), 25u);
  EXPECT_EQ(d.community_companies().size(), 100u);
  EXPECT_EQ(d.background_companies().size(), 500u);
  EXPECT_EQ(d.labels.size(), 600u);
  for (const auto& [id, y] : d.labels) EXPECT_TRUE(g.is_company(*g.find(id)));
}

TEST(Generate, CommunityStructure) {
  const auto d = generate(medium());
  const auto& g = d.graph;
  const auto tx = g.schema().edge_type("transaction");
  const auto holds = g.schema().edge_type("holds");
  const auto sells = g.schema().edge_type("sells");
  const auto buys = g.schema().edge_type("buys");
  for (const auto& c : d.communities) {
    ASSERT_EQ(c.companies.size(), 4u);
    ASSERT_EQ(c.persons.size(), 3u);
    for (std::size_t k = 0; k < c.companies.size(); ++k) {
      const auto a = c.companies[k], b = c.companies[(k + 1) % c.companies.size()];
      EXPECT_TRUE(g.has_edge(a, b, tx));
      for (auto p : c.persons) EXPECT_TRUE(g.has_edge(p, a, holds));
      EXPECT_TRUE(g.has_edge(a, c.item, sells));
      EXPECT_TRUE(g.has_edge(a, c.item, buys));
    }
  }
}

TEST(Generate, IsolatedCommunitiesHaveNoBackgroundEdges) {
  const auto d = generate(medium());
  const auto& g = d.graph;
  std::set<NodeIndex> members;
  for (const auto& c : d.communities) {
    members.insert(c.companies.begin(), c.companies.end());
    members.insert(c.persons.begin(), c.persons.end());
    members.insert(c.item);
  }
  // Event membership is not part of any pattern and spans all companies.
  const auto belongs = g.schema().edge_type("belongs");
  for (const auto& e : g.edges()) {
    if (e.type == belongs) continue;
    EXPECT_EQ(members.count(e.source), members.count(e.target)) << g.id(e.source) << "->" << g.id(e.target);
  }
}

TEST(Generate, PlantedInstancesAreFoundByTheMatcher) {
  const auto d = generate(medium(4));
  ASSERT_EQ(d.planted.size(), 100u * 5u);
  for (const auto& p : default_patterns()) {
    const auto found = enumerate_instances(d.graph, p, {.cap = 0});
    std::size_t checked = 0;
    for (const auto& inst : d.planted) {
      if (inst.pattern_id != p.id()) continue;
      ++checked;
      EXPECT_TRUE(contains_instance(found, inst)) << p.id() << " at " << d.graph.id(inst.anchor);
    }
    EXPECT_EQ(checked, 100u);
  }
}

TEST(Generate, DeterministicExports) {
  const auto a = scratch("a"), b = scratch("b");
  export_synth(generate(medium(9)), a);
  export_synth(generate(medium(9)), b);
  for (auto f : {"schema.json", "nodes.csv", "edges.csv", "labels.csv", "communities.csv"}) {
    EXPECT_EQ(read_text_file(a / f), read_text_file(b / f)) << f;
  }
  const auto c = scratch("c");
  export_synth(generate(medium(10)), c);
  EXPECT_NE(read_text_file(a / "edges.csv"), read_text_file(c / "edges.csv"));
}

TEST(Generate, ExportRoundTrips) {
  const auto d = generate(medium(2));
  const auto dir = scratch("rt");
  export_synth(d, dir);
  EXPECT_TRUE(load_graph_dir(dir) == d.graph);
  EXPECT_EQ(load_labels(dir / "labels.csv"), d.labels);
  const auto text = read_text_file(dir / "communities.csv");
  EXPECT_EQ(text, serialize_communities(d));
  EXPECT_EQ(text.substr(0, text.find('\n')), "community,id,role");
}

TEST(Generate, CoverageControlsLabelCount) {
  auto c = medium();
  c.label_coverage = 0.0;
  EXPECT_TRUE(generate(c).labels.empty());
  c.label_coverage = 0.5;
  const auto n = static_cast<double>(generate(c).labels.size());
  EXPECT_NEAR(n, 300.0, 3 * std::sqrt(600 * 0.25));
}

TEST(Generate, LabelRatesWithinThreeSigma) {
  auto c = medium(6);
  c.companies = 4000;
  c.persons = 1500;
  c.items = 400;
  c.communities = 300;
  c.p_rpt = 0.7;
  c.p_bg = 0.15;
  const auto d = generate(c);
  auto rate = [&](const std::set<NodeIndex>& nodes) {
    double pos = 0;
    for (auto v : nodes) pos += d.labels.at(d.graph.id(v));
    return pos / static_cast<double>(nodes.size());
  };
  const auto in = d.community_companies(), out = d.background_companies();
  EXPECT_NEAR(rate(in), 0.7, 3 * std::sqrt(0.7 * 0.3 / static_cast<double>(in.size())));
  EXPECT_NEAR(rate(out), 0.15, 3 * std::sqrt(0.15 * 0.85 / static_cast<double>(out.size())));
}

TEST(Generate, FeatureShiftSeparatesClasses) {
  auto c = medium(3);
  c.delta = 3.0;
  const auto d = generate(c);
  const auto& g = d.graph;
  // Mean company vectors per class differ by delta along a unit direction.
  std::vector<double> mean[2] = {std::vector<double>(c.company_dim, 0.0), std::vector<double>(c.company_dim, 0.0)};
  double count[2] = {0, 0};
  for (const auto& [id, y] : d.labels) {
    const auto a = g.attributes(*g.find(id));
    for (std::size_t i = 0; i < a.size(); ++i) mean[y][i] += a[i];
    ++count[y];
  }
  double dist2 = 0;
  for (std::size_t i = 0; i < c.company_dim; ++i) {
    const double diff = mean[1][i] / count[1] - mean[0][i] / count[0];
    dist2 += diff * diff;
  }
  // Noise in the difference of means adds about dim * (1/n1 + 1/n0).
  EXPECT_NEAR(std::sqrt(dist2), 3.0, 0.6);
}

TEST(Generate, HeavyTailedDegrees) {
  auto c = medium(5);
  c.companies = 3000;
  c.persons = 1500;
  c.communities = 0;
  const auto d = generate(c);
  const auto hist = degree_histogram(d.graph);
  std::size_t max_degree = 0;
  double total = 0, n = 0;
  for (const auto& b : hist) {
    max_degree = std::max(max_degree, b.degree);
    total += static_cast<double>(b.degree * b.count);
    n += static_cast<double>(b.count);
  }
  EXPECT_GT(static_cast<double>(max_degree), 8.0 * total / n);
}
