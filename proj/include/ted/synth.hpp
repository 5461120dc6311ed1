#pragma once

// Synthetic tax graphs over the default schema: heavy-tailed background
// relations plus planted related-party communities whose members carry
// elevated evasion probability.

#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

#include "ted/hetgraph.hpp"
#include "ted/rpt.hpp"

namespace ted {

struct GenConfig {
  std::size_t companies = 2000;
  std::size_t persons = 1000;
  std::size_t items = 200;
  std::size_t events = 100;

  // Background edges per node of the source type.
  double transaction_density = 1.0;  // per company
  double holds_density = 1.5;        // per person
  double sells_density = 0.5;        // per company
  double buys_density = 0.5;         // per company
  double belongs_density = 2.0;      // per event
  double category_density = 0.5;     // per item
  double power_exponent = 2.5;       // degree-weight tail exponent

  std::size_t communities = 50;
  std::size_t community_size = 4;
  // Community companies, persons and items receive no background edges.
  bool isolate_communities = true;

  double p_rpt = 0.8;           // evasion probability inside communities
  double p_bg = 0.1;            // evasion probability elsewhere
  double label_coverage = 1.0;  // fraction of companies whose label is emitted

  std::size_t company_dim = 16;
  std::size_t other_dim = 8;
  double delta = 1.0;           // class-conditional feature shift
  std::uint64_t seed = 1;

  // Throws InfeasibleConfig.
  void validate() const;
};

// Each community: `community_size` companies in a transaction cycle, three
// persons holding every member, and one item every member sells and buys.
struct Community {
  std::vector<NodeIndex> companies;
  std::vector<NodeIndex> persons;
  NodeIndex item = 0;
};

struct SynthData {
  HetGraph graph;
  LabelSet labels;
  std::vector<Community> communities;
  // One representative instance per (community member, bundled pattern).
  std::vector<RptInstance> planted;

  std::set<NodeIndex> community_companies() const;
  std::set<NodeIndex> background_companies() const;
};

SynthData generate(const GenConfig& config);

// Writes schema.json, nodes.csv, edges.csv, labels.csv, communities.csv.
void export_synth(const SynthData& data, const std::filesystem::path& dir);
std::string serialize_communities(const SynthData& data);

// True when `instances` holds an instance of the same pattern and anchor over
// the same node multiset as `planted`.
bool contains_instance(const std::vector<RptInstance>& instances, const RptInstance& planted);

}  // namespace ted
