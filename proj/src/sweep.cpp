#include "ted/sweep.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "ted/error.hpp"

namespace ted {

Experiment run_experiment(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
                          const TrainConfig& config, EvalMode mode) {
  auto run = train(graph, index, labels, config);
  Experiment ex;
  ex.metrics = evaluate_model(graph, index, run.result.params, config.ablation, labels, run.split, mode, config.seed);
  ex.metrics.loss_history = run.result.metrics.loss_history;
  ex.metrics.epoch_seconds = run.result.metrics.epoch_seconds;
  ex.split = std::move(run.split);
  ex.result = std::move(run.result);
  return ex;
}

Metrics features_only_baseline(const HetGraph& graph, const LabelSet& labels, const DatasetSplit& split,
                               std::uint64_t seed) {
  std::vector<NodeIndex> train_nodes, test_nodes;
  std::vector<int> train_y, test_y;
  resolve_labelled(graph, labels, split.train, train_nodes, train_y);
  resolve_labelled(graph, labels, split.test, test_nodes, test_y);
  return evaluate_downstream(feature_matrix(graph, train_nodes), train_y, feature_matrix(graph, test_nodes), test_y,
                             seed);
}

std::size_t feasible_train_size(const LabelSet& labels, double psr, double test_fraction) {
  std::size_t pos = 0;
  for (const auto& [id, y] : labels) pos += y ? 1 : 0;
  const auto n = labels.size();
  const auto neg = n - pos;
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  const auto test_pos =
      n == 0 ? std::size_t{0}
             : static_cast<std::size_t>(std::llround(static_cast<double>(n_test) * static_cast<double>(pos) /
                                                     static_cast<double>(n)));
  const auto pool_pos = pos - std::min(pos, test_pos);
  const auto pool_neg = neg - std::min(neg, n_test - test_pos);
  for (auto size = pool_pos + pool_neg; size > 0; --size) {
    const auto want_pos = static_cast<std::size_t>(std::llround(psr * static_cast<double>(size)));
    if (want_pos <= pool_pos && size - want_pos <= pool_neg) return size;
  }
  return 0;
}

namespace {

GridRow row_of(std::string name, const Experiment& ex) {
  return {std::move(name), ex.metrics.f1, ex.metrics.accuracy, ex.metrics.loss_history.size(),
          ex.metrics.loss_history.empty() ? 0.0 : ex.metrics.loss_history.back()};
}

}  // namespace

std::vector<GridRow> ablation_grid(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
                                   const TrainConfig& config, EvalMode mode) {
  std::vector<GridRow> rows;
  for (const char* variant : {"none", "hete", "inner", "cross", "att"}) {
    auto cfg = config;
    cfg.ablation = Ablation::parse(variant);
    rows.push_back(row_of(variant, run_experiment(graph, index, labels, cfg, mode)));
  }
  return rows;
}

std::vector<GridRow> psr_grid(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
                              const TrainConfig& config, const std::vector<double>& psrs, EvalMode mode) {
  // One training-set size for every PSR so the rows differ only in class mix.
  auto size = config.train_size;
  if (!size) {
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (const double p : psrs) smallest = std::min(smallest, feasible_train_size(labels, p, config.test_fraction));
    size = smallest;
  }
  std::vector<GridRow> rows;
  for (const double p : psrs) {
    auto cfg = config;
    cfg.psr = p;
    cfg.train_size = size;
    rows.push_back(row_of(format_double(p), run_experiment(graph, index, labels, cfg, mode)));
  }
  return rows;
}

std::string format_grid(const std::vector<GridRow>& rows, std::string_view key) {
  std::string s = std::string(key) + ",f1,accuracy,epochs,final_loss\n";
  for (const auto& r : rows)
    s += r.name + "," + format_double(r.f1) + "," + format_double(r.accuracy) + "," + std::to_string(r.epochs) +
         "," + format_double(r.final_loss) + "\n";
  return s;
}

GenConfig scale_config(const GenConfig& base, std::size_t nodes) {
  const double total = static_cast<double>(base.companies + base.persons + base.items + base.events);
  const double f = static_cast<double>(nodes) / total;
  auto scaled = [&](std::size_t n) { return static_cast<std::size_t>(std::llround(static_cast<double>(n) * f)); };
  GenConfig g = base;
  g.companies = std::max<std::size_t>(1, scaled(base.companies));
  g.persons = scaled(base.persons);
  g.items = scaled(base.items);
  g.events = nodes > g.companies + g.persons + g.items ? nodes - g.companies - g.persons - g.items : 0;
  g.communities = scaled(base.communities);
  return g;
}

TimingConfig default_timing_config() {
  TimingConfig c;
  c.base.companies = 3000;
  c.base.persons = 1400;
  c.base.items = 400;
  c.base.events = 200;
  c.base.communities = 150;
  c.base.p_rpt = 1.0;
  c.base.p_bg = 0.0;
  c.base.delta = 0.5;
  c.base.label_coverage = 0.25;
  c.train.dims = {8, 2, 4, 8};
  c.train.epochs = 500;
  c.train.batch_size = 256;
  c.train.test_fraction = 0.2;
  c.match.cap = 16;
  c.match.cap_mode = CapMode::Truncate;
  return c;
}

std::vector<TimingRow> timing_sweep(const std::vector<std::size_t>& sizes, const TimingConfig& config) {
  std::vector<TimingRow> rows;
  for (const auto size : sizes) {
    auto gen = scale_config(config.base, size);
    const auto data = generate(gen);
    const auto patterns = applicable_patterns(data.graph.schema(), default_patterns());
    const auto index = build_neighbor_index(data.graph, patterns, config.match);
    auto cfg = config.train;
    cfg.loss_threshold = config.loss_threshold;
    if (!cfg.train_size) cfg.train_size = feasible_train_size(data.labels, cfg.psr, cfg.test_fraction);
    const auto start = std::chrono::steady_clock::now();
    const auto run = train(data.graph, index, data.labels, cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto& hist = run.result.metrics.loss_history;
    TimingRow row;
    row.nodes = data.graph.num_nodes();
    row.edges = data.graph.num_edges();
    row.train_nodes = run.split.train.size();
    row.epochs = hist.size();
    row.seconds = seconds;
    row.final_loss = hist.empty() ? 0.0 : hist.back();
    row.converged = !hist.empty() && hist.back() <= config.loss_threshold;
    rows.push_back(row);
  }
  return rows;
}

std::string format_timing_table(const std::vector<TimingRow>& rows) {
  std::string s = "nodes,edges,train_nodes,epochs,seconds,final_loss,converged\n";
  for (const auto& r : rows)
    s += std::to_string(r.nodes) + "," + std::to_string(r.edges) + "," + std::to_string(r.train_nodes) + "," +
         std::to_string(r.epochs) + "," + format_double(r.seconds) + "," + format_double(r.final_loss) + "," +
         (r.converged ? "1" : "0") + "\n";
  return s;
}

}  // namespace ted
