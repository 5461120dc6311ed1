#pragma once

// Experiment harnesses: train-and-score runs, the ablation and PSR grids,
// a raw-feature baseline, and the convergence-time sweep over graph sizes.

#include <cstdint>
#include <string>
#include <vector>

#include "ted/synth.hpp"
#include "ted/train.hpp"

namespace ted {

struct Experiment {
  DatasetSplit split;
  TrainResult result;
  Metrics metrics;  // test metrics plus the training loss history and timing
};

Experiment run_experiment(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
                          const TrainConfig& config, EvalMode mode);

// Linear classifier on raw company attributes over the same split.
Metrics features_only_baseline(const HetGraph& graph, const LabelSet& labels, const DatasetSplit& split,
                               std::uint64_t seed);

// Largest training-set size that split_dataset can fill at `psr`.
std::size_t feasible_train_size(const LabelSet& labels, double psr, double test_fraction);

struct GridRow {
  std::string name;  // variant or psr
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t epochs = 0;
  double final_loss = 0.0;
};

// Full model and the hete, inner, cross, att removals.
std::vector<GridRow> ablation_grid(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
                                   const TrainConfig& config, EvalMode mode);
std::vector<GridRow> psr_grid(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
                              const TrainConfig& config, const std::vector<double>& psrs, EvalMode mode);
std::string format_grid(const std::vector<GridRow>& rows, std::string_view key);

struct TimingRow {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::size_t train_nodes = 0;
  std::size_t epochs = 0;
  double seconds = 0.0;
  double final_loss = 0.0;
  bool converged = false;
};

struct TimingConfig {
  GenConfig base;          // node proportions, densities and communities per size are scaled from this
  TrainConfig train;       // epochs acts as the cap
  MatchOptions match;
  double loss_threshold = 0.2;
};

// Default base for the sweep: a fully structure-determined labelling so the
// loss threshold is reachable at every size.
TimingConfig default_timing_config();

// For each total node count: generate at fixed density, build the instance
// index, and train until the epoch loss reaches the threshold or the epoch
// cap. Seconds cover training only.
std::vector<TimingRow> timing_sweep(const std::vector<std::size_t>& sizes, const TimingConfig& config);
std::string format_timing_table(const std::vector<TimingRow>& rows);

// Node counts scaled from `base` so they total `nodes`.
GenConfig scale_config(const GenConfig& base, std::size_t nodes);

}  // namespace ted
