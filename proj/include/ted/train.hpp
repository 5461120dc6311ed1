#pragma once

// PSR-controlled splits, Adam, the training loop, metrics, the linear
// hinge-loss downstream classifier, and the timing sweep.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ted/autodiff.hpp"
#include "ted/hetgraph.hpp"
#include "ted/model.hpp"
#include "ted/rpt.hpp"

namespace ted {

struct TrainConfig {
  double learning_rate = 0.005;
  double weight_decay = 0.0005;
  std::size_t batch_size = 256;
  std::size_t epochs = 100;
  ModelDims dims;
  std::uint64_t seed = 1;
  double psr = 0.5;             // positive fraction of the training set
  double test_fraction = 0.2;
  std::optional<std::size_t> train_size;  // default: every labelled node not in the test set
  Ablation ablation;
  // Stop once the epoch's mean loss is at or below this value.
  std::optional<double> loss_threshold;

  // PSR in (0, 1], batch size >= 1, test fraction in (0, 1). Throws UsageError.
  void validate() const;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// Stratified test set of round(test_fraction * N) nodes (same class mix as
// the labels, independent of psr); training set drawn from the remainder
// with round(psr * size) positives. Deterministic per seed. Throws
// InsufficientSamples when a class runs short.
DatasetSplit split_dataset(const LabelSet& labels, double psr, double test_fraction, std::uint64_t seed,
                           std::optional<std::size_t> train_size = std::nullopt);

struct AdamConfig {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // added to the gradient as weight_decay * theta
};

struct AdamState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  std::size_t step = 0;
};

// One bias-corrected Adam update. An empty state is initialised to zeros.
void adam_step(ad::ParameterSet& params, const std::vector<ad::Tensor>& grads, AdamState& state,
               const AdamConfig& config);

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct Metrics {
  double f1 = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  Confusion confusion;
  std::vector<double> loss_history;   // mean per-sample loss per epoch
  std::vector<double> epoch_seconds;  // wall clock per epoch
};

// Throws EmptyTestSet on empty input, ShapeMismatch on a length mismatch.
Metrics evaluate_predictions(std::span<const int> predicted, std::span<const int> truth);
// Positive when p >= 0.5.
Metrics evaluate_probabilities(std::span<const double> probabilities, std::span<const int> truth);

struct SvmConfig {
  double lambda = 1e-3;
  std::size_t passes = 50;
};

// Linear classifier on standardised features.
struct LinearClassifier {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<double> weights;
  double bias = 0.0;

  double decision(std::span<const double> x) const;
  int predict(std::span<const double> x) const { return decision(x) >= 0.0 ? 1 : 0; }
  std::vector<int> predict_rows(const ad::Tensor& x) const;
};

// Averaged Pegasos-style subgradient descent on the L2-regularised hinge
// loss; fixed budget of `passes` seeded sweeps. Throws SingleClass.
LinearClassifier train_downstream_classifier(const ad::Tensor& x, std::span<const int> y, std::uint64_t seed,
                                             const SvmConfig& config = {});

// Fits on (train_x, train_y) and scores on the test rows.
Metrics evaluate_downstream(const ad::Tensor& train_x, std::span<const int> train_y, const ad::Tensor& test_x,
                            std::span<const int> test_y, std::uint64_t seed);

// Raw attribute rows of the given nodes.
ad::Tensor feature_matrix(const HetGraph& graph, std::span<const NodeIndex> nodes);

struct TrainResult {
  TedParams params;
  Metrics metrics;                              // loss history and timing only
  std::vector<std::vector<double>> beta_trend;  // [epoch][pattern] mean beta
  std::vector<std::string> pattern_ids;
};

// Trains on the given company nodes and 0/1 targets. Throws DivergedLoss,
// SingleClass (a class missing from the targets), EmptyBatch.
TrainResult train_nodes(const HetGraph& graph, const NeighborIndex& index, std::span<const NodeIndex> nodes,
                        std::span<const int> targets, const TrainConfig& config);

struct TrainRun {
  DatasetSplit split;
  TrainResult result;
};

// Splits `labels` per the config and trains on the training part.
TrainRun train(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
               const TrainConfig& config);

// Forward passes in batches of `batch_size`, concatenated in node order.
ForwardOutput infer(const HetGraph& graph, const NeighborIndex& index, std::span<const NodeIndex> nodes,
                    const TedParams& params, const Ablation& ablation, std::size_t batch_size = 1024);

enum class EvalMode { Direct, Downstream };
EvalMode parse_eval_mode(std::string_view name);

// Test-set metrics of a trained model. Downstream mode fits the linear
// classifier on the training nodes' embeddings.
Metrics evaluate_model(const HetGraph& graph, const NeighborIndex& index, const TedParams& params,
                       const Ablation& ablation, const LabelSet& labels, const DatasetSplit& split,
                       EvalMode mode, std::uint64_t seed);

// Resolves ids to node indices with 0/1 targets. Throws UsageError for ids
// that are missing, unlabelled, or not companies.
void resolve_labelled(const HetGraph& graph, const LabelSet& labels, std::span<const std::string> ids,
                      std::vector<NodeIndex>& nodes, std::vector<int>& targets);

// ---- plot-ready tables

std::string format_metrics(const Metrics& metrics, std::string_view mode);
std::string format_loss_curve(const Metrics& metrics);
std::string format_epoch_timing(const Metrics& metrics);
std::string format_trend(const TrainResult& result);
std::string format_embeddings(const HetGraph& graph, const ForwardOutput& output);

}  // namespace ted
