#include "ted/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ted/error.hpp"
#include "ted/rng.hpp"

namespace ted {

using ad::Tensor;

void TrainConfig::validate() const {
  if (!(psr > 0.0 && psr <= 1.0)) throw Error(ErrorCode::UsageError, "psr must lie in (0, 1], got " + format_double(psr));
  if (batch_size == 0) throw Error(ErrorCode::UsageError, "batch size must be at least 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorCode::UsageError, "test fraction must lie in (0, 1), got " + format_double(test_fraction));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::UsageError, "learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::UsageError, "weight decay must be non-negative");
}

DatasetSplit split_dataset(const LabelSet& labels, double psr, double test_fraction, std::uint64_t seed,
                           std::optional<std::size_t> train_size) {
  if (!(psr > 0.0 && psr <= 1.0)) throw Error(ErrorCode::UsageError, "psr must lie in (0, 1]");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw Error(ErrorCode::UsageError, "test fraction must lie in [0, 1)");
  std::vector<std::string> pos, neg;
  for (const auto& [id, y] : labels) (y ? pos : neg).push_back(id);
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);

  const auto n = labels.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  const auto test_pos = n == 0 ? std::size_t{0}
                               : static_cast<std::size_t>(std::llround(static_cast<double>(n_test) *
                                                                       static_cast<double>(pos.size()) /
                                                                       static_cast<double>(n)));
  const auto test_neg = n_test - test_pos;

  DatasetSplit split;
  split.test.insert(split.test.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(test_pos));
  split.test.insert(split.test.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(test_neg));

  const auto pool_pos = pos.size() - test_pos;
  const auto pool_neg = neg.size() - test_neg;
  const auto size = train_size.value_or(pool_pos + pool_neg);
  const auto want_pos = static_cast<std::size_t>(std::llround(psr * static_cast<double>(size)));
  const auto want_neg = size - want_pos;
  if (size == 0 || size > pool_pos + pool_neg || want_pos > pool_pos || want_neg > pool_neg)
    throw Error(ErrorCode::InsufficientSamples,
                "training set of " + std::to_string(size) + " at psr " + format_double(psr) + " needs " +
                    std::to_string(want_pos) + " positives and " + std::to_string(want_neg) +
                    " negatives; available after the test split: " + std::to_string(pool_pos) + " and " +
                    std::to_string(pool_neg));
  const auto p0 = pos.begin() + static_cast<std::ptrdiff_t>(test_pos);
  const auto n0 = neg.begin() + static_cast<std::ptrdiff_t>(test_neg);
  split.train.insert(split.train.end(), p0, p0 + static_cast<std::ptrdiff_t>(want_pos));
  split.train.insert(split.train.end(), n0, n0 + static_cast<std::ptrdiff_t>(want_neg));
  rng.shuffle(split.train);
  rng.shuffle(split.test);
  return split;
}

void adam_step(ad::ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config) {
  if (grads.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(grads.size()) + " gradients for " +
                                              std::to_string(params.size()) + " parameters");
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params[i].rows(), params[i].cols());
      state.v.emplace_back(params[i].rows(), params[i].cols());
    }
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i];
    const auto& g = grads[i];
    if (!g.same_shape(theta))
      throw Error(ErrorCode::ShapeMismatch, "gradient of '" + params.name(i) + "' has shape " + g.shape_string() +
                                                ", parameter has " + theta.shape_string());
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k] + config.weight_decay * theta[k];
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
      theta[k] -= config.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.epsilon);
    }
  }
}

Metrics evaluate_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw Error(ErrorCode::EmptyTestSet, "no samples to evaluate");
  if (predicted.size() != truth.size())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(predicted.size()) + " predictions for " +
                                              std::to_string(truth.size()) + " labels");
  Metrics out;
  auto& c = out.confusion;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++c.tp;
    else if (predicted[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  out.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  out.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  const double pr = out.precision + out.recall;
  out.f1 = pr > 0.0 ? 2.0 * out.precision * out.recall / pr : 0.0;
  out.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return out;
}

Metrics evaluate_probabilities(std::span<const double> probabilities, std::span<const int> truth) {
  std::vector<int> predicted;
  predicted.reserve(probabilities.size());
  for (const double p : probabilities) predicted.push_back(p >= 0.5 ? 1 : 0);
  return evaluate_predictions(predicted, truth);
}

double LinearClassifier::decision(std::span<const double> x) const {
  if (x.size() != weights.size())
    throw Error(ErrorCode::DimensionMismatch, "classifier expects " + std::to_string(weights.size()) +
                                                  " features, got " + std::to_string(x.size()));
  double s = bias;
  for (std::size_t k = 0; k < x.size(); ++k) s += weights[k] * (x[k] - mean[k]) * scale[k];
  return s;
}

std::vector<int> LinearClassifier::predict_rows(const Tensor& x) const {
  std::vector<int> out;
  out.reserve(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out.push_back(predict(x.row_span(r)));
  return out;
}

LinearClassifier train_downstream_classifier(const Tensor& x, std::span<const int> y, std::uint64_t seed,
                                             const SvmConfig& config) {
  if (x.rows() != y.size())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(x.rows()) + " rows for " + std::to_string(y.size()) + " labels");
  const auto positives = static_cast<std::size_t>(std::count_if(y.begin(), y.end(), [](int v) { return v != 0; }));
  if (positives == 0 || positives == y.size())
    throw Error(ErrorCode::SingleClass, "classifier needs samples of both classes");
  const auto n = x.rows();
  const auto dim = x.cols();

  LinearClassifier clf;
  clf.mean.assign(dim, 0.0);
  clf.scale.assign(dim, 1.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < dim; ++k) clf.mean[k] += x(r, k);
  for (auto& m : clf.mean) m /= static_cast<double>(n);
  for (std::size_t k = 0; k < dim; ++k) {
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (x(r, k) - clf.mean[k]) * (x(r, k) - clf.mean[k]);
    const double sd = std::sqrt(var / static_cast<double>(n));
    clf.scale[k] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  Tensor xs(n, dim + 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < dim; ++k) xs(r, k) = (x(r, k) - clf.mean[k]) * clf.scale[k];
    xs(r, dim) = 1.0;
  }

  std::vector<double> w(dim + 1, 0.0), avg(dim + 1, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::size_t t = 0, averaged = 0;
  for (std::size_t pass = 0; pass < config.passes; ++pass) {
    rng.shuffle(order);
    for (const auto r : order) {
      ++t;
      const double eta = 1.0 / (config.lambda * static_cast<double>(t));
      const double label = y[r] ? 1.0 : -1.0;
      double margin = 0.0;
      for (std::size_t k = 0; k <= dim; ++k) margin += w[k] * xs(r, k);
      const double shrink = 1.0 - eta * config.lambda;
      for (auto& wk : w) wk *= shrink;
      if (label * margin < 1.0)
        for (std::size_t k = 0; k <= dim; ++k) w[k] += eta * label * xs(r, k);
      // Average the iterates of the later half of the budget.
      if (pass >= config.passes / 2) {
        ++averaged;
        for (std::size_t k = 0; k <= dim; ++k) avg[k] += w[k];
      }
    }
  }
  if (averaged > 0)
    for (auto& a : avg) a /= static_cast<double>(averaged);
  else
    avg = w;
  clf.weights.assign(avg.begin(), avg.begin() + static_cast<std::ptrdiff_t>(dim));
  clf.bias = avg[dim];
  return clf;
}

Metrics evaluate_downstream(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                            std::span<const int> test_y, std::uint64_t seed) {
  if (test_y.empty()) throw Error(ErrorCode::EmptyTestSet, "no samples to evaluate");
  const auto clf = train_downstream_classifier(train_x, train_y, seed);
  return evaluate_predictions(clf.predict_rows(test_x), test_y);
}

Tensor feature_matrix(const HetGraph& graph, std::span<const NodeIndex> nodes) {
  const std::size_t dim = nodes.empty() ? 0 : graph.attributes(nodes.front()).size();
  Tensor x(nodes.size(), dim);
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    const auto a = graph.attributes(nodes[r]);
    if (a.size() != dim) throw Error(ErrorCode::DimensionMismatch, "nodes of mixed attribute width");
    std::copy(a.begin(), a.end(), x.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return x;
}

TrainResult train_nodes(const HetGraph& graph, const NeighborIndex& index, std::span<const NodeIndex> nodes,
                        std::span<const int> targets, const TrainConfig& config) {
  config.validate();
  if (nodes.size() != targets.size())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(nodes.size()) + " nodes for " +
                                              std::to_string(targets.size()) + " targets");
  const auto positives =
      static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](int v) { return v != 0; }));
  if (positives == 0 || positives == targets.size())
    throw Error(ErrorCode::SingleClass, "training set needs labelled nodes of both classes");

  TrainResult result;
  result.params = init_params(graph.schema(), index.patterns(), config.dims, config.seed);
  result.pattern_ids = result.params.pattern_ids;
  const auto npat = index.num_patterns();
  AdamState state;
  const AdamConfig adam{config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay};
  Rng rng = Rng(config.seed).fork(0x7472);

  std::vector<std::size_t> order(nodes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<NodeIndex> batch;
  std::vector<double> batch_y;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<double> beta_sum(npat, 0.0);
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const auto hi = std::min(order.size(), lo + config.batch_size);
      batch.clear();
      batch_y.clear();
      for (auto k = lo; k < hi; ++k) {
        batch.push_back(nodes[order[k]]);
        batch_y.push_back(targets[order[k]] ? 1.0 : 0.0);
      }
      const auto out = forward_backward(graph, index, batch, batch_y, result.params, config.ablation);
      if (!std::isfinite(*out.loss))
        throw Error(ErrorCode::DivergedLoss, "loss became " + format_double(*out.loss) + " in epoch " +
                                                 std::to_string(epoch + 1) + ", batch starting at sample " +
                                                 std::to_string(lo));
      loss_sum += *out.loss;
      for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t m = 0; m < npat; ++m) beta_sum[m] += out.beta(b, m);
      adam_step(result.params.values, out.gradients, state, adam);
    }
    const auto n = static_cast<double>(nodes.size());
    for (auto& b : beta_sum) b /= n;
    result.beta_trend.push_back(std::move(beta_sum));
    result.metrics.loss_history.push_back(loss_sum / n);
    result.metrics.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (config.loss_threshold && loss_sum / n <= *config.loss_threshold) break;
  }
  return result;
}

void resolve_labelled(const HetGraph& graph, const LabelSet& labels, std::span<const std::string> ids,
                      std::vector<NodeIndex>& nodes, std::vector<int>& targets) {
  nodes.clear();
  targets.clear();
  for (const auto& id : ids) {
    const auto v = graph.find(id);
    if (!v) throw Error(ErrorCode::UsageError, "labelled id '" + id + "' is not a node of the graph");
    if (!graph.is_company(*v)) throw Error(ErrorCode::UsageError, "labelled id '" + id + "' is not a company");
    const auto it = labels.find(id);
    if (it == labels.end()) throw Error(ErrorCode::UsageError, "id '" + id + "' has no label");
    nodes.push_back(*v);
    targets.push_back(it->second ? 1 : 0);
  }
}

TrainRun train(const HetGraph& graph, const NeighborIndex& index, const LabelSet& labels,
               const TrainConfig& config) {
  config.validate();
  TrainRun run;
  run.split = split_dataset(labels, config.psr, config.test_fraction, config.seed, config.train_size);
  std::vector<NodeIndex> nodes;
  std::vector<int> targets;
  resolve_labelled(graph, labels, run.split.train, nodes, targets);
  run.result = train_nodes(graph, index, nodes, targets, config);
  return run;
}

ForwardOutput infer(const HetGraph& graph, const NeighborIndex& index, std::span<const NodeIndex> nodes,
                    const TedParams& params, const Ablation& ablation, std::size_t batch_size) {
  if (nodes.empty()) throw Error(ErrorCode::EmptyBatch, "no nodes to score");
  if (batch_size == 0) throw Error(ErrorCode::UsageError, "batch size must be at least 1");
  ForwardOutput all;
  const auto npat = params.num_patterns();
  all.alpha.assign(npat, {});
  std::vector<double> z, beta;
  for (std::size_t lo = 0; lo < nodes.size(); lo += batch_size) {
    const auto hi = std::min(nodes.size(), lo + batch_size);
    auto out = forward(graph, index, nodes.subspan(lo, hi - lo), {}, params, ablation);
    all.nodes.insert(all.nodes.end(), out.nodes.begin(), out.nodes.end());
    all.logits.insert(all.logits.end(), out.logits.begin(), out.logits.end());
    all.probabilities.insert(all.probabilities.end(), out.probabilities.begin(), out.probabilities.end());
    all.degenerate.insert(all.degenerate.end(), out.degenerate.begin(), out.degenerate.end());
    for (std::size_t m = 0; m < npat; ++m)
      for (auto& a : out.alpha[m]) all.alpha[m].push_back(std::move(a));
    z.insert(z.end(), out.embeddings.data().begin(), out.embeddings.data().end());
    beta.insert(beta.end(), out.beta.data().begin(), out.beta.data().end());
  }
  all.embeddings = Tensor(nodes.size(), params.dims.embed_dim, std::move(z));
  all.beta = Tensor(nodes.size(), npat, std::move(beta));
  return all;
}

EvalMode parse_eval_mode(std::string_view name) {
  if (name == "direct") return EvalMode::Direct;
  if (name == "downstream" || name == "svm") return EvalMode::Downstream;
  throw Error(ErrorCode::UsageError, "unknown evaluation mode '" + std::string(name) + "' (direct, downstream)");
}

Metrics evaluate_model(const HetGraph& graph, const NeighborIndex& index, const TedParams& params,
                       const Ablation& ablation, const LabelSet& labels, const DatasetSplit& split,
                       EvalMode mode, std::uint64_t seed) {
  if (split.test.empty()) throw Error(ErrorCode::EmptyTestSet, "test split is empty");
  std::vector<NodeIndex> test_nodes;
  std::vector<int> test_y;
  resolve_labelled(graph, labels, split.test, test_nodes, test_y);
  const auto test_out = infer(graph, index, test_nodes, params, ablation);
  if (mode == EvalMode::Direct) return evaluate_probabilities(test_out.probabilities, test_y);
  std::vector<NodeIndex> train_nodes_;
  std::vector<int> train_y;
  resolve_labelled(graph, labels, split.train, train_nodes_, train_y);
  const auto train_out = infer(graph, index, train_nodes_, params, ablation);
  return evaluate_downstream(train_out.embeddings, train_y, test_out.embeddings, test_y, seed);
}

std::string format_metrics(const Metrics& metrics, std::string_view mode) {
  const auto& c = metrics.confusion;
  std::string s = "metric,value\n";
  s += "mode," + std::string(mode) + "\n";
  s += "f1," + format_double(metrics.f1) + "\n";
  s += "accuracy," + format_double(metrics.accuracy) + "\n";
  s += "precision," + format_double(metrics.precision) + "\n";
  s += "recall," + format_double(metrics.recall) + "\n";
  s += "tp," + std::to_string(c.tp) + "\n";
  s += "fp," + std::to_string(c.fp) + "\n";
  s += "fn," + std::to_string(c.fn) + "\n";
  s += "tn," + std::to_string(c.tn) + "\n";
  s += "epochs," + std::to_string(metrics.loss_history.size()) + "\n";
  if (!metrics.loss_history.empty()) s += "final_loss," + format_double(metrics.loss_history.back()) + "\n";
  return s;
}

std::string format_loss_curve(const Metrics& metrics) {
  std::string s = "epoch,loss\n";
  for (std::size_t e = 0; e < metrics.loss_history.size(); ++e)
    s += std::to_string(e + 1) + "," + format_double(metrics.loss_history[e]) + "\n";
  return s;
}

std::string format_epoch_timing(const Metrics& metrics) {
  std::string s = "epoch,seconds\n";
  for (std::size_t e = 0; e < metrics.epoch_seconds.size(); ++e)
    s += std::to_string(e + 1) + "," + format_double(metrics.epoch_seconds[e]) + "\n";
  return s;
}

std::string format_trend(const TrainResult& result) {
  std::string s = "epoch,pattern,mean_beta\n";
  for (std::size_t e = 0; e < result.beta_trend.size(); ++e)
    for (std::size_t m = 0; m < result.pattern_ids.size(); ++m)
      s += std::to_string(e + 1) + "," + result.pattern_ids[m] + "," + format_double(result.beta_trend[e][m]) + "\n";
  return s;
}

std::string format_embeddings(const HetGraph& graph, const ForwardOutput& output) {
  std::string s = "id";
  for (std::size_t k = 0; k < output.embeddings.cols(); ++k) s += ",z" + std::to_string(k);
  s += ",probability,degenerate\n";
  for (std::size_t r = 0; r < output.nodes.size(); ++r) {
    s += graph.id(output.nodes[r]);
    for (const double v : output.embeddings.row_span(r)) s += "," + format_double(v);
    s += "," + format_double(output.probabilities[r]) + "," + (output.degenerate[r] ? "1" : "0") + "\n";
  }
  return s;
}

}  // namespace ted
