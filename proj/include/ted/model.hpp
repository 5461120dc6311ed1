#pragma once

// Hierarchical RPT attention network: per-type projection, instance
// encoding with multi-head transforms, instance-level attention per pattern,
// pattern-level attention with a feature query, and a logistic readout.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ted/autodiff.hpp"
#include "ted/hetgraph.hpp"
#include "ted/rpt.hpp"

namespace ted {

struct ModelDims {
  std::size_t proj_dim = 16;   // common space every node type is projected to
  std::size_t heads = 8;
  std::size_t head_dim = 4;    // per-head output width of instance encoding
  std::size_t embed_dim = 32;  // width of m_i^M and of the final embedding z_i

  std::size_t inner_dim() const { return heads * head_dim; }
  bool operator==(const ModelDims&) const = default;
};

// Component removals for ablation runs.
struct Ablation {
  bool no_hete = false;   // non-company instance members contribute zeros
  bool no_inner = false;  // uniform instance weights
  bool no_cross = false;  // uniform pattern weights

  // "none", "hete", "att", "inner", "cross".
  static Ablation parse(std::string_view name);
  std::string name() const;
  bool operator==(const Ablation&) const = default;
};

inline constexpr double kLeakyAlpha = 0.2;

class TedParams {
 public:
  ad::ParameterSet values;
  ModelDims dims;
  std::vector<std::string> node_type_names;
  std::vector<std::size_t> input_dims;
  std::string company_type;
  std::vector<std::string> pattern_ids;
  std::vector<std::size_t> pattern_sizes;

  std::size_t num_patterns() const { return pattern_ids.size(); }
  std::size_t company_dim() const;

  // Parameter indices. projection() returns nullopt for an unknown type.
  std::optional<std::size_t> projection(std::string_view node_type) const;
  std::size_t instance_weight(std::size_t pattern, std::size_t head) const;
  std::size_t instance_attention(std::size_t pattern) const;
  std::size_t cross_attention(std::size_t pattern) const;
  std::size_t cross_weight() const { return values.index("W_cross"); }
  std::size_t cross_bias() const { return values.index("b_cross"); }
  std::size_t query() const { return values.index("Q"); }
  std::size_t readout_weight() const { return values.index("readout/w"); }
  std::size_t readout_bias() const { return values.index("readout/b"); }

  bool operator==(const TedParams&) const = default;
};

// Deterministic per seed. Matrices are uniform in [-s, s] with
// s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
TedParams init_params(const Schema& schema, const std::vector<RptPattern>& patterns,
                      const ModelDims& dims, std::uint64_t seed);

// ---- building blocks on a tape (batched over rows)

// h = P_type x for each listed node, rows in the order given.
ad::Var project_nodes(ad::Tape& tape, const HetGraph& graph, const TedParams& params,
                      std::span<const NodeIndex> nodes);
// Rows of `slot_features` are instance inputs [h_anchor || h_other roles...];
// result has width heads * head_dim.
ad::Var encode_instances(ad::Tape& tape, ad::Var slot_features, const TedParams& params,
                         std::size_t pattern);

struct InnerLevel {
  ad::Var f;      // one row per segment
  ad::Var alpha;  // one weight per instance row
};
InnerLevel inner_level(ad::Tape& tape, ad::Var encodings, std::span<const std::size_t> offsets,
                       const TedParams& params, std::size_t pattern, bool uniform);

ad::Var cross_transform(ad::Tape& tape, ad::Var f, const TedParams& params);
ad::Var query_transform(ad::Tape& tape, ad::Var company_features, const TedParams& params);
ad::Var cross_logits(ad::Tape& tape, ad::Var q, ad::Var m, const TedParams& params, std::size_t pattern);

// ---- single-node forms of each stage, returning plain values

// h_i for every node of the graph (|V| x proj_dim). Throws MissingProjection.
ad::Tensor project(const HetGraph& graph, const TedParams& params);

// h_ik^M for one instance given its role-ordered node list.
ad::Tensor encode_instance(const HetGraph& graph, const ad::Tensor& projected, const RptPattern& pattern,
                           std::span<const NodeIndex> role_nodes, const TedParams& params,
                           std::size_t pattern_index);

struct InnerAttention {
  ad::Tensor f;                // 1 x inner_dim
  std::vector<double> alpha;   // one per instance
};
InnerAttention inner_rpt_attention(const ad::Tensor& encodings, const TedParams& params,
                                   std::size_t pattern, bool uniform = false);

struct CrossAttention {
  ad::Tensor z;                // 1 x embed_dim
  std::vector<double> beta;    // aligned with the supplied patterns
};
// `f_by_pattern` holds (pattern index, 1 x inner_dim f_i^M) for the patterns
// present at node i; `x` is the node's raw company attribute vector.
CrossAttention cross_rpt_attention(std::span<const std::pair<std::size_t, ad::Tensor>> f_by_pattern,
                                   std::span<const double> x, const TedParams& params,
                                   bool uniform = false);

// ---- full forward pass

struct ForwardOutput {
  std::vector<NodeIndex> nodes;       // batch order
  ad::Tensor embeddings;              // z, |batch| x embed_dim
  std::vector<double> logits;
  std::vector<double> probabilities;  // p_v = sigmoid(logit)
  std::vector<bool> degenerate;       // node had no instance under any pattern
  // alpha[m][b]: instance weights of batch node b under pattern m (empty if
  // the node has no instance of m).
  std::vector<std::vector<std::vector<double>>> alpha;
  // beta(b, m); zero for patterns absent at the node.
  ad::Tensor beta;
  std::optional<double> loss;         // summed cross-entropy when labels given
  std::vector<ad::Tensor> gradients;  // filled by forward_backward
};

// Records the forward pass on `tape`. Returns the summed cross-entropy when
// `targets` is non-empty, otherwise the logits column.
struct TapeForward {
  ad::Var logits;
  ad::Var embeddings;
  std::optional<ad::Var> loss;
  ForwardOutput output;
};
TapeForward forward_on_tape(ad::Tape& tape, const HetGraph& graph, const NeighborIndex& index,
                            std::span<const NodeIndex> batch, std::span<const double> targets,
                            const TedParams& params, const Ablation& ablation);

// Evaluation forward; with `targets` also reports the loss. Throws EmptyBatch.
ForwardOutput forward(const HetGraph& graph, const NeighborIndex& index, std::span<const NodeIndex> batch,
                      std::span<const double> targets, const TedParams& params, const Ablation& ablation);

// Forward plus gradients of the summed loss for every parameter.
ForwardOutput forward_backward(const HetGraph& graph, const NeighborIndex& index,
                               std::span<const NodeIndex> batch, std::span<const double> targets,
                               const TedParams& params, const Ablation& ablation);

// ---- checkpoints: structured text with shapes; doubles round-trip exactly.

std::string serialize_checkpoint(const TedParams& params,
                                 const std::map<std::string, std::string>& metadata = {});
TedParams parse_checkpoint(const std::string& text, std::map<std::string, std::string>* metadata = nullptr);

}  // namespace ted
