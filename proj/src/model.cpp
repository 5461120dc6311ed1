#include "ted/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "ted/error.hpp"
#include "ted/rng.hpp"

namespace ted {

using ad::Tape;
using ad::Tensor;
using ad::Var;

Ablation Ablation::parse(std::string_view name) {
  Ablation a;
  if (name == "none" || name == "full" || name.empty()) return a;
  if (name == "hete") {
    a.no_hete = true;
  } else if (name == "att") {
    a.no_inner = a.no_cross = true;
  } else if (name == "inner") {
    a.no_inner = true;
  } else if (name == "cross") {
    a.no_cross = true;
  } else {
    throw Error(ErrorCode::UsageError, "unknown ablation '" + std::string(name) +
                                           "' (expected none, hete, att, inner, cross)");
  }
  return a;
}

std::string Ablation::name() const {
  if (no_hete && !no_inner && !no_cross) return "hete";
  if (!no_hete && no_inner && no_cross) return "att";
  if (!no_hete && no_inner && !no_cross) return "inner";
  if (!no_hete && !no_inner && no_cross) return "cross";
  if (!no_hete && !no_inner && !no_cross) return "none";
  std::string s;
  if (no_hete) s += "hete+";
  if (no_inner) s += "inner+";
  if (no_cross) s += "cross+";
  s.pop_back();
  return s;
}

std::size_t TedParams::company_dim() const {
  for (std::size_t t = 0; t < node_type_names.size(); ++t)
    if (node_type_names[t] == company_type) return input_dims[t];
  throw Error(ErrorCode::UnknownType, "company type '" + company_type + "' has no input dimension");
}

std::optional<std::size_t> TedParams::projection(std::string_view node_type) const {
  const auto name = "P/" + std::string(node_type);
  if (!values.contains(name)) return std::nullopt;
  return values.index(name);
}

std::size_t TedParams::instance_weight(std::size_t pattern, std::size_t head) const {
  return values.index("W_inst/" + pattern_ids.at(pattern) + "/" + std::to_string(head));
}

std::size_t TedParams::instance_attention(std::size_t pattern) const {
  return values.index("k/" + pattern_ids.at(pattern));
}

std::size_t TedParams::cross_attention(std::size_t pattern) const {
  return values.index("v/" + pattern_ids.at(pattern));
}

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.uniform(-s, s);
  return t;
}

}  // namespace

TedParams init_params(const Schema& schema, const std::vector<RptPattern>& patterns,
                      const ModelDims& dims, std::uint64_t seed) {
  if (dims.proj_dim == 0 || dims.heads == 0 || dims.head_dim == 0 || dims.embed_dim == 0)
    throw Error(ErrorCode::UsageError, "model dimensions must be positive");
  TedParams p;
  p.dims = dims;
  p.company_type = schema.company_type_name();
  Rng rng(seed);
  for (const auto& t : schema.node_types()) {
    p.node_type_names.push_back(t.name);
    p.input_dims.push_back(t.dim);
    p.values.add("P/" + t.name, glorot(dims.proj_dim, t.dim, rng));
  }
  const auto d = dims.inner_dim();
  for (const auto& m : patterns) {
    p.pattern_ids.push_back(m.id());
    p.pattern_sizes.push_back(m.size());
    for (std::size_t h = 0; h < dims.heads; ++h)
      p.values.add("W_inst/" + m.id() + "/" + std::to_string(h),
                   glorot(dims.head_dim, m.size() * dims.proj_dim, rng));
    p.values.add("k/" + m.id(), glorot(1, d, rng));
  }
  p.values.add("W_cross", glorot(dims.embed_dim, d, rng));
  p.values.add("b_cross", Tensor(1, dims.embed_dim));
  p.values.add("Q", glorot(d, schema.node_types()[schema.company_type()].dim, rng));
  for (const auto& m : patterns) p.values.add("v/" + m.id(), glorot(1, d + dims.embed_dim, rng));
  p.values.add("readout/w", glorot(1, dims.embed_dim, rng));
  p.values.add("readout/b", Tensor(1, 1));
  return p;
}

// ---- building blocks

Var project_nodes(Tape& tape, const HetGraph& graph, const TedParams& params,
                  std::span<const NodeIndex> nodes) {
  const auto& schema = graph.schema();
  const auto ntypes = schema.node_types().size();
  std::vector<std::vector<std::size_t>> positions(ntypes);
  for (std::size_t r = 0; r < nodes.size(); ++r) positions[graph.type(nodes[r])].push_back(r);

  std::vector<Var> blocks;
  std::vector<std::ptrdiff_t> order(nodes.size());
  std::ptrdiff_t row = 0;
  for (std::size_t t = 0; t < ntypes; ++t) {
    if (positions[t].empty()) continue;
    const auto& type = schema.node_types()[t];
    const auto pidx = params.projection(type.name);
    if (!pidx) throw Error(ErrorCode::MissingProjection, "no projection for node type '" + type.name + "'");
    const auto& P = params.values[*pidx];
    if (P.cols() != type.dim)
      throw Error(ErrorCode::ShapeMismatch, "projection for '" + type.name + "' expects " +
                                                std::to_string(P.cols()) + " attributes, graph has " +
                                                std::to_string(type.dim));
    Tensor X(positions[t].size(), type.dim);
    for (std::size_t k = 0; k < positions[t].size(); ++k) {
      const auto attrs = graph.attributes(nodes[positions[t][k]]);
      std::copy(attrs.begin(), attrs.end(), X.data().begin() + static_cast<std::ptrdiff_t>(k * type.dim));
      order[positions[t][k]] = row++;
    }
    blocks.push_back(ad::linear(tape.constant(std::move(X)), tape.param(*pidx)));
  }
  if (blocks.empty()) return tape.constant(Tensor(0, params.dims.proj_dim));
  return ad::gather_rows(ad::concat_rows(blocks), order);
}

Var encode_instances(Tape& tape, Var slot_features, const TedParams& params, std::size_t pattern) {
  std::vector<Var> heads;
  heads.reserve(params.dims.heads);
  for (std::size_t h = 0; h < params.dims.heads; ++h) heads.push_back(tape.param(params.instance_weight(pattern, h)));
  // Stacking the per-head weights gives the head outputs side by side.
  return ad::elu(ad::linear(slot_features, ad::concat_rows(heads)));
}

InnerLevel inner_level(Tape& tape, Var encodings, std::span<const std::size_t> offsets,
                       const TedParams& params, std::size_t pattern, bool uniform) {
  Var alpha;
  if (uniform) {
    Tensor w(encodings.rows(), 1);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const auto n = offsets[s + 1] - offsets[s];
      for (auto j = offsets[s]; j < offsets[s + 1]; ++j) w[j] = 1.0 / static_cast<double>(n);
    }
    alpha = tape.constant(std::move(w));
  } else {
    const auto e = ad::leaky_relu(ad::linear(encodings, tape.param(params.instance_attention(pattern))), kLeakyAlpha);
    alpha = ad::segment_softmax(e, offsets);
  }
  return {ad::elu(ad::segment_weighted_sum(encodings, alpha, offsets)), alpha};
}

Var cross_transform(Tape& tape, Var f, const TedParams& params) {
  return ad::elu(ad::add_row(ad::linear(f, tape.param(params.cross_weight())), tape.param(params.cross_bias())));
}

Var query_transform(Tape& tape, Var company_features, const TedParams& params) {
  return ad::elu(ad::linear(company_features, tape.param(params.query())));
}

Var cross_logits(Tape& tape, Var q, Var m, const TedParams& params, std::size_t pattern) {
  const Var parts[] = {q, m};
  const auto raw = ad::linear(ad::concat_cols(parts), tape.param(params.cross_attention(pattern)));
  return ad::leaky_relu(ad::scale(raw, 1.0 / std::sqrt(static_cast<double>(params.dims.embed_dim))), kLeakyAlpha);
}

// ---- single-node forms

Tensor project(const HetGraph& graph, const TedParams& params) {
  Tape tape(&params.values);
  std::vector<NodeIndex> all(graph.num_nodes());
  std::iota(all.begin(), all.end(), NodeIndex{0});
  return project_nodes(tape, graph, params, all).value();
}

Tensor encode_instance(const HetGraph& graph, const Tensor& projected, const RptPattern& pattern,
                       std::span<const NodeIndex> role_nodes, const TedParams& params,
                       std::size_t pattern_index) {
  if (role_nodes.size() != pattern.size())
    throw Error(ErrorCode::ShapeMismatch, "instance has " + std::to_string(role_nodes.size()) +
                                              " nodes, pattern '" + pattern.id() + "' has " +
                                              std::to_string(pattern.size()) + " roles");
  if (projected.rows() != graph.num_nodes() || projected.cols() != params.dims.proj_dim)
    throw Error(ErrorCode::ShapeMismatch, "projected features have shape " + projected.shape_string());
  const auto width = params.dims.proj_dim;
  Tensor x(1, pattern.size() * width);
  std::size_t c = 0;
  for (const auto role : pattern.slot_order()) {
    const auto h = projected.row_span(role_nodes[role]);
    std::copy(h.begin(), h.end(), x.data().begin() + static_cast<std::ptrdiff_t>(c));
    c += width;
  }
  Tape tape(&params.values);
  return encode_instances(tape, tape.constant(std::move(x)), params, pattern_index).value();
}

InnerAttention inner_rpt_attention(const Tensor& encodings, const TedParams& params, std::size_t pattern,
                                   bool uniform) {
  if (encodings.rows() == 0) throw Error(ErrorCode::EmptyBatch, "no instance encodings");
  if (encodings.cols() != params.dims.inner_dim())
    throw Error(ErrorCode::ShapeMismatch, "instance encodings have shape " + encodings.shape_string());
  Tape tape(&params.values);
  const std::size_t offsets[] = {0, encodings.rows()};
  const auto level = inner_level(tape, tape.constant(encodings), offsets, params, pattern, uniform);
  const auto& a = level.alpha.value();
  return {level.f.value(), std::vector<double>(a.data().begin(), a.data().end())};
}

CrossAttention cross_rpt_attention(std::span<const std::pair<std::size_t, Tensor>> f_by_pattern,
                                   std::span<const double> x, const TedParams& params, bool uniform) {
  if (x.size() != params.company_dim())
    throw Error(ErrorCode::DimensionMismatch, "company attribute vector has " + std::to_string(x.size()) +
                                                  " entries, expected " + std::to_string(params.company_dim()));
  Tape tape(&params.values);
  const auto q = query_transform(tape, tape.constant(Tensor(1, x.size(), std::vector<double>(x.begin(), x.end()))),
                                 params);
  if (f_by_pattern.empty()) return {cross_transform(tape, q, params).value(), {}};

  std::vector<Var> ms, logits;
  for (const auto& [m, f] : f_by_pattern) {
    if (f.rows() != 1 || f.cols() != params.dims.inner_dim())
      throw Error(ErrorCode::ShapeMismatch, "pattern summary has shape " + f.shape_string());
    const auto mv = cross_transform(tape, tape.constant(f), params);
    ms.push_back(mv);
    logits.push_back(cross_logits(tape, q, mv, params, m));
  }
  const auto M = ad::concat_rows(ms);
  Var beta;
  if (uniform) {
    beta = tape.constant(Tensor(ms.size(), 1, 1.0 / static_cast<double>(ms.size())));
  } else {
    const std::size_t offsets[] = {0, ms.size()};
    beta = ad::segment_softmax(ad::concat_rows(logits), offsets);
  }
  const auto& b = beta.value();
  return {ad::weighted_sum(M, beta).value(), std::vector<double>(b.data().begin(), b.data().end())};
}

// ---- full forward

TapeForward forward_on_tape(Tape& tape, const HetGraph& graph, const NeighborIndex& index,
                            std::span<const NodeIndex> batch, std::span<const double> targets,
                            const TedParams& params, const Ablation& ablation) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "forward pass over an empty batch");
  if (!targets.empty() && targets.size() != batch.size())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(targets.size()) + " targets for a batch of " +
                                              std::to_string(batch.size()));
  const auto npat = index.num_patterns();
  if (npat != params.num_patterns())
    throw Error(ErrorCode::ShapeMismatch, "index has " + std::to_string(npat) + " patterns, parameters have " +
                                              std::to_string(params.num_patterns()));
  for (std::size_t m = 0; m < npat; ++m)
    if (index.pattern(m).id() != params.pattern_ids[m])
      throw Error(ErrorCode::ShapeMismatch, "pattern " + std::to_string(m) + " is '" + index.pattern(m).id() +
                                                "' in the index but '" + params.pattern_ids[m] + "' in the parameters");
  const auto cdim = params.company_dim();
  for (const auto v : batch) {
    if (v >= graph.num_nodes() || !graph.is_company(v))
      throw Error(ErrorCode::UsageError, "batch node " + std::to_string(v) + " is not a company node");
  }
  const auto B = batch.size();

  // Nodes whose projections are needed, in ascending index order.
  std::vector<NodeIndex> needed;
  for (std::size_t m = 0; m < npat; ++m) {
    for (const auto v : batch) {
      for (std::size_t k = 0, n = index.count(m, v); k < n; ++k)
        for (const auto u : index.instance(m, v, k))
          if (!ablation.no_hete || graph.is_company(u)) needed.push_back(u);
    }
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  std::unordered_map<NodeIndex, std::ptrdiff_t> row_of;
  row_of.reserve(needed.size());
  for (std::size_t r = 0; r < needed.size(); ++r) row_of.emplace(needed[r], static_cast<std::ptrdiff_t>(r));

  Tensor xc(B, cdim);
  for (std::size_t b = 0; b < B; ++b) {
    const auto a = graph.attributes(batch[b]);
    std::copy(a.begin(), a.end(), xc.data().begin() + static_cast<std::ptrdiff_t>(b * cdim));
  }
  const auto q = query_transform(tape, tape.constant(std::move(xc)), params);

  TapeForward out;
  auto& o = out.output;
  o.nodes.assign(batch.begin(), batch.end());
  o.alpha.assign(npat, std::vector<std::vector<double>>(B));
  o.beta = Tensor(B, npat);
  o.degenerate.assign(B, true);

  std::vector<Var> m_blocks, e_blocks;
  // (batch position, pattern, row within the stacked pattern blocks)
  struct Present {
    std::size_t b, m, row;
  };
  std::vector<Present> present;
  std::vector<std::vector<std::size_t>> alpha_offsets(npat);
  std::vector<std::vector<std::size_t>> alpha_positions(npat);
  std::vector<Var> alphas(npat);
  std::size_t stacked = 0;

  if (!needed.empty()) {
    const auto H = project_nodes(tape, graph, params, needed);
    for (std::size_t m = 0; m < npat; ++m) {
      const auto& pattern = index.pattern(m);
      const auto slots = pattern.slot_order();
      std::vector<std::vector<std::ptrdiff_t>> gather(slots.size());
      std::vector<std::size_t> offsets{0};
      std::vector<std::size_t> positions;
      for (std::size_t b = 0; b < B; ++b) {
        const auto n = index.count(m, batch[b]);
        if (n == 0) continue;
        for (std::size_t k = 0; k < n; ++k) {
          const auto inst = index.instance(m, batch[b], k);
          for (std::size_t s = 0; s < slots.size(); ++s) {
            const auto u = inst[slots[s]];
            gather[s].push_back(ablation.no_hete && !graph.is_company(u) ? -1 : row_of.at(u));
          }
        }
        offsets.push_back(offsets.back() + n);
        positions.push_back(b);
      }
      if (positions.empty()) continue;
      std::vector<Var> slot_parts;
      slot_parts.reserve(slots.size());
      for (const auto& g : gather) slot_parts.push_back(ad::gather_rows(H, g));
      const auto enc = encode_instances(tape, ad::concat_cols(slot_parts), params, m);
      const auto inner = inner_level(tape, enc, offsets, params, m, ablation.no_inner);
      const auto mv = cross_transform(tape, inner.f, params);
      std::vector<std::ptrdiff_t> qidx(positions.begin(), positions.end());
      const auto e = cross_logits(tape, ad::gather_rows(q, qidx), mv, params, m);
      m_blocks.push_back(mv);
      e_blocks.push_back(e);
      for (std::size_t s = 0; s < positions.size(); ++s) {
        present.push_back({positions[s], m, stacked + s});
        o.degenerate[positions[s]] = false;
      }
      stacked += positions.size();
      alphas[m] = inner.alpha;
      alpha_offsets[m] = std::move(offsets);
      alpha_positions[m] = std::move(positions);
    }
  }

  // Node-major ordering of (node, pattern) summaries for the pattern-level
  // softmax; the stable sort keeps patterns in index order within a node.
  std::stable_sort(present.begin(), present.end(), [](const Present& a, const Present& b) { return a.b < b.b; });

  std::vector<Var> z_parts;
  std::vector<std::ptrdiff_t> z_order(B);
  std::ptrdiff_t zrow = 0;
  Var beta;
  std::vector<std::size_t> beta_offsets{0};
  if (!present.empty()) {
    std::vector<std::ptrdiff_t> perm;
    perm.reserve(present.size());
    for (std::size_t j = 0; j < present.size(); ++j) {
      perm.push_back(static_cast<std::ptrdiff_t>(present[j].row));
      if (j + 1 == present.size() || present[j + 1].b != present[j].b) {
        beta_offsets.push_back(j + 1);
        z_order[present[j].b] = zrow++;
      }
    }
    const auto M = ad::gather_rows(ad::concat_rows(m_blocks), perm);
    if (ablation.no_cross) {
      Tensor w(present.size(), 1);
      for (std::size_t s = 0; s + 1 < beta_offsets.size(); ++s)
        for (auto j = beta_offsets[s]; j < beta_offsets[s + 1]; ++j)
          w[j] = 1.0 / static_cast<double>(beta_offsets[s + 1] - beta_offsets[s]);
      beta = tape.constant(std::move(w));
    } else {
      beta = ad::segment_softmax(ad::gather_rows(ad::concat_rows(e_blocks), perm), beta_offsets);
    }
    z_parts.push_back(ad::segment_weighted_sum(M, beta, beta_offsets));
  }
  std::vector<std::ptrdiff_t> deg;
  for (std::size_t b = 0; b < B; ++b) {
    if (!o.degenerate[b]) continue;
    deg.push_back(static_cast<std::ptrdiff_t>(b));
    z_order[b] = zrow++;
  }
  if (!deg.empty()) z_parts.push_back(cross_transform(tape, ad::gather_rows(q, deg), params));
  const auto z = ad::gather_rows(ad::concat_rows(z_parts), z_order);

  const auto logits =
      ad::add_row(ad::linear(z, tape.param(params.readout_weight())), tape.param(params.readout_bias()));

  out.logits = logits;
  out.embeddings = z;
  o.embeddings = z.value();
  o.logits.assign(logits.value().data().begin(), logits.value().data().end());
  o.probabilities.reserve(B);
  for (const double s : o.logits) o.probabilities.push_back(1.0 / (1.0 + std::exp(-s)));
  for (std::size_t m = 0; m < npat; ++m) {
    if (alpha_positions[m].empty()) continue;
    const auto& a = alphas[m].value();
    for (std::size_t s = 0; s < alpha_positions[m].size(); ++s)
      o.alpha[m][alpha_positions[m][s]].assign(a.data().begin() + static_cast<std::ptrdiff_t>(alpha_offsets[m][s]),
                                               a.data().begin() + static_cast<std::ptrdiff_t>(alpha_offsets[m][s + 1]));
  }
  for (std::size_t j = 0; j < present.size(); ++j) o.beta(present[j].b, present[j].m) = beta.value()[j];

  if (!targets.empty()) {
    out.loss = ad::bce_with_logits(logits, targets);
    o.loss = out.loss->value().item();
  }
  return out;
}

ForwardOutput forward(const HetGraph& graph, const NeighborIndex& index, std::span<const NodeIndex> batch,
                      std::span<const double> targets, const TedParams& params, const Ablation& ablation) {
  Tape tape(&params.values);
  return forward_on_tape(tape, graph, index, batch, targets, params, ablation).output;
}

ForwardOutput forward_backward(const HetGraph& graph, const NeighborIndex& index,
                               std::span<const NodeIndex> batch, std::span<const double> targets,
                               const TedParams& params, const Ablation& ablation) {
  if (targets.empty()) throw Error(ErrorCode::UsageError, "gradients need targets");
  Tape tape(&params.values);
  auto f = forward_on_tape(tape, graph, index, batch, targets, params, ablation);
  f.output.gradients = tape.backward(*f.loss);
  return std::move(f.output);
}

// ---- checkpoints

std::string serialize_checkpoint(const TedParams& params, const std::map<std::string, std::string>& metadata) {
  nlohmann::ordered_json j;
  j["format"] = "ted-checkpoint";
  j["version"] = 1;
  j["dims"] = {{"proj_dim", params.dims.proj_dim},
               {"heads", params.dims.heads},
               {"head_dim", params.dims.head_dim},
               {"embed_dim", params.dims.embed_dim}};
  j["company_type"] = params.company_type;
  j["node_types"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < params.node_type_names.size(); ++t)
    j["node_types"].push_back({{"name", params.node_type_names[t]}, {"dim", params.input_dims[t]}});
  j["patterns"] = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < params.pattern_ids.size(); ++m)
    j["patterns"].push_back({{"id", params.pattern_ids[m]}, {"size", params.pattern_sizes[m]}});
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metadata) j["metadata"][k] = v;
  j["parameters"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const auto& t = params.values[i];
    j["parameters"].push_back({{"name", params.values.name(i)},
                               {"rows", t.rows()},
                               {"cols", t.cols()},
                               {"values", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  return j.dump(1) + "\n";
}

TedParams parse_checkpoint(const std::string& text, std::map<std::string, std::string>* metadata) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "ted-checkpoint")
      throw Error(ErrorCode::ParseError, "not a checkpoint file");
    if (j.at("version").get<int>() != 1) throw Error(ErrorCode::ParseError, "unsupported checkpoint version");
    TedParams p;
    const auto& d = j.at("dims");
    p.dims = {d.at("proj_dim").get<std::size_t>(), d.at("heads").get<std::size_t>(),
              d.at("head_dim").get<std::size_t>(), d.at("embed_dim").get<std::size_t>()};
    p.company_type = j.at("company_type").get<std::string>();
    for (const auto& t : j.at("node_types")) {
      p.node_type_names.push_back(t.at("name").get<std::string>());
      p.input_dims.push_back(t.at("dim").get<std::size_t>());
    }
    for (const auto& m : j.at("patterns")) {
      p.pattern_ids.push_back(m.at("id").get<std::string>());
      p.pattern_sizes.push_back(m.at("size").get<std::size_t>());
    }
    for (const auto& e : j.at("parameters")) {
      const auto rows = e.at("rows").get<std::size_t>();
      const auto cols = e.at("cols").get<std::size_t>();
      auto values = e.at("values").get<std::vector<double>>();
      if (values.size() != rows * cols)
        throw Error(ErrorCode::ShapeMismatch, "parameter '" + e.at("name").get<std::string>() + "' has " +
                                                  std::to_string(values.size()) + " values for shape " +
                                                  std::to_string(rows) + "x" + std::to_string(cols));
      p.values.add(e.at("name").get<std::string>(), Tensor(rows, cols, std::move(values)));
    }
    if (metadata) {
      metadata->clear();
      if (j.contains("metadata"))
        for (const auto& [k, v] : j.at("metadata").items()) (*metadata)[k] = v.get<std::string>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace ted
