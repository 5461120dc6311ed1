#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ted/error.hpp"
#include "ted/model.hpp"
#include "ted/rng.hpp"
#include "ted/synth.hpp"

using namespace ted;
using ad::Tensor;

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

const ModelDims kSmall{.proj_dim = 4, .heads = 2, .head_dim = 3, .embed_dim = 5};

GenConfig small_config(std::uint64_t seed = 3) {
  GenConfig c;
  c.companies = 60;
  c.persons = 30;
  c.items = 12;
  c.events = 6;
  c.communities = 6;
  c.company_dim = 4;
  c.other_dim = 3;
  c.seed = seed;
  return c;
}

struct Fixture {
  SynthData data;
  NeighborIndex index;
  std::vector<NodeIndex> companies;
  std::vector<double> targets;
};

Fixture make_fixture(std::uint64_t seed = 3) {
  Fixture f;
  f.data = generate(small_config(seed));
  f.index = build_neighbor_index(f.data.graph, default_patterns(), {.cap = 8, .cap_mode = CapMode::Truncate});
  f.companies = f.data.graph.nodes_of_type(f.data.graph.schema().company_type());
  for (auto v : f.companies) f.targets.push_back(f.data.labels.at(f.data.graph.id(v)));
  return f;
}

// ---- plain-loop reference of the whole network for one node

double elu(double x) { return x > 0 ? x : std::expm1(x); }
double leaky(double x) { return x > 0 ? x : kLeakyAlpha * x; }

std::vector<double> matvec(const Tensor& w, const std::vector<double>& x) {
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) y[r] += w(r, c) * x[c];
  return y;
}

std::vector<double> softmax(const std::vector<double>& e) {
  const double mx = *std::max_element(e.begin(), e.end());
  std::vector<double> out;
  double z = 0;
  for (double v : e) z += std::exp(v - mx);
  for (double v : e) out.push_back(std::exp(v - mx) / z);
  return out;
}

std::vector<double> ref_projection(const HetGraph& g, const TedParams& p, NodeIndex v) {
  const auto& t = g.schema().node_types()[g.type(v)].name;
  const auto a = g.attributes(v);
  return matvec(p.values["P/" + t], std::vector<double>(a.begin(), a.end()));
}

struct RefNode {
  std::vector<double> z;
  double prob = 0;
  std::vector<std::vector<double>> alpha;  // per pattern
  std::vector<double> beta;                // per pattern, zero when absent
};

RefNode ref_forward(const HetGraph& g, const NeighborIndex& index, const TedParams& p, NodeIndex v,
                    const Ablation& abl) {
  const auto& dims = p.dims;
  const auto x = g.attributes(v);
  std::vector<double> q = matvec(p.values["Q"], std::vector<double>(x.begin(), x.end()));
  for (auto& e : q) e = elu(e);
  auto cross = [&](const std::vector<double>& f) {
    auto m = matvec(p.values["W_cross"], f);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = elu(m[i] + p.values["b_cross"][i]);
    return m;
  };
  RefNode out;
  out.alpha.resize(index.num_patterns());
  out.beta.assign(index.num_patterns(), 0.0);
  std::vector<std::vector<double>> ms;
  std::vector<double> logits;
  std::vector<std::size_t> present;
  for (std::size_t m = 0; m < index.num_patterns(); ++m) {
    const auto& pat = index.pattern(m);
    const auto n = index.count(m, v);
    if (n == 0) continue;
    std::vector<std::vector<double>> enc;
    std::vector<double> e;
    for (std::size_t k = 0; k < n; ++k) {
      const auto nodes = index.instance(m, v, k);
      std::vector<double> slots;
      for (auto role : pat.slot_order()) {
        auto h = ref_projection(g, p, nodes[role]);
        if (abl.no_hete && !g.is_company(nodes[role])) std::fill(h.begin(), h.end(), 0.0);
        slots.insert(slots.end(), h.begin(), h.end());
      }
      std::vector<double> row;
      for (std::size_t h = 0; h < dims.heads; ++h) {
        for (double y : matvec(p.values[p.instance_weight(m, h)], slots)) row.push_back(elu(y));
      }
      double s = 0;
      for (std::size_t i = 0; i < row.size(); ++i) s += p.values[p.instance_attention(m)][i] * row[i];
      e.push_back(leaky(s));
      enc.push_back(row);
    }
    auto alpha = abl.no_inner ? std::vector<double>(n, 1.0 / static_cast<double>(n)) : softmax(e);
    std::vector<double> f(dims.inner_dim(), 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += alpha[k] * enc[k][i];
    for (auto& y : f) y = elu(y);
    out.alpha[m] = alpha;
    auto mv = cross(f);
    double s = 0;
    const auto& vw = p.values[p.cross_attention(m)];
    for (std::size_t i = 0; i < q.size(); ++i) s += vw[i] * q[i];
    for (std::size_t i = 0; i < mv.size(); ++i) s += vw[q.size() + i] * mv[i];
    logits.push_back(leaky(s / std::sqrt(static_cast<double>(dims.embed_dim))));
    ms.push_back(mv);
    present.push_back(m);
  }
  if (ms.empty()) {
    out.z = cross(q);
  } else {
    const auto beta =
        abl.no_cross ? std::vector<double>(ms.size(), 1.0 / static_cast<double>(ms.size())) : softmax(logits);
    out.z.assign(dims.embed_dim, 0.0);
    for (std::size_t j = 0; j < ms.size(); ++j) {
      out.beta[present[j]] = beta[j];
      for (std::size_t i = 0; i < out.z.size(); ++i) out.z[i] += beta[j] * ms[j][i];
    }
  }
  double logit = p.values["readout/b"][0];
  for (std::size_t i = 0; i < out.z.size(); ++i) logit += p.values["readout/w"][i] * out.z[i];
  out.prob = 1.0 / (1.0 + std::exp(-logit));
  return out;
}

}  // namespace

TEST(Init, ShapesAndNames) {
  const auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 1);
  EXPECT_EQ(p.values["P/company"].rows(), 4u);
  EXPECT_EQ(p.values["P/company"].cols(), 4u);
  EXPECT_EQ(p.values["P/person"].cols(), 3u);
  EXPECT_EQ(p.values["W_inst/PCCP/1"].cols(), 4u * 4u);
  EXPECT_EQ(p.values["W_inst/PCCP/1"].rows(), 3u);
  EXPECT_EQ(p.values["k/PCPCCP"].cols(), kSmall.inner_dim());
  EXPECT_EQ(p.values["Q"].rows(), kSmall.inner_dim());
  EXPECT_EQ(p.values["v/PCCCP"].cols(), kSmall.inner_dim() + kSmall.embed_dim);
  EXPECT_EQ(p.values["b_cross"], Tensor(1, 5, 0.0));
  EXPECT_EQ(p.values["readout/b"], Tensor(1, 1, 0.0));
  EXPECT_EQ(p.company_dim(), 4u);
  EXPECT_EQ(p, init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 1));
  EXPECT_NE(p, init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 2));
}

TEST(Init, GlorotBound) {
  const auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 9);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const auto& t = p.values[i];
    const double s = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    for (double v : t.data()) EXPECT_LE(std::abs(v), s) << p.values.name(i);
  }
}

TEST(AblationNames, ParseAndName) {
  EXPECT_EQ(Ablation::parse("none"), Ablation{});
  EXPECT_TRUE(Ablation::parse("hete").no_hete);
  EXPECT_TRUE(Ablation::parse("inner").no_inner);
  EXPECT_TRUE(Ablation::parse("cross").no_cross);
  const auto att = Ablation::parse("att");
  EXPECT_TRUE(att.no_inner && att.no_cross && !att.no_hete);
  for (auto n : {"none", "hete", "inner", "cross", "att"}) EXPECT_EQ(Ablation::parse(n).name(), n);
  EXPECT_EQ(code_of([] { Ablation::parse("bogus"); }), ErrorCode::UsageError);
}

TEST(Projection, IdentityZeroAndGeneral) {
  const auto f = make_fixture();
  auto p = init_params(f.data.graph.schema(), default_patterns(), kSmall, 4);
  auto& pc = p.values["P/company"];
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) pc(r, c) = r == c ? 1.0 : 0.0;
  p.values["P/person"] = Tensor(4, 3, 0.0);
  const auto h = project(f.data.graph, p);
  const auto& g = f.data.graph;
  for (NodeIndex v = 0; v < g.num_nodes(); ++v) {
    const auto type = g.schema().node_types()[g.type(v)].name;
    const auto expected = ref_projection(g, p, v);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(h(v, i), expected[i], 1e-12);
      if (type == "company") EXPECT_EQ(h(v, i), g.attributes(v)[i]);
      if (type == "person") EXPECT_EQ(h(v, i), 0.0);
    }
  }
}

TEST(Projection, MissingAndMismatched) {
  const auto f = make_fixture();
  const Schema partial({{"company", 4}, {"person", 3}}, {{"holds", 1, 0, true}}, "company");
  const auto p = init_params(partial, default_patterns(), kSmall, 1);
  EXPECT_EQ(code_of([&] { project(f.data.graph, p); }), ErrorCode::MissingProjection);
  const auto wide = init_params(default_tax_schema(7, 3), default_patterns(), kSmall, 1);
  EXPECT_EQ(code_of([&] { project(f.data.graph, wide); }), ErrorCode::ShapeMismatch);
}

TEST(Encoding, WidthAndPositiveLinearRegime) {
  const auto f = make_fixture();
  auto p = init_params(f.data.graph.schema(), default_patterns(), kSmall, 4);
  const auto pat = default_patterns()[0];
  const auto v = f.companies.front();
  const std::vector<NodeIndex> nodes(pat.size(), v);
  // Positive projected inputs and positive head weights keep ELU in its
  // identity region, so each head output is the plain weighted sum.
  Tensor projected(f.data.graph.num_nodes(), 4);
  for (std::size_t i = 0; i < projected.size(); ++i) projected[i] = 0.1 + 0.01 * static_cast<double>(i % 7);
  for (std::size_t h = 0; h < kSmall.heads; ++h)
    for (auto& w : p.values[p.instance_weight(0, h)].data()) w = std::abs(w);
  const auto enc = encode_instance(f.data.graph, projected, pat, nodes, p, 0);
  ASSERT_EQ(enc.rows(), 1u);
  ASSERT_EQ(enc.cols(), kSmall.inner_dim());
  std::vector<double> slots;
  for (std::size_t s = 0; s < pat.size(); ++s) {
    const auto r = projected.row_span(v);
    slots.insert(slots.end(), r.begin(), r.end());
  }
  for (std::size_t h = 0; h < kSmall.heads; ++h) {
    const auto y = matvec(p.values[p.instance_weight(0, h)], slots);
    for (std::size_t j = 0; j < kSmall.head_dim; ++j) EXPECT_NEAR(enc[h * kSmall.head_dim + j], y[j], 1e-12);
  }
  EXPECT_EQ(code_of([&] { encode_instance(f.data.graph, projected, pat, std::vector<NodeIndex>{v}, p, 0); }),
            ErrorCode::ShapeMismatch);
}

TEST(InnerAttention, ZeroAttentionVectorIsUniform) {
  auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 2);
  p.values["k/PCCP"] = Tensor(1, kSmall.inner_dim(), 0.0);
  Rng rng(1);
  Tensor enc(3, kSmall.inner_dim());
  for (auto& x : enc.data()) x = rng.uniform(-1, 1);
  const auto r = inner_rpt_attention(enc, p, 0);
  for (double a : r.alpha) EXPECT_NEAR(a, 1.0 / 3.0, 1e-15);
  for (std::size_t i = 0; i < enc.cols(); ++i)
    EXPECT_NEAR(r.f[i], elu((enc(0, i) + enc(1, i) + enc(2, i)) / 3.0), 1e-12);
}

TEST(InnerAttention, WeightsFollowScores) {
  const auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 2);
  Rng rng(6);
  Tensor enc(4, kSmall.inner_dim());
  for (auto& x : enc.data()) x = rng.uniform(-2, 2);
  const auto r = inner_rpt_attention(enc, p, 1);
  std::vector<double> e;
  for (std::size_t k = 0; k < 4; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < enc.cols(); ++i) s += p.values["k/PCCCP"][i] * enc(k, i);
    e.push_back(leaky(s));
  }
  const auto expected = softmax(e);
  double total = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(r.alpha[k], expected[k], 1e-12);
    total += r.alpha[k];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  const auto u = inner_rpt_attention(enc, p, 1, true);
  for (double a : u.alpha) EXPECT_DOUBLE_EQ(a, 0.25);
  EXPECT_EQ(code_of([&] { inner_rpt_attention(Tensor(0, kSmall.inner_dim()), p, 1); }), ErrorCode::EmptyBatch);
}

TEST(InnerAttention, PermutationInvariant) {
  const auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 2);
  Rng rng(7);
  Tensor enc(5, kSmall.inner_dim());
  for (auto& x : enc.data()) x = rng.uniform(-2, 2);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor shuffled(5, kSmall.inner_dim());
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t i = 0; i < enc.cols(); ++i) shuffled(k, i) = enc(perm[k], i);
  const auto a = inner_rpt_attention(enc, p, 0);
  const auto b = inner_rpt_attention(shuffled, p, 0);
  for (std::size_t i = 0; i < a.f.size(); ++i) EXPECT_NEAR(a.f[i], b.f[i], 1e-12);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(b.alpha[k], a.alpha[perm[k]], 1e-12);
}

TEST(CrossAttention, MatchesReferenceAndIsPermutationInvariant) {
  const auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 5);
  Rng rng(3);
  std::vector<std::pair<std::size_t, Tensor>> fs;
  for (std::size_t m : {0u, 2u, 4u}) {
    Tensor f(1, kSmall.inner_dim());
    for (auto& x : f.data()) x = rng.uniform(-1, 1);
    fs.push_back({m, f});
  }
  const std::vector<double> x = {0.3, -1.2, 0.5, 2.0};
  const auto r = cross_rpt_attention(fs, x, p);
  double total = 0;
  for (double b : r.beta) total += b;
  EXPECT_NEAR(total, 1.0, 1e-12);
  std::reverse(fs.begin(), fs.end());
  const auto s = cross_rpt_attention(fs, x, p);
  for (std::size_t i = 0; i < r.z.size(); ++i) EXPECT_NEAR(r.z[i], s.z[i], 1e-12);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(r.beta[j], s.beta[2 - j], 1e-12);
  const auto u = cross_rpt_attention(fs, x, p, true);
  for (double b : u.beta) EXPECT_DOUBLE_EQ(b, 1.0 / 3.0);
  EXPECT_EQ(code_of([&] { cross_rpt_attention(fs, std::vector<double>{1.0}, p); }),
            ErrorCode::DimensionMismatch);
}

TEST(CrossAttention, NoPatternsUsesQueryPath) {
  const auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 5);
  const std::vector<double> x = {0.3, -1.2, 0.5, 2.0};
  const auto r = cross_rpt_attention({}, x, p);
  EXPECT_TRUE(r.beta.empty());
  auto q = matvec(p.values["Q"], x);
  for (auto& e : q) e = elu(e);
  const auto m = matvec(p.values["W_cross"], q);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(r.z[i], elu(m[i]), 1e-12);
}

class ForwardReference : public ::testing::TestWithParam<const char*> {};

TEST_P(ForwardReference, BatchedPassMatchesPerNodeLoops) {
  const auto f = make_fixture();
  const auto abl = Ablation::parse(GetParam());
  const auto p = init_params(f.data.graph.schema(), f.index.patterns(), kSmall, 8);
  const auto out = forward(f.data.graph, f.index, f.companies, f.targets, p, abl);
  ASSERT_EQ(out.nodes.size(), f.companies.size());
  std::size_t degenerate = 0;
  double loss = 0;
  for (std::size_t b = 0; b < f.companies.size(); ++b) {
    const auto ref = ref_forward(f.data.graph, f.index, p, f.companies[b], abl);
    EXPECT_NEAR(out.probabilities[b], ref.prob, 1e-12);
    for (std::size_t i = 0; i < kSmall.embed_dim; ++i) EXPECT_NEAR(out.embeddings(b, i), ref.z[i], 1e-12);
    for (std::size_t m = 0; m < f.index.num_patterns(); ++m) {
      EXPECT_NEAR(out.beta(b, m), ref.beta[m], 1e-12);
      ASSERT_EQ(out.alpha[m][b].size(), ref.alpha[m].size());
      for (std::size_t k = 0; k < ref.alpha[m].size(); ++k) EXPECT_NEAR(out.alpha[m][b][k], ref.alpha[m][k], 1e-12);
    }
    degenerate += out.degenerate[b];
    const double y = f.targets[b];
    loss -= y * std::log(out.probabilities[b]) + (1 - y) * std::log(1 - out.probabilities[b]);
  }
  EXPECT_GT(degenerate, 0u);
  EXPECT_LT(degenerate, f.companies.size());
  ASSERT_TRUE(out.loss.has_value());
  EXPECT_NEAR(*out.loss, loss, 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Ablations, ForwardReference, ::testing::Values("none", "hete", "inner", "cross", "att"));

TEST(Forward, AttentionNormalisesPerNode) {
  const auto f = make_fixture(5);
  const auto p = init_params(f.data.graph.schema(), f.index.patterns(), kSmall, 1);
  const auto out = forward(f.data.graph, f.index, f.companies, {}, p, {});
  EXPECT_FALSE(out.loss.has_value());
  for (std::size_t b = 0; b < out.nodes.size(); ++b) {
    double bsum = 0;
    for (std::size_t m = 0; m < f.index.num_patterns(); ++m) {
      bsum += out.beta(b, m);
      if (out.alpha[m][b].empty()) {
        EXPECT_EQ(out.beta(b, m), 0.0);
        continue;
      }
      const double asum = std::accumulate(out.alpha[m][b].begin(), out.alpha[m][b].end(), 0.0);
      EXPECT_NEAR(asum, 1.0, 1e-12);
    }
    EXPECT_NEAR(bsum, out.degenerate[b] ? 0.0 : 1.0, 1e-12);
  }
}

TEST(Forward, IndependentOfBatchComposition) {
  const auto f = make_fixture();
  const auto p = init_params(f.data.graph.schema(), f.index.patterns(), kSmall, 8);
  const auto all = forward(f.data.graph, f.index, f.companies, {}, p, {});
  std::vector<NodeIndex> rev(f.companies.rbegin(), f.companies.rend());
  const auto back = forward(f.data.graph, f.index, rev, {}, p, {});
  const auto n = f.companies.size();
  for (std::size_t b = 0; b < n; ++b) EXPECT_NEAR(all.probabilities[b], back.probabilities[n - 1 - b], 1e-12);
}

TEST(Forward, Errors) {
  const auto f = make_fixture();
  const auto p = init_params(f.data.graph.schema(), f.index.patterns(), kSmall, 8);
  EXPECT_EQ(code_of([&] { forward(f.data.graph, f.index, {}, {}, p, {}); }), ErrorCode::EmptyBatch);
  const auto person = f.data.graph.nodes_of_type(f.data.graph.schema().node_type("person")).front();
  const NodeIndex bad[] = {person};
  EXPECT_EQ(code_of([&] { forward(f.data.graph, f.index, bad, {}, p, {}); }), ErrorCode::UsageError);
  const auto fewer = init_params(f.data.graph.schema(), {default_patterns()[0]}, kSmall, 8);
  EXPECT_EQ(code_of([&] { forward(f.data.graph, f.index, f.companies, {}, fewer, {}); }),
            ErrorCode::ShapeMismatch);
}

TEST(Forward, InitialLossNearChance) {
  double total = 0;
  std::size_t count = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto f = make_fixture(seed);
    const auto p = init_params(f.data.graph.schema(), f.index.patterns(), ModelDims{}, seed);
    const auto out = forward(f.data.graph, f.index, f.companies, f.targets, p, {});
    total += *out.loss;
    count += f.companies.size();
  }
  EXPECT_NEAR(total / static_cast<double>(count), std::log(2.0), 0.15);
}

TEST(Forward, GradientsMatchCentralDifferences) {
  const auto f = make_fixture(4);
  auto p = init_params(f.data.graph.schema(), f.index.patterns(), kSmall, 3);
  const std::vector<NodeIndex> batch(f.companies.begin(), f.companies.begin() + 12);
  const std::vector<double> y(f.targets.begin(), f.targets.begin() + 12);
  const auto out = forward_backward(f.data.graph, f.index, batch, y, p, {});
  ASSERT_EQ(out.gradients.size(), p.values.size());
  const double eps = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    for (std::size_t j = 0; j < p.values[i].size(); ++j) {
      const double saved = p.values[i][j];
      p.values[i][j] = saved + eps;
      const double up = *forward(f.data.graph, f.index, batch, y, p, {}).loss;
      p.values[i][j] = saved - eps;
      const double down = *forward(f.data.graph, f.index, batch, y, p, {}).loss;
      p.values[i][j] = saved;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(numeric - out.gradients[i][j]) / std::max(1.0, std::abs(numeric)));
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Checkpoint, RoundTripsExactly) {
  const auto p = init_params(default_tax_schema(4, 3), default_patterns(), kSmall, 12);
  const std::map<std::string, std::string> meta{{"psr", "0.5"}, {"seed", "12"}};
  const auto text = serialize_checkpoint(p, meta);
  std::map<std::string, std::string> back_meta;
  const auto back = parse_checkpoint(text, &back_meta);
  EXPECT_EQ(back, p);
  EXPECT_EQ(back_meta, meta);
  EXPECT_EQ(serialize_checkpoint(back, back_meta), text);
  EXPECT_EQ(code_of([] { parse_checkpoint("{\"format\": \"other\"}"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_checkpoint("not json"); }), ErrorCode::ParseError);
}
