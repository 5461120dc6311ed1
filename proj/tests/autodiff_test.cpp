#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "ted/autodiff.hpp"
#include "ted/error.hpp"
#include "ted/rng.hpp"

using namespace ted;
using namespace ted::ad;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.5, double hi = 1.5) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

using LossFn = std::function<Var(Tape&)>;

// Central differences computed here, compared with Tape::backward.
double max_gradient_error(const LossFn& loss, ParameterSet& params, double eps = 1e-6) {
  std::vector<Tensor> analytic;
  {
    Tape tape(&params);
    analytic = tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape tape(&params);
    return loss(tape).value().item();
  };
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double up = eval();
      params[p][i] = saved - eps;
      const double down = eval();
      params[p][i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double err = std::abs(numeric - analytic[p][i]) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Projects any tensor to a scalar with fixed random weights so every output
// entry matters.
Var reduce(Tape& tape, Var v, std::uint64_t seed = 99) {
  Rng rng(seed);
  return dot(v, tape.constant(random_tensor(v.rows(), v.cols(), rng)));
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ted::Error thrown";
  return ErrorCode::UsageError;
}

struct OpCase {
  const char* name;
  std::function<void(ParameterSet&, Rng&)> setup;
  LossFn loss;
};

}  // namespace

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifference) {
  Rng rng(5);
  ParameterSet params;
  GetParam().setup(params, rng);
  EXPECT_LT(max_gradient_error(GetParam().loss, params), 1e-6) << GetParam().name;
}

namespace {

void two(ParameterSet& p, Rng& rng, std::size_t r1, std::size_t c1, std::size_t r2, std::size_t c2) {
  p.add("a", random_tensor(r1, c1, rng));
  p.add("b", random_tensor(r2, c2, rng));
}

const std::vector<std::size_t> kOffsets = {0, 2, 3, 6};

}  // namespace

INSTANTIATE_TEST_SUITE_P(
    AllOps, OpGradient,
    ::testing::Values(
        OpCase{"matmul", [](auto& p, auto& r) { two(p, r, 3, 4, 4, 2); },
               [](Tape& t) { return reduce(t, matmul(t.param("a"), t.param("b"))); }},
        OpCase{"linear", [](auto& p, auto& r) { two(p, r, 3, 4, 5, 4); },
               [](Tape& t) { return reduce(t, linear(t.param("a"), t.param("b"))); }},
        OpCase{"add", [](auto& p, auto& r) { two(p, r, 3, 4, 3, 4); },
               [](Tape& t) { return reduce(t, add(t.param("a"), t.param("b"))); }},
        OpCase{"add_row", [](auto& p, auto& r) { two(p, r, 3, 4, 1, 4); },
               [](Tape& t) { return reduce(t, add_row(t.param("a"), t.param("b"))); }},
        OpCase{"mul", [](auto& p, auto& r) { two(p, r, 3, 4, 3, 4); },
               [](Tape& t) { return reduce(t, mul(t.param("a"), t.param("b"))); }},
        OpCase{"scale", [](auto& p, auto& r) { p.add("a", random_tensor(2, 3, r)); },
               [](Tape& t) { return reduce(t, scale(t.param("a"), -2.5)); }},
        OpCase{"leaky_relu", [](auto& p, auto& r) { p.add("a", random_tensor(4, 4, r)); },
               [](Tape& t) { return reduce(t, leaky_relu(t.param("a"), 0.2)); }},
        OpCase{"elu", [](auto& p, auto& r) { p.add("a", random_tensor(4, 4, r)); },
               [](Tape& t) { return reduce(t, elu(t.param("a"))); }},
        OpCase{"sigmoid", [](auto& p, auto& r) { p.add("a", random_tensor(3, 3, r)); },
               [](Tape& t) { return reduce(t, sigmoid(t.param("a"))); }},
        OpCase{"softmax", [](auto& p, auto& r) { p.add("a", random_tensor(3, 5, r)); },
               [](Tape& t) { return reduce(t, softmax(t.param("a"))); }},
        OpCase{"dot", [](auto& p, auto& r) { two(p, r, 2, 3, 2, 3); },
               [](Tape& t) { return dot(t.param("a"), t.param("b")); }},
        OpCase{"sum", [](auto& p, auto& r) { p.add("a", random_tensor(2, 3, r)); },
               [](Tape& t) { return sum(mul(t.param("a"), t.param("a"))); }},
        OpCase{"concat_cols", [](auto& p, auto& r) { two(p, r, 3, 2, 3, 4); },
               [](Tape& t) {
                 const Var parts[] = {t.param("a"), t.param("b"), t.param("a")};
                 return reduce(t, concat_cols(parts));
               }},
        OpCase{"concat_rows", [](auto& p, auto& r) { two(p, r, 2, 3, 4, 3); },
               [](Tape& t) {
                 const Var parts[] = {t.param("b"), t.param("a")};
                 return reduce(t, concat_rows(parts));
               }},
        OpCase{"gather_rows", [](auto& p, auto& r) { p.add("a", random_tensor(4, 3, r)); },
               [](Tape& t) {
                 const std::ptrdiff_t idx[] = {2, -1, 0, 2, 3};
                 return reduce(t, gather_rows(t.param("a"), idx));
               }},
        OpCase{"segment_softmax", [](auto& p, auto& r) { p.add("a", random_tensor(6, 1, r)); },
               [](Tape& t) { return reduce(t, segment_softmax(t.param("a"), kOffsets)); }},
        OpCase{"segment_weighted_sum", [](auto& p, auto& r) { two(p, r, 6, 3, 6, 1); },
               [](Tape& t) { return reduce(t, segment_weighted_sum(t.param("a"), t.param("b"), kOffsets)); }},
        OpCase{"weighted_sum", [](auto& p, auto& r) { two(p, r, 4, 3, 4, 1); },
               [](Tape& t) { return reduce(t, weighted_sum(t.param("a"), t.param("b"))); }},
        OpCase{"bce_with_logits", [](auto& p, auto& r) { p.add("a", random_tensor(5, 1, r, -4, 4)); },
               [](Tape& t) {
                 const double y[] = {1, 0, 0, 1, 1};
                 return bce_with_logits(t.param("a"), y);
               }},
        OpCase{"composite", [](auto& p, auto& r) { two(p, r, 4, 3, 2, 3); },
               [](Tape& t) {
                 auto h = elu(linear(t.param("a"), t.param("b")));
                 auto s = segment_softmax(leaky_relu(linear(h, t.constant(Tensor::row({0.3, -0.7}))), 0.2),
                                          std::vector<std::size_t>{0, 1, 4});
                 return reduce(t, segment_weighted_sum(h, s, std::vector<std::size_t>{0, 1, 4}));
               }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Tensor, ValuesOfBasicOps) {
  Tape tape;
  auto a = tape.constant(Tensor(2, 2, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor(2, 2, {5, 6, 7, 8}));
  EXPECT_EQ(matmul(a, b).value(), Tensor(2, 2, {19, 22, 43, 50}));
  EXPECT_EQ(linear(a, b).value(), Tensor(2, 2, {17, 23, 39, 53}));
  EXPECT_DOUBLE_EQ(dot(a, b).value().item(), 70.0);
  EXPECT_DOUBLE_EQ(sum(a).value().item(), 10.0);
  auto s = softmax(tape.constant(Tensor::row({1000, 1000, 1000})));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.value()[i], 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(elu(tape.constant(Tensor::scalar(-1))).value().item(), std::exp(-1.0) - 1.0);
  EXPECT_DOUBLE_EQ(leaky_relu(tape.constant(Tensor::scalar(-2)), 0.2).value().item(), -0.4);
}

TEST(Tensor, BceIsStableForLargeLogits) {
  Tape tape;
  const double y[] = {1, 0};
  auto l = bce_with_logits(tape.constant(Tensor::column({800.0, -800.0})), y);
  EXPECT_NEAR(l.value().item(), 0.0, 1e-300);
  const double y2[] = {0};
  EXPECT_NEAR(bce_with_logits(tape.constant(Tensor::scalar(800.0)), y2).value().item(), 800.0, 1e-9);
}

TEST(Tensor, SegmentSoftmaxSumsToOnePerSegment) {
  Rng rng(2);
  Tape tape;
  auto s = segment_softmax(tape.constant(random_tensor(6, 1, rng, -30, 30)), kOffsets);
  for (std::size_t seg = 0; seg + 1 < kOffsets.size(); ++seg) {
    double total = 0;
    for (auto i = kOffsets[seg]; i < kOffsets[seg + 1]; ++i) total += s.value()[i];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Tensor, ShapeErrors) {
  Tape tape;
  auto a = tape.constant(Tensor(2, 3));
  auto b = tape.constant(Tensor(2, 2));
  EXPECT_EQ(code_of([&] { matmul(a, a); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { add(a, b); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { mul(a, b); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { linear(a, b); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { add_row(a, b); }), ErrorCode::ShapeMismatch);
  const Var cols[] = {a, tape.constant(Tensor(3, 1))};
  EXPECT_EQ(code_of([&] { concat_cols(cols); }), ErrorCode::ShapeMismatch);
  const std::ptrdiff_t idx[] = {5};
  EXPECT_EQ(code_of([&] { gather_rows(a, idx); }), ErrorCode::ShapeMismatch);
  const std::size_t bad_offsets[] = {0, 5};
  EXPECT_EQ(code_of([&] { segment_softmax(tape.constant(Tensor(3, 1)), bad_offsets); }),
            ErrorCode::ShapeMismatch);
  const double y[] = {1};
  EXPECT_EQ(code_of([&] { bce_with_logits(tape.constant(Tensor(2, 1)), y); }), ErrorCode::ShapeMismatch);
}

TEST(Tape, NonScalarLossRejected) {
  ParameterSet params;
  params.add("a", Tensor(2, 2, 1.0));
  Tape tape(&params);
  EXPECT_EQ(code_of([&] { tape.backward(tape.param("a")); }), ErrorCode::NotScalarLoss);
}

TEST(Tape, UnusedParametersGetZeroGradient) {
  ParameterSet params;
  params.add("a", Tensor(1, 2, 1.0));
  params.add("unused", Tensor(3, 1, 1.0));
  Tape tape(&params);
  const auto g = tape.backward(sum(tape.param("a")));
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0], Tensor(1, 2, 1.0));
  EXPECT_EQ(g[1], Tensor(3, 1, 0.0));
}

TEST(Tape, RepeatedParameterAccumulates) {
  ParameterSet params;
  params.add("a", Tensor::scalar(3.0));
  Tape tape(&params);
  auto a = tape.param("a");
  const auto g = tape.backward(mul(a, mul(a, tape.param("a"))));
  EXPECT_DOUBLE_EQ(g[0].item(), 27.0);
}

TEST(Tape, ConstantsNeedNoGradient) {
  ParameterSet params;
  params.add("a", Tensor::scalar(1.0));
  Tape tape(&params);
  auto c = scale(tape.constant(Tensor::scalar(2.0)), 3.0);
  EXPECT_FALSE(tape.needs_grad(c.id()));
  EXPECT_TRUE(tape.needs_grad(mul(c, tape.param("a")).id()));
}

TEST(Tape, LeakyReluNegativeRegionUsesSlope) {
  ParameterSet params;
  params.add("a", Tensor::row({-3.0, 2.0}));
  Tape tape(&params);
  const auto g = tape.backward(sum(leaky_relu(tape.param("a"), 0.2)));
  EXPECT_DOUBLE_EQ(g[0][0], 0.2);
  EXPECT_DOUBLE_EQ(g[0][1], 1.0);
}

TEST(Tape, BackwardIsDeterministic) {
  Rng rng(8);
  ParameterSet params;
  params.add("a", random_tensor(5, 4, rng));
  params.add("b", random_tensor(3, 4, rng));
  auto run = [&] {
    Tape tape(&params);
    return tape.backward(reduce(tape, softmax(elu(linear(tape.param("a"), tape.param("b"))))));
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, LibraryCheckerAgrees) {
  Rng rng(4);
  ParameterSet params;
  params.add("a", random_tensor(3, 3, rng));
  const LossFn f = [](Tape& t) { return reduce(t, sigmoid(matmul(t.param("a"), t.param("a")))); };
  EXPECT_LT(finite_diff_check(f, params, 1e-6), 1e-6);
  EXPECT_LT(max_gradient_error(f, params), 1e-6);
}

TEST(ParameterSetTest, LookupAndCount) {
  ParameterSet p;
  p.add("x", Tensor(2, 3));
  p.add("y", Tensor(1, 1));
  EXPECT_EQ(p.index("y"), 1u);
  EXPECT_TRUE(p.contains("x"));
  EXPECT_FALSE(p.contains("z"));
  EXPECT_EQ(p.num_scalars(), 7u);
  EXPECT_THROW(p.index("z"), Error);
}
