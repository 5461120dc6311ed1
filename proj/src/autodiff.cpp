#include "ted/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "ted/error.hpp"

namespace ted::ad {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw Error(ErrorCode::ShapeMismatch, "operands live on different tapes");
}

void check_segments(std::span<const std::size_t> offsets, std::size_t rows, const char* op) {
  require(!offsets.empty() && offsets.front() == 0 && offsets.back() == rows,
          std::string(op) + ": segment offsets must span all rows");
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    require(offsets[s - 1] <= offsets[s], std::string(op) + ": segment offsets must be non-decreasing");
  }
}

// Elementwise unary op with derivative expressed through input and output.
template <typename F, typename D>
Var unary(Var a, F f, D derivative) {
  const auto& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const auto in = a.id();
  return a.tape()->record(std::move(y), {in}, [in, derivative](Tape& t, std::size_t self) {
    const auto& x = t.value(in);
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    auto& gx = t.grad(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * derivative(x[i], y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, "tensor data length does not match shape");
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, values.size(), std::vector<double>(values));
}

Tensor Tensor::column(std::initializer_list<double> values) {
  return Tensor(values.size(), 1, std::vector<double>(values));
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::NotScalarLoss, "item() on a " + shape_string() + " tensor");
  return data_[0];
}

std::string Tensor::shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

// ---------------------------------------------------------------- ParameterSet

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw Error(ErrorCode::UsageError, "parameter '" + name + "' registered twice");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParameterSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw Error(ErrorCode::UsageError, "no parameter named '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

// ---------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape_->value(id_); }

Tape::Tape(const ParameterSet* params) : params_(params) {
  if (params_) param_leaf_.assign(params_->size(), -1);
}

Var Tape::constant(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Tape::param(std::size_t index) {
  if (!params_ || index >= params_->size()) {
    throw Error(ErrorCode::UsageError, "tape has no parameter #" + std::to_string(index));
  }
  if (param_leaf_[index] < 0) {
    nodes_.push_back({(*params_)[index], Tensor(), nullptr, true});
    param_leaf_[index] = static_cast<std::ptrdiff_t>(nodes_.size() - 1);
  }
  return Var(this, static_cast<std::size_t>(param_leaf_[index]));
}

Var Tape::param(std::string_view name) {
  if (!params_) throw Error(ErrorCode::UsageError, "tape has no parameter set");
  return param(params_->index(name));
}

Tensor& Tape::grad(std::size_t id) {
  auto& node = nodes_[id];
  if (!node.requires_grad) {
    // Sink for contributions nobody reads.
    scratch_ = Tensor(node.value.rows(), node.value.cols());
    return scratch_;
  }
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.rows(), node.value.cols());
  return node.grad;
}

Var Tape::record(Tensor value, std::initializer_list<std::size_t> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const std::size_t>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto in : inputs) needs = needs || nodes_[in].requires_grad;
  if (!needs) backward = nullptr;
  nodes_.push_back({std::move(value), Tensor(), std::move(backward), needs});
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error(ErrorCode::NotScalarLoss, "loss was not recorded on this tape");
  if (loss.value().size() != 1) {
    throw Error(ErrorCode::NotScalarLoss, "loss has shape " + loss.value().shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!has_grad(id) || !nodes_[id].backward) continue;
    nodes_[id].backward(*this, id);
  }
  std::vector<Tensor> grads;
  if (!params_) return grads;
  grads.reserve(params_->size());
  for (std::size_t p = 0; p < params_->size(); ++p) {
    const auto leaf = param_leaf_[p];
    if (leaf >= 0 && has_grad(static_cast<std::size_t>(leaf))) {
      grads.push_back(nodes_[static_cast<std::size_t>(leaf)].grad);
    } else {
      grads.emplace_back((*params_)[p].rows(), (*params_)[p].cols());
    }
  }
  return grads;
}

// ---------------------------------------------------------------- ops

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.cols() == B.rows(), "matmul " + A.shape_string() + " * " + B.shape_string());
  const auto n = A.rows(), k = A.cols(), m = B.cols();
  Tensor Y(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      for (std::size_t j = 0; j < m; ++j) Y(i, j) += aip * B(p, j);
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(Y), {ia, ib}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    const auto& G = t.grad(self);
    if (t.needs_grad(ia)) {
      auto& gA = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += G(i, j) * B(p, j);
          gA(i, p) += acc;
        }
    }
    if (t.needs_grad(ib)) {
      auto& gB = t.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          for (std::size_t j = 0; j < m; ++j) gB(p, j) += aip * G(i, j);
        }
    }
  });
}

Var linear(Var x, Var w) {
  require_same_tape(x, w);
  const auto& X = x.value();
  const auto& W = w.value();
  require(X.cols() == W.cols(), "linear " + X.shape_string() + " by weight " + W.shape_string());
  const auto n = X.rows(), k = X.cols(), m = W.rows();
  Tensor Y(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = X.row_span(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto wj = W.row_span(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += xi[p] * wj[p];
      Y(i, j) = acc;
    }
  }
  const auto ix = x.id(), iw = w.id();
  return x.tape()->record(std::move(Y), {ix, iw}, [ix, iw, n, k, m](Tape& t, std::size_t self) {
    const auto& X = t.value(ix);
    const auto& W = t.value(iw);
    const auto& G = t.grad(self);
    if (t.needs_grad(ix)) {
      auto& gX = t.grad(ix);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double g = G(i, j);
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gX(i, p) += g * W(j, p);
        }
    }
    if (t.needs_grad(iw)) {
      auto& gW = t.grad(iw);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double g = G(i, j);
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gW(j, p) += g * X(i, p);
        }
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.same_shape(B), "add " + A.shape_string() + " + " + B.shape_string());
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(Y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& G = t.grad(self);
    auto& gA = t.grad(ia);
    for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i];
    auto& gB = t.grad(ib);
    for (std::size_t i = 0; i < G.size(); ++i) gB[i] += G[i];
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  const auto& A = a.value();
  const auto& R = row.value();
  require(R.rows() == 1 && R.cols() == A.cols(), "add_row " + A.shape_string() + " + " + R.shape_string());
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.rows(); ++i)
    for (std::size_t j = 0; j < Y.cols(); ++j) Y(i, j) += R(0, j);
  const auto ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(Y), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const auto& G = t.grad(self);
    auto& gA = t.grad(ia);
    for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i];
    auto& gR = t.grad(ir);
    for (std::size_t i = 0; i < G.rows(); ++i)
      for (std::size_t j = 0; j < G.cols(); ++j) gR(0, j) += G(i, j);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.same_shape(B), "mul " + A.shape_string() + " * " + B.shape_string());
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= B[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(Y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& G = t.grad(self);
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    auto& gA = t.grad(ia);
    for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i] * B[i];
    auto& gB = t.grad(ib);
    for (std::size_t i = 0; i < G.size(); ++i) gB[i] += G[i] * A[i];
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var leaky_relu(Var a, double alpha) {
  return unary(
      a, [alpha](double x) { return x > 0.0 ? x : alpha * x; },
      [alpha](double x, double) { return x > 0.0 ? 1.0 : alpha; });
}

Var elu(Var a, double alpha) {
  return unary(
      a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

namespace {

void softmax_range(const Tensor& x, Tensor& y, std::size_t begin, std::size_t end, std::size_t stride,
                   std::size_t offset) {
  if (begin == end) return;
  double mx = x[begin * stride + offset];
  for (auto i = begin + 1; i < end; ++i) mx = std::max(mx, x[i * stride + offset]);
  double total = 0.0;
  for (auto i = begin; i < end; ++i) {
    const double e = std::exp(x[i * stride + offset] - mx);
    y[i * stride + offset] = e;
    total += e;
  }
  for (auto i = begin; i < end; ++i) y[i * stride + offset] /= total;
}

void softmax_backward_range(const Tensor& y, const Tensor& g, Tensor& gx, std::size_t begin,
                            std::size_t end, std::size_t stride, std::size_t offset) {
  double inner = 0.0;
  for (auto i = begin; i < end; ++i) inner += g[i * stride + offset] * y[i * stride + offset];
  for (auto i = begin; i < end; ++i) {
    const auto k = i * stride + offset;
    gx[k] += y[k] * (g[k] - inner);
  }
}

}  // namespace

Var softmax(Var a) {
  const auto& X = a.value();
  Tensor Y(X.rows(), X.cols());
  // Row r covers flat positions r*cols .. r*cols+cols-1: stride 1 over a
  // shifted range.
  for (std::size_t r = 0; r < X.rows(); ++r) softmax_range(X, Y, r * X.cols(), (r + 1) * X.cols(), 1, 0);
  const auto ia = a.id();
  return a.tape()->record(std::move(Y), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& Y = t.value(self);
    const auto& G = t.grad(self);
    auto& gX = t.grad(ia);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      softmax_backward_range(Y, G, gX, r * Y.cols(), (r + 1) * Y.cols(), 1, 0);
    }
  });
}

Var dot(Var a, Var b) {
  require_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.size() == B.size(), "dot " + A.shape_string() + " . " + B.shape_string());
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) acc += A[i] * B[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(Tensor::scalar(acc), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    auto& gA = t.grad(ia);
    for (std::size_t i = 0; i < A.size(); ++i) gA[i] += g * B[i];
    auto& gB = t.grad(ib);
    for (std::size_t i = 0; i < B.size(); ++i) gB[i] += g * A[i];
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  const auto ia = a.id();
  return a.tape()->record(Tensor::scalar(acc), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto& gA = t.grad(ia);
    for (std::size_t i = 0; i < gA.size(); ++i) gA[i] += g;
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const auto rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_same_tape(parts.front(), p);
    require(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Tensor Y(rows, cols);
  std::vector<std::size_t> ids, widths;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const auto& X = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < X.cols(); ++c) Y(r, c0 + c) = X(r, c);
    c0 += X.cols();
    ids.push_back(p.id());
    widths.push_back(X.cols());
  }
  return parts.front().tape()->record(std::move(Y), ids, [ids, widths](Tape& t, std::size_t self) {
    const auto& G = t.grad(self);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto& gX = t.grad(ids[k]);
      for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < widths[k]; ++c) gX(r, c) += G(r, c0 + c);
      c0 += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const auto cols = parts.front().cols();
  std::vector<double> data;
  std::vector<std::size_t> ids, sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_same_tape(parts.front(), p);
    require(p.cols() == cols, "concat_rows column mismatch");
    const auto& X = p.value();
    data.insert(data.end(), X.data().begin(), X.data().end());
    rows += X.rows();
    ids.push_back(p.id());
    sizes.push_back(X.size());
  }
  return parts.front().tape()->record(Tensor(rows, cols, std::move(data)), ids, [ids, sizes](Tape& t, std::size_t self) {
    const auto& G = t.grad(self);
    std::size_t base = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (sizes[k] > 0) {
        auto& gX = t.grad(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gX[i] += G[base + i];
      }
      base += sizes[k];
    }
  });
}

Var gather_rows(Var a, std::span<const std::ptrdiff_t> idx) {
  const auto& A = a.value();
  Tensor Y(idx.size(), A.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    require(static_cast<std::size_t>(idx[r]) < A.rows(), "gather_rows index out of range");
    const auto src = A.row_span(static_cast<std::size_t>(idx[r]));
    std::copy(src.begin(), src.end(), Y.data().begin() + static_cast<std::ptrdiff_t>(r * A.cols()));
  }
  const auto ia = a.id();
  std::vector<std::ptrdiff_t> index(idx.begin(), idx.end());
  return a.tape()->record(std::move(Y), {ia}, [ia, index = std::move(index)](Tape& t, std::size_t self) {
    const auto& G = t.grad(self);
    auto& gA = t.grad(ia);
    const auto cols = G.cols();
    for (std::size_t r = 0; r < index.size(); ++r) {
      if (index[r] < 0) continue;
      const auto dst = static_cast<std::size_t>(index[r]);
      for (std::size_t c = 0; c < cols; ++c) gA(dst, c) += G(r, c);
    }
  });
}

Var segment_softmax(Var logits, std::span<const std::size_t> offsets) {
  const auto& X = logits.value();
  require(X.cols() == 1, "segment_softmax expects a column, got " + X.shape_string());
  check_segments(offsets, X.rows(), "segment_softmax");
  Tensor Y(X.rows(), 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) softmax_range(X, Y, offsets[s], offsets[s + 1], 1, 0);
  const auto ia = logits.id();
  std::vector<std::size_t> segs(offsets.begin(), offsets.end());
  return logits.tape()->record(std::move(Y), {ia}, [ia, segs = std::move(segs)](Tape& t, std::size_t self) {
    const auto& Y = t.value(self);
    const auto& G = t.grad(self);
    auto& gX = t.grad(ia);
    for (std::size_t s = 0; s + 1 < segs.size(); ++s) softmax_backward_range(Y, G, gX, segs[s], segs[s + 1], 1, 0);
  });
}

Var segment_weighted_sum(Var x, Var weights, std::span<const std::size_t> offsets) {
  require_same_tape(x, weights);
  const auto& X = x.value();
  const auto& W = weights.value();
  require(W.cols() == 1 && W.rows() == X.rows(),
          "segment_weighted_sum weights " + W.shape_string() + " for rows " + X.shape_string());
  check_segments(offsets, X.rows(), "segment_weighted_sum");
  const auto segments = offsets.size() - 1;
  const auto cols = X.cols();
  Tensor Y(segments, cols);
  for (std::size_t s = 0; s < segments; ++s)
    for (auto j = offsets[s]; j < offsets[s + 1]; ++j)
      for (std::size_t c = 0; c < cols; ++c) Y(s, c) += W(j, 0) * X(j, c);
  const auto ix = x.id(), iw = weights.id();
  std::vector<std::size_t> segs(offsets.begin(), offsets.end());
  return x.tape()->record(std::move(Y), {ix, iw}, [ix, iw, cols, segs = std::move(segs)](Tape& t, std::size_t self) {
    const auto& G = t.grad(self);
    const auto& X = t.value(ix);
    const auto& W = t.value(iw);
    auto& gX = t.grad(ix);
    for (std::size_t s = 0; s + 1 < segs.size(); ++s)
      for (auto j = segs[s]; j < segs[s + 1]; ++j)
        for (std::size_t c = 0; c < cols; ++c) gX(j, c) += W(j, 0) * G(s, c);
    auto& gW = t.grad(iw);
    for (std::size_t s = 0; s + 1 < segs.size(); ++s)
      for (auto j = segs[s]; j < segs[s + 1]; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += G(s, c) * X(j, c);
        gW(j, 0) += acc;
      }
  });
}

Var weighted_sum(Var x, Var weights) {
  const std::size_t offsets[] = {0, x.rows()};
  return segment_weighted_sum(x, weights, offsets);
}

Var bce_with_logits(Var logits, std::span<const double> targets) {
  const auto& S = logits.value();
  require(S.cols() == 1 && S.rows() == targets.size(),
          "bce_with_logits: " + S.shape_string() + " logits for " + std::to_string(targets.size()) + " targets");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double s = S[i];
    const double softplus = s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    total += softplus - targets[i] * s;
  }
  const auto is = logits.id();
  std::vector<double> y(targets.begin(), targets.end());
  return logits.tape()->record(Tensor::scalar(total), {is}, [is, y = std::move(y)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const auto& S = t.value(is);
    auto& gS = t.grad(is);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double s = S[i];
      const double p = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
      gS[i] += g * (p - y[i]);
    }
  });
}

double finite_diff_check(const std::function<Var(Tape&)>& loss, ParameterSet& params, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape(&params);
    analytic = tape.backward(loss(tape));
  }
  auto evaluate = [&]() {
    Tape tape(&params);
    return loss(tape).value().item();
  };
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double up = evaluate();
      params[p][i] = saved - eps;
      const double down = evaluate();
      params[p][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace ted::ad
