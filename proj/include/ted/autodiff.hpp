#pragma once

// Dense row-major float64 matrices and a reverse-mode tape over them.
//
// Every op records its output value together with a closure that pushes the
// output gradient back onto its inputs. Reductions always run sequentially in
// index order, so identical inputs give bit-identical values and gradients.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ted::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::initializer_list<double> values);
  static Tensor column(std::initializer_list<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  // Value of a 1x1 tensor.
  double item() const;
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Named learnable tensors in registration order.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t size() const { return values_.size(); }
  std::size_t index(std::string_view name) const;  // throws if absent
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  Tensor& operator[](std::string_view name) { return values_[index(name)]; }
  const Tensor& operator[](std::string_view name) const { return values_[index(name)]; }
  std::size_t num_scalars() const;

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // Parameters are read (never written) while the tape is alive.
  explicit Tape(const ParameterSet* params = nullptr);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a registered parameter; repeated calls return the same leaf.
  Var param(std::size_t index);
  Var param(std::string_view name);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  // Gradient buffer of a node during backward (allocated on first touch).
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  // False for constants and for values computed only from constants.
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Appends an op result computed from `inputs`; `backward` is dropped when
  // no input needs a gradient.
  Var record(Tensor value, std::span<const std::size_t> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<std::size_t> inputs, BackwardFn backward);

  // Gradients of a 1x1 `loss` for every registered parameter, aligned with
  // the ParameterSet. Parameters not on the path get zeros. Throws
  // NotScalarLoss.
  std::vector<Tensor> backward(Var loss);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  const ParameterSet* params_;
  std::vector<Node> nodes_;
  std::vector<std::ptrdiff_t> param_leaf_;  // param index -> node id or -1
  Tensor scratch_;
};

// ---- ops. Shape violations throw Error(ShapeMismatch).

Var matmul(Var a, Var b);                      // (n x k)(k x m)
Var linear(Var x, Var w);                      // x * w^T, w stored (out x in)
Var add(Var a, Var b);                         // same shape
Var add_row(Var a, Var row);                   // broadcast 1 x c over rows
Var mul(Var a, Var b);                         // elementwise
Var scale(Var a, double s);
Var leaky_relu(Var a, double alpha);
Var elu(Var a, double alpha = 1.0);
Var sigmoid(Var a);
Var softmax(Var a);                            // per row, max-subtracted
Var dot(Var a, Var b);                         // sum of elementwise product -> 1 x 1
Var sum(Var a);                                // -> 1 x 1
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Row r of the result is row idx[r] of `a`, or zeros when idx[r] < 0.
Var gather_rows(Var a, std::span<const std::ptrdiff_t> idx);
// Softmax of an (n x 1) column within each segment [offsets[s], offsets[s+1]).
Var segment_softmax(Var logits, std::span<const std::size_t> offsets);
// Row s = sum over segment s of weights[j] * x[j]; weights (n x 1).
Var segment_weighted_sum(Var x, Var weights, std::span<const std::size_t> offsets);
// Single-segment form: weights (n x 1), x (n x c) -> (1 x c).
Var weighted_sum(Var x, Var weights);
// sum_i softplus(s_i) - y_i s_i, the binary cross-entropy of sigmoid(s)
// evaluated without forming log(sigmoid).
Var bce_with_logits(Var logits, std::span<const double> targets);

// Max over all parameter entries of |analytic - central difference| /
// max(1, |analytic|). `loss` builds a scalar on the supplied tape, which is
// bound to `params`; entries are perturbed in place and restored.
double finite_diff_check(const std::function<Var(Tape&)>& loss, ParameterSet& params, double eps);

}  // namespace ted::ad
