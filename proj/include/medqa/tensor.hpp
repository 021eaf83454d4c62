#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "medqa/random.hpp"

namespace medqa {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  /// Length of the last axis (1 for a scalar).
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
  /// Product of all axes but the last.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : data_.size() / shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t row, std::size_t col) { return data_[row * cols() + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * cols() + col]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool value) noexcept { requires_grad_ = value; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

// Gradient-free forward kernels. The tape records the same computations.

/// A[m×k]·B[k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Softmax over the last axis with max subtraction.
Tensor softmax(const Tensor& x);
/// Per-row (x - mean) / sqrt(var + eps) * gamma + beta with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))), elementwise.
Tensor gelu(const Tensor& x);
/// Mean over the batch of -log softmax(logits)[target].
double cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint64_t tape = 0;
  std::uint32_t index = 0;
};

/// Gradients of one backward pass, keyed by leaf.
class Gradients {
 public:
  bool contains(Var leaf) const { return find(leaf) != nullptr; }
  const Tensor* find(Var leaf) const;
  const Tensor& at(Var leaf) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  friend class Tape;
  std::uint64_t tape_ = 0;
  std::vector<std::pair<std::uint32_t, Tensor>> entries_;  // sorted by index
};

/// Records tensor operations in execution order for reverse-mode differentiation.
///
/// Inputs of every node are created before it, so reverse index order is a
/// valid reverse topological order. Gradients accumulate additively where a
/// value feeds several consumers. A tape supports a single backward pass.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// A leaf; receives a gradient when value.requires_grad() is set.
  Var leaf(Tensor value);
  Var constant(Tensor value);

  Var add(Var a, Var b);
  /// x[..., d] + bias[d] broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var scale(Var x, double factor);
  Var matmul(Var a, Var b);
  /// a[m×k]·bᵀ for b[n×k].
  Var matmul_transposed(Var a, Var b);
  /// Per-group product of a[g×m×k] with b[g×k×n], or with b[g×n×k] transposed.
  Var batched_matmul(Var a, Var b, bool transpose_b);
  Var softmax(Var x);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var gelu(Var x);
  /// Inverted dropout: zeroes with probability rate, scales survivors by 1/(1-rate).
  Var dropout(Var x, double rate, Rng& rng);
  /// Rows of table[V×d] selected by ids, giving [ids.size()×d].
  Var embedding(Var table, std::span<const std::size_t> ids);
  /// [batch*seq × heads*head_dim] to [batch*heads × seq × head_dim].
  Var split_heads(Var x, std::size_t batch, std::size_t seq, std::size_t heads);
  /// Inverse of split_heads.
  Var merge_heads(Var x, std::size_t batch, std::size_t seq, std::size_t heads);
  /// Adds -1e9 to attention scores [batch*heads × seq × seq] at keys whose mask is 0.
  Var mask_keys(Var scores, std::span<const std::uint8_t> key_mask, std::size_t heads);
  Var gather_rows(Var x, std::span<const std::size_t> rows);
  Var sum(Var x);
  Var cross_entropy(Var logits, std::span<const std::size_t> targets);

  const Tensor& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t id() const noexcept { return id_; }

  /// Gradients of the scalar seed with respect to every requires_grad leaf it depends on.
  Gradients backward(Var seed);

 private:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  struct Node {
    Tensor value;
    std::vector<std::uint32_t> inputs;
    Backward backward;
    bool needs_grad = false;
    bool is_leaf = false;
  };

  std::uint32_t check(Var v) const;
  Var push(Tensor value, std::vector<std::uint32_t> inputs, Backward backward);
  bool needs_grad(std::uint32_t index) const { return nodes_[index].needs_grad; }
  std::span<double> grad_buffer(std::uint32_t index);
  std::span<const double> grad_of(std::uint32_t index) const { return grads_[index].data(); }

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool consumed_ = false;
};

}  // namespace medqa
