#include "medqa/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kernels.hpp"
#include "medqa/errors.hpp"

namespace medqa {

namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
constexpr double kMaskBias = -1e9;

std::atomic<std::uint64_t> next_tape_id{1};

void require(bool condition, const std::string& message) {
  if (!condition) throw DimensionError(message);
}

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t cols) {
  const std::size_t rows = in.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    const double peak = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - peak);
      total += y[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

double gelu_derivative(double x) {
  const double inner = kGeluScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

void check_targets(std::span<const std::size_t> targets, std::size_t batch, std::size_t classes) {
  if (targets.size() != batch)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(batch));
  for (const auto t : targets)
    if (t >= classes)
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(classes) + ")");
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw DimensionError("tensor shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> data;
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Forward kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D operands");
  require(a.dim(1) == b.dim(0), "matmul inner dimension mismatch: " + shape_to_string(a.shape()) +
                                    " x " + shape_to_string(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.data().data(), b.data().data(), c.data().data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor softmax(const Tensor& x) {
  require(x.rank() >= 1 && x.cols() >= 1, "softmax over an empty axis");
  Tensor y(x.shape());
  softmax_rows(x.data(), y.data(), x.cols());
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.cols();
  require(x.rank() >= 1 && d >= 1, "layer_norm over an empty axis");
  require(gamma.size() == d && beta.size() == d, "layer_norm gamma/beta must have length " + std::to_string(d));
  if (!(eps > 0.0)) throw UsageError("layer_norm eps must be positive");
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* in = x.data().data() + r * d;
    double* out = y.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[j] = (in[j] - mean) * inv_std * gamma[j] + beta[j];
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
  return y;
}

double cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require(logits.rank() == 2 && logits.dim(1) >= 1, "cross_entropy expects [batch x classes] logits");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  check_targets(targets, batch, classes);
  if (batch == 0) throw UsageError("cross_entropy on an empty batch");
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = logits.data().data() + b * classes;
    const double peak = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t j = 0; j < classes; ++j) total += std::exp(row[j] - peak);
    loss += -(row[targets[b]] - peak - std::log(total));
  }
  return loss / static_cast<double>(batch);
}

// ---------------------------------------------------------------------------
// Gradients

const Tensor* Gradients::find(Var leaf) const {
  if (leaf.tape != tape_) return nullptr;
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), leaf.index,
                                   [](const auto& entry, std::uint32_t idx) { return entry.first < idx; });
  if (it == entries_.end() || it->first != leaf.index) return nullptr;
  return &it->second;
}

const Tensor& Gradients::at(Var leaf) const {
  const Tensor* grad = find(leaf);
  if (!grad) throw UsageError("no gradient recorded for this leaf");
  return *grad;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

std::uint32_t Tape::check(Var v) const {
  if (v.tape != id_ || v.index >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return v.index;
}

const Tensor& Tape::value(Var v) const { return nodes_[check(v)].value; }

Var Tape::push(Tensor value, std::vector<std::uint32_t> inputs, Backward backward) {
  if (!value.all_finite())
    throw NumericError("non-finite value produced by tape op #" + std::to_string(nodes_.size()));
  Node node;
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::uint32_t i) { return nodes_[i].needs_grad; });
  node.value = std::move(value);
  node.value.set_requires_grad(false);
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{id_, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::span<double> Tape::grad_buffer(std::uint32_t index) {
  Tensor& g = grads_[index];
  if (g.size() != nodes_[index].value.size()) g = Tensor(nodes_[index].value.shape());
  return g.data();
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite leaf value");
  Node node;
  node.needs_grad = value.requires_grad();
  node.is_leaf = true;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{id_, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::add(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  const Tensor& x = nodes_[ia].value;
  const Tensor& y = nodes_[ib].value;
  require(x.shape() == y.shape(), "add shape mismatch: " + shape_to_string(x.shape()) + " vs " +
                                      shape_to_string(y.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    for (const auto in : {ia, ib}) {
      if (!t.needs_grad(in)) continue;
      auto dst = t.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

Var Tape::add_bias(Var x, Var bias) {
  const auto ix = check(x), ib = check(bias);
  const Tensor& v = nodes_[ix].value;
  const Tensor& b = nodes_[ib].value;
  const std::size_t d = v.cols();
  require(v.rank() >= 1 && b.size() == d, "add_bias: bias length " + std::to_string(b.size()) +
                                              " does not match last axis " + std::to_string(d));
  Tensor out = v;
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += b[j];
  return push(std::move(out), {ix, ib}, [ix, ib, d](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    if (t.needs_grad(ix)) {
      auto dst = t.grad_buffer(ix);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto dst = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i % d] += g[i];
    }
  });
}

Var Tape::scale(Var x, double factor) {
  const auto ix = check(x);
  Tensor out = nodes_[ix].value;
  for (auto& v : out.data()) v *= factor;
  return push(std::move(out), {ix}, [ix, factor](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    auto dst = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  });
}

Var Tape::matmul(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  Tensor out = medqa::matmul(nodes_[ia].value, nodes_[ib].value);
  const std::size_t m = out.dim(0), n = out.dim(1), k = nodes_[ia].value.dim(1);
  return push(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::uint32_t self) {
    const double* g = t.grad_of(self).data();
    std::vector<double> scratch;
    if (t.needs_grad(ia))  // dA = dC·Bᵀ
      kernels::gemm_nt(g, t.nodes_[ib].value.data().data(), t.grad_buffer(ia).data(), m, n, k, scratch);
    if (t.needs_grad(ib))  // dB = Aᵀ·dC
      kernels::gemm_tn(t.nodes_[ia].value.data().data(), g, t.grad_buffer(ib).data(), k, m, n);
  });
}

Var Tape::matmul_transposed(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  const Tensor& x = nodes_[ia].value;
  const Tensor& y = nodes_[ib].value;
  require(x.rank() == 2 && y.rank() == 2 && x.dim(1) == y.dim(1),
          "matmul_transposed mismatch: " + shape_to_string(x.shape()) + " x " + shape_to_string(y.shape()) + "^T");
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(0);
  Tensor out({m, n});
  std::vector<double> scratch;
  kernels::gemm_nt(x.data().data(), y.data().data(), out.data().data(), m, k, n, scratch);
  return push(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::uint32_t self) {
    const double* g = t.grad_of(self).data();
    if (t.needs_grad(ia))  // dA = dC·B
      kernels::gemm_nn(g, t.nodes_[ib].value.data().data(), t.grad_buffer(ia).data(), m, n, k);
    if (t.needs_grad(ib))  // dB = dCᵀ·A
      kernels::gemm_tn(g, t.nodes_[ia].value.data().data(), t.grad_buffer(ib).data(), n, m, k);
  });
}

Var Tape::batched_matmul(Var a, Var b, bool transpose_b) {
  const auto ia = check(a), ib = check(b);
  const Tensor& x = nodes_[ia].value;
  const Tensor& y = nodes_[ib].value;
  require(x.rank() == 3 && y.rank() == 3 && x.dim(0) == y.dim(0), "batched_matmul expects [g x m x k] operands");
  const std::size_t groups = x.dim(0), m = x.dim(1), k = x.dim(2);
  const std::size_t n = transpose_b ? y.dim(1) : y.dim(2);
  require((transpose_b ? y.dim(2) : y.dim(1)) == k, "batched_matmul inner dimension mismatch: " +
                                                        shape_to_string(x.shape()) + " x " + shape_to_string(y.shape()));
  Tensor out({groups, m, n});
  std::vector<double> scratch;
  for (std::size_t g = 0; g < groups; ++g) {
    const double* ap = x.data().data() + g * m * k;
    const double* bp = y.data().data() + g * k * n;
    double* cp = out.data().data() + g * m * n;
    if (transpose_b)
      kernels::gemm_nt(ap, bp, cp, m, k, n, scratch);
    else
      kernels::gemm_nn(ap, bp, cp, m, k, n);
  }
  return push(std::move(out), {ia, ib}, [ia, ib, groups, m, k, n, transpose_b](Tape& t, std::uint32_t self) {
    const double* gout = t.grad_of(self).data();
    const double* av = t.nodes_[ia].value.data().data();
    const double* bv = t.nodes_[ib].value.data().data();
    double* ga = t.needs_grad(ia) ? t.grad_buffer(ia).data() : nullptr;
    double* gb = t.needs_grad(ib) ? t.grad_buffer(ib).data() : nullptr;
    std::vector<double> scratch;
    for (std::size_t g = 0; g < groups; ++g) {
      const double* dc = gout + g * m * n;
      const double* ap = av + g * m * k;
      const double* bp = bv + g * k * n;
      if (transpose_b) {
        // C = A·Bᵀ, B is [n×k]
        if (ga) kernels::gemm_nn(dc, bp, ga + g * m * k, m, n, k);
        if (gb) kernels::gemm_tn(dc, ap, gb + g * k * n, n, m, k);
      } else {
        if (ga) kernels::gemm_nt(dc, bp, ga + g * m * k, m, n, k, scratch);
        if (gb) kernels::gemm_tn(ap, dc, gb + g * k * n, k, m, n);
      }
    }
  });
}

Var Tape::softmax(Var x) {
  const auto ix = check(x);
  Tensor out = medqa::softmax(nodes_[ix].value);
  const std::size_t cols = out.cols();
  return push(std::move(out), {ix}, [ix, cols](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    const auto y = t.nodes_[self].value.data();
    auto dst = t.grad_buffer(ix);
    for (std::size_t r = 0; r < y.size() / cols; ++r) {
      const std::size_t o = r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < cols; ++j) dst[o + j] += y[o + j] * (g[o + j] - dot);
    }
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const auto ix = check(x), ig = check(gamma), ib = check(beta);
  const Tensor& in = nodes_[ix].value;
  const Tensor& gm = nodes_[ig].value;
  Tensor out = medqa::layer_norm(in, gm, nodes_[ib].value, eps);
  const std::size_t d = in.cols(), rows = in.rows();
  // Normalized activations and per-row inverse std, kept for the backward rule.
  std::vector<double> xhat(in.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) xhat[r * d + j] = (row[j] - mean) * inv_std[r];
  }
  return push(std::move(out), {ix, ig, ib},
              [ix, ig, ib, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
                const auto g = t.grad_of(self);
                const auto gm = t.nodes_[ig].value.data();
                if (t.needs_grad(ig)) {
                  auto dst = t.grad_buffer(ig);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i % d] += g[i] * xhat[i];
                }
                if (t.needs_grad(ib)) {
                  auto dst = t.grad_buffer(ib);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i % d] += g[i];
                }
                if (t.needs_grad(ix)) {
                  auto dst = t.grad_buffer(ix);
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t o = r * d;
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dxhat = g[o + j] * gm[j];
                      mean_dxhat += dxhat;
                      mean_dxhat_xhat += dxhat * xhat[o + j];
                    }
                    mean_dxhat *= inv_d;
                    mean_dxhat_xhat *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dxhat = g[o + j] * gm[j];
                      dst[o + j] += inv_std[r] * (dxhat - mean_dxhat - xhat[o + j] * mean_dxhat_xhat);
                    }
                  }
                }
              });
}

Var Tape::gelu(Var x) {
  const auto ix = check(x);
  Tensor out = medqa::gelu(nodes_[ix].value);
  return push(std::move(out), {ix}, [ix](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    const auto in = t.nodes_[ix].value.data();
    auto dst = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * gelu_derivative(in[i]);
  });
}

Var Tape::dropout(Var x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
  const auto ix = check(x);
  Tensor out = nodes_[ix].value;
  std::vector<double> mask(out.size(), 1.0);
  if (rate > 0.0) {
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  }
  return push(std::move(out), {ix}, [ix, mask = std::move(mask)](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    auto dst = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * mask[i];
  });
}

Var Tape::embedding(Var table, std::span<const std::size_t> ids) {
  const auto it = check(table);
  const Tensor& tab = nodes_[it].value;
  require(tab.rank() == 2, "embedding table must be 2-D");
  const std::size_t vocab = tab.dim(0), d = tab.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab)
      throw IndexError("embedding id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab));
    std::copy_n(tab.data().data() + ids[i] * d, d, out.data().data() + i * d);
  }
  return push(std::move(out), {it}, [it, d, ids = std::vector<std::size_t>(ids.begin(), ids.end())](Tape& t,
                                                                                                  std::uint32_t self) {
    const auto g = t.grad_of(self);
    auto dst = t.grad_buffer(it);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dst[ids[i] * d + j] += g[i * d + j];
  });
}

Var Tape::split_heads(Var x, std::size_t batch, std::size_t seq, std::size_t heads) {
  const auto ix = check(x);
  const Tensor& in = nodes_[ix].value;
  require(in.rank() == 2 && in.dim(0) == batch * seq && heads > 0 && in.dim(1) % heads == 0,
          "split_heads: input " + shape_to_string(in.shape()) + " incompatible with batch/seq/heads");
  const std::size_t hd = in.dim(1) / heads, width = in.dim(1);
  Tensor out({batch * heads, seq, hd});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < seq; ++l)
        std::copy_n(in.data().data() + (b * seq + l) * width + h * hd, hd,
                    out.data().data() + ((b * heads + h) * seq + l) * hd);
  return push(std::move(out), {ix}, [ix, batch, seq, heads, hd, width](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    auto dst = t.grad_buffer(ix);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < seq; ++l) {
          const double* src = g.data() + ((b * heads + h) * seq + l) * hd;
          double* out_row = dst.data() + (b * seq + l) * width + h * hd;
          for (std::size_t e = 0; e < hd; ++e) out_row[e] += src[e];
        }
  });
}

Var Tape::merge_heads(Var x, std::size_t batch, std::size_t seq, std::size_t heads) {
  const auto ix = check(x);
  const Tensor& in = nodes_[ix].value;
  require(in.rank() == 3 && in.dim(0) == batch * heads && in.dim(1) == seq,
          "merge_heads: input " + shape_to_string(in.shape()) + " incompatible with batch/seq/heads");
  const std::size_t hd = in.dim(2), width = hd * heads;
  Tensor out({batch * seq, width});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < seq; ++l)
        std::copy_n(in.data().data() + ((b * heads + h) * seq + l) * hd, hd,
                    out.data().data() + (b * seq + l) * width + h * hd);
  return push(std::move(out), {ix}, [ix, batch, seq, heads, hd, width](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    auto dst = t.grad_buffer(ix);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < seq; ++l) {
          const double* src = g.data() + (b * seq + l) * width + h * hd;
          double* out_row = dst.data() + ((b * heads + h) * seq + l) * hd;
          for (std::size_t e = 0; e < hd; ++e) out_row[e] += src[e];
        }
  });
}

Var Tape::mask_keys(Var scores, std::span<const std::uint8_t> key_mask, std::size_t heads) {
  const auto is = check(scores);
  const Tensor& in = nodes_[is].value;
  require(in.rank() == 3 && in.dim(1) == in.dim(2) && heads > 0 && in.dim(0) % heads == 0,
          "mask_keys expects [batch*heads x seq x seq] scores");
  const std::size_t seq = in.dim(1), batch = in.dim(0) / heads;
  require(key_mask.size() == batch * seq, "mask_keys: mask length does not match batch*seq");
  Tensor out = in;
  for (std::size_t g = 0; g < in.dim(0); ++g) {
    const std::uint8_t* mask = key_mask.data() + (g / heads) * seq;
    for (std::size_t q = 0; q < seq; ++q)
      for (std::size_t k = 0; k < seq; ++k)
        if (!mask[k]) out[(g * seq + q) * seq + k] += kMaskBias;
  }
  return push(std::move(out), {is}, [is](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self);
    auto dst = t.grad_buffer(is);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var Tape::gather_rows(Var x, std::span<const std::size_t> rows) {
  const auto ix = check(x);
  const Tensor& in = nodes_[ix].value;
  require(in.rank() == 2, "gather_rows expects a 2-D input");
  const std::size_t d = in.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= in.dim(0)) throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(in.data().data() + rows[i] * d, d, out.data().data() + i * d);
  }
  return push(std::move(out), {ix}, [ix, d, rows = std::vector<std::size_t>(rows.begin(), rows.end())](Tape& t,
                                                                                                     std::uint32_t self) {
    const auto g = t.grad_of(self);
    auto dst = t.grad_buffer(ix);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dst[rows[i] * d + j] += g[i * d + j];
  });
}

Var Tape::sum(Var x) {
  const auto ix = check(x);
  const auto in = nodes_[ix].value.data();
  double total = 0.0;
  for (const double v : in) total += v;
  return push(Tensor::scalar(total), {ix}, [ix](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    for (auto& v : t.grad_buffer(ix)) v += g;
  });
}

Var Tape::cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const auto il = check(logits);
  const Tensor& in = nodes_[il].value;
  const double loss = medqa::cross_entropy(in, targets);
  const std::size_t classes = in.dim(1);
  return push(Tensor::scalar(loss), {il},
              [il, classes, targets = std::vector<std::size_t>(targets.begin(), targets.end())](Tape& t,
                                                                                               std::uint32_t self) {
                const double g = t.grad_of(self)[0];
                const Tensor probs = medqa::softmax(t.nodes_[il].value);
                auto dst = t.grad_buffer(il);
                const double inv_batch = 1.0 / static_cast<double>(targets.size());
                for (std::size_t b = 0; b < targets.size(); ++b)
                  for (std::size_t j = 0; j < classes; ++j) {
                    const double onehot = j == targets[b] ? 1.0 : 0.0;
                    dst[b * classes + j] += g * (probs[b * classes + j] - onehot) * inv_batch;
                  }
              });
}

Gradients Tape::backward(Var seed) {
  const auto is = check(seed);
  if (nodes_[is].value.size() != 1) throw UsageError("backward seed must be a scalar");
  if (consumed_) throw UsageError("backward already ran on this tape");
  consumed_ = true;
  grads_.assign(nodes_.size(), Tensor());
  Gradients result;
  result.tape_ = id_;
  if (!nodes_[is].needs_grad) return result;
  grad_buffer(is)[0] = 1.0;
  for (std::uint32_t i = is + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || grads_[i].size() == 0) continue;
    if (node.backward) node.backward(*this, i);
    if (node.is_leaf) result.entries_.emplace_back(i, std::move(grads_[i]));
  }
  std::sort(result.entries_.begin(), result.entries_.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  grads_.clear();
  return result;
}

}  // namespace medqa
