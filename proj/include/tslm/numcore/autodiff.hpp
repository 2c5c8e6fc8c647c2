#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tslm/numcore/tensor.hpp"

namespace tslm {

namespace detail {

struct Node {
  Tensor value;
  std::optional<Tensor> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  Tensor& ensure_grad() {
    if (!grad) grad = Tensor::zeros(value.shape());
    return *grad;
  }
};

}  // namespace detail

/// Handle to a node of the reverse-mode graph.
///
/// Copies share the node. Leaves created with requires_grad=true act as
/// parameters: their grad accumulates across backward passes until
/// zero_grad() is called.
class Var {
 public:
  Var() = default;

  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return node_->grad.has_value(); }
  const std::optional<Tensor>& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.reset(); }
  bool valid() const { return node_ != nullptr; }

  /// Scalar value of a one-element tensor.
  double item() const {
    if (node_->value.size() != 1) {
      throw DimensionError("item() needs a one-element tensor, got " + shape_string(shape()));
    }
    return node_->value[0];
  }

  /// Back-propagates from this one-element node with seed gradient 1.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  friend Var make_op(Tensor, std::vector<Var>, std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward) {
  Var out(std::move(value));
  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  out.node_->requires_grad = needs;
  if (needs) {
    out.node_->parents.reserve(inputs.size());
    for (const Var& in : inputs) out.node_->parents.push_back(in.node());
    out.node_->backward = std::move(backward);
  }
  return out;
}

inline void Var::backward() const {
  if (node_->value.size() != 1) {
    throw DimensionError("backward() needs a scalar root, got " + shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad) n->backward(*n);
  }
  // Interior grads are only needed during the sweep.
  for (detail::Node* n : order) {
    if (n->backward) n->grad.reset();
  }
}

namespace detail {

inline Tensor& parent_grad(Node& n, std::size_t i) { return n.parents[i]->ensure_grad(); }
inline bool parent_wants(const Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product a[m x k] * b[k x n].
inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  out.mat().noalias() = a.value().mat() * b.value().mat();
  return make_op(std::move(out), {a, b}, [](detail::Node& n) {
    const Tensor& g = *n.grad;
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (detail::parent_wants(n, 0)) detail::parent_grad(n, 0).mat().noalias() += g.mat() * bv.mat().transpose();
    if (detail::parent_wants(n, 1)) detail::parent_grad(n, 1).mat().noalias() += av.mat().transpose() * g.mat();
  });
}

inline Var transpose(const Var& a) {
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  out.mat() = a.value().mat().transpose();
  return make_op(std::move(out), {a}, [](detail::Node& n) {
    detail::parent_grad(n, 0).mat() += n.grad->mat().transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  if (a.value().size() != b.value().size() || a.rows() != b.rows()) {
    throw DimensionError("add: shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  out.mat() += b.value().mat();
  return make_op(std::move(out), {a, b}, [](detail::Node& n) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (detail::parent_wants(n, i)) detail::parent_grad(n, i).mat() += n.grad->mat();
    }
  });
}

/// x[m x n] + bias[n], broadcast over rows.
inline Var add_row(const Var& x, const Var& bias) {
  if (bias.value().size() != x.cols()) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match columns of " +
                         shape_string(x.shape()));
  }
  Tensor out = x.value();
  const std::size_t m = x.rows(), c = x.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) += bias.value()[j];
  return make_op(std::move(out), {x, bias}, [m, c](detail::Node& n) {
    const Tensor& g = *n.grad;
    if (detail::parent_wants(n, 0)) detail::parent_grad(n, 0).mat() += g.mat();
    if (detail::parent_wants(n, 1)) {
      Tensor& gb = detail::parent_grad(n, 1);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g.at(r, j);
    }
  });
}

inline Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  out.mat() *= factor;
  return make_op(std::move(out), {a}, [factor](detail::Node& n) {
    detail::parent_grad(n, 0).mat() += factor * n.grad->mat();
  });
}

/// Sum of one-element tensors.
inline Var add_scalars(std::span<const Var> terms) {
  double total = 0.0;
  for (const Var& t : terms) total += t.item();
  std::vector<Var> inputs(terms.begin(), terms.end());
  return make_op(Tensor::scalar(total), std::move(inputs), [](detail::Node& n) {
    const double g = (*n.grad)[0];
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      if (detail::parent_wants(n, i)) detail::parent_grad(n, i)[0] += g;
    }
  });
}

/// Sum of all entries.
inline Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_op(Tensor::scalar(total), {a}, [](detail::Node& n) {
    const double g = (*n.grad)[0];
    for (double& v : detail::parent_grad(n, 0).data()) v += g;
  });
}

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
inline Var gelu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return make_op(std::move(out), {a}, [](detail::Node& n) {
    const auto& x = n.parents[0]->value.data();
    auto& gx = detail::parent_grad(n, 0).data();
    const auto& g = n.grad->data();
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
      gx[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

/// Inverted dropout; identity when rate is 0.
inline Var dropout(const Var& a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(a.value().size());
  for (double& m : mask) m = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  Tensor out = a.value();
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] *= mask[i];
  return make_op(std::move(out), {a}, [mask = std::move(mask)](detail::Node& n) {
    auto& gx = detail::parent_grad(n, 0).data();
    const auto& g = n.grad->data();
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Normalisation and probabilities

/// Row-wise softmax of a plain tensor, max-subtracted.
inline Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t m = x.rows(), c = x.cols();
  for (std::size_t r = 0; r < m; ++r) {
    double mx = x.at(r, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(r, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out.at(r, j) = std::exp(x.at(r, j) - mx));
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) /= z;
  }
  return out;
}

/// Softmax along `axis` (0: down columns, 1 or -1: along rows).
inline Var softmax(const Var& x, int axis = -1) {
  if (axis == 0 && x.value().rank() == 2) return transpose(softmax(transpose(x), 1));
  if (axis != 1 && axis != -1 && !(axis == 0 && x.value().rank() == 1)) {
    throw DimensionError("softmax: unsupported axis " + std::to_string(axis));
  }
  Tensor out = softmax_rows(x.value());
  const std::size_t m = x.rows(), c = x.cols();
  return make_op(out, {x}, [out, m, c](detail::Node& n) {
    const Tensor& g = *n.grad;
    Tensor& gx = detail::parent_grad(n, 0);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.at(r, j) * out.at(r, j);
      for (std::size_t j = 0; j < c; ++j) gx.at(r, j) += out.at(r, j) * (g.at(r, j) - dot);
    }
  });
}

/// Row-wise layer normalisation with learned gain and bias of length n.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const std::size_t m = x.rows(), c = x.cols();
  if (gain.value().size() != c || bias.value().size() != c) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(c) + " entries");
  }
  Tensor xhat = Tensor::zeros({m, c});
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x.value().at(r, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.value().at(r, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) xhat.at(r, j) = (x.value().at(r, j) - mean) * inv_std[r];
  }
  Tensor out = Tensor::zeros({m, c});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = xhat.at(r, j) * gain.value()[j] + bias.value()[j];
  if (x.value().rank() == 1) out = Tensor({c}, std::move(out.data()));

  return make_op(std::move(out), {x, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), m, c](detail::Node& n) {
                   const Tensor& g = *n.grad;
                   const Tensor& gv = n.parents[1]->value;
                   if (detail::parent_wants(n, 1)) {
                     Tensor& gg = detail::parent_grad(n, 1);
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t j = 0; j < c; ++j) gg[j] += g.at(r, j) * xhat.at(r, j);
                   }
                   if (detail::parent_wants(n, 2)) {
                     Tensor& gb = detail::parent_grad(n, 2);
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t j = 0; j < c; ++j) gb[j] += g.at(r, j);
                   }
                   if (detail::parent_wants(n, 0)) {
                     Tensor& gx = detail::parent_grad(n, 0);
                     const double inv_c = 1.0 / static_cast<double>(c);
                     for (std::size_t r = 0; r < m; ++r) {
                       double mean_dy = 0.0, mean_dy_xhat = 0.0;
                       for (std::size_t j = 0; j < c; ++j) {
                         const double dy = g.at(r, j) * gv[j];
                         mean_dy += dy;
                         mean_dy_xhat += dy * xhat.at(r, j);
                       }
                       mean_dy *= inv_c;
                       mean_dy_xhat *= inv_c;
                       for (std::size_t j = 0; j < c; ++j) {
                         const double dy = g.at(r, j) * gv[j];
                         gx.at(r, j) += inv_std[r] * (dy - mean_dy - xhat.at(r, j) * mean_dy_xhat);
                       }
                     }
                   }
                 });
}

/// -log(probs[gold]) with probs clamped at 1e-12.
inline Var cross_entropy(const Var& probs, std::size_t gold_index) {
  const std::size_t n = probs.value().size();
  if (gold_index >= n) {
    throw DimensionError("cross_entropy: gold index " + std::to_string(gold_index) + " out of range for " +
                         std::to_string(n) + " classes");
  }
  constexpr double kFloor = 1e-12;
  const double p = probs.value()[gold_index];
  const double clamped = std::max(p, kFloor);
  return make_op(Tensor::scalar(-std::log(clamped)), {probs}, [gold_index, p, kFloor](detail::Node& n) {
    if (p < kFloor) return;
    detail::parent_grad(n, 0)[gold_index] += -(*n.grad)[0] / p;
  });
}

// ---------------------------------------------------------------------------
// Indexing

/// Rows of `table` selected by `ids`; backward scatter-adds.
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  const std::size_t vocab = table.rows(), c = table.cols();
  Tensor out = Tensor::zeros({ids.size(), c});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[r]) + " out of bounds for table " +
                           shape_string(table.shape()));
    }
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = table.value().at(ids[r], j);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_op(std::move(out), {table}, [idx = std::move(idx), c](detail::Node& n) {
    const Tensor& g = *n.grad;
    Tensor& gt = detail::parent_grad(n, 0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gt.at(idx[r], j) += g.at(r, j);
  });
}

/// Row `index` of x as a 1 x n tensor.
inline Var row(const Var& x, std::size_t index) {
  const std::size_t offset = index;
  return gather_rows(x, std::span<const std::size_t>(&offset, 1));
}

/// Columns [begin, begin + count) of x.
inline Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t m = x.rows(), c = x.cols();
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros({m, count});
  out.mat() = x.value().mat().block(0, begin, m, count);
  return make_op(std::move(out), {x}, [begin, m, count](detail::Node& n) {
    detail::parent_grad(n, 0).mat().block(0, begin, m, count) += n.grad->mat();
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out = Tensor::zeros({m, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    out.mat().block(0, offset, m, p.cols()) = p.value().mat();
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(inputs), [m](detail::Node& n) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const std::size_t w = n.parents[i]->value.cols();
      if (detail::parent_wants(n, i)) detail::parent_grad(n, i).mat() += n.grad->mat().block(0, off, m, w);
      off += w;
    }
  });
}

}  // namespace tslm
