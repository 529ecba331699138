#include "actlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace actlab {
namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

// out[i, j] += scale * sum_k a[i, k] * b[k, j]
template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, T scale) {
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = scale * a[i * k + p];
      const T* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[i, j] += scale * sum_k a[i, k] * b[j, k]
template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, T scale) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b.data() + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out[i * n + j] += scale * acc;
    }
  }
}

// out[p, j] += scale * sum_i a[i, p] * b[i, j]
template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, T scale) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* br = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = scale * a[i * k + p];
      T* o = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
void Graph<T>::check_open() const {
  if (consumed_) throw std::logic_error("graph already consumed by backward()");
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("Var does not belong to this graph");
  return nodes_[v.id];
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.borrowed ? *n.borrowed : n.owned;
}

template <typename T>
Var Graph<T>::push(Node&& n, const char* what) {
  const Tensor<T>& out = n.borrowed ? *n.borrowed : n.owned;
  if (!out.all_finite()) throw NonFiniteError(std::string("non-finite values in ") + what);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::constant(const Tensor<T>& value) {
  check_open();
  Node n;
  n.op = Op::kConstant;
  n.borrowed = &value;
  return push(std::move(n), "constant");
}

template <typename T>
Var Graph<T>::constant(Tensor<T>&& value) {
  check_open();
  Node n;
  n.op = Op::kConstant;
  n.owned = std::move(value);
  return push(std::move(n), "constant");
}

template <typename T>
Var Graph<T>::leaf(Tensor<T>& value) {
  check_open();
  if (!value.requires_grad()) throw std::logic_error("leaf tensor has no gradient accumulator");
  Node n;
  n.op = Op::kLeaf;
  n.borrowed = &value;
  n.leaf = &value;
  n.requires_grad = true;
  return push(std::move(n), "leaf");
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b, MatmulOptions options) {
  check_open();
  const auto& av = value(a);
  const auto& bv = value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols();
  const std::size_t bk = options.transpose_b ? bv.cols() : bv.rows();
  const std::size_t n = options.transpose_b ? bv.rows() : bv.cols();
  if (k != bk) {
    throw ShapeError("matmul: " + shape_to_string(av.shape()) + " by " + shape_to_string(bv.shape()) +
                     (options.transpose_b ? "^T" : ""));
  }
  Node out;
  out.op = Op::kMatmul;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.mm = options;
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  out.owned = Tensor<T>::matrix(m, n);
  const T scale = static_cast<T>(options.scale);
  if (options.transpose_b) {
    gemm_nt<T>(av.data(), bv.data(), out.owned.data(), m, k, n, scale);
  } else {
    gemm_nn<T>(av.data(), bv.data(), out.owned.data(), m, k, n, scale);
  }
  return push(std::move(out), "matmul");
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  check_open();
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("add: " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  }
  Node out;
  out.op = Op::kAdd;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  out.owned = Tensor<T>(av.shape());
  auto o = out.owned.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  return push(std::move(out), "add");
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  check_open();
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("mul: " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  }
  Node out;
  out.op = Op::kMul;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  out.owned = Tensor<T>(av.shape());
  auto o = out.owned.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  return push(std::move(out), "mul");
}

template <typename T>
Var Graph<T>::add_row(Var x, Var row) {
  check_open();
  const auto& xv = value(x);
  const auto& rv = value(row);
  require_matrix(xv, "add_row");
  if (rv.size() != xv.cols() || rv.rows() != 1) {
    throw ShapeError("add_row: row " + shape_to_string(rv.shape()) + " does not broadcast over " +
                     shape_to_string(xv.shape()));
  }
  Node out;
  out.op = Op::kAddRow;
  out.in[0] = x.id;
  out.in[1] = row.id;
  out.requires_grad = node(x).requires_grad || node(row).requires_grad;
  out.owned = Tensor<T>(xv.shape());
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out.owned(r, j) = xv(r, j) + rv[j];
  }
  return push(std::move(out), "add_row");
}

template <typename T>
Var Graph<T>::gelu(Var x) {
  check_open();
  const auto& xv = value(x);
  Node out;
  out.op = Op::kGelu;
  out.in[0] = x.id;
  out.requires_grad = node(x).requires_grad;
  out.owned = Tensor<T>(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out.owned[i] = gelu_value(xv[i]);
  return push(std::move(out), "gelu");
}

template <typename T>
Var Graph<T>::softmax(Var x) {
  check_open();
  const auto& xv = value(x);
  Node out;
  out.op = Op::kSoftmax;
  out.in[0] = x.id;
  out.requires_grad = node(x).requires_grad;
  out.owned = Tensor<T>(xv.shape());
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto o = out.owned.row(r);
    const T mx = c ? *std::max_element(in.begin(), in.end()) : T(0);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  return push(std::move(out), "softmax");
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias, double eps) {
  check_open();
  const auto& xv = value(x);
  const auto& gv = value(gain);
  const auto& bv = value(bias);
  require_matrix(xv, "layer_norm");
  const std::size_t c = xv.cols();
  if (gv.size() != c || bv.size() != c) throw ShapeError("layer_norm: affine parameters do not match width");
  Node out;
  out.op = Op::kLayerNorm;
  out.in[0] = x.id;
  out.in[1] = gain.id;
  out.in[2] = bias.id;
  out.requires_grad = node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
  out.owned = Tensor<T>(xv.shape());
  // aux: normalized values (r x c) followed by one inverse std per row.
  const std::size_t rows = xv.rows();
  out.aux.assign(rows * c + rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    T mean = 0;
    for (auto v : in) mean += v;
    mean /= static_cast<T>(c);
    T var = 0;
    for (auto v : in) var += (v - mean) * (v - mean);
    var /= static_cast<T>(c);
    const T inv_std = T(1) / std::sqrt(var + static_cast<T>(eps));
    out.aux[rows * c + r] = inv_std;
    auto o = out.owned.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      const T xhat = (in[j] - mean) * inv_std;
      out.aux[r * c + j] = xhat;
      o[j] = xhat * gv[j] + bv[j];
    }
  }
  return push(std::move(out), "layer_norm");
}

template <typename T>
Var Graph<T>::gather_rows(Var table, std::span<const int> ids) {
  check_open();
  const auto& tv = value(table);
  require_matrix(tv, "gather_rows");
  const std::size_t c = tv.cols();
  Node out;
  out.op = Op::kGatherRows;
  out.in[0] = table.id;
  out.requires_grad = node(table).requires_grad;
  out.ids.assign(ids.begin(), ids.end());
  out.owned = Tensor<T>::matrix(ids.size(), c);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    auto src = tv.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.owned.row(r).begin());
  }
  return push(std::move(out), "gather_rows");
}

template <typename T>
Var Graph<T>::causal_mask(Var scores) {
  check_open();
  const auto& sv = value(scores);
  require_matrix(sv, "causal_mask");
  if (sv.rows() != sv.cols()) throw ShapeError("causal_mask: scores must be square, got " + shape_to_string(sv.shape()));
  Node out;
  out.op = Op::kCausalMask;
  out.in[0] = scores.id;
  out.requires_grad = node(scores).requires_grad;
  out.owned = sv;
  out.owned.set_requires_grad(false);
  const std::size_t n = sv.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) out.owned(i, j) = kMaskedScore;
  }
  return push(std::move(out), "causal_mask");
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets) {
  check_open();
  const auto& lv = value(logits);
  require_matrix(lv, "cross_entropy");
  if (targets.size() != lv.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(lv.rows()) + " rows");
  }
  const std::size_t c = lv.cols();
  Node out;
  out.op = Op::kCrossEntropy;
  out.in[0] = logits.id;
  out.requires_grad = node(logits).requires_grad;
  out.ids.assign(targets.begin(), targets.end());
  // aux holds softmax probabilities of every row.
  out.aux.assign(lv.size(), T(0));
  T total = 0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const int target = targets[r];
    if (target < 0) continue;
    if (static_cast<std::size_t>(target) >= c) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                              std::to_string(c) + " classes");
    }
    auto in = lv.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T e = std::exp(in[j] - mx);
      out.aux[r * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) out.aux[r * c + j] /= z;
    total += (std::log(z) + mx) - in[static_cast<std::size_t>(target)];
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy: no target rows");
  out.owned = Tensor<T>(Shape{1, 1}, total / static_cast<T>(counted));
  out.aux.push_back(static_cast<T>(counted));
  return push(std::move(out), "cross_entropy");
}

template <typename T>
Var Graph<T>::sum(Var x) {
  check_open();
  const auto& xv = value(x);
  Node out;
  out.op = Op::kSum;
  out.in[0] = x.id;
  out.requires_grad = node(x).requires_grad;
  T total = 0;
  for (auto v : xv.data()) total += v;
  out.owned = Tensor<T>(Shape{1, 1}, total);
  return push(std::move(out), "sum");
}

template <typename T>
std::vector<T>& Graph<T>::grad_of(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(Var{id}).size(), T(0));
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  check_open();
  const Node& l = node(loss);
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_to_string(value(loss).shape()));
  }
  consumed_ = true;
  if (!l.requires_grad) return;
  grad_of(loss.id)[0] = T(1);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    backward_node(id);
  }
  for (auto& n : nodes_) {
    n.grad.clear();
    n.grad.shrink_to_fit();
  }
}

template <typename T>
void Graph<T>::backward_node(std::uint32_t id) {
  Node& n = nodes_[id];
  const std::vector<T>& g = n.grad;
  auto wants = [&](int k) { return nodes_[n.in[k]].requires_grad; };

  switch (n.op) {
    case Op::kConstant:
      break;
    case Op::kLeaf: {
      auto dst = n.leaf->grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      break;
    }
    case Op::kMatmul: {
      const auto& a = value(Var{n.in[0]});
      const auto& b = value(Var{n.in[1]});
      const std::size_t m = a.rows(), k = a.cols();
      const std::size_t cols = n.owned.cols();
      const T scale = static_cast<T>(n.mm.scale);
      if (wants(0)) {
        auto& ga = grad_of(n.in[0]);
        if (n.mm.transpose_b) {
          // C = A B^T: dA = dC B
          gemm_nn<T>(g, b.data(), ga, m, cols, k, scale);
        } else {
          // C = A B: dA = dC B^T
          gemm_nt<T>(g, b.data(), ga, m, cols, k, scale);
        }
      }
      if (wants(1)) {
        auto& gb = grad_of(n.in[1]);
        if (n.mm.transpose_b) {
          // dB = dC^T A
          gemm_tn<T>(g, a.data(), gb, m, cols, k, scale);
        } else {
          // dB = A^T dC
          gemm_tn<T>(a.data(), g, gb, m, k, cols, scale);
        }
      }
      break;
    }
    case Op::kAdd: {
      for (int k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        auto& dst = grad_of(n.in[k]);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      break;
    }
    case Op::kMul: {
      const auto& a = value(Var{n.in[0]});
      const auto& b = value(Var{n.in[1]});
      if (wants(0)) {
        auto& dst = grad_of(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto& dst = grad_of(n.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kAddRow: {
      const std::size_t c = n.owned.cols();
      if (wants(0)) {
        auto& dst = grad_of(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (wants(1)) {
        auto& dst = grad_of(n.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i % c] += g[i];
      }
      break;
    }
    case Op::kGelu: {
      const auto& x = value(Var{n.in[0]});
      auto& dst = grad_of(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * gelu_derivative(x[i]);
      break;
    }
    case Op::kSoftmax: {
      const std::size_t c = n.owned.cols();
      auto& dst = grad_of(n.in[0]);
      for (std::size_t r = 0; r < n.owned.rows(); ++r) {
        auto y = n.owned.row(r);
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[j];
        for (std::size_t j = 0; j < c; ++j) dst[r * c + j] += y[j] * (g[r * c + j] - dot);
      }
      break;
    }
    case Op::kLayerNorm: {
      const std::size_t rows = n.owned.rows(), c = n.owned.cols();
      const auto& gain = value(Var{n.in[1]});
      const T inv_c = T(1) / static_cast<T>(c);
      if (wants(0)) {
        auto& dst = grad_of(n.in[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          const T inv_std = n.aux[rows * c + r];
          T mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T dxhat = g[r * c + j] * gain[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * n.aux[r * c + j];
          }
          mean_dxhat *= inv_c;
          mean_dxhat_xhat *= inv_c;
          for (std::size_t j = 0; j < c; ++j) {
            const T dxhat = g[r * c + j] * gain[j];
            dst[r * c + j] += inv_std * (dxhat - mean_dxhat - n.aux[r * c + j] * mean_dxhat_xhat);
          }
        }
      }
      if (wants(1)) {
        auto& dst = grad_of(n.in[1]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) dst[j] += g[r * c + j] * n.aux[r * c + j];
        }
      }
      if (wants(2)) {
        auto& dst = grad_of(n.in[2]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) dst[j] += g[r * c + j];
        }
      }
      break;
    }
    case Op::kGatherRows: {
      const std::size_t c = n.owned.cols();
      auto& dst = grad_of(n.in[0]);
      for (std::size_t r = 0; r < n.ids.size(); ++r) {
        const std::size_t src = static_cast<std::size_t>(n.ids[r]);
        for (std::size_t j = 0; j < c; ++j) dst[src * c + j] += g[r * c + j];
      }
      break;
    }
    case Op::kCausalMask: {
      const std::size_t s = n.owned.rows();
      auto& dst = grad_of(n.in[0]);
      for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j <= i; ++j) dst[i * s + j] += g[i * s + j];
      }
      break;
    }
    case Op::kCrossEntropy: {
      const auto& logits = value(Var{n.in[0]});
      const std::size_t c = logits.cols();
      const T counted = n.aux.back();
      const T upstream = g[0] / counted;
      auto& dst = grad_of(n.in[0]);
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int target = n.ids[r];
        if (target < 0) continue;
        for (std::size_t j = 0; j < c; ++j) dst[r * c + j] += upstream * n.aux[r * c + j];
        dst[r * c + static_cast<std::size_t>(target)] -= upstream;
      }
      break;
    }
    case Op::kSum: {
      auto& dst = grad_of(n.in[0]);
      for (auto& v : dst) v += g[0];
      break;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace actlab
