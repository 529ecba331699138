#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "actlab/tensor.hpp"

namespace actlab {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::uint32_t id = 0;
};

struct MatmulOptions {
  bool transpose_b = false;
  double scale = 1.0;
};

/// Reverse-mode tape over 2-D tensors.
///
/// Nodes are recorded in creation order, which is a topological order, and
/// backward() walks them once in reverse. Gradients flow only into tensors
/// registered with leaf(); those accumulate into the tensor's own gradient
/// slot, so successive graphs over the same leaf add up until zero_grad().
///
/// A graph can be differentiated once. Afterwards it is consumed and every
/// further call throws. Borrowed tensors (constant(const&), leaf) must outlive
/// the graph. A graph is meant to be used by a single thread; many graphs may
/// borrow the same read-only constants concurrently.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  Var constant(const Tensor<T>& value);
  Var constant(Tensor<T>&& value);
  Var leaf(Tensor<T>& value);

  const Tensor<T>& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // C = scale * A * B, or scale * A * B^T.
  Var matmul(Var a, Var b, MatmulOptions options = {});
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  // x (r x c) plus a 1 x c row broadcast over every row.
  Var add_row(Var x, Var row);
  Var gelu(Var x);
  // Row-wise softmax over the last axis.
  Var softmax(Var x);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var gather_rows(Var table, std::span<const int> ids);
  // Square score matrix; entries above the diagonal are replaced by a large
  // negative constant so that a following softmax assigns them exactly zero.
  Var causal_mask(Var scores);
  // Mean over rows with targets[r] >= 0 of -log softmax(logits[r])[targets[r]].
  // Rows with a negative target are ignored. Result is 1 x 1.
  Var cross_entropy(Var logits, std::span<const int> targets);
  // Sum of all elements, 1 x 1.
  Var sum(Var x);

  void backward(Var loss);

  static constexpr T kMaskedScore = T(-1e9);

 private:
  enum class Op : std::uint8_t {
    kConstant,
    kLeaf,
    kMatmul,
    kAdd,
    kMul,
    kAddRow,
    kGelu,
    kSoftmax,
    kLayerNorm,
    kGatherRows,
    kCausalMask,
    kCrossEntropy,
    kSum,
  };

  struct Node {
    Op op = Op::kConstant;
    std::uint32_t in[3] = {0, 0, 0};
    bool requires_grad = false;
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T>* leaf = nullptr;
    std::vector<T> grad;
    std::vector<T> aux;
    std::vector<int> ids;
    MatmulOptions mm;
  };

  const Node& node(Var v) const;
  Var push(Node&& n, const char* what);
  void check_open() const;
  std::vector<T>& grad_of(std::uint32_t id);

  void backward_node(std::uint32_t id);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace actlab
