#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "actlab/graph.hpp"
#include "actlab/tensor.hpp"

namespace actlab {

using TokenSeq = std::vector<int>;

struct ModelConfig {
  int d = 32;            // residual stream width
  int vocab = 64;
  int n_layers = 2;
  int n_heads = 2;
  int max_context = 128;
  int p_bits = 16;       // nominal activation precision for bit-counting arithmetic

  int head_dim() const { return d / n_heads; }
  int mlp_width() const { return 4 * d; }
  /// Throws std::invalid_argument on a bad configuration.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LayerWeights {
  Tensor<T> attn_norm_gain, attn_norm_bias;    // 1 x d
  std::vector<Tensor<T>> query, key, value;    // per head, d x head_dim
  std::vector<Tensor<T>> output;               // per head, head_dim x d
  Tensor<T> mlp_norm_gain, mlp_norm_bias;      // 1 x d
  Tensor<T> mlp_in, mlp_in_bias;               // d x 4d, 1 x 4d
  Tensor<T> mlp_out, mlp_out_bias;             // 4d x d, 1 x d
};

/// Parameters of the decoder. for_each_parameter() visits them in the fixed
/// order used by the weight file:
///   token_embedding, position_embedding,
///   per layer: attn_norm_gain, attn_norm_bias,
///              per head: query, key, value, output,
///              mlp_norm_gain, mlp_norm_bias, mlp_in, mlp_in_bias, mlp_out, mlp_out_bias,
///   final_norm_gain, final_norm_bias, unembedding.
template <typename T>
struct Weights {
  ModelConfig config;
  Tensor<T> token_embedding;     // vocab x d
  Tensor<T> position_embedding;  // max_context x d
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_norm_gain, final_norm_bias;  // 1 x d
  Tensor<T> unembedding;                       // d x vocab

  static Weights initialize(const ModelConfig& config, std::uint64_t seed);

  template <typename F>
  void for_each_parameter(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const Weights& a, const Weights& b) {
    if (!(a.config == b.config)) return false;
    std::vector<const Tensor<T>*> pa, pb;
    a.for_each_parameter([&](const Tensor<T>& t) { pa.push_back(&t); });
    b.for_each_parameter([&](const Tensor<T>& t) { pb.push_back(&t); });
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!(*pa[i] == *pb[i])) return false;
    }
    return true;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& w, F& f) {
    f(w.token_embedding);
    f(w.position_embedding);
    for (auto& layer : w.layers) {
      f(layer.attn_norm_gain);
      f(layer.attn_norm_bias);
      for (std::size_t h = 0; h < layer.query.size(); ++h) {
        f(layer.query[h]);
        f(layer.key[h]);
        f(layer.value[h]);
        f(layer.output[h]);
      }
      f(layer.mlp_norm_gain);
      f(layer.mlp_norm_bias);
      f(layer.mlp_in);
      f(layer.mlp_in_bias);
      f(layer.mlp_out);
      f(layer.mlp_out_bias);
    }
    f(w.final_norm_gain);
    f(w.final_norm_bias);
    f(w.unembedding);
  }
};

template <typename To, typename From>
Weights<To> weights_cast(const Weights<From>& src) {
  Weights<To> out = Weights<To>::initialize(src.config, 0);
  std::vector<const Tensor<From>*> from;
  src.for_each_parameter([&](const Tensor<From>& t) { from.push_back(&t); });
  std::size_t i = 0;
  out.for_each_parameter([&](Tensor<To>& t) { t = tensor_cast<To>(*from[i++]); });
  return out;
}

/// Parameters bound into one graph, either as constants or as leaves.
struct BoundLayer {
  Var attn_norm_gain, attn_norm_bias;
  std::vector<Var> query, key, value, output;
  Var mlp_norm_gain, mlp_norm_bias, mlp_in, mlp_in_bias, mlp_out, mlp_out_bias;
};

struct BoundWeights {
  ModelConfig config;
  Var token_embedding, position_embedding;
  std::vector<BoundLayer> layers;
  Var final_norm_gain, final_norm_bias, unembedding;
};

template <typename T>
BoundWeights bind_constant(Graph<T>& graph, const Weights<T>& weights);
/// Binds every parameter as a differentiable leaf (enables gradient slots).
template <typename T>
BoundWeights bind_trainable(Graph<T>& graph, Weights<T>& weights);

/// Token plus position embedding, followed by the first `split_layer` blocks.
template <typename T>
Var embed(Graph<T>& graph, const BoundWeights& w, std::span<const int> tokens, int split_layer = 0);
/// Remaining blocks, final normalization and unembedding: s x d -> s x vocab.
template <typename T>
Var forward_after(Graph<T>& graph, const BoundWeights& w, Var activations, int split_layer = 0);

/// Read-only decoder with the residual stream exposed at a split point.
///
/// embed() is the part before the split and forward_after() the rest; the
/// attacked activations live between them. Safe for concurrent readers.
template <typename T>
class Model {
 public:
  explicit Model(Weights<T> weights, int split_layer = 0);

  const ModelConfig& config() const { return weights_.config; }
  const Weights<T>& weights() const { return weights_; }
  int split_layer() const { return split_layer_; }

  BoundWeights bind(Graph<T>& graph) const { return bind_constant(graph, weights_); }
  Var embed(Graph<T>& graph, const BoundWeights& w, std::span<const int> tokens) const {
    return actlab::embed(graph, w, tokens, split_layer_);
  }
  Var forward_after(Graph<T>& graph, const BoundWeights& w, Var activations) const {
    return actlab::forward_after(graph, w, activations, split_layer_);
  }

  Tensor<T> embed(std::span<const int> tokens) const;
  Tensor<T> forward_after(const Tensor<T>& activations) const;
  Tensor<T> logits(std::span<const int> tokens) const;

  /// Greedy continuation of `context` by t tokens; ties go to the lowest id.
  /// With a perturbation (a x d), it is added to the first a activation rows
  /// at every step.
  TokenSeq argmax_rollout(std::span<const int> context, std::size_t t,
                          const Tensor<T>* perturbation = nullptr) const;

 private:
  Weights<T> weights_;
  int split_layer_ = 0;
};

/// Lowest index of the maximum of a row.
template <typename T>
int argmax(std::span<const T> row);

/// v + E * P where E selects the first P.rows() rows. Rows past the attack
/// receive an exact zero, so a zero perturbation leaves v bit-identical.
template <typename T>
Var add_perturbation(Graph<T>& graph, Var activations, Var perturbation);

void validate_tokens(std::span<const int> tokens, int vocab);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace actlab
