#include "actlab/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "actlab/random.hpp"

namespace actlab {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d < 1) fail("d must be positive");
  if (n_heads < 1 || d % n_heads != 0) fail("n_heads must divide d");
  if (vocab < 2) fail("vocab must be at least 2");
  if (n_layers < 0) fail("n_layers must be non-negative");
  if (max_context < 2) fail("max_context must be at least 2");
  if (p_bits != 16 && p_bits != 32 && p_bits != 64) fail("p_bits must be 16, 32 or 64");
}

void validate_tokens(std::span<const int> tokens, int vocab) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= vocab) {
      throw std::out_of_range("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
  }
}

namespace {

template <typename T>
Tensor<T> normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Tensor<T> t = Tensor<T>::matrix(rows, cols);
  for (auto& v : t.data()) v = static_cast<T>(stddev * standard_normal(rng));
  return t;
}

}  // namespace

template <typename T>
Weights<T> Weights<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config.d);
  const auto v = static_cast<std::size_t>(config.vocab);
  const auto hd = static_cast<std::size_t>(config.head_dim());
  const auto hidden = static_cast<std::size_t>(config.mlp_width());
  constexpr double kStd = 0.02;
  const double residual_std = kStd / std::sqrt(2.0 * std::max(config.n_layers, 1));

  Weights w;
  w.config = config;
  w.token_embedding = normal_matrix<T>(rng, v, d, kStd);
  w.position_embedding = normal_matrix<T>(rng, static_cast<std::size_t>(config.max_context), d, kStd);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights<T> layer;
    layer.attn_norm_gain = Tensor<T>::matrix(1, d, T(1));
    layer.attn_norm_bias = Tensor<T>::matrix(1, d);
    for (int h = 0; h < config.n_heads; ++h) {
      layer.query.push_back(normal_matrix<T>(rng, d, hd, kStd));
      layer.key.push_back(normal_matrix<T>(rng, d, hd, kStd));
      layer.value.push_back(normal_matrix<T>(rng, d, hd, kStd));
      layer.output.push_back(normal_matrix<T>(rng, hd, d, residual_std));
    }
    layer.mlp_norm_gain = Tensor<T>::matrix(1, d, T(1));
    layer.mlp_norm_bias = Tensor<T>::matrix(1, d);
    layer.mlp_in = normal_matrix<T>(rng, d, hidden, kStd);
    layer.mlp_in_bias = Tensor<T>::matrix(1, hidden);
    layer.mlp_out = normal_matrix<T>(rng, hidden, d, residual_std);
    layer.mlp_out_bias = Tensor<T>::matrix(1, d);
    w.layers.push_back(std::move(layer));
  }
  w.final_norm_gain = Tensor<T>::matrix(1, d, T(1));
  w.final_norm_bias = Tensor<T>::matrix(1, d);
  w.unembedding = normal_matrix<T>(rng, d, v, kStd);
  return w;
}

template <typename T>
std::size_t Weights<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
bool Weights<T>::all_finite() const {
  bool ok = true;
  for_each_parameter([&](const Tensor<T>& t) { ok = ok && t.all_finite(); });
  return ok;
}

namespace {

template <typename T, typename Bind>
BoundWeights bind_with(const ModelConfig& config, Bind&& bind, auto& weights) {
  BoundWeights b;
  b.config = config;
  b.token_embedding = bind(weights.token_embedding);
  b.position_embedding = bind(weights.position_embedding);
  for (auto& layer : weights.layers) {
    BoundLayer bl;
    bl.attn_norm_gain = bind(layer.attn_norm_gain);
    bl.attn_norm_bias = bind(layer.attn_norm_bias);
    for (std::size_t h = 0; h < layer.query.size(); ++h) {
      bl.query.push_back(bind(layer.query[h]));
      bl.key.push_back(bind(layer.key[h]));
      bl.value.push_back(bind(layer.value[h]));
      bl.output.push_back(bind(layer.output[h]));
    }
    bl.mlp_norm_gain = bind(layer.mlp_norm_gain);
    bl.mlp_norm_bias = bind(layer.mlp_norm_bias);
    bl.mlp_in = bind(layer.mlp_in);
    bl.mlp_in_bias = bind(layer.mlp_in_bias);
    bl.mlp_out = bind(layer.mlp_out);
    bl.mlp_out_bias = bind(layer.mlp_out_bias);
    b.layers.push_back(std::move(bl));
  }
  b.final_norm_gain = bind(weights.final_norm_gain);
  b.final_norm_bias = bind(weights.final_norm_bias);
  b.unembedding = bind(weights.unembedding);
  return b;
}

template <typename T>
Var block(Graph<T>& g, const BoundLayer& layer, const ModelConfig& config, Var x) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  Var h = g.layer_norm(x, layer.attn_norm_gain, layer.attn_norm_bias);
  Var attn{};
  for (std::size_t head = 0; head < layer.query.size(); ++head) {
    Var q = g.matmul(h, layer.query[head]);
    Var k = g.matmul(h, layer.key[head]);
    Var v = g.matmul(h, layer.value[head]);
    Var scores = g.matmul(q, k, {.transpose_b = true, .scale = scale});
    Var weights = g.softmax(g.causal_mask(scores));
    Var projected = g.matmul(g.matmul(weights, v), layer.output[head]);
    attn = head == 0 ? projected : g.add(attn, projected);
  }
  x = g.add(x, attn);
  Var m = g.layer_norm(x, layer.mlp_norm_gain, layer.mlp_norm_bias);
  m = g.gelu(g.add_row(g.matmul(m, layer.mlp_in), layer.mlp_in_bias));
  m = g.add_row(g.matmul(m, layer.mlp_out), layer.mlp_out_bias);
  return g.add(x, m);
}

void check_split(const ModelConfig& config, int split_layer) {
  if (split_layer < 0 || split_layer > config.n_layers) {
    throw std::invalid_argument("split layer " + std::to_string(split_layer) + " outside [0, " +
                                std::to_string(config.n_layers) + "]");
  }
}

}  // namespace

template <typename T>
BoundWeights bind_constant(Graph<T>& graph, const Weights<T>& weights) {
  return bind_with<T>(
      weights.config, [&](const Tensor<T>& t) { return graph.constant(t); }, weights);
}

template <typename T>
BoundWeights bind_trainable(Graph<T>& graph, Weights<T>& weights) {
  return bind_with<T>(
      weights.config,
      [&](Tensor<T>& t) {
        t.set_requires_grad(true);
        return graph.leaf(t);
      },
      weights);
}

template <typename T>
Var embed(Graph<T>& graph, const BoundWeights& w, std::span<const int> tokens, int split_layer) {
  const ModelConfig& config = w.config;
  check_split(config, split_layer);
  validate_tokens(tokens, config.vocab);
  if (tokens.size() > static_cast<std::size_t>(config.max_context)) {
    throw std::length_error("sequence of " + std::to_string(tokens.size()) + " tokens exceeds context of " +
                            std::to_string(config.max_context));
  }
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  Var x = graph.add(graph.gather_rows(w.token_embedding, tokens), graph.gather_rows(w.position_embedding, positions));
  for (int l = 0; l < split_layer; ++l) x = block(graph, w.layers[static_cast<std::size_t>(l)], config, x);
  return x;
}

template <typename T>
Var forward_after(Graph<T>& graph, const BoundWeights& w, Var activations, int split_layer) {
  const ModelConfig& config = w.config;
  check_split(config, split_layer);
  const auto& v = graph.value(activations);
  if (v.rank() != 2 || v.cols() != static_cast<std::size_t>(config.d)) {
    throw ShapeError("forward_after: activations of shape " + shape_to_string(v.shape()) + " for d=" +
                     std::to_string(config.d));
  }
  if (v.rows() == 0) throw std::invalid_argument("forward_after: empty sequence");
  if (v.rows() > static_cast<std::size_t>(config.max_context)) {
    throw std::length_error("forward_after: sequence exceeds context");
  }
  Var x = activations;
  for (int l = split_layer; l < config.n_layers; ++l) x = block(graph, w.layers[static_cast<std::size_t>(l)], config, x);
  x = graph.layer_norm(x, w.final_norm_gain, w.final_norm_bias);
  return graph.matmul(x, w.unembedding);
}

template <typename T>
Var add_perturbation(Graph<T>& graph, Var activations, Var perturbation) {
  const auto& v = graph.value(activations);
  const auto& p = graph.value(perturbation);
  if (p.rank() != 2 || p.cols() != v.cols() || p.rows() > v.rows()) {
    throw ShapeError("perturbation " + shape_to_string(p.shape()) + " does not fit activations " +
                     shape_to_string(v.shape()));
  }
  Tensor<T> select = Tensor<T>::matrix(v.rows(), p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) select(i, i) = T(1);
  return graph.add(activations, graph.matmul(graph.constant(std::move(select)), perturbation));
}

template <typename T>
int argmax(std::span<const T> row) {
  if (row.empty()) throw std::invalid_argument("argmax of empty row");
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return static_cast<int>(best);
}

template <typename T>
Model<T>::Model(Weights<T> weights, int split_layer) : weights_(std::move(weights)), split_layer_(split_layer) {
  weights_.config.validate();
  check_split(weights_.config, split_layer_);
  if (!weights_.all_finite()) throw NonFiniteError("model weights contain non-finite values");
}

template <typename T>
Tensor<T> Model<T>::embed(std::span<const int> tokens) const {
  Graph<T> g;
  const auto w = bind(g);
  return g.value(embed(g, w, tokens));
}

template <typename T>
Tensor<T> Model<T>::forward_after(const Tensor<T>& activations) const {
  Graph<T> g;
  const auto w = bind(g);
  return g.value(forward_after(g, w, g.constant(activations)));
}

template <typename T>
Tensor<T> Model<T>::logits(std::span<const int> tokens) const {
  Graph<T> g;
  const auto w = bind(g);
  return g.value(forward_after(g, w, embed(g, w, tokens)));
}

template <typename T>
TokenSeq Model<T>::argmax_rollout(std::span<const int> context, std::size_t t, const Tensor<T>* perturbation) const {
  if (context.size() + t > static_cast<std::size_t>(config().max_context)) {
    throw std::length_error("rollout of " + std::to_string(t) + " tokens after " + std::to_string(context.size()) +
                            " exceeds context of " + std::to_string(config().max_context));
  }
  if (perturbation && perturbation->rows() > context.size()) {
    throw std::invalid_argument("perturbation covers more rows than the context");
  }
  TokenSeq seq(context.begin(), context.end());
  TokenSeq out;
  out.reserve(t);
  for (std::size_t step = 0; step < t; ++step) {
    Graph<T> g;
    const auto w = bind(g);
    Var v = embed(g, w, seq);
    if (perturbation) v = add_perturbation(g, v, g.constant(*perturbation));
    const auto& z = g.value(forward_after(g, w, v));
    const int next = argmax<T>(z.row(z.rows() - 1));
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

#define ACTLAB_INSTANTIATE(T)                                                                      \
  template struct Weights<T>;                                                                      \
  template BoundWeights bind_constant<T>(Graph<T>&, const Weights<T>&);                            \
  template BoundWeights bind_trainable<T>(Graph<T>&, Weights<T>&);                                 \
  template Var embed<T>(Graph<T>&, const BoundWeights&, std::span<const int>, int);                \
  template Var forward_after<T>(Graph<T>&, const BoundWeights&, Var, int);                         \
  template Var add_perturbation<T>(Graph<T>&, Var, Var);                                           \
  template int argmax<T>(std::span<const T>);                                                      \
  template class Model<T>;

ACTLAB_INSTANTIATE(float)
ACTLAB_INSTANTIATE(double)

#undef ACTLAB_INSTANTIATE

}  // namespace actlab
