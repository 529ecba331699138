#include "actlab/attack.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "actlab/adam.hpp"

namespace actlab {

void AttackSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("attack spec: " + msg); };
  if (a < 1) fail("a must be at least 1");
  if (a > s) fail("a must not exceed s");
  if (t < 1) fail("t must be at least 1");
  if (n < 1) fail("n must be at least 1");
  if (!(f > 0.0 && f <= 1.0)) fail("f must be in (0, 1]");
  if (steps < 0) fail("steps must be non-negative");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
}

AttackOutcome AttackOutcome::from_correct(std::vector<bool> correct, double loss, int steps_used) {
  AttackOutcome o;
  std::size_t hits = 0;
  for (bool c : correct) hits += c ? 1 : 0;
  o.success_fraction = correct.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(correct.size());
  o.full_success = !correct.empty() && hits == correct.size();
  o.per_token_correct = std::move(correct);
  o.final_loss = loss;
  o.steps_used = steps_used;
  return o;
}

AttackOutcome combine_outcomes(std::span<const AttackOutcome> outcomes) {
  std::vector<bool> all;
  double loss = 0;
  int steps = 0;
  for (const auto& o : outcomes) {
    all.insert(all.end(), o.per_token_correct.begin(), o.per_token_correct.end());
    loss += o.final_loss;
    steps = std::max(steps, o.steps_used);
  }
  if (!outcomes.empty()) loss /= static_cast<double>(outcomes.size());
  return AttackOutcome::from_correct(std::move(all), loss, steps);
}

template <typename T>
Perturbation<T> Perturbation<T>::zeros(std::size_t a, std::size_t d) {
  return Perturbation{Tensor<T>::matrix(a, d), std::vector<std::uint8_t>(a * d, 1)};
}

template <typename T>
void Perturbation<T>::apply_mask() {
  auto v = values.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) v[i] = T(0);
  }
}

template <typename T>
bool Perturbation<T>::respects_mask() const {
  auto v = values.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i] && v[i] != T(0)) return false;
  }
  return true;
}

std::vector<bool> make_mask(int d, double f, Rng& rng) {
  if (d < 1) throw std::invalid_argument("make_mask: d must be positive");
  if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("make_mask: f must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::llround(f * d));
  if (keep == 0) throw std::invalid_argument("make_mask: round(f * d) is zero");
  std::vector<bool> mask(static_cast<std::size_t>(d), false);
  for (auto i : sample_without_replacement(rng, static_cast<std::size_t>(d), keep)) mask[i] = true;
  return mask;
}

std::vector<bool> make_mask(int d, double f, std::uint64_t seed) {
  Rng rng(seed);
  return make_mask(d, f, rng);
}

TokenSeq sample_random_tokens(int vocab, std::size_t length, std::uint64_t seed) {
  if (vocab < 1) throw std::invalid_argument("sample_random_tokens: vocab must be positive");
  Rng rng(seed);
  TokenSeq out(length);
  for (auto& tok : out) tok = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(vocab)));
  return out;
}

std::vector<std::uint8_t> attack_mask(const AttackSpec& spec, int d) {
  std::vector<std::uint8_t> mask;
  mask.reserve(static_cast<std::size_t>(spec.a) * static_cast<std::size_t>(d));
  for (int row = 0; row < spec.a; ++row) {
    for (bool b : make_mask(d, spec.f, derive_seed(spec.seed, "mask", static_cast<std::uint64_t>(row)))) {
      mask.push_back(b ? 1 : 0);
    }
  }
  return mask;
}

namespace {

void check_lengths(const ModelConfig& config, std::size_t s, std::size_t t, std::size_t a) {
  if (t == 0) throw std::invalid_argument("attack: empty target");
  if (s == 0) throw std::invalid_argument("attack: empty context");
  if (a > s) {
    throw std::invalid_argument("attack: perturbation covers " + std::to_string(a) + " rows of a " +
                                std::to_string(s) + "-token context");
  }
  if (s + t > static_cast<std::size_t>(config.max_context)) {
    throw std::length_error("attack: context " + std::to_string(s) + " + target " + std::to_string(t) +
                            " exceeds max context " + std::to_string(config.max_context));
  }
}

struct AttackGraph {
  Var logits;
  Var loss;
};

// Feeds context + target[:t-1]; row s-1+i predicts target[i].
template <typename T>
AttackGraph build_attack_graph(Graph<T>& g, const Model<T>& model, const BoundWeights& w,
                               std::span<const int> context, std::span<const int> target,
                               const Var* perturbation) {
  const std::size_t s = context.size(), t = target.size();
  std::vector<int> tokens(context.begin(), context.end());
  tokens.insert(tokens.end(), target.begin(), target.end() - 1);
  std::vector<int> labels(tokens.size(), -1);
  for (std::size_t i = 0; i < t; ++i) labels[s - 1 + i] = target[i];
  Var v = model.embed(g, w, tokens);
  if (perturbation) v = add_perturbation(g, v, *perturbation);
  Var logits = model.forward_after(g, w, v);
  return {logits, g.cross_entropy(logits, labels)};
}

template <typename T>
std::vector<bool> teacher_forced_correct(const Tensor<T>& logits, std::size_t s, std::span<const int> target) {
  std::vector<bool> correct(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) correct[i] = argmax<T>(logits.row(s - 1 + i)) == target[i];
  return correct;
}

}  // namespace

template <typename T>
Var attack_loss(Graph<T>& graph, const Model<T>& model, const BoundWeights& w, std::span<const int> context,
                std::span<const int> target, Var perturbation) {
  check_lengths(model.config(), context.size(), target.size(), graph.value(perturbation).rows());
  return build_attack_graph(graph, model, w, context, target, &perturbation).loss;
}

template <typename T>
double attack_loss(const Model<T>& model, std::span<const int> context, std::span<const int> target,
                   const Tensor<T>& perturbation) {
  Graph<T> g;
  const auto w = model.bind(g);
  return static_cast<double>(g.value(attack_loss(g, model, w, context, target, g.constant(perturbation)))[0]);
}

template <typename T>
std::vector<double> per_position_losses(const Model<T>& model, std::span<const int> context,
                                        std::span<const int> target, const Tensor<T>& perturbation) {
  check_lengths(model.config(), context.size(), target.size(), perturbation.rows());
  Graph<T> g;
  const auto w = model.bind(g);
  Var p = g.constant(perturbation);
  const auto& z = g.value(build_attack_graph(g, model, w, context, target, &p).logits);
  std::vector<double> out(target.size());
  const std::size_t s = context.size();
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto row = z.row(s - 1 + i);
    double mx = -std::numeric_limits<double>::infinity();
    for (auto v : row) mx = std::max(mx, static_cast<double>(v));
    double sum = 0;
    for (auto v : row) sum += std::exp(static_cast<double>(v) - mx);
    out[i] = std::log(sum) + mx - static_cast<double>(row[static_cast<std::size_t>(target[i])]);
  }
  return out;
}

template <typename T>
double teacher_forced_loss(const Model<T>& model, std::span<const int> context, std::span<const int> target) {
  check_lengths(model.config(), context.size(), target.size(), 0);
  Graph<T> g;
  const auto w = model.bind(g);
  return static_cast<double>(g.value(build_attack_graph<T>(g, model, w, context, target, nullptr).loss)[0]);
}

template <typename T>
AttackOutcome evaluate_attack(const Model<T>& model, std::span<const int> context, std::span<const int> target,
                              const Tensor<T>& perturbation) {
  check_lengths(model.config(), context.size(), target.size(), perturbation.rows());
  Graph<T> g;
  const auto w = model.bind(g);
  Var p = g.constant(perturbation);
  const auto graph = build_attack_graph(g, model, w, context, target, &p);
  return AttackOutcome::from_correct(teacher_forced_correct(g.value(graph.logits), context.size(), target),
                                     static_cast<double>(g.value(graph.loss)[0]), 0);
}

template <typename T>
AttackResult<T> optimize_attack(const Model<T>& model, std::span<const AttackPair> pairs, const AttackSpec& spec) {
  spec.validate();
  if (pairs.size() != static_cast<std::size_t>(spec.n)) {
    throw std::invalid_argument("optimize_attack: spec.n = " + std::to_string(spec.n) + " but " +
                                std::to_string(pairs.size()) + " pairs given");
  }
  for (const auto& pair : pairs) {
    if (pair.context.size() != static_cast<std::size_t>(spec.s) || pair.target.size() != static_cast<std::size_t>(spec.t)) {
      throw std::invalid_argument("optimize_attack: every pair must have context length s and target length t");
    }
    check_lengths(model.config(), pair.context.size(), pair.target.size(), static_cast<std::size_t>(spec.a));
  }

  const auto d = static_cast<std::size_t>(model.config().d);
  AttackResult<T> result{Perturbation<T>::zeros(static_cast<std::size_t>(spec.a), d), {}, {}, false};
  Perturbation<T>& pert = result.perturbation;
  pert.mask = attack_mask(spec, model.config().d);
  pert.values.set_requires_grad(true);
  Tensor<T> last_finite = pert.values;
  Adam<T> adam({.lr = spec.lr}, {&pert.values});
  const T inv_n = T(1) / static_cast<T>(spec.n);

  std::vector<AttackOutcome> outcomes(pairs.size());
  int applied = 0;
  for (int step = 0;; ++step) {
    const bool last = step == spec.steps;
    adam.zero_grad();
    bool all_success = true;
    bool finite = true;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      Graph<T> g;
      const auto w = model.bind(g);
      try {
        Var p = g.leaf(pert.values);
        const auto graph = build_attack_graph(g, model, w, pairs[k].context, pairs[k].target, &p);
        auto correct = teacher_forced_correct(g.value(graph.logits), pairs[k].context.size(), pairs[k].target);
        outcomes[k] = AttackOutcome::from_correct(std::move(correct), static_cast<double>(g.value(graph.loss)[0]),
                                                  applied);
        all_success = all_success && outcomes[k].full_success;
        if (!last) g.backward(graph.loss);
      } catch (const NonFiniteError&) {
        finite = false;
        break;
      }
    }
    if (!finite) {
      result.aborted = true;
      pert.values = std::move(last_finite);
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        outcomes[k] = evaluate_attack(model, pairs[k].context, pairs[k].target, pert.values);
        outcomes[k].steps_used = applied;
      }
      break;
    }
    if (all_success || last) break;

    last_finite = pert.values;
    last_finite.set_requires_grad(false);
    auto grad = pert.values.grad();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = pert.mask[i] ? grad[i] * inv_n : T(0);
    adam.step();
    pert.apply_mask();
    ++applied;
  }
  pert.values.set_requires_grad(false);
  result.outcomes = std::move(outcomes);
  result.combined = combine_outcomes(result.outcomes);
  return result;
}

template <typename T>
TokenAttackResult greedy_token_attack(const Model<T>& model, std::span<const int> context,
                                      std::span<const int> target, int a) {
  if (a < 0 || static_cast<std::size_t>(a) > context.size()) {
    throw std::invalid_argument("greedy_token_attack: a must be in [0, |S|]");
  }
  const auto vocab = static_cast<std::size_t>(model.config().vocab);
  if (static_cast<std::size_t>(a) * vocab > kMaxTokenAttackPasses) {
    throw std::invalid_argument("greedy_token_attack: a * V forward passes exceeds the enumeration guard");
  }
  check_lengths(model.config(), context.size(), target.size(), 0);
  TokenAttackResult result;
  result.context.assign(context.begin(), context.end());
  for (std::size_t i = 0; i < static_cast<std::size_t>(a); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_token = result.context[i];
    for (std::size_t tau = 0; tau < vocab; ++tau) {
      result.context[i] = static_cast<int>(tau);
      const double loss = teacher_forced_loss(model, result.context, target);
      if (loss < best) {
        best = loss;
        best_token = static_cast<int>(tau);
      }
    }
    result.context[i] = best_token;
    result.loss_trace.push_back(best);
  }
  const Tensor<T> none = Tensor<T>::matrix(0, static_cast<std::size_t>(model.config().d));
  result.outcome = evaluate_attack(model, result.context, target, none);
  return result;
}

#define ACTLAB_INSTANTIATE(T)                                                                                   \
  template struct Perturbation<T>;                                                                              \
  template Var attack_loss<T>(Graph<T>&, const Model<T>&, const BoundWeights&, std::span<const int>,           \
                              std::span<const int>, Var);                                                       \
  template double attack_loss<T>(const Model<T>&, std::span<const int>, std::span<const int>, const Tensor<T>&); \
  template std::vector<double> per_position_losses<T>(const Model<T>&, std::span<const int>,                    \
                                                      std::span<const int>, const Tensor<T>&);                  \
  template double teacher_forced_loss<T>(const Model<T>&, std::span<const int>, std::span<const int>);          \
  template AttackOutcome evaluate_attack<T>(const Model<T>&, std::span<const int>, std::span<const int>,        \
                                            const Tensor<T>&);                                                  \
  template AttackResult<T> optimize_attack<T>(const Model<T>&, std::span<const AttackPair>, const AttackSpec&); \
  template TokenAttackResult greedy_token_attack<T>(const Model<T>&, std::span<const int>, std::span<const int>, \
                                                    int);

ACTLAB_INSTANTIATE(float)
ACTLAB_INSTANTIATE(double)

#undef ACTLAB_INSTANTIATE

}  // namespace actlab
