#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "actlab/model.hpp"
#include "actlab/random.hpp"

namespace actlab {

/// One activation attack: perturb the first `a` of `s` context activations so
/// that the model continues with a chosen `t`-token target, for `n` context /
/// target pairs at once, using a fraction `f` of each activation's dimensions.
struct AttackSpec {
  int a = 1;
  int s = 1;
  int t = 1;
  int n = 1;
  double f = 1.0;
  int steps = 300;
  double lr = 0.1;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when an invariant fails.
  void validate() const;
  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

struct AttackOutcome {
  std::vector<bool> per_token_correct;
  double success_fraction = 0;
  bool full_success = false;
  double final_loss = 0;
  int steps_used = 0;

  static AttackOutcome from_correct(std::vector<bool> correct, double loss, int steps_used);
};

/// Outcome over several pairs: correctness lists concatenated in pair order.
AttackOutcome combine_outcomes(std::span<const AttackOutcome> outcomes);

/// Perturbation of the first a activation rows with a fixed dimension mask.
/// Entries outside the mask are exactly zero.
template <typename T>
struct Perturbation {
  Tensor<T> values;                // a x d
  std::vector<std::uint8_t> mask;  // a x d, 1 = attacker controls the entry

  static Perturbation zeros(std::size_t a, std::size_t d);
  std::size_t rows() const { return values.rows(); }
  void apply_mask();
  bool respects_mask() const;
};

/// Exactly round(f * d) true entries drawn uniformly without replacement.
/// Throws std::invalid_argument when f is outside (0, 1] or round(f * d) = 0.
std::vector<bool> make_mask(int d, double f, Rng& rng);
std::vector<bool> make_mask(int d, double f, std::uint64_t seed);

/// i.i.d. uniform tokens in [0, vocab).
TokenSeq sample_random_tokens(int vocab, std::size_t length, std::uint64_t seed);

struct AttackPair {
  TokenSeq context;
  TokenSeq target;
};

/// Mean cross-entropy of each target token given the perturbed, teacher-forced
/// prefix, computed in a single causal pass over context + target.
template <typename T>
Var attack_loss(Graph<T>& graph, const Model<T>& model, const BoundWeights& w, std::span<const int> context,
                std::span<const int> target, Var perturbation);

template <typename T>
double attack_loss(const Model<T>& model, std::span<const int> context, std::span<const int> target,
                   const Tensor<T>& perturbation);

/// The individual cross-entropies whose mean is attack_loss.
template <typename T>
std::vector<double> per_position_losses(const Model<T>& model, std::span<const int> context,
                                        std::span<const int> target, const Tensor<T>& perturbation);

/// Unperturbed teacher-forced cross-entropy of target given context.
template <typename T>
double teacher_forced_loss(const Model<T>& model, std::span<const int> context, std::span<const int> target);

/// Teacher-forced per-token argmax correctness under the perturbation.
template <typename T>
AttackOutcome evaluate_attack(const Model<T>& model, std::span<const int> context, std::span<const int> target,
                              const Tensor<T>& perturbation);

template <typename T>
struct AttackResult {
  Perturbation<T> perturbation;
  std::vector<AttackOutcome> outcomes;  // one per pair
  AttackOutcome combined;
  bool aborted = false;  // loss became non-finite; perturbation is the last finite one
};

/// Adam on the mean attack loss over all pairs, gradients accumulated across
/// pairs before each step. The mask is drawn from spec.seed and re-applied
/// after every step. Stops once every pair is reproduced exactly.
template <typename T>
AttackResult<T> optimize_attack(const Model<T>& model, std::span<const AttackPair> pairs, const AttackSpec& spec);

/// Builds the mask rows used by optimize_attack for a spec.
std::vector<std::uint8_t> attack_mask(const AttackSpec& spec, int d);

struct TokenAttackResult {
  TokenSeq context;                // context with the first a tokens replaced
  std::vector<double> loss_trace;  // best loss after fixing each position
  AttackOutcome outcome;           // teacher-forced check of the final context
};

/// Greedy position-by-position exhaustive substitution of the first a context
/// tokens, minimizing the teacher-forced target loss. Ties keep the lowest id.
template <typename T>
TokenAttackResult greedy_token_attack(const Model<T>& model, std::span<const int> context,
                                      std::span<const int> target, int a);

inline constexpr std::size_t kMaxTokenAttackPasses = std::size_t{1} << 22;

}  // namespace actlab
