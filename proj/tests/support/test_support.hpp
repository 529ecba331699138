#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "actlab/attack.hpp"
#include "actlab/experiment_config.hpp"
#include "actlab/model.hpp"

namespace actlab::testing {

/// Scratch space shared by test processes (set by CMake).
std::filesystem::path cache_dir();
/// Fresh empty directory under the cache dir.
std::filesystem::path fresh_dir(const std::string& name);

/// d=16, V=32, 2 layers, 2 heads, context 64.
ModelConfig small_config();
/// small_config trained briefly (cached on disk after the first call).
const Weights<double>& small_trained_weights();

/// V=64, d=32, 2 layers, trained 2000 steps with the default recipe.
ExperimentConfig pinned_config();
const Weights<float>& pinned_weights();

/// Tensor of i.i.d. N(0, scale^2) entries.
template <typename T>
Tensor<T> random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0);

/// Literal loop: one forward pass per prefix S + T[:i], perturbation added
/// to the first rows, cross-entropy of the last logit row against T[i],
/// averaged. Log-softmax is evaluated here in long double.
double literal_prefix_loss(const Model<double>& model, std::span<const int> context, std::span<const int> target,
                           const Tensor<double>& perturbation);

/// Teacher-forced target loss for each substitution v at position 0, scanned
/// over the whole vocabulary through Model::logits.
template <typename T>
std::vector<double> substitution_losses(const Model<T>& model, std::span<const int> context,
                                        std::span<const int> target);

/// Index of the smallest value; lowest index on ties.
int argmin_lowest(std::span<const double> values);

}  // namespace actlab::testing
