#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "actlab/experiment_config.hpp"
#include "actlab/train.hpp"

namespace actlab {

using LogFn = std::function<void(const std::string&)>;

/// Trains per config, then writes <out>/model.bin and <out>/train_log.csv
/// (step,train_loss,heldout_loss) plus <out>/model.key, the settings it was
/// trained with. Weights are stored at T's precision.
template <typename T>
TrainResult<T> train_and_save(const ExperimentConfig& config, const std::filesystem::path& out_dir, const LogFn& log);

/// Model for a sweep: [model] path when given (must exist); otherwise
/// <out>/model.bin if it was trained with the same settings; otherwise trained now
/// and saved there.
template <typename T>
Weights<T> obtain_weights(const ExperimentConfig& config, const LogFn& log);

std::string train_log_csv(const std::vector<TrainLogEntry>& log);

}  // namespace actlab
