#include "actlab/workflow.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "actlab/records.hpp"
#include "actlab/weight_io.hpp"

namespace actlab {

std::string train_log_csv(const std::vector<TrainLogEntry>& log) {
  std::ostringstream os;
  os << "step,train_loss,heldout_loss\n";
  for (const auto& e : log) {
    os << e.step << ',' << format_double(e.train_loss) << ',' << format_double(e.heldout_loss) << '\n';
  }
  return os.str();
}

namespace {

// Everything that determines the trained weights.
std::string training_key(const ExperimentConfig& config, std::size_t bits) {
  std::istringstream in(config.canonical());
  std::string line, key;
  while (std::getline(in, line)) {
    if (line.rfind("train.", 0) == 0 ||
        (line.rfind("model.", 0) == 0 && line.rfind("model.path", 0) != 0 && line.rfind("model.split", 0) != 0)) {
      key += line + "\n";
    }
  }
  return key + "precision=" + std::to_string(bits) + "\n";
}

}  // namespace

template <typename T>
TrainResult<T> train_and_save(const ExperimentConfig& config, const std::filesystem::path& out_dir, const LogFn& log) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  if (log) {
    log("training d=" + std::to_string(config.model.d) + " layers=" + std::to_string(config.model.n_layers) +
        " vocab=" + std::to_string(config.model.vocab) + " for " + std::to_string(config.train.steps) + " steps");
  }
  auto result = train<T>(config.model, config.corpus, config.train);
  save_weights(out_dir / "model.bin", result.weights);
  write_file_atomic(out_dir / "train_log.csv", train_log_csv(result.log));
  write_file_atomic(out_dir / "model.key", training_key(config, 8 * sizeof(T)));
  if (log) {
    log("held-out loss " + format_double(result.initial_heldout_loss) + " -> " +
        format_double(result.final_heldout_loss));
  }
  return result;
}

template <typename T>
Weights<T> obtain_weights(const ExperimentConfig& config, const LogFn& log) {
  if (config.model_path) {
    if (!std::filesystem::exists(*config.model_path)) {
      throw std::runtime_error("model file " + config.model_path->string() + " does not exist");
    }
    return load_weights<T>(*config.model_path);
  }
  const auto cached = config.out_dir / "model.bin";
  const auto key_path = config.out_dir / "model.key";
  if (std::filesystem::exists(cached) && std::filesystem::exists(key_path)) {
    std::ifstream in(key_path, std::ios::binary);
    const std::string stored((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (stored == training_key(config, 8 * sizeof(T))) {
      if (log) log("reusing " + cached.string());
      return load_weights<T>(cached);
    }
    if (log) log(cached.string() + " was trained with other settings; retraining");
  }
  return train_and_save<T>(config, config.out_dir, log).weights;
}

template TrainResult<float> train_and_save<float>(const ExperimentConfig&, const std::filesystem::path&, const LogFn&);
template TrainResult<double> train_and_save<double>(const ExperimentConfig&, const std::filesystem::path&, const LogFn&);
template Weights<float> obtain_weights<float>(const ExperimentConfig&, const LogFn&);
template Weights<double> obtain_weights<double>(const ExperimentConfig&, const LogFn&);

}  // namespace actlab
