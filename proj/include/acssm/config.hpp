#pragma once

#include <string>

#include "acssm/training.hpp"

namespace acssm {

// configuration problems map to exit code 2 at the CLI boundary
struct ConfigError : DomainError {
  using DomainError::DomainError;
};

struct DataConfig {
  std::string generator = "pendulum";  // lg | pendulum
  int n_sequences = 100;
  double train_frac = 0.5;
  double val_frac = 0.25;
  double keep_fraction = 1.0;   // lg: fraction of timestamps retained
  double drop_fraction = 0.5;   // fraction of remaining cells masked
  double extrapolate_from = -1.0;  // lg: observe only t <= this (< 0 disables)
  std::uint64_t seed = 1;
  // pendulum generator
  int n_timestamps = 50;
  int lattice = 100;
  double horizon = 100.0;
  double noise_std = 0.05;
  double gamma = 0.1;
  // linear-Gaussian generator (canonical random system from `seed`)
  int lg_dim = 2;
  int lg_k = 16;
  double lg_sigma = 0.7;
  double lg_obs_noise = 0.1;
  double lg_horizon = 4.0;
};

struct TaskConfig {
  Task task = Task::kRegress;
  int n_paths = 32;  // posterior-predictive draws for `infer`
};

struct RunConfig {
  DataConfig data;
  TrainConfig train;  // also carries the [model] section fields
  TaskConfig task;

  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_string(const std::string& text);
  std::string serialize() const;

  void validate() const;  // cross-field checks beyond TrainConfig::validate
};

// canonical random LG system used by the lg generator and the oracle suite
LinearGaussianSSM canonical_lg_system(const DataConfig& dc);

std::string task_name(Task t);
Task task_from_name(const std::string& s);
std::string scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& s);

}  // namespace acssm
