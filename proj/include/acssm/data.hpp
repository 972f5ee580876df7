#pragma once

#include <string>
#include <vector>

#include "acssm/core.hpp"
#include "acssm/lg_oracle.hpp"

namespace acssm {

// One training example: masked noisy inputs plus evaluation targets on the
// same grid (targets carry their own mask).
struct SequencePair {
  ObservationSeq inputs;
  ObservationSeq targets;
};

struct Dataset {
  std::vector<SequencePair> train, val, test;
  std::string generator;
  std::uint64_t seed = 0;
};

// Exact prior-path sampling of a linear-Gaussian SSM at its grid points.
// Inputs: noisy observations with `keep_fraction` of timestamps retained
// (exact count) and `drop_fraction` of remaining cells masked at random.
// Targets: the clean latent path, fully observed.
// extrapolate_from >= 0 masks all input cells at t > extrapolate_from instead
// of random subsampling on those timestamps.
std::vector<SequencePair> gen_lg(const LinearGaussianSSM& ssm, int n_sequences,
                                 double keep_fraction, double drop_fraction,
                                 RandomStream& rng, double extrapolate_from = -1.0);

struct PendulumParams {
  int n_timestamps = 50;
  int lattice = 100;
  double horizon = 100.0;
  double noise_std = 0.05;   // observation noise on (sin, cos)
  double drop_fraction = 0.5;
  double gamma = 0.1;        // damping; g/l = 1
};

// Damped pendulum, RK4-integrated; observations are noisy (sin th, cos th) at
// n_timestamps drawn uniformly without replacement from a lattice on (0, T];
// targets are the clean (sin th, cos th).
std::vector<SequencePair> gen_pendulum(const PendulumParams& params, int n_sequences,
                                       RandomStream& rng);

// keeps an exact-count uniform subset of timestamps, then independently masks
// a fraction of the remaining cells
ObservationSeq subsample_irregular(const ObservationSeq& seq, double keep_fraction,
                                   double drop_fraction, RandomStream& rng);

// 60/20/20-style split, rounding toward train, in sequence order
Dataset split_dataset(std::vector<SequencePair> sequences, double train_frac,
                      double val_frac, const std::string& generator,
                      std::uint64_t seed);

// CSV per the external format: header t,y0..y{m-1},mask0..mask{m-1}; one row
// per timestamp; sequences separated by blank lines; LF endings.
void save_csv(const std::string& path, const std::vector<ObservationSeq>& seqs);
std::vector<ObservationSeq> load_csv(const std::string& path, double obs_noise_var);

struct BaselineResult {
  double locf_mse = 0.0;
  double mean_mse = 0.0;
};

// LOCF carries the last observed input value per coordinate forward (backward
// fill before the first observation); the mean predictor uses the per-sequence
// per-coordinate observed mean. MSE over observed target cells.
BaselineResult baselines(const std::vector<SequencePair>& seqs);

}  // namespace acssm
