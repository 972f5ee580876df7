#pragma once

#include <string>
#include <vector>

#include "acssm/data.hpp"
#include "acssm/nn.hpp"

namespace acssm {

struct TrainConfig {
  double learning_rate = 1e-3;
  double final_learning_rate = 0.0;  // > 0: geometric decay to this by the last epoch
  int epochs = 200;
  int batch_size = 50;
  int latent_dim = 8;
  int n_base = 4;
  int n_blocks = 2;
  int n_classes = 0;
  double time_scale = 0.1;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // 0 disables clipping
  int n_elbo_samples = 1;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::kHistory;
  Task task = Task::kRegress;
  double sigma_q = 0.01;
  double sigma_p = 0.01;
  double sigma_g = 0.1;
  double sigma = 1.0;
  double dropout = 0.0;
  int patience = 50;

  void validate() const;  // extrapolation forces the history scheme
  AssimilationConfig assimilation(int obs_dim) const;
};

struct ElboBreakdown {
  double loss = 0.0;           // negative amortized ELBO
  double recon_nll = 0.0;      // -sum log p_psi
  double control_cost = 0.0;   // sum dt/2 ||alpha_i||^2
  double neg_log_potential = 0.0;
};

// Builds the differentiable loss graph for one sequence (Eq-25 form) and
// returns its components; loss_out receives the 1x1 loss tensor when non-null.
ElboBreakdown amortized_elbo(const AcssmModel& model, const SequencePair& seq,
                             RandomStream& rng, Tensor* loss_out);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  AcssmModel model;  // best-validation parameters
  std::vector<EpochLog> history;
  int best_epoch = -1;
  double best_val = 0.0;
  bool diverged = false;
};

TrainResult train(const Dataset& ds, const TrainConfig& cfg);

// Deterministic mean-pipeline prediction at every grid timestamp (no latent
// sampling): encode mean -> assimilate -> control -> scan moments -> decode.
MatrixXd infer_mean(const AcssmModel& model, const ObservationSeq& obs);

struct InferResult {
  MatrixXd mean;  // n_times x out, average over paths
  MatrixXd q10, q90;
};

// Monte Carlo posterior-predictive draws (Alg-4 pipeline), deterministic per
// (rng seed, path index).
InferResult infer(const AcssmModel& model, const ObservationSeq& obs, int n_paths,
                  RandomStream& rng);

// masked MSE for regression tasks; per-timestamp argmax accuracy when task is
// classify (targets column 0 holds the label, rows with any mask count)
double metrics(const MatrixXd& predictions, const MatrixXd& targets,
               const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
               Task task);

void write_history_csv(const std::string& path, const std::vector<EpochLog>& history);

}  // namespace acssm
