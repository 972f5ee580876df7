#pragma once

#include <vector>

#include "acssm/core.hpp"

namespace acssm {

// Gaussian marginal in the shared eigenbasis: diagonal covariance only.
struct DiagGaussian {
  VectorXd mean;  // eigenbasis
  VectorXd var;   // diagonal entries, >= 0
};

// Closed-form Gaussian marginals at every grid timestamp, propagated in the
// eigenbasis of the control operator.
struct MomentTrajectory {
  TimeGrid grid;
  SpdOperator op;
  std::vector<DiagGaussian> states;  // one per timestamp, eigenbasis

  // marginal at grid timestamp i, rotated back to the standard basis
  GaussianState standard_basis(int i) const;
};

// (1 - e^{-x}) / x, stable for small x
double phi1(double x);

// One closed-form step of the per-dimension OU recurrence over dt >= 0:
//   m' = e^{-lambda dt} m + phi1(lambda dt) dt alpha
//   v' = e^{-2 lambda dt} v + sigma^2 dt phi1(2 lambda dt)
DiagGaussian local_step(const DiagGaussian& state, const VectorXd& lambda,
                        const VectorXd& alpha_hat, double dt, double sigma);

// Sequential propagation of init through every control interval. A full
// initial covariance is rotated into the eigenbasis once; any off-diagonal
// mass is dropped with a warning on stderr.
MomentTrajectory propagate_sequential(const GaussianState& init,
                                      const PiecewiseControl& control);

// Marginal at an arbitrary t in [t_0, T]: partial step from the left grid point
// using the left interval's control (intervals are right-open).
GaussianState marginal_at(const MomentTrajectory& traj,
                          const PiecewiseControl& control, double t);

// n independent draws per timestamp: x = m + sqrt(v) xi in the eigenbasis,
// rotated back through E. samples[p] is n_times x d.
std::vector<MatrixXd> sample_marginals(const MomentTrajectory& traj,
                                       RandomStream& rng, int n);

}  // namespace acssm
