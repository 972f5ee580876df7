#pragma once

#include <vector>

#include "acssm/core.hpp"
#include "acssm/lg_oracle.hpp"
#include "acssm/moments.hpp"

namespace acssm {

// Monte Carlo estimate of the negative ELBO L(alpha).
struct ElboEstimate {
  double value = 0.0;      // control_cost + neg_log_potential
  double std_error = 0.0;
  int n_samples = 0;
  double control_cost = 0.0;
  double neg_log_potential = 0.0;
};

// Exact quadrature of the control energy for state-independent piecewise
// constant offsets: sum_i dt_i / 2 * ||alpha_i||^2.
double control_cost(const PiecewiseControl& control);

// Left-endpoint rectangle quadrature of int 1/2 ||alpha(t, X_t)||^2 dt for an
// affine control family on a time lattice; states[n] holds the per-path states
// at times[n] (n_paths x d). One cost per path.
VectorXd control_cost_affine(const std::vector<double>& times,
                             const std::vector<AffineDrift>& alphas,
                             const std::vector<MatrixXd>& states);

// Per-path sum over observed cells of -log N(y_ij; x_ij, R_j).
// samples[i] is n_paths x d at grid timestamp i.
VectorXd neg_log_potentials(const ObservationSeq& obs,
                            const std::vector<MatrixXd>& samples);

// Simulation-free negative ELBO of Eq-17 form for a state-independent control:
// latent marginals from module moments, reparameterized samples, exact control
// energy. Common random numbers across candidates when callers reuse the seed.
ElboEstimate elbo(const GaussianState& init, const PiecewiseControl& control,
                  const ObservationSeq& obs, int n_samples, RandomStream& rng);

// Negative ELBO of the oracle's affine optimal control alpha* = grad log h,
// estimated on Euler-Maruyama paths of the controlled (= conditioned) SDE.
// Unit-diffusion convention: valid for ssm.sigma == 1.
ElboEstimate elbo_oracle_control(const LinearGaussianSSM& ssm, const HQuadratic& h,
                                 const ObservationSeq& obs, int n_samples,
                                 int substeps, RandomStream& rng);

// gap = L(alpha) + log Z (KL of the controlled path law from the posterior;
// nonnegative up to MC error). Returns (gap, std_error).
std::pair<double, double> bound_gap(const GaussianState& init,
                                    const PiecewiseControl& control,
                                    const LinearGaussianSSM& ssm,
                                    const ObservationSeq& obs, int n_samples,
                                    RandomStream& rng);

}  // namespace acssm
