#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "acssm/core.hpp"
#include "acssm/moments.hpp"

namespace acssm {

// Prior linear-Gaussian SDE: dX = [-A_i X + beta_i] dt + sigma dW on each
// interval, Gaussian init, identity-with-mask emission with diagonal noise
// taken from the ObservationSeq (obs_dim == latent dim).
struct LinearGaussianSSM {
  TimeGrid grid;
  SpdOperator op;
  std::vector<VectorXd> betas;  // standard basis, one per interval
  double sigma = 1.0;
  GaussianState init;

  void validate() const;
  int dim() const { return op.dim(); }

  // Exact transition over a partial step dt inside `interval`:
  //   X_{t+dt} | X_t = x  ~  N(F x + u, Q)
  void transition(int interval, double dt, MatrixXd& F, VectorXd& u, MatrixXd& Q) const;

  VectorXd drift(double t, const VectorXd& x) const;  // -A_i x + beta_i
  PiecewiseControl prior_control() const;             // alpha_i = beta_i
};

struct KalmanResult {
  std::vector<GaussianState> predicted;   // before the update at each timestamp
  std::vector<GaussianState> filtered;    // after the update
  std::vector<double> log_normalizers;    // log p(y_i | y_{<i}), 0 when unobserved
  double log_evidence = 0.0;              // sum of log_normalizers = log Z
};

KalmanResult kalman_filter(const LinearGaussianSSM& ssm, const ObservationSeq& obs);

std::vector<GaussianState> rts_smoother(const LinearGaussianSSM& ssm,
                                        const ObservationSeq& obs);

// Multi-marginal h-function of a linear-Gaussian instance, exact:
//   h(t, x) = exp(-1/2 x^T P(t) x + q(t)^T x + c(t))
// with the potentials normalized by the Kalman prediction-error factors
// L_i = p(y_i | y_{<i}), so that E_P[prod_i f_i] = 1 exactly.
class HQuadratic {
 public:
  // Coefficients at time t; t on a grid point uses the right-open convention
  // (the potential at t is *not* yet multiplied in).
  void coeffs_at(double t, MatrixXd& P, VectorXd& q, double& c) const;
  double log_h(double t, const VectorXd& x) const;
  VectorXd grad_log_h(double t, const VectorXd& x) const;  // -P(t) x + q(t)

  // log h_1(t_0, x): includes the potential at t_0 when observed. This is the
  // reweighting factor of the conditioned initial law.
  double log_h_initial(const VectorXd& x) const;
  // mu*_0 proportional to h_1(t_0, .) mu_0 (closed-form Gaussian product).
  GaussianState initial_law() const;

  const LinearGaussianSSM& ssm() const { return ssm_; }

 private:
  friend HQuadratic h_function(const LinearGaussianSSM&, const ObservationSeq&);

  LinearGaussianSSM ssm_;
  // per timestamp i: coefficients of f_i(y_i|.) h_{i+1}(t_i, .) (the backward
  // terminal condition for the interval ending at t_i)
  std::vector<MatrixXd> P_;
  std::vector<VectorXd> q_;
  std::vector<double> c_;
};

HQuadratic h_function(const LinearGaussianSSM& ssm, const ObservationSeq& obs);

// Affine map x -> G x + g.
struct AffineDrift {
  MatrixXd G;
  VectorXd g;
};

// Drift of the conditioned SDE: b(t,x) + sigma^2 grad log h(t,x), affine in x.
// The sigma^2 factor is the Doob correction for diffusion sigma dW (equal to
// grad log h itself at sigma = 1).
AffineDrift conditioned_affine_drift(const LinearGaussianSSM& ssm,
                                     const HQuadratic& h, double t);
VectorXd conditioned_drift(const LinearGaussianSSM& ssm, const HQuadratic& h,
                           double t, const VectorXd& x);

// Optimal control alpha*(t, x) = grad log h(t, x) (unit-diffusion convention).
AffineDrift optimal_control_lg(const HQuadratic& h, double t);

// Uniformly refine every grid interval into `substeps` Euler-Maruyama steps.
std::vector<double> refine_times(const TimeGrid& grid, int substeps);
// Indices in refine_times output corresponding to the original grid points.
std::vector<int> grid_indices(const TimeGrid& grid, int substeps);

VectorXd sample_gaussian(const GaussianState& state, RandomStream& rng);

// Euler-Maruyama with precomputed affine drifts (drifts[n] applies on
// [times[n], times[n+1])). Returns one n_paths x d matrix per record index.
// Deterministic per (rng seed, path index) via split streams.
std::vector<MatrixXd> simulate_affine_sde(const std::vector<double>& times,
                                          const std::vector<AffineDrift>& drifts,
                                          double sigma, const GaussianState& init,
                                          const std::vector<int>& record_idx,
                                          RandomStream& rng, int n_paths);

// Generic-callable variant for non-affine drifts (tests, demos).
std::vector<MatrixXd> simulate_sde(
    const std::vector<double>& times,
    const std::function<VectorXd(double, const VectorXd&)>& drift, double sigma,
    const GaussianState& init, const std::vector<int>& record_idx,
    RandomStream& rng, int n_paths);

struct ResidualReport {
  std::vector<double> spacing;
  std::vector<double> h_residual;    // max | d_t h + b d_x h + 1/2 sigma^2 d_xx h |
  std::vector<double> hjb_residual;  // same for V = -log h and the HJB equation
};

// Finite-difference residuals of the backward Kolmogorov PDE for h and of the
// HJB equation for V = -log h, on a 1D instance, at a ladder of spacings
// (base_spacing / 2^l for l = 0..n_levels-1). Probes stay strictly inside the
// first interval. Throws when the interval holds fewer than 8 base spacings.
ResidualReport hjb_residual_check(const LinearGaussianSSM& ssm,
                                  const ObservationSeq& obs, double base_spacing,
                                  int n_levels);

}  // namespace acssm
