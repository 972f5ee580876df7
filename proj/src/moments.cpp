#include "acssm/moments.hpp"

#include <cmath>
#include <cstdio>

namespace acssm {

GaussianState MomentTrajectory::standard_basis(int i) const {
  const DiagGaussian& s = states[static_cast<size_t>(i)];
  GaussianState out;
  out.mean = op.from_eigenbasis(s.mean);
  out.cov = op.cov_from_eigenbasis(MatrixXd(s.var.asDiagonal()));
  return out;
}

double phi1(double x) {
  if (x < 0.0) throw DomainError("phi1: negative argument");
  if (x == 0.0) return 1.0;
  return -std::expm1(-x) / x;
}

DiagGaussian local_step(const DiagGaussian& state, const VectorXd& lambda,
                        const VectorXd& alpha_hat, double dt, double sigma) {
  if (dt < 0.0 || !std::isfinite(dt)) throw DomainError("local_step: bad dt");
  if ((lambda.array() < 0.0).any()) throw DomainError("local_step: negative lambda");
  if (!lambda.allFinite() || !alpha_hat.allFinite() || !state.mean.allFinite() ||
      !state.var.allFinite() || !std::isfinite(sigma))
    throw DomainError("local_step: non-finite input");
  if (dt == 0.0) return state;

  const int d = static_cast<int>(lambda.size());
  DiagGaussian out;
  out.mean.resize(d);
  out.var.resize(d);
  for (int j = 0; j < d; ++j) {
    const double x = lambda[j] * dt;
    out.mean[j] = std::exp(-x) * state.mean[j] + phi1(x) * dt * alpha_hat[j];
    out.var[j] = std::exp(-2.0 * x) * state.var[j] + sigma * sigma * dt * phi1(2.0 * x);
  }
  return out;
}

MomentTrajectory propagate_sequential(const GaussianState& init,
                                      const PiecewiseControl& control) {
  control.validate();
  init.validate();
  if (init.dim() != control.dim()) throw DomainError("propagate_sequential: dim mismatch");

  MomentTrajectory traj;
  traj.grid = control.grid;
  traj.op = control.op;

  DiagGaussian s;
  s.mean = control.op.to_eigenbasis(init.mean);
  MatrixXd cov_eig = control.op.cov_to_eigenbasis(init.cov);
  s.var = cov_eig.diagonal();
  MatrixXd offdiag = cov_eig - MatrixXd(cov_eig.diagonal().asDiagonal());
  if (offdiag.norm() > 1e-10 * (1.0 + cov_eig.norm()))
    std::fprintf(stderr,
                 "[moments] warning: dropping off-diagonal initial covariance "
                 "mass (frobenius %.3e) in eigenbasis\n",
                 offdiag.norm());

  traj.states.push_back(s);
  for (int i = 0; i < control.grid.n_intervals(); ++i) {
    s = local_step(s, control.op.spectrum(i),
                   control.op.to_eigenbasis(control.offsets[static_cast<size_t>(i)]),
                   control.grid.delta(i), control.sigma);
    traj.states.push_back(s);
  }
  return traj;
}

GaussianState marginal_at(const MomentTrajectory& traj,
                          const PiecewiseControl& control, double t) {
  if (traj.grid.n_intervals() == 0) {
    if (t != traj.grid.time(0)) throw DomainError("marginal_at: t outside grid");
    return traj.standard_basis(0);
  }
  const int i = traj.grid.interval_of(t);
  const double dt = t - traj.grid.time(i);
  DiagGaussian s = local_step(
      traj.states[static_cast<size_t>(i)], control.op.spectrum(i),
      control.op.to_eigenbasis(control.offsets[static_cast<size_t>(i)]), dt, control.sigma);
  GaussianState out;
  out.mean = traj.op.from_eigenbasis(s.mean);
  out.cov = traj.op.cov_from_eigenbasis(MatrixXd(s.var.asDiagonal()));
  return out;
}

std::vector<MatrixXd> sample_marginals(const MomentTrajectory& traj,
                                       RandomStream& rng, int n) {
  if (n < 1) throw DomainError("sample_marginals: n >= 1 required");
  const int k = traj.grid.n_times();
  const int d = traj.op.dim();
  std::vector<MatrixXd> out(static_cast<size_t>(n));
  for (auto& m : out) m.resize(k, d);
  VectorXd x(d);
  for (int p = 0; p < n; ++p) {
    for (int i = 0; i < k; ++i) {
      const DiagGaussian& s = traj.states[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j)
        x[j] = s.mean[j] + std::sqrt(std::max(0.0, s.var[j])) * rng.gaussian();
      out[static_cast<size_t>(p)].row(i) = traj.op.from_eigenbasis(x).transpose();
    }
  }
  return out;
}

}  // namespace acssm
