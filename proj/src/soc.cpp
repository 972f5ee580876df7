#include "acssm/soc.hpp"

#include <cmath>

namespace acssm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// order-independent pairwise summation
double pairwise_sum(const double* v, size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

ElboEstimate summarize(const std::vector<double>& per_sample_nlp, double cost) {
  const size_t n = per_sample_nlp.size();
  const double mean_nlp = pairwise_sum(per_sample_nlp.data(), n) / static_cast<double>(n);
  std::vector<double> dev2(n);
  for (size_t i = 0; i < n; ++i) {
    const double d = per_sample_nlp[i] - mean_nlp;
    dev2[i] = d * d;
  }
  const double var =
      n > 1 ? pairwise_sum(dev2.data(), n) / static_cast<double>(n - 1) : 0.0;
  ElboEstimate est;
  est.n_samples = static_cast<int>(n);
  est.control_cost = cost;
  est.neg_log_potential = mean_nlp;
  est.value = cost + mean_nlp;
  est.std_error = std::sqrt(var / static_cast<double>(n));
  return est;
}

}  // namespace

double control_cost(const PiecewiseControl& control) {
  control.validate();
  double cost = 0.0;
  for (int i = 0; i < control.grid.n_intervals(); ++i)
    cost += 0.5 * control.grid.delta(i) *
            control.offsets[static_cast<size_t>(i)].squaredNorm();
  return cost;
}

VectorXd control_cost_affine(const std::vector<double>& times,
                             const std::vector<AffineDrift>& alphas,
                             const std::vector<MatrixXd>& states) {
  if (times.size() != alphas.size() + 1 || states.size() != alphas.size())
    throw DomainError("control_cost_affine: lattice/control/state misalignment");
  if (states.empty()) throw DomainError("control_cost_affine: empty lattice");
  const int n_paths = static_cast<int>(states[0].rows());
  VectorXd cost = VectorXd::Zero(n_paths);
  for (size_t n = 0; n < alphas.size(); ++n) {
    const double dt = times[n + 1] - times[n];
    const MatrixXd a =
        states[n] * alphas[n].G.transpose() + VectorXd::Ones(n_paths) * alphas[n].g.transpose();
    cost += 0.5 * dt * a.rowwise().squaredNorm();
  }
  return cost;
}

VectorXd neg_log_potentials(const ObservationSeq& obs,
                            const std::vector<MatrixXd>& samples) {
  obs.validate();
  if (static_cast<int>(samples.size()) != obs.grid.n_times())
    throw DomainError("neg_log_potentials: one sample matrix per timestamp required");
  const int n_paths = samples.empty() ? 0 : static_cast<int>(samples[0].rows());
  VectorXd out = VectorXd::Zero(n_paths);
  for (int i = 0; i < obs.grid.n_times(); ++i) {
    const MatrixXd& x = samples[static_cast<size_t>(i)];
    if (static_cast<int>(x.cols()) != obs.obs_dim() || static_cast<int>(x.rows()) != n_paths)
      throw DomainError("neg_log_potentials: sample shape mismatch");
    for (int j = 0; j < obs.obs_dim(); ++j) {
      if (!obs.mask(i, j)) continue;
      const double r = obs.obs_noise[j];
      const double y = obs.values(i, j);
      for (int p = 0; p < n_paths; ++p) {
        const double e = y - x(p, j);
        out[p] += 0.5 * (e * e / r + kLog2Pi + std::log(r));
      }
    }
  }
  return out;
}

ElboEstimate elbo(const GaussianState& init, const PiecewiseControl& control,
                  const ObservationSeq& obs, int n_samples, RandomStream& rng) {
  if (n_samples < 2) throw DomainError("elbo: n_samples >= 2 required");
  const double cost = control_cost(control);
  MomentTrajectory traj = propagate_sequential(init, control);

  const int n_times = traj.grid.n_times();
  const int d = control.dim();
  std::vector<double> nlp(static_cast<size_t>(n_samples), 0.0);
  VectorXd x(d);
  for (int p = 0; p < n_samples; ++p) {
    double acc = 0.0;
    for (int i = 0; i < n_times; ++i) {
      const DiagGaussian& s = traj.states[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j)
        x[j] = s.mean[j] + std::sqrt(std::max(0.0, s.var[j])) * rng.gaussian();
      if (!obs.any_observed(i)) continue;
      const VectorXd xs = traj.op.from_eigenbasis(x);
      for (int j = 0; j < obs.obs_dim(); ++j) {
        if (!obs.mask(i, j)) continue;
        const double r = obs.obs_noise[j];
        const double e = obs.values(i, j) - xs[j];
        acc += 0.5 * (e * e / r + kLog2Pi + std::log(r));
      }
    }
    nlp[static_cast<size_t>(p)] = acc;
  }
  return summarize(nlp, cost);
}

ElboEstimate elbo_oracle_control(const LinearGaussianSSM& ssm, const HQuadratic& h,
                                 const ObservationSeq& obs, int n_samples,
                                 int substeps, RandomStream& rng) {
  if (n_samples < 2) throw DomainError("elbo_oracle_control: n_samples >= 2 required");
  const std::vector<double> times = refine_times(ssm.grid, substeps);
  const int nt = static_cast<int>(times.size());
  const int d = ssm.dim();

  // precompute the optimal control and conditioned drift per lattice step
  std::vector<AffineDrift> alpha, drift;
  alpha.reserve(static_cast<size_t>(nt - 1));
  drift.reserve(static_cast<size_t>(nt - 1));
  for (int n = 0; n + 1 < nt; ++n) {
    alpha.push_back(optimal_control_lg(h, times[static_cast<size_t>(n)]));
    drift.push_back(conditioned_affine_drift(ssm, h, times[static_cast<size_t>(n)]));
  }
  // grid timestamps on the lattice, for the potential terms
  std::vector<bool> at_obs(static_cast<size_t>(nt), false);
  std::vector<int> obs_row(static_cast<size_t>(nt), -1);
  for (int i = 0; i < ssm.grid.n_times(); ++i) {
    at_obs[static_cast<size_t>(i * substeps)] = true;
    obs_row[static_cast<size_t>(i * substeps)] = i;
  }

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(ssm.init.cov);
  const MatrixXd L =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  std::vector<double> per_sample(static_cast<size_t>(n_samples), 0.0);
  double cost_sum = 0.0;
  VectorXd x(d), xi(d), a(d);
  for (int p = 0; p < n_samples; ++p) {
    RandomStream stream = rng.split(static_cast<std::uint64_t>(p));
    for (int j = 0; j < d; ++j) xi[j] = stream.gaussian();
    x = ssm.init.mean + L * xi;
    double cost = 0.0, nlp = 0.0;
    for (int n = 0; n < nt; ++n) {
      if (at_obs[static_cast<size_t>(n)]) {
        const int i = obs_row[static_cast<size_t>(n)];
        for (int j = 0; j < obs.obs_dim(); ++j) {
          if (!obs.mask(i, j)) continue;
          const double r = obs.obs_noise[j];
          const double e = obs.values(i, j) - x[j];
          nlp += 0.5 * (e * e / r + kLog2Pi + std::log(r));
        }
      }
      if (n + 1 == nt) break;
      const double dt = times[static_cast<size_t>(n + 1)] - times[static_cast<size_t>(n)];
      a.noalias() = alpha[static_cast<size_t>(n)].G * x;
      a += alpha[static_cast<size_t>(n)].g;
      cost += 0.5 * dt * a.squaredNorm();
      const AffineDrift& dr = drift[static_cast<size_t>(n)];
      const double noise = ssm.sigma * std::sqrt(dt);
      VectorXd bx = dr.G * x + dr.g;
      for (int j = 0; j < d; ++j) x[j] += bx[j] * dt + noise * stream.gaussian();
      if (!x.allFinite()) throw DomainError("elbo_oracle_control: path diverged");
    }
    per_sample[static_cast<size_t>(p)] = cost + nlp;
    cost_sum += cost;
  }
  ElboEstimate est = summarize(per_sample, 0.0);
  est.control_cost = cost_sum / n_samples;
  est.neg_log_potential = est.value - est.control_cost;
  return est;
}

std::pair<double, double> bound_gap(const GaussianState& init,
                                    const PiecewiseControl& control,
                                    const LinearGaussianSSM& ssm,
                                    const ObservationSeq& obs, int n_samples,
                                    RandomStream& rng) {
  const KalmanResult kf = kalman_filter(ssm, obs);
  const ElboEstimate est = elbo(init, control, obs, n_samples, rng);
  return {est.value + kf.log_evidence, est.std_error};
}

}  // namespace acssm
