#include "acssm/lg_oracle.hpp"

#include <cmath>

namespace acssm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Pull the quadratic-form coefficients of the terminal condition
//   h(z) = exp(-1/2 z^T P z + q^T z + c)
// back through the Gaussian kernel z | x ~ N(F x + u, Q):
//   h'(x) = E[h(z) | x]
// In push-through form with N = (I + P Q)^{-1} (exact as Q -> 0):
//   P' = F^T N P F,  q' = F^T N (q - P u),
//   c' = c + 1/2 q^T Q N q - 1/2 u^T N P u + u^T N q - 1/2 log det(I + Q P)
void pull_back(MatrixXd& P, VectorXd& q, double& c, const MatrixXd& F,
               const VectorXd& u, const MatrixXd& Q) {
  const int d = static_cast<int>(q.size());
  const MatrixXd I = MatrixXd::Identity(d, d);
  Eigen::PartialPivLU<MatrixXd> lu(I + P * Q);
  const double det = lu.determinant();
  if (!(det > 0.0)) throw DomainError("h_function: non-PSD backward propagation");
  const MatrixXd N = lu.solve(I);
  const MatrixXd NP = N * P;
  const VectorXd Nq = N * q;
  c += 0.5 * q.dot(Q * Nq) - 0.5 * u.dot(NP * u) + u.dot(Nq) - 0.5 * std::log(det);
  q = F.transpose() * (Nq - NP * u);
  MatrixXd Pn = F.transpose() * NP * F;
  P = 0.5 * (Pn + Pn.transpose());
}

// Multiply the Gaussian potential over observed coordinates into (P, q, c).
void multiply_potential(MatrixXd& P, VectorXd& q, double& c,
                        const ObservationSeq& obs, int i) {
  for (int j = 0; j < obs.obs_dim(); ++j) {
    if (!obs.mask(i, j)) continue;
    const double r = obs.obs_noise[j];
    const double y = obs.values(i, j);
    P(j, j) += 1.0 / r;
    q[j] += y / r;
    c -= 0.5 * (y * y / r + kLog2Pi + std::log(r));
  }
}

std::vector<int> observed_coords(const ObservationSeq& obs, int i) {
  std::vector<int> out;
  for (int j = 0; j < obs.obs_dim(); ++j)
    if (obs.mask(i, j)) out.push_back(j);
  return out;
}

void check_pair(const LinearGaussianSSM& ssm, const ObservationSeq& obs) {
  ssm.validate();
  obs.validate();
  if (obs.grid.n_times() != ssm.grid.n_times() || obs.obs_dim() != ssm.dim())
    throw DomainError("lg_oracle: observation/ssm shape mismatch");
}

}  // namespace

void LinearGaussianSSM::validate() const {
  if (op.n_intervals() != grid.n_intervals())
    throw DomainError("LinearGaussianSSM: one spectrum per interval required");
  if (static_cast<int>(betas.size()) != grid.n_intervals())
    throw DomainError("LinearGaussianSSM: one offset per interval required");
  for (const auto& b : betas)
    if (b.size() != op.dim() || !b.allFinite())
      throw DomainError("LinearGaussianSSM: bad drift offset");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw DomainError("LinearGaussianSSM: sigma must be positive");
  init.validate();
  if (init.dim() != op.dim()) throw DomainError("LinearGaussianSSM: init dim mismatch");
}

void LinearGaussianSSM::transition(int interval, double dt, MatrixXd& F,
                                   VectorXd& u, MatrixXd& Q) const {
  if (dt < 0.0) throw DomainError("transition: negative dt");
  const VectorXd& lam = op.spectrum(interval);
  const VectorXd b_hat = op.to_eigenbasis(betas[static_cast<size_t>(interval)]);
  const int d = dim();
  VectorXd f(d), uu(d), qq(d);
  const double s2 = sigma * sigma;
  for (int j = 0; j < d; ++j) {
    const double x = lam[j] * dt;
    f[j] = std::exp(-x);
    uu[j] = phi1(x) * dt * b_hat[j];
    qq[j] = s2 * dt * phi1(2.0 * x);
  }
  const MatrixXd& E = op.basis();
  F = E * f.asDiagonal() * E.transpose();
  u = E * uu;
  Q = E * qq.asDiagonal() * E.transpose();
}

VectorXd LinearGaussianSSM::drift(double t, const VectorXd& x) const {
  const int i = grid.interval_of(t);
  return -(op.matrix(i) * x) + betas[static_cast<size_t>(i)];
}

PiecewiseControl LinearGaussianSSM::prior_control() const {
  return PiecewiseControl{grid, op, betas, sigma};
}

KalmanResult kalman_filter(const LinearGaussianSSM& ssm, const ObservationSeq& obs) {
  check_pair(ssm, obs);
  const int n = ssm.grid.n_times();
  KalmanResult res;
  res.predicted.resize(static_cast<size_t>(n));
  res.filtered.resize(static_cast<size_t>(n));
  res.log_normalizers.assign(static_cast<size_t>(n), 0.0);

  VectorXd m = ssm.init.mean;
  MatrixXd P = ssm.init.cov;
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      MatrixXd F, Q;
      VectorXd u;
      ssm.transition(i - 1, ssm.grid.delta(i - 1), F, u, Q);
      m = F * m + u;
      P = F * P * F.transpose() + Q;
      P = 0.5 * (P + P.transpose());
    }
    res.predicted[static_cast<size_t>(i)] = {m, P};
    const std::vector<int> oc = observed_coords(obs, i);
    if (!oc.empty()) {
      const int no = static_cast<int>(oc.size());
      VectorXd innov(no);
      MatrixXd S(no, no), Pxo(ssm.dim(), no);
      for (int a = 0; a < no; ++a) {
        innov[a] = obs.values(i, oc[static_cast<size_t>(a)]) - m[oc[static_cast<size_t>(a)]];
        Pxo.col(a) = P.col(oc[static_cast<size_t>(a)]);
        for (int b = 0; b < no; ++b)
          S(a, b) = P(oc[static_cast<size_t>(a)], oc[static_cast<size_t>(b)]);
        S(a, a) += obs.obs_noise[oc[static_cast<size_t>(a)]];
      }
      Eigen::LDLT<MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
        throw DomainError("kalman_filter: singular innovation covariance");
      const MatrixXd K = ldlt.solve(Pxo.transpose()).transpose();
      m += K * innov;
      P -= K * Pxo.transpose();
      P = 0.5 * (P + P.transpose());
      const double logdet = ldlt.vectorD().array().log().sum();
      res.log_normalizers[static_cast<size_t>(i)] =
          -0.5 * (innov.dot(ldlt.solve(innov)) + logdet + no * kLog2Pi);
      res.log_evidence += res.log_normalizers[static_cast<size_t>(i)];
    }
    res.filtered[static_cast<size_t>(i)] = {m, P};
  }
  return res;
}

std::vector<GaussianState> rts_smoother(const LinearGaussianSSM& ssm,
                                        const ObservationSeq& obs) {
  KalmanResult kf = kalman_filter(ssm, obs);
  const int n = ssm.grid.n_times();
  std::vector<GaussianState> out(static_cast<size_t>(n));
  out[static_cast<size_t>(n - 1)] = kf.filtered[static_cast<size_t>(n - 1)];
  for (int i = n - 2; i >= 0; --i) {
    MatrixXd F, Q;
    VectorXd u;
    ssm.transition(i, ssm.grid.delta(i), F, u, Q);
    const GaussianState& f = kf.filtered[static_cast<size_t>(i)];
    const GaussianState& pr = kf.predicted[static_cast<size_t>(i + 1)];
    const GaussianState& sn = out[static_cast<size_t>(i + 1)];
    Eigen::LDLT<MatrixXd> ldlt(pr.cov);
    const MatrixXd G = ldlt.solve(F * f.cov).transpose();
    GaussianState s;
    s.mean = f.mean + G * (sn.mean - pr.mean);
    MatrixXd C = f.cov + G * (sn.cov - pr.cov) * G.transpose();
    s.cov = 0.5 * (C + C.transpose());
    out[static_cast<size_t>(i)] = s;
  }
  return out;
}

HQuadratic h_function(const LinearGaussianSSM& ssm, const ObservationSeq& obs) {
  check_pair(ssm, obs);
  KalmanResult kf = kalman_filter(ssm, obs);

  HQuadratic h;
  h.ssm_ = ssm;
  const int n = ssm.grid.n_times();
  const int d = ssm.dim();
  h.P_.resize(static_cast<size_t>(n));
  h.q_.resize(static_cast<size_t>(n));
  h.c_.resize(static_cast<size_t>(n));

  MatrixXd P = MatrixXd::Zero(d, d);
  VectorXd q = VectorXd::Zero(d);
  double c = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    if (i < n - 1) {
      MatrixXd F, Q;
      VectorXd u;
      ssm.transition(i, ssm.grid.delta(i), F, u, Q);
      pull_back(P, q, c, F, u, Q);
    }
    multiply_potential(P, q, c, obs, i);
    c -= kf.log_normalizers[static_cast<size_t>(i)];
    h.P_[static_cast<size_t>(i)] = P;
    h.q_[static_cast<size_t>(i)] = q;
    h.c_[static_cast<size_t>(i)] = c;
  }
  return h;
}

void HQuadratic::coeffs_at(double t, MatrixXd& P, VectorXd& q, double& c) const {
  const TimeGrid& grid = ssm_.grid;
  if (grid.n_intervals() == 0) {
    // single-timestamp instance: only the potential at t_0 exists
    if (t != grid.time(0)) throw DomainError("HQuadratic: t outside grid");
    P = P_[0];
    q = q_[0];
    c = c_[0];
    return;
  }
  const int i = grid.interval_of(t);
  P = P_[static_cast<size_t>(i + 1)];
  q = q_[static_cast<size_t>(i + 1)];
  c = c_[static_cast<size_t>(i + 1)];
  const double dt = grid.time(i + 1) - t;
  if (dt > 0.0) {
    MatrixXd F, Q;
    VectorXd u;
    ssm_.transition(i, dt, F, u, Q);
    pull_back(P, q, c, F, u, Q);
  }
}

double HQuadratic::log_h(double t, const VectorXd& x) const {
  MatrixXd P;
  VectorXd q;
  double c;
  coeffs_at(t, P, q, c);
  return -0.5 * x.dot(P * x) + q.dot(x) + c;
}

VectorXd HQuadratic::grad_log_h(double t, const VectorXd& x) const {
  MatrixXd P;
  VectorXd q;
  double c;
  coeffs_at(t, P, q, c);
  return q - P * x;
}

double HQuadratic::log_h_initial(const VectorXd& x) const {
  return -0.5 * x.dot(P_[0] * x) + q_[0].dot(x) + c_[0];
}

GaussianState HQuadratic::initial_law() const {
  const int d = ssm_.dim();
  const MatrixXd I = MatrixXd::Identity(d, d);
  // N(m0, S0) * exp(-1/2 x^T P x + q^T x):
  //   cov = (I + S0 P)^{-1} S0,  mean = (I + S0 P)^{-1} (m0 + S0 q)
  Eigen::PartialPivLU<MatrixXd> lu(I + ssm_.init.cov * P_[0]);
  GaussianState out;
  out.mean = lu.solve(ssm_.init.mean + ssm_.init.cov * q_[0]);
  MatrixXd C = lu.solve(ssm_.init.cov);
  out.cov = 0.5 * (C + C.transpose());
  return out;
}

AffineDrift conditioned_affine_drift(const LinearGaussianSSM& ssm,
                                     const HQuadratic& h, double t) {
  MatrixXd P;
  VectorXd q;
  double c;
  h.coeffs_at(t, P, q, c);
  const int i = ssm.grid.interval_of(t);
  const double s2 = ssm.sigma * ssm.sigma;
  AffineDrift out;
  out.G = -ssm.op.matrix(i) - s2 * P;
  out.g = ssm.betas[static_cast<size_t>(i)] + s2 * q;
  return out;
}

VectorXd conditioned_drift(const LinearGaussianSSM& ssm, const HQuadratic& h,
                           double t, const VectorXd& x) {
  AffineDrift a = conditioned_affine_drift(ssm, h, t);
  return a.G * x + a.g;
}

AffineDrift optimal_control_lg(const HQuadratic& h, double t) {
  MatrixXd P;
  VectorXd q;
  double c;
  h.coeffs_at(t, P, q, c);
  return {-P, q};
}

std::vector<double> refine_times(const TimeGrid& grid, int substeps) {
  if (substeps < 1) throw DomainError("refine_times: substeps >= 1");
  std::vector<double> out;
  out.reserve(static_cast<size_t>(grid.n_intervals() * substeps + 1));
  for (int i = 0; i < grid.n_intervals(); ++i)
    for (int s = 0; s < substeps; ++s)
      out.push_back(grid.time(i) + grid.delta(i) * s / substeps);
  out.push_back(grid.horizon());
  return out;
}

std::vector<int> grid_indices(const TimeGrid& grid, int substeps) {
  std::vector<int> out;
  for (int i = 0; i < grid.n_times(); ++i) out.push_back(i * substeps);
  return out;
}

VectorXd sample_gaussian(const GaussianState& state, RandomStream& rng) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(state.cov);
  const MatrixXd L =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  VectorXd xi(state.dim());
  for (int j = 0; j < state.dim(); ++j) xi[j] = rng.gaussian();
  return state.mean + L * xi;
}

namespace {

template <typename StepFn>
std::vector<MatrixXd> simulate_impl(const std::vector<double>& times, double sigma,
                                    const GaussianState& init,
                                    const std::vector<int>& record_idx,
                                    RandomStream& rng, int n_paths, StepFn&& step) {
  if (times.size() < 1) throw DomainError("simulate: empty time lattice");
  if (n_paths < 1) throw DomainError("simulate: n_paths >= 1");
  const int d = init.dim();
  const int nt = static_cast<int>(times.size());
  std::vector<bool> rec(static_cast<size_t>(nt), false);
  for (int idx : record_idx) {
    if (idx < 0 || idx >= nt) throw DomainError("simulate: record index out of range");
    rec[static_cast<size_t>(idx)] = true;
  }
  std::vector<MatrixXd> out(record_idx.size());
  for (auto& m : out) m.resize(n_paths, d);
  // record slot for each lattice index
  std::vector<int> slot(static_cast<size_t>(nt), -1);
  for (size_t r = 0; r < record_idx.size(); ++r)
    slot[static_cast<size_t>(record_idx[r])] = static_cast<int>(r);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(init.cov);
  const MatrixXd L =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  VectorXd x(d), xi(d), dx(d);
  for (int p = 0; p < n_paths; ++p) {
    RandomStream stream = rng.split(static_cast<std::uint64_t>(p));
    for (int j = 0; j < d; ++j) xi[j] = stream.gaussian();
    x = init.mean + L * xi;
    if (slot[0] >= 0) out[static_cast<size_t>(slot[0])].row(p) = x.transpose();
    for (int n = 0; n + 1 < nt; ++n) {
      const double dt = times[static_cast<size_t>(n + 1)] - times[static_cast<size_t>(n)];
      step(n, times[static_cast<size_t>(n)], x, dx);
      const double noise = sigma * std::sqrt(dt);
      for (int j = 0; j < d; ++j) x[j] += dx[j] * dt + noise * stream.gaussian();
      if (!x.allFinite()) throw DomainError("simulate: path diverged");
      if (slot[static_cast<size_t>(n + 1)] >= 0)
        out[static_cast<size_t>(slot[static_cast<size_t>(n + 1)])].row(p) = x.transpose();
    }
  }
  return out;
}

}  // namespace

std::vector<MatrixXd> simulate_affine_sde(const std::vector<double>& times,
                                          const std::vector<AffineDrift>& drifts,
                                          double sigma, const GaussianState& init,
                                          const std::vector<int>& record_idx,
                                          RandomStream& rng, int n_paths) {
  if (drifts.size() + 1 != times.size())
    throw DomainError("simulate_affine_sde: one drift per lattice interval required");
  return simulate_impl(times, sigma, init, record_idx, rng, n_paths,
                       [&](int n, double, const VectorXd& x, VectorXd& dx) {
                         const AffineDrift& a = drifts[static_cast<size_t>(n)];
                         dx.noalias() = a.G * x;
                         dx += a.g;
                       });
}

std::vector<MatrixXd> simulate_sde(
    const std::vector<double>& times,
    const std::function<VectorXd(double, const VectorXd&)>& drift, double sigma,
    const GaussianState& init, const std::vector<int>& record_idx,
    RandomStream& rng, int n_paths) {
  return simulate_impl(times, sigma, init, record_idx, rng, n_paths,
                       [&](int, double t, const VectorXd& x, VectorXd& dx) {
                         dx = drift(t, x);
                       });
}

ResidualReport hjb_residual_check(const LinearGaussianSSM& ssm,
                                  const ObservationSeq& obs, double base_spacing,
                                  int n_levels) {
  if (ssm.dim() != 1) throw DomainError("hjb_residual_check: 1D instances only");
  if (ssm.grid.n_intervals() < 1) throw DomainError("hjb_residual_check: needs an interval");
  const double t0 = ssm.grid.time(0);
  const double dt0 = ssm.grid.delta(0);
  if (!(base_spacing > 0.0) || dt0 / base_spacing < 8.0)
    throw DomainError("hjb_residual_check: lattice too coarse (need >= 8 points per interval)");

  HQuadratic h = h_function(ssm, obs);
  const double m0 = ssm.init.mean[0];

  // fixed probe set, strictly inside the first interval with margin for t +/- s
  std::vector<double> tp, xp;
  for (int a = 0; a < 3; ++a) tp.push_back(t0 + dt0 * (0.35 + 0.15 * a));
  for (int b = 0; b < 3; ++b) xp.push_back(m0 - 1.0 + 1.0 * b);

  auto logh = [&](double t, double x) {
    VectorXd v(1);
    v[0] = x;
    return h.log_h(t, v);
  };

  ResidualReport rep;
  const double s2 = ssm.sigma * ssm.sigma;
  for (int lev = 0; lev < n_levels; ++lev) {
    const double s = base_spacing / std::pow(2.0, lev);
    double rh = 0.0, rv = 0.0;
    for (double t : tp) {
      for (double x : xp) {
        VectorXd xv(1);
        xv[0] = x;
        const double b = ssm.drift(t, xv)[0];
        const double l0 = logh(t, x);
        // h residual, normalized by h(t,x) for scale invariance
        const double hc = 1.0;
        const double ht1 = std::exp(logh(t + s, x) - l0), ht0 = std::exp(logh(t - s, x) - l0);
        const double hx1 = std::exp(logh(t, x + s) - l0), hx0 = std::exp(logh(t, x - s) - l0);
        const double dth = (ht1 - ht0) / (2.0 * s);
        const double dxh = (hx1 - hx0) / (2.0 * s);
        const double dxxh = (hx1 - 2.0 * hc + hx0) / (s * s);
        rh = std::max(rh, std::abs(dth + b * dxh + 0.5 * s2 * dxxh));
        // HJB residual on V = -log h (Hopf-Cole):
        //   d_t V + b d_x V + 1/2 s2 (d_xx V - (d_x V)^2) = 0
        const double vt1 = -logh(t + s, x), vt0 = -logh(t - s, x);
        const double vx1 = -logh(t, x + s), vx0 = -logh(t, x - s);
        const double vc = -l0;
        const double dtv = (vt1 - vt0) / (2.0 * s);
        const double dxv = (vx1 - vx0) / (2.0 * s);
        const double dxxv = (vx1 - 2.0 * vc + vx0) / (s * s);
        rv = std::max(rv, std::abs(dtv + b * dxv + 0.5 * s2 * (dxxv - dxv * dxv)));
      }
    }
    rep.spacing.push_back(s);
    rep.h_residual.push_back(rh);
    rep.hjb_residual.push_back(rv);
  }
  return rep;
}

}  // namespace acssm
