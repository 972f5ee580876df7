#include <cmath>

#include "doctest.h"

#include "acssm/lg_oracle.hpp"

using namespace acssm;

namespace {

constexpr double kPi = 3.14159265358979323846;

LinearGaussianSSM static_1d() {
  LinearGaussianSSM ssm;
  ssm.grid = TimeGrid({0.0});
  ssm.op = SpdOperator(MatrixXd::Identity(1, 1), {});
  ssm.sigma = 1.0;
  ssm.init.mean = VectorXd::Zero(1);
  ssm.init.cov = MatrixXd::Identity(1, 1);
  return ssm;
}

ObservationSeq full_obs(const TimeGrid& grid, const MatrixXd& values, double r) {
  ObservationSeq obs;
  obs.grid = grid;
  obs.values = values;
  obs.mask.setConstant(values.rows(), values.cols(), true);
  obs.obs_noise = VectorXd::Constant(values.cols(), r);
  return obs;
}

LinearGaussianSSM random_ssm(int d, int k, std::uint64_t seed, double sigma = 0.8) {
  RandomStream rng(seed, 0x1c);
  MatrixXd skew(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) skew(r, c) = 0.6 * rng.gaussian();
  std::vector<double> times = {0.1};
  std::vector<VectorXd> sp, be;
  for (int i = 0; i < k - 1; ++i) {
    times.push_back(times.back() + 0.3 + 0.4 * rng.uniform());
    sp.push_back(VectorXd::NullaryExpr(d, [&](int) { return -0.3 + 0.5 * rng.gaussian(); }));
    be.push_back(VectorXd::NullaryExpr(d, [&](int) { return 0.5 * rng.gaussian(); }));
  }
  LinearGaussianSSM ssm;
  ssm.grid = TimeGrid(times);
  ssm.op = make_spd(skew, sp);
  ssm.betas = be;
  ssm.sigma = sigma;
  ssm.init.mean = VectorXd::NullaryExpr(d, [&](int) { return 0.4 * rng.gaussian(); });
  ssm.init.cov = 0.6 * MatrixXd::Identity(d, d);
  return ssm;
}

ObservationSeq random_obs(const LinearGaussianSSM& ssm, double r, std::uint64_t seed,
                          double mask_prob = 0.0) {
  RandomStream rng(seed, 0x0b);
  const int n = ssm.grid.n_times(), d = ssm.dim();
  ObservationSeq obs;
  obs.grid = ssm.grid;
  obs.values.setZero(n, d);
  obs.mask.setConstant(n, d, true);
  obs.obs_noise = VectorXd::Constant(d, r);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      obs.values(i, j) = rng.gaussian();
      if (mask_prob > 0.0 && rng.uniform() < mask_prob) obs.mask(i, j) = false;
    }
  // keep at least one observed cell on the first and last timestamps
  obs.mask(0, 0) = true;
  obs.mask(n - 1, 0) = true;
  return obs;
}

// Exact dense joint-Gaussian reference: stack all latents, condition on the
// observed cells, return per-timestamp marginals and the log evidence.
struct DenseResult {
  std::vector<GaussianState> marginals;
  double log_evidence = 0.0;
};

DenseResult dense_oracle(const LinearGaussianSSM& ssm, const ObservationSeq& obs) {
  const int d = ssm.dim(), k = ssm.grid.n_times(), N = d * k;
  VectorXd mean = VectorXd::Zero(N);
  MatrixXd cov = MatrixXd::Zero(N, N);
  mean.head(d) = ssm.init.mean;
  cov.topLeftCorner(d, d) = ssm.init.cov;
  for (int i = 0; i + 1 < k; ++i) {
    MatrixXd F, Q;
    VectorXd u;
    ssm.transition(i, ssm.grid.delta(i), F, u, Q);
    mean.segment((i + 1) * d, d) = F * mean.segment(i * d, d) + u;
    for (int j = 0; j <= i; ++j) {
      const MatrixXd c = F * cov.block(i * d, j * d, d, d);
      cov.block((i + 1) * d, j * d, d, d) = c;
      cov.block(j * d, (i + 1) * d, d, d) = c.transpose();
    }
    cov.block((i + 1) * d, (i + 1) * d, d, d) =
        F * cov.block(i * d, i * d, d, d) * F.transpose() + Q;
  }
  std::vector<int> idx;
  std::vector<double> ys, rs;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j)
      if (obs.mask(i, j)) {
        idx.push_back(i * d + j);
        ys.push_back(obs.values(i, j));
        rs.push_back(obs.obs_noise[j]);
      }
  const int M = static_cast<int>(idx.size());
  MatrixXd s_cov(M, M), cross(N, M);
  VectorXd resid(M);
  for (int a = 0; a < M; ++a) {
    resid[a] = ys[static_cast<size_t>(a)] - mean[idx[static_cast<size_t>(a)]];
    cross.col(a) = cov.col(idx[static_cast<size_t>(a)]);
    for (int b = 0; b < M; ++b)
      s_cov(a, b) = cov(idx[static_cast<size_t>(a)], idx[static_cast<size_t>(b)]);
    s_cov(a, a) += rs[static_cast<size_t>(a)];
  }
  Eigen::LDLT<MatrixXd> ldlt(s_cov);
  const VectorXd post_mean = mean + cross * ldlt.solve(resid);
  const MatrixXd post_cov = cov - cross * ldlt.solve(cross.transpose());
  DenseResult out;
  for (int i = 0; i < k; ++i) {
    GaussianState g;
    g.mean = post_mean.segment(i * d, d);
    g.cov = post_cov.block(i * d, i * d, d, d);
    out.marginals.push_back(g);
  }
  out.log_evidence = -0.5 * resid.dot(ldlt.solve(resid)) -
                     0.5 * std::log(ldlt.vectorD().prod()) -
                     0.5 * M * std::log(2.0 * kPi);
  return out;
}

}  // namespace

TEST_CASE("static 1D evidence: log Z = -1/2 log(4 pi)") {
  LinearGaussianSSM ssm = static_1d();
  ObservationSeq obs = full_obs(ssm.grid, MatrixXd::Zero(1, 1), 1.0);
  KalmanResult kf = kalman_filter(ssm, obs);
  CHECK(kf.log_evidence == doctest::Approx(-0.5 * std::log(4.0 * kPi)).epsilon(1e-7));
  CHECK(kf.log_evidence == doctest::Approx(-1.2655121).epsilon(1e-6));
}

TEST_CASE("smoother and evidence match the dense joint-Gaussian oracle") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    LinearGaussianSSM ssm = random_ssm(2, 4, seed);
    ObservationSeq obs = random_obs(ssm, 0.3, seed, seed == 3 ? 0.4 : 0.0);
    DenseResult dense = dense_oracle(ssm, obs);
    KalmanResult kf = kalman_filter(ssm, obs);
    CHECK(kf.log_evidence == doctest::Approx(dense.log_evidence).epsilon(1e-9));
    auto smooth = rts_smoother(ssm, obs);
    for (size_t i = 0; i < smooth.size(); ++i) {
      CHECK((smooth[i].mean - dense.marginals[i].mean).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((smooth[i].cov - dense.marginals[i].cov).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("heat kernel: P(t) = 1 / (R + T - t) for near-zero drift") {
  LinearGaussianSSM ssm;
  ssm.grid = TimeGrid({0.0, 1.0});
  ssm.op = SpdOperator(MatrixXd::Identity(1, 1), {VectorXd::Constant(1, 1e-8)});
  ssm.betas = {VectorXd::Zero(1)};
  ssm.sigma = 1.0;
  ssm.init.mean = VectorXd::Zero(1);
  ssm.init.cov = MatrixXd::Identity(1, 1);
  const double R = 0.2, y = 0.7;
  ObservationSeq obs = full_obs(ssm.grid, MatrixXd::Constant(2, 1, y), R);
  obs.mask(0, 0) = false;  // only the terminal observation
  HQuadratic h = h_function(ssm, obs);
  for (double t : {0.0, 0.3, 0.9}) {
    MatrixXd P;
    VectorXd q;
    double c;
    h.coeffs_at(t, P, q, c);
    CHECK(P(0, 0) == doctest::Approx(1.0 / (R + 1.0 - t)).epsilon(1e-4));
    CHECK(q[0] == doctest::Approx(y / (R + 1.0 - t)).epsilon(1e-4));
  }
}

TEST_CASE("R -> 0 recovers the Brownian bridge drift (y - x)/(T - t)") {
  LinearGaussianSSM ssm;
  ssm.grid = TimeGrid({0.0, 1.0});
  ssm.op = SpdOperator(MatrixXd::Identity(1, 1), {VectorXd::Constant(1, 1e-8)});
  ssm.betas = {VectorXd::Zero(1)};
  ssm.sigma = 1.0;
  ssm.init.mean = VectorXd::Zero(1);
  ssm.init.cov = MatrixXd::Identity(1, 1);
  const double y = -0.4;
  ObservationSeq obs = full_obs(ssm.grid, MatrixXd::Constant(2, 1, y), 1e-10);
  obs.mask(0, 0) = false;
  HQuadratic h = h_function(ssm, obs);
  for (double t : {0.2, 0.5, 0.8}) {
    const VectorXd x = VectorXd::Constant(1, 0.3);
    const VectorXd drift = conditioned_drift(ssm, h, t, x);
    CHECK(drift[0] == doctest::Approx((y - 0.3) / (1.0 - t)).epsilon(1e-3));
  }
}

TEST_CASE("grad_log_h matches central finite differences") {
  LinearGaussianSSM ssm = random_ssm(2, 3, 11);
  ObservationSeq obs = random_obs(ssm, 0.4, 11);
  HQuadratic h = h_function(ssm, obs);
  RandomStream rng(2, 2);
  for (double t : {0.15, 0.4, 0.8}) {
    VectorXd x = VectorXd::NullaryExpr(2, [&](int) { return rng.gaussian(); });
    const VectorXd g = h.grad_log_h(t, x);
    for (int j = 0; j < 2; ++j) {
      const double eps = 1e-5;
      VectorXd xp = x, xm = x;
      xp[j] += eps;
      xm[j] -= eps;
      const double fd = (h.log_h(t, xp) - h.log_h(t, xm)) / (2 * eps);
      CHECK(g[j] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("normalized potentials integrate to one over the prior") {
  LinearGaussianSSM ssm = random_ssm(1, 3, 21);
  ObservationSeq obs = random_obs(ssm, 0.5, 21);
  KalmanResult kf = kalman_filter(ssm, obs);
  RandomStream rng(21, 5);
  const int n_mc = 20000;
  double sum = 0.0, sumsq = 0.0;
  for (int p = 0; p < n_mc; ++p) {
    RandomStream pr = rng.split(static_cast<std::uint64_t>(p));
    VectorXd x = sample_gaussian(ssm.init, pr);
    double log_f = 0.0;
    for (int i = 0; i < ssm.grid.n_times(); ++i) {
      if (i > 0) {
        MatrixXd F, Q;
        VectorXd u;
        ssm.transition(i - 1, ssm.grid.delta(i - 1), F, u, Q);
        GaussianState st{F * x + u, Q};
        x = sample_gaussian(st, pr);
      }
      const double r = obs.obs_noise[0];
      const double e = obs.values(i, 0) - x[0];
      log_f += -0.5 * e * e / r - 0.5 * std::log(2.0 * kPi * r) -
               kf.log_normalizers[static_cast<size_t>(i)];
    }
    const double f = std::exp(log_f);
    sum += f;
    sumsq += f * f;
  }
  const double mean = sum / n_mc;
  const double se = std::sqrt((sumsq / n_mc - mean * mean) / n_mc);
  CHECK(std::abs(mean - 1.0) < 4.0 * se);
}

TEST_CASE("h-transform initial law equals the smoothing marginal at t_0") {
  LinearGaussianSSM ssm = random_ssm(2, 4, 31);
  ObservationSeq obs = random_obs(ssm, 0.3, 31);
  HQuadratic h = h_function(ssm, obs);
  GaussianState init = h.initial_law();
  auto smooth = rts_smoother(ssm, obs);
  CHECK((init.mean - smooth[0].mean).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((init.cov - smooth[0].cov).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("conditioned SDE reproduces smoother marginals (bridge check)") {
  LinearGaussianSSM ssm = random_ssm(1, 3, 41, 1.0);
  ObservationSeq obs = random_obs(ssm, 0.4, 41);
  HQuadratic h = h_function(ssm, obs);
  auto smooth = rts_smoother(ssm, obs);
  const int sub = 60;
  const auto times = refine_times(ssm.grid, sub);
  const auto rec = grid_indices(ssm.grid, sub);
  std::vector<AffineDrift> drifts;
  for (size_t n = 0; n + 1 < times.size(); ++n)
    drifts.push_back(conditioned_affine_drift(ssm, h, times[n]));
  RandomStream rng(41, 9);
  const int n_paths = 20000;
  auto recs = simulate_affine_sde(times, drifts, ssm.sigma, h.initial_law(), rec,
                                  rng, n_paths);
  for (size_t i = 0; i < recs.size(); ++i) {
    const double m = recs[i].col(0).mean();
    const double v = (recs[i].col(0).array() - m).square().sum() / (n_paths - 1);
    const double se = std::sqrt(v / n_paths);
    CHECK(std::abs(m - smooth[i].mean[0]) < 4.0 * se);
    CHECK(v == doctest::Approx(smooth[i].cov(0, 0)).epsilon(0.08));
  }
}

TEST_CASE("transition semigroup and zero-noise limits") {
  LinearGaussianSSM ssm = random_ssm(2, 3, 51);
  MatrixXd F1, F2, F, Q1, Q2, Q;
  VectorXd u1, u2, u;
  const double dt = ssm.grid.delta(0);
  ssm.transition(0, dt, F, u, Q);
  ssm.transition(0, dt / 2, F1, u1, Q1);
  // second half-step has the same generator inside one interval
  CHECK((F1 * F1 - F).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((F1 * u1 + u1 - u).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((F1 * Q1 * F1.transpose() + Q1 - Q).cwiseAbs().maxCoeff() < 1e-10);

  LinearGaussianSSM det = ssm;
  det.sigma = 1e-300;
  det.transition(0, dt, F2, u2, Q2);
  CHECK(Q2.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hjb residuals decay at second order") {
  LinearGaussianSSM ssm = random_ssm(1, 3, 61);
  ObservationSeq obs = random_obs(ssm, 0.4, 61);
  const double base = ssm.grid.delta(0) / 16.0;
  ResidualReport rep = hjb_residual_check(ssm, obs, base, 3);
  for (size_t l = 0; l + 1 < rep.h_residual.size(); ++l) {
    CHECK(rep.h_residual[l] / rep.h_residual[l + 1] == doctest::Approx(4.0).epsilon(0.15));
    CHECK(rep.hjb_residual[l] / rep.hjb_residual[l + 1] ==
          doctest::Approx(4.0).epsilon(0.15));
  }
}

TEST_CASE("simulate_sde degenerate cases") {
  auto zero_drift = [](double, const VectorXd& x) { return VectorXd::Zero(x.size()); };
  GaussianState init;
  init.mean = VectorXd::Constant(1, 1.5);
  init.cov = MatrixXd::Zero(1, 1);
  std::vector<double> times = {0.0, 0.5, 1.0};
  RandomStream rng(3, 8);
  auto recs = simulate_sde(times, zero_drift, 0.0, init, {0, 2}, rng, 5);
  CHECK(recs.size() == 2);
  for (const auto& r : recs)
    for (int p = 0; p < 5; ++p) CHECK(r(p, 0) == doctest::Approx(1.5));
}
