#include "doctest.h"

#include "acssm/core.hpp"

using namespace acssm;

namespace {

SpdOperator random_spd(int d, int k, std::uint64_t seed) {
  RandomStream rng(seed, 7);
  MatrixXd skew(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) skew(r, c) = rng.gaussian();
  std::vector<VectorXd> sp(static_cast<size_t>(k));
  for (auto& v : sp)
    v = VectorXd::NullaryExpr(d, [&](int) { return rng.gaussian(); });
  return make_spd(skew, sp);
}

}  // namespace

TEST_CASE("TimeGrid validation and interval lookup") {
  CHECK_THROWS_AS(TimeGrid({1.0, 1.0, 2.0}), DomainError);
  CHECK_THROWS_AS(TimeGrid({-1.0, 0.0}), DomainError);
  TimeGrid g({0.0, 0.5, 2.0});
  CHECK(g.n_intervals() == 2);
  CHECK(g.interval_of(0.0) == 0);
  CHECK(g.interval_of(0.5) == 1);   // right-open
  CHECK(g.interval_of(2.0) == 1);   // horizon maps to the last interval
  CHECK_THROWS_AS(g.interval_of(2.5), DomainError);
}

TEST_CASE("make_spd produces an orthonormal basis and positive spectra") {
  SpdOperator op = random_spd(5, 3, 11);
  const MatrixXd e = op.basis();
  CHECK((e.transpose() * e - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < 3; ++i) CHECK(op.spectrum(i).minCoeff() > 0.0);
}

TEST_CASE("eigenbasis round trip is exact to 1e-12") {
  SpdOperator op = random_spd(6, 2, 3);
  RandomStream rng(1, 1);
  VectorXd v = VectorXd::NullaryExpr(6, [&](int) { return rng.gaussian(); });
  CHECK((op.from_eigenbasis(op.to_eigenbasis(v)) - v).cwiseAbs().maxCoeff() < 1e-12);
  MatrixXd s = MatrixXd::Random(6, 6);
  s = (s * s.transpose()).eval();
  MatrixXd back = op.cov_from_eigenbasis(op.cov_to_eigenbasis(s));
  CHECK((back - s).cwiseAbs().maxCoeff() < 1e-12);
  // rotation preserves the trace
  CHECK(op.cov_to_eigenbasis(s).trace() == doctest::Approx(s.trace()).epsilon(1e-12));
}

TEST_CASE("operator matrix matches E D E^T and is symmetric") {
  SpdOperator op = random_spd(4, 2, 9);
  MatrixXd a = op.matrix(1);
  CHECK((a - a.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
  VectorXd want = op.spectrum(1);
  std::sort(want.data(), want.data() + want.size());
  CHECK((es.eigenvalues() - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("RandomStream is reproducible and stream-separated") {
  RandomStream a(123, 5), b(123, 5), c(123, 6);
  bool equal = true, distinct = false;
  for (int i = 0; i < 1000000; ++i) {
    const auto x = a.next_u64();
    equal = equal && (x == b.next_u64());
    distinct = distinct || (x != c.next_u64());
  }
  CHECK(equal);
  CHECK(distinct);
}

TEST_CASE("RandomStream gaussian moments") {
  RandomStream rng(7, 0);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.gaussian();
    s += x;
    s2 += x * x;
    s3 += x * x * x;
    s4 += x * x * x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(std::abs(s3 / n) < 0.03);
  CHECK(s4 / n == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("split streams are deterministic functions of the child id") {
  RandomStream root(99, 1);
  RandomStream a = root.split(4);
  RandomStream b = RandomStream(99, 1).split(4);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("ObservationSeq validation") {
  ObservationSeq obs;
  obs.grid = TimeGrid({0.0, 1.0});
  obs.values = MatrixXd::Zero(2, 1);
  obs.mask.setConstant(2, 1, true);
  obs.obs_noise = VectorXd::Constant(1, 0.5);
  CHECK_NOTHROW(obs.validate());
  obs.obs_noise[0] = 0.0;
  CHECK_THROWS_AS(obs.validate(), DomainError);
  obs.obs_noise[0] = 0.5;
  obs.values.resize(3, 1);
  CHECK_THROWS_AS(obs.validate(), DomainError);
}

TEST_CASE("GaussianState rejects non-PSD covariance") {
  GaussianState s;
  s.mean = VectorXd::Zero(2);
  s.cov = MatrixXd::Identity(2, 2);
  CHECK_NOTHROW(s.validate());
  s.cov(0, 0) = -1.0;
  CHECK_THROWS_AS(s.validate(), DomainError);
}
