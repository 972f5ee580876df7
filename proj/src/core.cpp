#include "acssm/core.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>

namespace acssm {

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.empty()) throw DomainError("TimeGrid: needs at least one timestamp");
  if (!(times_.front() >= 0.0)) throw DomainError("TimeGrid: t_0 must be >= 0");
  for (size_t i = 0; i < times_.size(); ++i) {
    if (!std::isfinite(times_[i])) throw DomainError("TimeGrid: non-finite timestamp");
    if (i > 0 && !(times_[i] > times_[i - 1]))
      throw DomainError("TimeGrid: timestamps must be strictly increasing");
  }
}

int TimeGrid::interval_of(double t) const {
  if (n_intervals() == 0 || t < times_.front() || t > times_.back())
    throw DomainError("TimeGrid: t outside [t_0, T]");
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  int i = static_cast<int>(it - times_.begin()) - 1;
  return std::min(i, n_intervals() - 1);
}

void ObservationSeq::validate() const {
  if (values.rows() != grid.n_times() || mask.rows() != grid.n_times())
    throw DomainError("ObservationSeq: one row per timestamp required");
  if (mask.cols() != values.cols()) throw DomainError("ObservationSeq: mask/value shape mismatch");
  if (obs_noise.size() != values.cols()) throw DomainError("ObservationSeq: obs_noise dim mismatch");
  if ((obs_noise.array() <= 0.0).any()) throw DomainError("ObservationSeq: obs_noise must be > 0");
  for (int i = 0; i < values.rows(); ++i)
    for (int j = 0; j < values.cols(); ++j)
      if (mask(i, j) && !std::isfinite(values(i, j)))
        throw DomainError("ObservationSeq: non-finite observed value");
}

void GaussianState::validate() const {
  if (!mean.allFinite()) throw DomainError("GaussianState: non-finite mean");
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw DomainError("GaussianState: cov shape mismatch");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw DomainError("GaussianState: cov not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  if (es.eigenvalues().minCoeff() < -1e-9) throw DomainError("GaussianState: cov not PSD");
}

SpdOperator::SpdOperator(MatrixXd basis, std::vector<VectorXd> spectra)
    : basis_(std::move(basis)), spectra_(std::move(spectra)) {
  const int d = static_cast<int>(basis_.rows());
  if (basis_.cols() != d) throw DomainError("SpdOperator: basis must be square");
  MatrixXd gram = basis_.transpose() * basis_ - MatrixXd::Identity(d, d);
  if (gram.norm() > 1e-10) throw DomainError("SpdOperator: basis not orthonormal");
  for (const auto& lam : spectra_) {
    if (lam.size() != d) throw DomainError("SpdOperator: spectrum dim mismatch");
    if ((lam.array() < 0.0).any()) throw DomainError("SpdOperator: negative spectrum entry");
  }
}

MatrixXd SpdOperator::matrix(int i) const {
  return basis_ * spectrum(i).asDiagonal() * basis_.transpose();
}

VectorXd SpdOperator::to_eigenbasis(const VectorXd& v) const {
  if (v.size() != dim()) throw DomainError("to_eigenbasis: dimension mismatch");
  return basis_.transpose() * v;
}

VectorXd SpdOperator::from_eigenbasis(const VectorXd& v) const {
  if (v.size() != dim()) throw DomainError("from_eigenbasis: dimension mismatch");
  return basis_ * v;
}

MatrixXd SpdOperator::cov_to_eigenbasis(const MatrixXd& s) const {
  if (s.rows() != dim() || s.cols() != dim())
    throw DomainError("cov_to_eigenbasis: dimension mismatch");
  MatrixXd out = basis_.transpose() * s * basis_;
  return 0.5 * (out + out.transpose());
}

MatrixXd SpdOperator::cov_from_eigenbasis(const MatrixXd& s) const {
  if (s.rows() != dim() || s.cols() != dim())
    throw DomainError("cov_from_eigenbasis: dimension mismatch");
  MatrixXd out = basis_ * s * basis_.transpose();
  return 0.5 * (out + out.transpose());
}

SpdOperator make_spd(const MatrixXd& skew_params,
                     const std::vector<VectorXd>& spectrum_params, double eps) {
  if (!skew_params.allFinite()) throw DomainError("make_spd: non-finite basis parameters");
  MatrixXd skew = 0.5 * (skew_params - skew_params.transpose());
  MatrixXd basis = skew.exp();
  std::vector<VectorXd> spectra;
  spectra.reserve(spectrum_params.size());
  for (const auto& p : spectrum_params) {
    if (!p.allFinite()) throw DomainError("make_spd: non-finite spectrum parameters");
    spectra.push_back((p.array().exp() + eps).matrix());
  }
  return SpdOperator(std::move(basis), std::move(spectra));
}

void PiecewiseControl::validate() const {
  if (op.n_intervals() != grid.n_intervals())
    throw DomainError("PiecewiseControl: one spectrum per interval required");
  if (static_cast<int>(offsets.size()) != grid.n_intervals())
    throw DomainError("PiecewiseControl: one offset per interval required");
  for (const auto& a : offsets)
    if (a.size() != op.dim() || !a.allFinite())
      throw DomainError("PiecewiseControl: bad offset");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw DomainError("PiecewiseControl: sigma must be positive and finite");
}

}  // namespace acssm
