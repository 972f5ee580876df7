#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "acssm/random.hpp"

namespace acssm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Strictly increasing timestamps t_0 < t_1 < ... < t_k, t_0 >= 0.
// Grid intervals are right-open: [t_{i-1}, t_i).
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> times);

  int n_times() const { return static_cast<int>(times_.size()); }
  int n_intervals() const { return n_times() - 1; }
  double time(int i) const { return times_[static_cast<size_t>(i)]; }
  double delta(int i) const { return times_[i + 1] - times_[i]; }  // interval i: [t_i, t_{i+1})
  double horizon() const { return times_.back(); }
  const std::vector<double>& times() const { return times_; }

  // Index i of the interval [t_i, t_{i+1}) containing t; t == horizon maps to
  // the last interval. Throws if t is outside [t_0, T].
  int interval_of(double t) const;

 private:
  std::vector<double> times_;
};

// Per-timestamp observation vectors with a boolean mask (true = observed) and
// diagonal emission variances. One row per grid timestamp.
struct ObservationSeq {
  TimeGrid grid;
  MatrixXd values;                      // n_times x m
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;  // n_times x m
  VectorXd obs_noise;                   // m, diagonal emission variance, > 0

  void validate() const;
  int obs_dim() const { return static_cast<int>(values.cols()); }
  bool any_observed(int i) const { return mask.row(i).any(); }
};

struct GaussianState {
  VectorXd mean;
  MatrixXd cov;  // symmetric PSD, standard basis

  void validate() const;
  int dim() const { return static_cast<int>(mean.size()); }
};

// Shared orthonormal eigenbasis E with one nonnegative spectrum per interval,
// representing A_i = E diag(spectrum_i) E^T.
class SpdOperator {
 public:
  SpdOperator() = default;
  SpdOperator(MatrixXd basis, std::vector<VectorXd> spectra);

  int dim() const { return static_cast<int>(basis_.rows()); }
  int n_intervals() const { return static_cast<int>(spectra_.size()); }
  const MatrixXd& basis() const { return basis_; }
  const VectorXd& spectrum(int i) const { return spectra_[static_cast<size_t>(i)]; }
  const std::vector<VectorXd>& spectra() const { return spectra_; }
  MatrixXd matrix(int i) const;  // E D_i E^T

  VectorXd to_eigenbasis(const VectorXd& v) const;
  VectorXd from_eigenbasis(const VectorXd& v) const;
  MatrixXd cov_to_eigenbasis(const MatrixXd& s) const;
  MatrixXd cov_from_eigenbasis(const MatrixXd& s) const;

 private:
  MatrixXd basis_;
  std::vector<VectorXd> spectra_;
};

// Orthonormalize via the matrix exponential of a skew-symmetric parameter and
// map spectrum parameters through lambda = exp(p) + eps (strictly positive).
SpdOperator make_spd(const MatrixXd& skew_params,
                     const std::vector<VectorXd>& spectrum_params,
                     double eps = 1e-6);

// Piecewise-constant affine control: per interval [t_{i-1}, t_i) the latent SDE
// is dX = [-A_i X + alpha_i] dt + sigma dW with A_i = E D_i E^T.
struct PiecewiseControl {
  TimeGrid grid;
  SpdOperator op;
  std::vector<VectorXd> offsets;  // standard basis, one per interval
  double sigma = 1.0;

  void validate() const;
  int dim() const { return op.dim(); }
};

}  // namespace acssm
