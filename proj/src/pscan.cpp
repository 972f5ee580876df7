#include "acssm/pscan.hpp"

#include <cmath>
#include <thread>

namespace acssm {

ScanElement combine(const ScanElement& s, const ScanElement& t) {
  if (s.scale.size() != t.scale.size()) throw DomainError("combine: dimension mismatch");
  ScanElement out;
  out.scale = t.scale.cwiseProduct(s.scale);
  out.offset = t.scale.cwiseProduct(s.offset) + t.offset;
  return out;
}

ScanElements build_elements(const PiecewiseControl& control) {
  control.validate();
  ScanElements out;
  const int k = control.grid.n_intervals();
  out.mean.reserve(k);
  out.cov.reserve(k);
  const double s2 = control.sigma * control.sigma;
  for (int i = 0; i < k; ++i) {
    const VectorXd& lam = control.op.spectrum(i);
    const VectorXd a_hat = control.op.to_eigenbasis(control.offsets[static_cast<size_t>(i)]);
    const double dt = control.grid.delta(i);
    const int d = static_cast<int>(lam.size());
    ScanElement m, c;
    m.scale.resize(d); m.offset.resize(d);
    c.scale.resize(d); c.offset.resize(d);
    for (int j = 0; j < d; ++j) {
      const double x = lam[j] * dt;
      m.scale[j] = std::exp(-x);
      m.offset[j] = phi1(x) * dt * a_hat[j];
      c.scale[j] = std::exp(-2.0 * x);
      c.offset[j] = s2 * dt * phi1(2.0 * x);
    }
    out.mean.push_back(std::move(m));
    out.cov.push_back(std::move(c));
  }
  return out;
}

std::vector<ScanElement> sequential_scan(const std::vector<ScanElement>& elems) {
  if (elems.empty()) throw DomainError("scan: empty input");
  std::vector<ScanElement> out;
  out.reserve(elems.size());
  out.push_back(elems[0]);
  for (size_t i = 1; i < elems.size(); ++i) out.push_back(combine(out.back(), elems[i]));
  return out;
}

namespace {

// Apply fn(j) for j in [0, count) split across workers; the index->work mapping
// is fixed, only the partitioning varies, so results do not depend on workers.
template <typename Fn>
void for_each_indexed(std::int64_t count, int workers, Fn&& fn) {
  if (workers <= 1 || count < 256) {
    for (std::int64_t j = 0; j < count; ++j) fn(j);
    return;
  }
  const int w = workers;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(w));
  for (int t = 0; t < w; ++t) {
    const std::int64_t lo = count * t / w;
    const std::int64_t hi = count * (t + 1) / w;
    threads.emplace_back([lo, hi, &fn] {
      for (std::int64_t j = lo; j < hi; ++j) fn(j);
    });
  }
  for (auto& th : threads) th.join();
}

}  // namespace

std::vector<ScanElement> parallel_scan(const std::vector<ScanElement>& elems,
                                       int workers, int* depth_out) {
  if (elems.empty()) throw DomainError("parallel_scan: empty input");
  const int d = static_cast<int>(elems[0].scale.size());
  const std::int64_t k = static_cast<std::int64_t>(elems.size());
  int levels = 0;
  while ((std::int64_t{1} << levels) < k) ++levels;
  const std::int64_t n = std::int64_t{1} << levels;

  std::vector<ScanElement> work(static_cast<size_t>(n), ScanElement::identity(d));
  for (std::int64_t i = 0; i < k; ++i) work[static_cast<size_t>(i)] = elems[static_cast<size_t>(i)];

  int depth = 0;
  // up-sweep
  for (int lev = 0; lev < levels; ++lev) {
    const std::int64_t stride = std::int64_t{1} << (lev + 1);
    const std::int64_t half = std::int64_t{1} << lev;
    const std::int64_t count = n / stride;
    for_each_indexed(count, workers, [&](std::int64_t j) {
      const std::int64_t i = stride * j + stride - 1;
      work[static_cast<size_t>(i)] =
          combine(work[static_cast<size_t>(i - half)], work[static_cast<size_t>(i)]);
    });
    ++depth;
  }
  // down-sweep (exclusive scan)
  if (n > 0) work[static_cast<size_t>(n - 1)] = ScanElement::identity(d);
  for (int lev = levels - 1; lev >= 0; --lev) {
    const std::int64_t stride = std::int64_t{1} << (lev + 1);
    const std::int64_t half = std::int64_t{1} << lev;
    const std::int64_t count = n / stride;
    for_each_indexed(count, workers, [&](std::int64_t j) {
      const std::int64_t i = stride * j + stride - 1;
      ScanElement tmp = work[static_cast<size_t>(i - half)];
      work[static_cast<size_t>(i - half)] = work[static_cast<size_t>(i)];
      work[static_cast<size_t>(i)] = combine(work[static_cast<size_t>(i)], tmp);
    });
    ++depth;
  }
  // inclusive[i] = exclusive[i] (x) elems[i]
  std::vector<ScanElement> out(static_cast<size_t>(k), ScanElement::identity(d));
  for_each_indexed(k, workers, [&](std::int64_t i) {
    out[static_cast<size_t>(i)] =
        combine(work[static_cast<size_t>(i)], elems[static_cast<size_t>(i)]);
  });
  ++depth;

  if (depth_out) *depth_out = depth;
  return out;
}

MomentTrajectory moments_via_scan(const GaussianState& init,
                                  const PiecewiseControl& control, int workers) {
  control.validate();
  init.validate();
  if (init.dim() != control.dim()) throw DomainError("moments_via_scan: dim mismatch");

  MomentTrajectory traj;
  traj.grid = control.grid;
  traj.op = control.op;

  DiagGaussian s0;
  s0.mean = control.op.to_eigenbasis(init.mean);
  s0.var = control.op.cov_to_eigenbasis(init.cov).diagonal();
  traj.states.resize(static_cast<size_t>(control.grid.n_times()));
  traj.states[0] = s0;
  if (control.grid.n_intervals() == 0) return traj;

  ScanElements elems = build_elements(control);
  std::vector<ScanElement> mean_pre = parallel_scan(elems.mean, workers);
  std::vector<ScanElement> cov_pre = parallel_scan(elems.cov, workers);
  for (int i = 0; i < control.grid.n_intervals(); ++i) {
    DiagGaussian s;
    s.mean = mean_pre[static_cast<size_t>(i)].scale.cwiseProduct(s0.mean) +
             mean_pre[static_cast<size_t>(i)].offset;
    s.var = cov_pre[static_cast<size_t>(i)].scale.cwiseProduct(s0.var) +
            cov_pre[static_cast<size_t>(i)].offset;
    traj.states[static_cast<size_t>(i + 1)] = s;
  }
  return traj;
}

}  // namespace acssm
