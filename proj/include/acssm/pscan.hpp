#pragma once

#include <vector>

#include "acssm/core.hpp"
#include "acssm/moments.hpp"

namespace acssm {

// Element of the affine-map monoid x -> scale .* x + offset (per dimension).
struct ScanElement {
  VectorXd scale;
  VectorXd offset;

  static ScanElement identity(int d) {
    return {VectorXd::Ones(d), VectorXd::Zero(d)};
  }
};

// Composition "s then t": (t.scale .* s.scale, t.scale .* s.offset + t.offset)
ScanElement combine(const ScanElement& s, const ScanElement& t);

struct ScanElements {
  std::vector<ScanElement> mean;  // (e^{-lam dt}, phi1(lam dt) dt alpha_hat)
  std::vector<ScanElement> cov;   // (e^{-2 lam dt}, sigma^2 dt phi1(2 lam dt))
};

// One element per control interval, in the eigenbasis.
ScanElements build_elements(const PiecewiseControl& control);

// Inclusive prefix scan over the monoid with a fixed Blelloch reduction tree,
// so results are bit-identical for any worker count. Counts the number of
// sequential combine layers (span) when depth_out is given.
std::vector<ScanElement> parallel_scan(const std::vector<ScanElement>& elems,
                                       int workers = 1, int* depth_out = nullptr);

std::vector<ScanElement> sequential_scan(const std::vector<ScanElement>& elems);

// Same contract as propagate_sequential, computed via the parallel scan.
MomentTrajectory moments_via_scan(const GaussianState& init,
                                  const PiecewiseControl& control, int workers = 1);

}  // namespace acssm
