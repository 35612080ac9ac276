#pragma once

// Brute-force verifiers for the test suite. Deliberately naive: nothing here
// uses the path tracer or the region builders, only the Lasso solver and the
// basic numerics.

#include <silasso/homotopy.hpp>
#include <silasso/lasso.hpp>
#include <silasso/numerics.hpp>

#include <vector>

namespace silasso::oracle {

struct GridPoint {
    double z;
    IndexSet active;
    std::vector<int> signs;
};

/// Direct solve at z_min, z_min + step, ... up to z_max.
std::vector<GridPoint> grid_path(const Matrix& X, double lambda, double delta,
                                 const ParamLine& line, double step);

/// Locates the pattern change between two grid points by bisection on fresh
/// solves, to within tol.
double bisect_breakpoint(const Matrix& X, double lambda, double delta, const ParamLine& line,
                         double z_left, double z_right, double tol);

enum class SignMode { ExactActive, ExactActiveAndSigns };

/// Union over sign vectors of the line slices of the KKT polytopes of the
/// Lasso (delta = 0) for the given active set, clipped to the line window.
IntervalUnion sign_enum_region(const Matrix& X, double lambda, const IndexSet& active_obs,
                               const std::vector<int>& signs_obs, const ParamLine& line,
                               SignMode mode);

/// Number of sign vectors whose polytope meets the line window.
int count_sign_polytopes(const Matrix& X, double lambda, const IndexSet& active_obs,
                         const ParamLine& line);

inline constexpr int kMaxEnumeratedActive = 12;

/// Truncated-normal cdf by adaptive Simpson quadrature of the density.
double quadrature_cdf(const TruncatedNormal& dist, double x);

} // namespace silasso::oracle
