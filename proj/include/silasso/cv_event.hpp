#pragma once

#include <silasso/homotopy.hpp>
#include <silasso/lasso.hpp>
#include <silasso/numerics.hpp>
#include <silasso/selective_inference.hpp>

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace silasso {

/// Quadratic on one piece, in the local coordinate t = z - z_lo.
struct QuadraticPiece {
    double z_lo = 0.0;
    double z_hi = 0.0;
    double q2 = 0.0;
    double q1 = 0.0;
    double q0 = 0.0;

    double at(double z) const
    {
        const double t = z - z_lo;
        return (q2 * t + q1) * t + q0;
    }
    /// Same quadratic re-expressed around a new origin.
    QuadraticPiece shifted(double new_lo, double new_hi) const;
};

/// Continuous piecewise-quadratic function of z over a window, pieces sorted
/// and tiling [front().z_lo, back().z_hi].
class PiecewiseQuadratic {
public:
    PiecewiseQuadratic() = default;
    explicit PiecewiseQuadratic(std::vector<QuadraticPiece> pieces);

    const std::vector<QuadraticPiece>& pieces() const { return pieces_; }
    std::vector<double> breakpoints() const;
    double operator()(double z) const;
    const QuadraticPiece& piece_at(double z) const;

    /// Largest jump between neighbouring pieces at their shared breakpoint,
    /// relative to 1 + |value|.
    double max_relative_jump() const;

    PiecewiseQuadratic operator+(const PiecewiseQuadratic& other) const;
    PiecewiseQuadratic operator-(const PiecewiseQuadratic& other) const;

private:
    std::vector<QuadraticPiece> pieces_;
};

/// Pieces of a and b cut to the union of their breakpoints.
std::vector<std::pair<QuadraticPiece, QuadraticPiece>> overlay(const PiecewiseQuadratic& a,
                                                               const PiecewiseQuadratic& b);

/// Tuning-parameter selection setup: candidate lambdas, validation folds
/// (training rows are the complement of each), and the selected lambda.
struct CvConfig {
    std::vector<double> lambda_grid;
    std::vector<IndexSet> folds;
    double lambda_obs = 0.0;

    void validate(int n) const;
    /// Random K-way partition of 0..n-1 from the seed; each fold sorted.
    static std::vector<IndexSet> kfold(int n, int k, std::uint64_t seed);
};

/// Validation error 1/2 ||y_val(z) - X_val beta(z)||^2 with beta(z) the
/// training-path solution along the training rows of the line.
PiecewiseQuadratic validation_error_curve(const Matrix& X_train, const Matrix& X_val,
                                          const ParamLine& train_line, const Vector& a_val,
                                          const Vector& b_val, double lambda, double delta,
                                          const PathOptions& options = {});

/// Sum over folds of the validation-error curves for one lambda.
PiecewiseQuadratic cv_error_curve(const ProblemData& data, const ParamLine& line,
                                  const std::vector<IndexSet>& folds, double lambda,
                                  int* segments_visited = nullptr, const PathOptions& options = {});

/// Summed validation error at the observed response for each lambda.
std::vector<double> cv_errors(const ProblemData& data, const std::vector<double>& lambda_grid,
                              const std::vector<IndexSet>& folds);

/// Index of the minimizer; exact ties (relative 1e-12) go to the smallest lambda.
std::size_t select_lambda_index(const std::vector<double>& errors, const std::vector<double>& lambda_grid);
double select_lambda(const ProblemData& data, const std::vector<double>& lambda_grid,
                     const std::vector<IndexSet>& folds);

/// {z : lambda_grid[obs] minimizes the curves at z}, using the same tie rule
/// as select_lambda_index.
IntervalUnion argmin_region(const std::vector<PiecewiseQuadratic>& curves,
                            const std::vector<double>& lambda_grid, std::size_t obs);

/// Selection event of the tuning step alone along the target line. Throws
/// SelectionMismatch when the rule does not pick lambda_obs at y_obs.
IntervalUnion cv_selection_region(const ProblemData& data, const TestTarget& target,
                                  const CvConfig& config, int* segments_visited = nullptr,
                                  const PathOptions& options = {});

/// TN-A region at lambda_obs on the full data intersected with the selection
/// event. `data.lambda` is ignored in favour of config.lambda_obs.
IntervalUnion region_with_cv(const ProblemData& data, const TestTarget& target,
                             const CvConfig& config, const IndexSet& active_obs,
                             const PathOptions& options = {});

/// Comparator that also conditions on the active set of every (lambda, fold)
/// training fit, in addition to the selection event.
IntervalUnion overconditioned_cv_region(const ProblemData& data, const TestTarget& target,
                                        const CvConfig& config, const PathOptions& options = {});

/// JSON dump: one object per lambda with pieces (z_lo, z_hi, q2, q1, q0).
void write_curves_json(std::ostream& out, const std::vector<PiecewiseQuadratic>& curves,
                       const std::vector<double>& lambda_grid);

} // namespace silasso
