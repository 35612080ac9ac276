#pragma once

#include <silasso/numerics.hpp>

#include <optional>
#include <vector>

namespace silasso {

/// Regression problem. With delta == 0 the objective is the plain Lasso
///
///     1/2 ||y - X b||^2 + lambda ||b||_1,
///
/// and with delta > 0 it is the elastic net in its per-sample scaling
///
///     1/(2n) ||y - X b||^2 + lambda ||b||_1 + delta/2 ||b||^2.
///
/// The two lambdas therefore live on different scales (a factor n apart).
struct ProblemData {
    Matrix X;
    Vector y;
    Matrix sigma;
    double lambda = 1.0;
    double delta = 0.0;

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }
    void validate() const;
};

struct LassoSolution {
    Vector beta;
    IndexSet active;
    std::vector<int> signs_active;
    IndexSet inactive;
    Vector subgrad_inactive;
    double duality_gap = 0.0;
    double objective = 0.0;
    int sweeps = 0;
};

struct SolverOptions {
    int max_sweeps = 100000;
    double active_tol = 1e-9;
    double kkt_tol = 1e-8;
    double gap_tol = 1e-10;
    double cd_tol = 1e-12;
};

/// Optional hint for a solve: a predicted active set with signs, and/or a
/// starting coefficient vector for coordinate descent.
struct WarmStart {
    Vector beta;
    IndexSet active;
    std::vector<int> signs;
};

/// Lasso / elastic-net solver bound to one design. Solves are exact up to
/// rounding: coordinate descent locates the support, then the stationarity
/// system on that support is solved directly and the active set is adjusted
/// until every sign and subgradient bound holds.
///
/// An instance caches Gram columns and is not meant to be shared between
/// threads; create one per worker.
class LassoSolver {
public:
    LassoSolver(const Matrix& X, double lambda, double delta, SolverOptions options = {});

    LassoSolution solve(const Vector& y, const WarmStart* warm = nullptr) const;

    const Matrix& design() const { return X_; }
    double lambda() const { return lambda_; }
    double delta() const { return delta_; }
    const SolverOptions& options() const { return options_; }

    /// Weight of the l1 term once the objective is multiplied through by n
    /// when delta > 0 (so the quadratic part is always 1/2 ||y - X b||^2).
    double l1_weight() const { return l1_; }
    double ridge_weight() const { return ridge_; }

    /// Stationarity residual ||X^T (X b - y) + l1 s + ridge b||_inf in the
    /// unscaled form, with s_j = sign(b_j) on the support and the stored
    /// subgradient elsewhere.
    double stationarity_residual(const Vector& y, const LassoSolution& sol) const;

    /// Column j of X^T X, computed on first use.
    const Vector& gram_column(int j) const;

private:
    struct Refined;

    std::optional<Refined> refine(const Vector& y, IndexSet active,
                                  std::vector<int> signs) const;
    Vector coordinate_descent(const Vector& y, Vector beta, int& sweeps) const;
    LassoSolution finish(const Vector& y, Vector beta, int sweeps) const;
    LassoSolution build(const Vector& y, Refined* refined, Vector beta, int sweeps) const;

    const Matrix& X_;
    double lambda_;
    double delta_;
    double l1_;
    double ridge_;
    SolverOptions options_;
    Vector col_sq_;
    mutable std::vector<std::optional<Vector>> gram_cache_;
};

LassoSolution solve_lasso(const ProblemData& data, const SolverOptions& options = {});
LassoSolution solve_elastic_net(const ProblemData& data, const SolverOptions& options = {});

/// Ordinary least squares restricted to the given columns.
Vector least_squares_on(const IndexSet& active, const Matrix& X, const Vector& y);

/// Columns of X listed in idx, in that order.
Matrix select_columns(const Matrix& X, const IndexSet& idx);

IndexSet complement(const IndexSet& set, int p);

} // namespace silasso
