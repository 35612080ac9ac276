#include <silasso/lasso.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace silasso {

namespace {

// Subgradient overshoot tolerated by the exact refinement before a
// coordinate is forced into the support. Well above rounding in X^T r / l1
// and well below the overshoot produced one nudge past a breakpoint.
constexpr double kViolationTol = 1e-11;
constexpr int kMaxRefineIters = 200;

double soft_threshold(double u, double t)
{
    if (u > t) return u - t;
    if (u < -t) return u + t;
    return 0.0;
}

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

} // namespace

void ProblemData::validate() const
{
    if (X.rows() < 1 || X.cols() < 1) {
        throw Error(ErrorKind::InvalidArgument, "design matrix must be non-empty");
    }
    if (y.size() != X.rows()) {
        throw Error(ErrorKind::InvalidArgument, "response length does not match design rows");
    }
    if (sigma.rows() != X.rows() || sigma.cols() != X.rows()) {
        throw Error(ErrorKind::InvalidArgument, "noise covariance must be n x n");
    }
    if (!(lambda >= 0.0) || !(delta >= 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "lambda and delta must be nonnegative");
    }
    if (!X.allFinite() || !y.allFinite() || !sigma.allFinite()) {
        throw Error(ErrorKind::InvalidArgument, "inputs must be finite");
    }
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * (1.0 + sigma.cwiseAbs().maxCoeff())) {
        throw Error(ErrorKind::InvalidArgument, "noise covariance must be symmetric");
    }
}

struct LassoSolver::Refined {
    IndexSet active;
    std::vector<int> signs;
    Vector beta;
    Vector correlation; // X^T (y - X beta), length p
};

LassoSolver::LassoSolver(const Matrix& X, double lambda, double delta, SolverOptions options)
    : X_(X), lambda_(lambda), delta_(delta), options_(options),
      gram_cache_(static_cast<std::size_t>(X.cols()))
{
    if (!(lambda >= 0.0) || !(delta >= 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "lambda and delta must be nonnegative");
    }
    const double n = static_cast<double>(X.rows());
    l1_ = delta > 0.0 ? n * lambda : lambda;
    ridge_ = delta > 0.0 ? n * delta : 0.0;
    if (lambda == 0.0 && delta == 0.0 && X.cols() > X.rows()) {
        throw Error(ErrorKind::ZeroLambda,
                    "lambda = 0 without ridge leaves the solution undefined for p > n");
    }
    col_sq_ = X.colwise().squaredNorm().transpose();
}

const Vector& LassoSolver::gram_column(int j) const
{
    auto& slot = gram_cache_[static_cast<std::size_t>(j)];
    if (!slot) slot = X_.transpose() * X_.col(j);
    return *slot;
}

Vector LassoSolver::coordinate_descent(const Vector& y, Vector beta, int& sweeps) const
{
    const int p = static_cast<int>(X_.cols());
    Vector grad = X_.transpose() * (y - X_ * beta);
    const double scale = 1.0 + y.norm();

    auto update = [&](int j) {
        const double denom = col_sq_[j] + ridge_;
        if (denom <= 0.0) return 0.0;
        const double old = beta[j];
        const double fresh = soft_threshold(grad[j] + col_sq_[j] * old, l1_) / denom;
        if (fresh == old) return 0.0;
        grad -= (fresh - old) * gram_column(j);
        beta[j] = fresh;
        return std::abs(fresh - old) * std::sqrt(col_sq_[j]);
    };

    while (sweeps < options_.max_sweeps) {
        double full_change = 0.0;
        IndexSet support;
        for (int j = 0; j < p; ++j) {
            full_change = std::max(full_change, update(j));
            if (beta[j] != 0.0) support.push_back(j);
        }
        ++sweeps;
        if (full_change <= options_.cd_tol * scale) return beta;
        // Iterate on the support until it settles, then re-check everything.
        while (sweeps < options_.max_sweeps) {
            double change = 0.0;
            for (int j : support) change = std::max(change, update(j));
            ++sweeps;
            if (change <= options_.cd_tol * scale) break;
        }
    }
    throw Error(ErrorKind::NoConvergence, "coordinate descent hit the sweep limit");
}

std::optional<LassoSolver::Refined> LassoSolver::refine(const Vector& y, IndexSet active,
                                                       std::vector<int> signs) const
{
    const int p = static_cast<int>(X_.cols());
    const Vector xty = X_.transpose() * y;
    std::set<std::vector<int>> seen;

    for (int iter = 0; iter < kMaxRefineIters; ++iter) {
        // Keep the support sorted together with its signs.
        std::vector<int> order(active.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return active[a] < active[b]; });
        IndexSet sorted_active;
        std::vector<int> sorted_signs;
        for (int k : order) {
            sorted_active.push_back(active[k]);
            sorted_signs.push_back(signs[k]);
        }
        active = std::move(sorted_active);
        signs = std::move(sorted_signs);
        std::vector<int> key;
        for (std::size_t k = 0; k < active.size(); ++k) key.push_back((active[k] + 1) * signs[k]);
        if (!seen.insert(std::move(key)).second) return std::nullopt;

        const auto m = static_cast<Eigen::Index>(active.size());
        Vector beta_a(m);
        Vector corr = xty;
        if (m > 0) {
            Matrix gram(m, m);
            Vector rhs(m);
            for (Eigen::Index k = 0; k < m; ++k) {
                const Vector& col = gram_column(active[k]);
                for (Eigen::Index i = 0; i < m; ++i) gram(i, k) = col[active[i]];
                rhs[k] = xty[active[k]] - l1_ * signs[k];
            }
            gram.diagonal().array() += ridge_;
            try {
                beta_a = SpdFactor(gram).solve(rhs);
            } catch (const Error&) {
                return std::nullopt;
            }
            for (Eigen::Index k = 0; k < m; ++k) corr -= beta_a[k] * gram_column(active[k]);
        }

        // Drop every coordinate whose sign disagrees with its prescription.
        IndexSet kept;
        std::vector<int> kept_signs;
        for (Eigen::Index k = 0; k < m; ++k) {
            if (signs[k] * beta_a[k] > 0.0) {
                kept.push_back(active[k]);
                kept_signs.push_back(signs[k]);
            }
        }
        if (kept.size() != active.size()) {
            active = std::move(kept);
            signs = std::move(kept_signs);
            continue;
        }

        // Admit the worst subgradient violator, if any.
        std::vector<char> in_active(static_cast<std::size_t>(p), 0);
        for (int j : active) in_active[j] = 1;
        int worst = -1;
        double worst_excess = 0.0;
        for (int j = 0; j < p; ++j) {
            if (in_active[j] || col_sq_[j] == 0.0) continue;
            const double excess = l1_ > 0.0 ? std::abs(corr[j]) / l1_ - 1.0
                                            : std::abs(corr[j]) / (1.0 + xty.norm());
            const double tol = l1_ > 0.0 ? kViolationTol : 1e-13;
            if (excess > tol && excess > worst_excess) {
                worst = j;
                worst_excess = excess;
            }
        }
        if (worst >= 0) {
            active.push_back(worst);
            signs.push_back(sign_of(corr[worst]));
            continue;
        }

        Vector beta = Vector::Zero(p);
        for (Eigen::Index k = 0; k < m; ++k) beta[active[k]] = beta_a[k];
        return Refined{std::move(active), std::move(signs), std::move(beta), std::move(corr)};
    }
    return std::nullopt;
}

LassoSolution LassoSolver::finish(const Vector& y, Vector beta, int sweeps) const
{
    IndexSet seed;
    std::vector<int> seed_signs;
    for (int j = 0; j < beta.size(); ++j) {
        if (std::abs(beta[j]) > options_.active_tol) {
            seed.push_back(j);
            seed_signs.push_back(sign_of(beta[j]));
        }
    }
    auto refined = refine(y, seed, seed_signs);
    if (!refined) {
        // Retry from the exact CD support before giving up on refinement.
        seed.clear();
        seed_signs.clear();
        for (int j = 0; j < beta.size(); ++j) {
            if (beta[j] != 0.0) {
                seed.push_back(j);
                seed_signs.push_back(sign_of(beta[j]));
            }
        }
        refined = refine(y, seed, seed_signs);
    }
    return build(y, refined ? &*refined : nullptr, std::move(beta), sweeps);
}

LassoSolution LassoSolver::build(const Vector& y, Refined* refined, Vector beta, int sweeps) const
{
    LassoSolution sol;
    sol.sweeps = sweeps;
    Vector corr;
    if (refined) {
        sol.beta = std::move(refined->beta);
        sol.active = std::move(refined->active);
        sol.signs_active = std::move(refined->signs);
        corr = std::move(refined->correlation);
    } else {
        sol.beta = std::move(beta);
        for (int j = 0; j < sol.beta.size(); ++j) {
            if (std::abs(sol.beta[j]) > options_.active_tol) {
                sol.active.push_back(j);
                sol.signs_active.push_back(sign_of(sol.beta[j]));
            } else {
                sol.beta[j] = 0.0;
            }
        }
        corr = X_.transpose() * (y - X_ * sol.beta);
    }
    const int p = static_cast<int>(X_.cols());
    sol.inactive = complement(sol.active, p);
    sol.subgrad_inactive.resize(static_cast<Eigen::Index>(sol.inactive.size()));
    for (std::size_t k = 0; k < sol.inactive.size(); ++k) {
        const int j = sol.inactive[k];
        sol.subgrad_inactive[static_cast<Eigen::Index>(k)] = l1_ > 0.0 ? corr[j] / l1_ : 0.0;
    }

    // Duality gap of the unscaled problem, via the ridge-augmented Lasso dual.
    const Vector resid = y - X_ * sol.beta;
    const double l1_norm = sol.beta.lpNorm<1>();
    const double sq_beta = sol.beta.squaredNorm();
    const double primal = 0.5 * resid.squaredNorm() + l1_ * l1_norm + 0.5 * ridge_ * sq_beta;
    const Vector dual_corr = X_.transpose() * resid - ridge_ * sol.beta;
    const double dual_max = dual_corr.size() > 0 ? dual_corr.cwiseAbs().maxCoeff() : 0.0;
    double scale = 1.0;
    if (l1_ > 0.0 && dual_max > l1_) scale = l1_ / dual_max;
    const double dual = 0.5 * y.squaredNorm() - 0.5 * (y - scale * resid).squaredNorm() -
                        0.5 * scale * scale * ridge_ * sq_beta;
    const double norm = delta_ > 0.0 ? static_cast<double>(X_.rows()) : 1.0;
    sol.duality_gap = std::max(0.0, primal - dual) / norm;
    sol.objective = primal / norm;

    if (sol.duality_gap > options_.gap_tol * (1.0 + sol.objective)) {
        throw Error(ErrorKind::NoConvergence, "duality gap did not close");
    }
    return sol;
}

LassoSolution LassoSolver::solve(const Vector& y, const WarmStart* warm) const
{
    if (y.size() != X_.rows()) {
        throw Error(ErrorKind::InvalidArgument, "response length does not match design rows");
    }
    if (warm && warm->active.size() == warm->signs.size()) {
        if (auto refined = refine(y, warm->active, warm->signs)) {
            try {
                return build(y, &*refined, Vector(), 0);
            } catch (const Error&) {
                // fall through to a full solve
            }
        }
    }
    int sweeps = 0;
    Vector start = Vector::Zero(X_.cols());
    if (warm && warm->beta.size() == X_.cols()) start = warm->beta;
    Vector beta = coordinate_descent(y, std::move(start), sweeps);
    return finish(y, std::move(beta), sweeps);
}

double LassoSolver::stationarity_residual(const Vector& y, const LassoSolution& sol) const
{
    Vector s = Vector::Zero(X_.cols());
    for (std::size_t k = 0; k < sol.active.size(); ++k) s[sol.active[k]] = sol.signs_active[k];
    for (std::size_t k = 0; k < sol.inactive.size(); ++k) {
        s[sol.inactive[k]] = sol.subgrad_inactive[static_cast<Eigen::Index>(k)];
    }
    const Vector r = X_.transpose() * (X_ * sol.beta - y) + l1_ * s + ridge_ * sol.beta;
    return r.size() > 0 ? r.cwiseAbs().maxCoeff() : 0.0;
}

LassoSolution solve_lasso(const ProblemData& data, const SolverOptions& options)
{
    if (data.delta != 0.0) {
        throw Error(ErrorKind::InvalidArgument, "solve_lasso expects delta == 0");
    }
    LassoSolver solver(data.X, data.lambda, 0.0, options);
    return solver.solve(data.y);
}

LassoSolution solve_elastic_net(const ProblemData& data, const SolverOptions& options)
{
    if (!(data.delta > 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "solve_elastic_net expects delta > 0");
    }
    LassoSolver solver(data.X, data.lambda, data.delta, options);
    return solver.solve(data.y);
}

Matrix select_columns(const Matrix& X, const IndexSet& idx)
{
    Matrix out(X.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = X.col(idx[k]);
    return out;
}

IndexSet complement(const IndexSet& set, int p)
{
    IndexSet out;
    std::size_t k = 0;
    for (int j = 0; j < p; ++j) {
        if (k < set.size() && set[k] == j) {
            ++k;
        } else {
            out.push_back(j);
        }
    }
    return out;
}

Vector least_squares_on(const IndexSet& active, const Matrix& X, const Vector& y)
{
    const Matrix xa = select_columns(X, active);
    return solve_spd(xa.transpose() * xa, xa.transpose() * y);
}

} // namespace silasso
