#include <doctest.h>

#include <silasso/lasso.hpp>

#include "test_support.hpp"

#include <cmath>
#include <random>

using namespace silasso;

namespace {

double soft(double v, double t) { return std::copysign(std::max(std::abs(v) - t, 0.0), v); }

// Proximal gradient (ISTA with fixed step 1/L), run long enough to be exact to
// rounding on small problems. Objective scaling as the solver: 1/2||r||^2 +
// l1 ||b||_1 + ridge/2 ||b||^2.
Vector ista(const Matrix& X, const Vector& y, double l1, double ridge, int iters)
{
    const double lip = Eigen::SelfAdjointEigenSolver<Matrix>(X.transpose() * X)
                           .eigenvalues()
                           .maxCoeff() +
                       ridge;
    Vector b = Vector::Zero(X.cols());
    for (int it = 0; it < iters; ++it) {
        const Vector grad = X.transpose() * (X * b - y) + ridge * b;
        const Vector u = b - grad / lip;
        for (Eigen::Index j = 0; j < b.size(); ++j) b[j] = soft(u[j], l1 / lip);
    }
    return b;
}

double lasso_objective(const Matrix& X, const Vector& y, const Vector& b, double lambda)
{
    return 0.5 * (y - X * b).squaredNorm() + lambda * b.lpNorm<1>();
}

void check_kkt(const Matrix& X, const Vector& y, const LassoSolution& sol, double l1, double ridge)
{
    const SolverOptions opt;
    const Vector grad = X.transpose() * (X * sol.beta - y) + ridge * sol.beta;
    for (std::size_t k = 0; k < sol.active.size(); ++k) {
        const int j = sol.active[k];
        CHECK(sol.beta[j] != 0.0);
        CHECK(sol.signs_active[k] == (sol.beta[j] > 0 ? 1 : -1));
        CHECK(std::abs(grad[j] + l1 * sol.signs_active[k]) <= opt.kkt_tol);
    }
    for (std::size_t k = 0; k < sol.inactive.size(); ++k) {
        const int j = sol.inactive[k];
        CHECK(sol.beta[j] == 0.0);
        const double s = sol.subgrad_inactive[static_cast<Eigen::Index>(k)];
        CHECK(std::abs(s) <= 1.0 + opt.kkt_tol);
        CHECK(std::abs(grad[j] + l1 * s) <= opt.kkt_tol);
    }
}

} // namespace

TEST_CASE("solve_lasso: lambda above max correlation gives zero")
{
    std::mt19937_64 rng(10);
    ProblemData d;
    d.X = testing::gaussian_matrix(rng, 12, 6);
    d.y = testing::gaussian_vector(rng, 12);
    d.lambda = (d.X.transpose() * d.y).cwiseAbs().maxCoeff() * 1.0001;
    const LassoSolution sol = solve_lasso(d);
    CHECK(sol.active.empty());
    CHECK(sol.beta.cwiseAbs().maxCoeff() == 0.0);
    CHECK(sol.inactive.size() == 6);
}

TEST_CASE("solve_lasso: orthonormal design is soft thresholding")
{
    ProblemData d;
    d.X = Matrix::Identity(3, 3);
    d.y = Vector(3);
    d.y << 3.0, 0.5, -2.0;
    d.lambda = 1.0;
    const LassoSolution sol = solve_lasso(d);
    CHECK(sol.beta[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(sol.beta[1] == 0.0);
    CHECK(sol.beta[2] == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(sol.active == IndexSet{0, 2});
    CHECK(sol.signs_active == std::vector<int>{1, -1});
    REQUIRE(sol.inactive == IndexSet{1});
    CHECK(sol.subgrad_inactive[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("solve_lasso: objective agrees with proximal-gradient oracle")
{
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 10; ++rep) {
        ProblemData d;
        d.X = testing::gaussian_matrix(rng, 10, 5);
        d.y = testing::gaussian_vector(rng, 10) * 2.0;
        d.lambda = 1.0;
        const LassoSolution sol = solve_lasso(d);
        const Vector ref = ista(d.X, d.y, d.lambda, 0.0, 200000);
        const double f_ref = lasso_objective(d.X, d.y, ref, d.lambda);
        CHECK(std::abs(sol.objective - f_ref) <= 1e-7);
        CHECK(sol.objective <= f_ref + 1e-12);
        CHECK(sol.duality_gap <= 1e-10 * (1.0 + sol.objective));
        check_kkt(d.X, d.y, sol, d.lambda, 0.0);
    }
}

TEST_CASE("solve_lasso: KKT certificate on random p > n problems")
{
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        ProblemData d;
        d.X = testing::gaussian_matrix(rng, 15, 30);
        d.y = testing::gaussian_vector(rng, 15) * 3.0;
        d.lambda = 0.5 + rep * 0.2;
        const LassoSolution sol = solve_lasso(d);
        check_kkt(d.X, d.y, sol, d.lambda, 0.0);
        LassoSolver solver(d.X, d.lambda, 0.0);
        CHECK(solver.stationarity_residual(d.y, sol) <= 1e-8);
    }
}

TEST_CASE("solve_lasso: zero lambda with p > n is rejected")
{
    std::mt19937_64 rng(13);
    ProblemData d;
    d.X = testing::gaussian_matrix(rng, 4, 6);
    d.y = testing::gaussian_vector(rng, 4);
    d.lambda = 0.0;
    try {
        solve_lasso(d);
        FAIL("expected ZeroLambda");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ZeroLambda);
    }
}

TEST_CASE("solve_lasso: support shrinks with lambda on orthonormal designs")
{
    std::mt19937_64 rng(14);
    const Matrix q = Eigen::HouseholderQR<Matrix>(testing::gaussian_matrix(rng, 12, 12))
                         .householderQ() *
                     Matrix::Identity(12, 6);
    ProblemData d;
    d.X = q;
    d.y = testing::gaussian_vector(rng, 12) * 2.0;
    IndexSet previous;
    bool first = true;
    for (double lambda = 0.05; lambda < 4.0; lambda *= 1.3) {
        d.lambda = lambda;
        const LassoSolution sol = solve_lasso(d);
        const Vector xty = q.transpose() * d.y;
        IndexSet expected;
        for (int j = 0; j < 6; ++j) {
            CHECK(std::abs(sol.beta[j] - soft(xty[j], lambda)) <= 1e-10);
            if (std::abs(xty[j]) > lambda) expected.push_back(j);
        }
        CHECK(sol.active == expected);
        if (!first) {
            CHECK(std::includes(previous.begin(), previous.end(), sol.active.begin(),
                                sol.active.end()));
        }
        previous = sol.active;
        first = false;
    }
}

TEST_CASE("solve_elastic_net: zero solution and scalar closed form")
{
    std::mt19937_64 rng(15);
    ProblemData d;
    d.X = testing::gaussian_matrix(rng, 20, 5);
    d.y = testing::gaussian_vector(rng, 20);
    d.delta = 0.3;
    d.lambda = (d.X.transpose() * d.y).cwiseAbs().maxCoeff() / 20.0 * 1.0001;
    CHECK(solve_elastic_net(d).active.empty());

    ProblemData s;
    s.X = Matrix::Ones(1, 1);
    s.delta = 0.5;
    s.lambda = 0.7;
    for (double y : {-3.0, -0.2, 0.4, 2.5}) {
        s.y = Vector::Constant(1, y);
        const LassoSolution sol = solve_elastic_net(s);
        CHECK(sol.beta[0] == doctest::Approx(soft(y, 0.7) / 1.5).epsilon(1e-13));
    }
}

TEST_CASE("solve_elastic_net: stationarity on wide random designs")
{
    std::mt19937_64 rng(16);
    for (int rep = 0; rep < 10; ++rep) {
        ProblemData d;
        d.X = testing::gaussian_matrix(rng, 20, 40);
        d.y = testing::gaussian_vector(rng, 20) * 2.0;
        d.lambda = 0.1;
        d.delta = 0.1;
        const LassoSolution sol = solve_elastic_net(d);
        LassoSolver solver(d.X, d.lambda, d.delta);
        CHECK(solver.stationarity_residual(d.y, sol) <= 1e-8);
        check_kkt(d.X, d.y, sol, solver.l1_weight(), solver.ridge_weight());
    }
}

TEST_CASE("solve_elastic_net: duplicated columns are fine")
{
    std::mt19937_64 rng(17);
    Matrix base = testing::gaussian_matrix(rng, 15, 4);
    Matrix x(15, 6);
    x << base, base.col(0), base.col(2);
    ProblemData d;
    d.X = x;
    d.y = base * Vector::Ones(4) + testing::gaussian_vector(rng, 15);
    d.lambda = 0.05;
    d.delta = 0.2;
    const LassoSolution sol = solve_elastic_net(d);
    CHECK(std::abs(sol.beta[0] - sol.beta[4]) <= 1e-9);
    CHECK(std::abs(sol.beta[2] - sol.beta[5]) <= 1e-9);
}

TEST_CASE("solve_elastic_net approaches the Lasso as delta shrinks")
{
    std::mt19937_64 rng(18);
    ProblemData d;
    d.X = testing::gaussian_matrix(rng, 30, 8);
    d.y = testing::gaussian_vector(rng, 30) * 2.0;
    d.lambda = 0.1;
    // Same problem on the Lasso scale: l1 weight n * lambda.
    ProblemData plain = d;
    plain.lambda = 30 * d.lambda;
    const Vector beta0 = solve_lasso(plain).beta;
    double previous = kInf;
    for (double delta : {1e-2, 1e-4, 1e-6}) {
        d.delta = delta;
        const double diff = (solve_elastic_net(d).beta - beta0).cwiseAbs().maxCoeff();
        CHECK(diff <= previous + 1e-10);
        previous = diff;
    }
    CHECK(previous <= 1e-5);
}

TEST_CASE("least_squares_on: projections and normal equations")
{
    std::mt19937_64 rng(19);
    Matrix x = testing::gaussian_matrix(rng, 15, 6);
    const Vector y = testing::gaussian_vector(rng, 15);

    Matrix unit = x;
    unit.col(2).normalize();
    const Vector one = least_squares_on({2}, unit, y);
    CHECK(one[0] == doctest::Approx(unit.col(2).dot(y)).epsilon(1e-13));

    const Matrix q = Eigen::HouseholderQR<Matrix>(x).householderQ() * Matrix::Identity(15, 6);
    const Vector orth = least_squares_on({0, 3, 5}, q, y);
    CHECK(std::abs(orth[1] - q.col(3).dot(y)) <= 1e-12);

    const IndexSet active{0, 1, 3, 4};
    const Vector coef = least_squares_on(active, x, y);
    const Matrix xa = select_columns(x, active);
    CHECK((xa.transpose() * (y - xa * coef)).cwiseAbs().maxCoeff() <= 1e-9);

    Matrix dup(15, 2);
    dup << x.col(0), x.col(0);
    CHECK_THROWS_AS(least_squares_on({0, 1}, dup, y), Error);
}

TEST_CASE("LassoSolver: warm starts reproduce the cold solution")
{
    std::mt19937_64 rng(20);
    const Matrix x = testing::gaussian_matrix(rng, 25, 12);
    const Vector y = testing::gaussian_vector(rng, 25) * 3.0;
    LassoSolver solver(x, 1.5, 0.0);
    const LassoSolution cold = solver.solve(y);

    WarmStart exact{cold.beta, cold.active, cold.signs_active};
    const LassoSolution warm = solver.solve(y, &exact);
    CHECK(warm.active == cold.active);
    CHECK((warm.beta - cold.beta).cwiseAbs().maxCoeff() <= 1e-10);

    // A wrong guess still converges to the unique solution.
    WarmStart wrong{Vector::Zero(12), {0, 1, 2}, {1, 1, 1}};
    const LassoSolution fixed = solver.solve(y, &wrong);
    CHECK(fixed.active == cold.active);
    CHECK((fixed.beta - cold.beta).cwiseAbs().maxCoeff() <= 1e-10);
}
