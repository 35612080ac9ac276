#include <doctest.h>

#include <silasso/cv_event.hpp>

#include "test_support.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace silasso;

namespace {

ProblemData random_problem(std::mt19937_64& rng, int n, int p, double signal)
{
    ProblemData d;
    d.X = testing::gaussian_matrix(rng, n, p);
    Vector beta = Vector::Zero(p);
    beta[0] = signal;
    beta[1] = signal;
    d.y = d.X * beta + testing::gaussian_vector(rng, n);
    d.sigma = Matrix::Identity(n, n);
    return d;
}

// TN-A target for the first selected feature at lambda, with a unit-variance
// statistic (eta rescaled) so the window is about +-20.
TestTarget first_target(const ProblemData& d, double lambda, IndexSet* active = nullptr)
{
    const LassoSolution sel = LassoSolver(d.X, lambda, 0.0).solve(d.y);
    REQUIRE(!sel.active.empty());
    SelectionContext ctx;
    ctx.data = &d;
    ctx.active_obs = sel.active;
    if (active) *active = sel.active;
    const TestTarget t = make_target(Variant::TnA, sel.active.front(), ctx);
    return target_from_eta(Variant::TnA, t.feature, t.eta / t.sd(), d);
}

PiecewiseQuadratic constant_curve(double lo, double hi, double value)
{
    return PiecewiseQuadratic({{lo, hi, 0.0, 0.0, value}});
}

IndexSet rows_complement(const IndexSet& rows, int n) { return complement(rows, n); }

} // namespace

TEST_CASE("validation_error_curve: null model is a single quadratic")
{
    std::mt19937_64 rng(60);
    const Matrix xt = testing::gaussian_matrix(rng, 12, 4);
    const Matrix xv = testing::gaussian_matrix(rng, 6, 4);
    ParamLine line;
    line.a = testing::gaussian_vector(rng, 12);
    line.b = testing::gaussian_vector(rng, 12) * 0.01;
    line.z_min = -3.0;
    line.z_max = 3.0;
    const Vector av = testing::gaussian_vector(rng, 6);
    const Vector bv = testing::gaussian_vector(rng, 6);
    const PiecewiseQuadratic c = validation_error_curve(xt, xv, line, av, bv, 1e6, 0.0);
    REQUIRE(c.pieces().size() == 1);
    const QuadraticPiece origin = c.pieces().front().shifted(0.0, 1.0);
    CHECK(origin.q2 == doctest::Approx(0.5 * bv.squaredNorm()).epsilon(1e-12));
    CHECK(origin.q1 == doctest::Approx(av.dot(bv)).epsilon(1e-12));
    CHECK(origin.q0 == doctest::Approx(0.5 * av.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("validation_error_curve: z-free error gives a constant curve")
{
    std::mt19937_64 rng(61);
    Matrix xt = Matrix::Zero(10, 3);
    xt.topRows(5) = testing::gaussian_matrix(rng, 5, 3);
    const Matrix xv = testing::gaussian_matrix(rng, 4, 3);
    ParamLine line;
    line.a = testing::gaussian_vector(rng, 10) * 3.0;
    line.b = Vector::Zero(10);
    line.b.tail(5) = testing::gaussian_vector(rng, 5);
    const Vector av = testing::gaussian_vector(rng, 4);
    const PiecewiseQuadratic c =
        validation_error_curve(xt, xv, line, av, Vector::Zero(4), 0.5, 0.0);
    REQUIRE(c.pieces().size() == 1);
    CHECK(c.pieces().front().q2 == 0.0);
    CHECK(std::abs(c.pieces().front().q1) <= 1e-12);
}

TEST_CASE("validation_error_curve: pointwise agreement with re-solve and continuity")
{
    std::mt19937_64 rng(62);
    for (int rep = 0; rep < 5; ++rep) {
        const ProblemData d = random_problem(rng, 30, 6, 1.0);
        const TestTarget t = first_target(d, 2.0);
        IndexSet val;
        for (int i = 0; i < 30; i += 3) val.push_back(i);
        const IndexSet train = rows_complement(val, 30);
        auto rows = [](const Matrix& m, const IndexSet& idx) {
            Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
            for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
            return out;
        };
        const Matrix xt = rows(d.X, train);
        const Matrix xv = rows(d.X, val);
        ParamLine tl = t.line;
        tl.a = rows(t.line.a, train).col(0);
        tl.b = rows(t.line.b, train).col(0);
        const Vector av = rows(t.line.a, val).col(0);
        const Vector bv = rows(t.line.b, val).col(0);
        const PiecewiseQuadratic c = validation_error_curve(xt, xv, tl, av, bv, 1.0, 0.0);
        CHECK(c.max_relative_jump() <= 1e-7);
        LassoSolver solver(xt, 1.0, 0.0);
        std::uniform_real_distribution<double> where(t.line.z_min, t.line.z_max);
        for (int k = 0; k < 100; ++k) {
            const double z = where(rng);
            const Vector beta = solver.solve(tl.at(z)).beta;
            const double direct = 0.5 * (av + bv * z - xv * beta).squaredNorm();
            CHECK(std::abs(c(z) - direct) <= 1e-6 * (1.0 + direct));
        }
    }
}

TEST_CASE("argmin_region: trivial grids")
{
    const PiecewiseQuadratic a = constant_curve(-5, 5, 2.0);
    CHECK(argmin_region({a}, {1.0}, 0) == IntervalUnion{{-5, 5}});
    // Exact tie: the smaller lambda wins everywhere.
    CHECK(argmin_region({a, a}, {0.5, 1.0}, 0) == IntervalUnion{{-5, 5}});
    CHECK(argmin_region({a, a}, {0.5, 1.0}, 1).empty());

    const PiecewiseQuadratic up({{-5, 5, 1.0, 0.0, 0.0}});  // (z + 5)^2
    const PiecewiseQuadratic flat = constant_curve(-5, 5, 25.0);
    const IntervalUnion r = argmin_region({up, flat}, {1.0, 2.0}, 0);
    REQUIRE(r.size() == 1);
    CHECK(r.intervals()[0].lo == -5.0);
    CHECK(r.intervals()[0].hi == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("argmin_region: unchanged by a common offset")
{
    std::mt19937_64 rng(63);
    const ProblemData d = random_problem(rng, 40, 5, 0.5);
    const TestTarget t = first_target(d, 1.0);
    const auto folds = CvConfig::kfold(40, 5, 7);
    const std::vector<double> grid{0.5, 1.0, 2.0};
    std::vector<PiecewiseQuadratic> curves;
    for (double l : grid) curves.push_back(cv_error_curve(d, t.line, folds, l));
    const PiecewiseQuadratic offset({{t.line.z_min, 0.0, 0.3, -1.0, 4.0}, {0.0, t.line.z_max, -0.1, 2.0, 4.0}});
    std::vector<PiecewiseQuadratic> moved;
    for (const auto& c : curves) moved.push_back(c + offset);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const IntervalUnion a = argmin_region(curves, grid, k);
        const IntervalUnion b = argmin_region(moved, grid, k);
        CHECK(max_endpoint_gap(a, b) <= 1e-8);
    }
}

TEST_CASE("argmin_region: matches a grid of the selection rule")
{
    std::mt19937_64 rng(64);
    int compared = 0;
    for (int rep = 0; rep < 4; ++rep) {
        ProblemData d = random_problem(rng, 30, 5, 0.4);
        const TestTarget t = first_target(d, 1.0);
        IndexSet val;
        for (int i = 0; i < 30; i += 3) val.push_back(i);
        const std::vector<IndexSet> folds{val};
        const std::vector<double> grid{0.5, 1.0, 2.0};
        std::vector<PiecewiseQuadratic> curves;
        for (double l : grid) curves.push_back(cv_error_curve(d, t.line, folds, l));
        std::vector<IntervalUnion> regions;
        for (std::size_t k = 0; k < grid.size(); ++k) regions.push_back(argmin_region(curves, grid, k));

        int disagreements = 0;
        int checked = 0;
        for (double z = t.line.z_min; z <= t.line.z_max; z += 1e-3) {
            bool near = false;
            for (const IntervalUnion& r : regions) {
                for (const Interval& iv : r.intervals()) {
                    near = near || std::abs(iv.lo - z) < 1e-6 || std::abs(iv.hi - z) < 1e-6;
                }
            }
            if (near) continue;
            ProblemData at = d;
            at.y = t.line.at(z);
            const std::size_t chosen = select_lambda_index(cv_errors(at, grid, folds), grid);
            for (std::size_t k = 0; k < grid.size(); ++k) {
                disagreements += regions[k].contains(z) != (k == chosen);
            }
            ++checked;
        }
        CHECK(checked > 39000);
        CHECK(disagreements == 0);

        // At every interior boundary the two competing curves agree.
        for (std::size_t k = 0; k < grid.size(); ++k) {
            for (const Interval& iv : regions[k].intervals()) {
                for (double z : {iv.lo, iv.hi}) {
                    if (z <= t.line.z_min || z >= t.line.z_max) continue;
                    double gap = kInf;
                    for (std::size_t m = 0; m < grid.size(); ++m) {
                        if (m != k) gap = std::min(gap, std::abs(curves[k](z) - curves[m](z)));
                    }
                    CHECK(gap <= 1e-8 * (1.0 + curves[k](z)));
                }
            }
        }
        ++compared;
    }
    CHECK(compared == 4);
}

TEST_CASE("region_with_cv: singleton grid and inclusion in TN-A")
{
    std::mt19937_64 rng(65);
    int compared = 0;
    for (int rep = 0; rep < 10; ++rep) {
        ProblemData d = random_problem(rng, 40, 5, 0.5);
        const auto folds = CvConfig::kfold(40, 5, 11 + rep);
        const std::vector<double> grid{0.5, 1.0, 2.0};
        const double chosen = select_lambda(d, grid, folds);
        d.lambda = chosen;
        IndexSet active;
        const LassoSolution sel = LassoSolver(d.X, chosen, 0.0).solve(d.y);
        if (sel.active.empty()) continue;
        const TestTarget t = first_target(d, chosen, &active);
        const IntervalUnion tn_a =
            region_tn_a(compute_solution_path(d.X, chosen, 0.0, t.line), active).region;

        CvConfig single{{chosen}, folds, chosen};
        CHECK(max_endpoint_gap(region_with_cv(d, t, single, active), tn_a) <= 1e-12);

        CvConfig cfg{grid, folds, chosen};
        const IntervalUnion cv = region_with_cv(d, t, cfg, active);
        CHECK(cv.subset_of(tn_a));
        CHECK(cv.contains(t.z_obs));
        const IntervalUnion over = overconditioned_cv_region(d, t, cfg).intersect(tn_a);
        CHECK(over.subset_of(cv));
        CHECK(over.contains(t.z_obs));

        // A lambda the rule does not pick is a configuration error.
        for (double other : grid) {
            if (other == chosen) continue;
            CvConfig wrong{grid, folds, other};
            try {
                region_with_cv(d, t, wrong, active);
                FAIL("expected SelectionMismatch");
            } catch (const Error& e) {
                CHECK(e.kind() == ErrorKind::SelectionMismatch);
            }
            break;
        }
        ++compared;
    }
    CHECK(compared >= 5);
}

TEST_CASE("CvConfig: k-fold partition and validation")
{
    const auto folds = CvConfig::kfold(23, 5, 3);
    REQUIRE(folds.size() == 5);
    std::vector<int> seen(23, 0);
    for (const IndexSet& f : folds) {
        CHECK(std::is_sorted(f.begin(), f.end()));
        for (int i : f) ++seen[static_cast<std::size_t>(i)];
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    CHECK(CvConfig::kfold(23, 5, 3) == folds);
    CvConfig bad{{1.0, 2.0}, folds, 3.0};
    CHECK_THROWS_AS(bad.validate(23), Error);
}

TEST_CASE("write_curves_json")
{
    std::ostringstream out;
    write_curves_json(out, {constant_curve(0, 1, 2.0)}, {0.5});
    CHECK(out.str().find("\"lambda\": 0.5") != std::string::npos);
}
