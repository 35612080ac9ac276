#include <silasso/oracle.hpp>

#include <algorithm>
#include <cmath>

namespace silasso::oracle {

namespace {

// Slice of {z : offset + slope z > 0} (or >= after closing) as an interval.
Interval half_line(double offset, double slope)
{
    if (slope > 0.0) return {-offset / slope, kInf};
    if (slope < 0.0) return {-kInf, -offset / slope};
    return offset > 0.0 ? Interval{-kInf, kInf} : Interval{0.0, 0.0};
}

Interval clip(Interval a, const Interval& b) { return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)}; }

double simpson(double fa, double fm, double fb, double width) { return width / 6.0 * (fa + 4.0 * fm + fb); }

template <class F>
double adaptive_simpson(const F& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth)
{
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = simpson(fa, flm, fm, m - a);
    const double right = simpson(fm, frm, fb, b - m);
    const double diff = left + right - whole;
    if (std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
    if (depth <= 0) {
        throw Error(ErrorKind::NonConvergentQuadrature, "adaptive Simpson recursion limit");
    }
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

} // namespace

std::vector<GridPoint> grid_path(const Matrix& X, double lambda, double delta,
                                 const ParamLine& line, double step)
{
    if (!(step > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid step must be positive");
    LassoSolver solver(X, lambda, delta);
    std::vector<GridPoint> out;
    const auto count = static_cast<long>(std::floor((line.z_max - line.z_min) / step));
    out.reserve(static_cast<std::size_t>(count + 1));
    for (long k = 0; k <= count; ++k) {
        const double z = line.z_min + static_cast<double>(k) * step;
        LassoSolution sol = solver.solve(line.at(z));
        out.push_back({z, std::move(sol.active), std::move(sol.signs_active)});
    }
    return out;
}

double bisect_breakpoint(const Matrix& X, double lambda, double delta, const ParamLine& line,
                         double z_left, double z_right, double tol)
{
    LassoSolver solver(X, lambda, delta);
    auto pattern = [&](double z) {
        LassoSolution sol = solver.solve(line.at(z));
        return std::make_pair(sol.active, sol.signs_active);
    };
    const auto left = pattern(z_left);
    while (z_right - z_left > tol) {
        const double mid = 0.5 * (z_left + z_right);
        if (pattern(mid) == left) {
            z_left = mid;
        } else {
            z_right = mid;
        }
    }
    return 0.5 * (z_left + z_right);
}

namespace {

// Line slice of the KKT polytope for one sign vector; empty interval if none.
Interval polytope_slice(const Matrix& X, const Matrix& xa, const SpdFactor& gram, double lambda,
                        const IndexSet& inactive, const std::vector<int>& signs,
                        const ParamLine& line)
{
    const auto m = xa.cols();
    Vector s(m);
    for (Eigen::Index k = 0; k < m; ++k) s[k] = signs[static_cast<std::size_t>(k)];
    const Vector u = gram.solve(Vector(xa.transpose() * line.a - lambda * s));
    const Vector v = gram.solve(Vector(xa.transpose() * line.b));
    Interval slice{line.z_min, line.z_max};
    for (Eigen::Index k = 0; k < m; ++k) {
        slice = clip(slice, half_line(s[k] * u[k], s[k] * v[k]));
    }
    const Vector resid_a = line.a - xa * u;
    const Vector resid_b = line.b - xa * v;
    for (int j : inactive) {
        const double e = X.col(j).dot(resid_a);
        const double f = X.col(j).dot(resid_b);
        slice = clip(slice, half_line(lambda - e, -f));
        slice = clip(slice, half_line(lambda + e, f));
    }
    return slice;
}

} // namespace

IntervalUnion sign_enum_region(const Matrix& X, double lambda, const IndexSet& active_obs,
                               const std::vector<int>& signs_obs, const ParamLine& line,
                               SignMode mode)
{
    const int m = static_cast<int>(active_obs.size());
    if (m > kMaxEnumeratedActive) {
        throw Error(ErrorKind::TooManySigns, "sign enumeration capped at 12 active features");
    }
    const Matrix xa = select_columns(X, active_obs);
    const SpdFactor gram(xa.transpose() * xa);
    const IndexSet inactive = complement(active_obs, static_cast<int>(X.cols()));

    std::vector<Interval> pieces;
    if (mode == SignMode::ExactActiveAndSigns) {
        pieces.push_back(polytope_slice(X, xa, gram, lambda, inactive, signs_obs, line));
    } else {
        std::vector<int> signs(static_cast<std::size_t>(m));
        for (unsigned mask = 0; mask < (1u << m); ++mask) {
            for (int k = 0; k < m; ++k) signs[k] = (mask >> k) & 1u ? -1 : 1;
            pieces.push_back(polytope_slice(X, xa, gram, lambda, inactive, signs, line));
        }
    }
    return IntervalUnion(std::move(pieces));
}

int count_sign_polytopes(const Matrix& X, double lambda, const IndexSet& active_obs,
                         const ParamLine& line)
{
    const int m = static_cast<int>(active_obs.size());
    if (m > kMaxEnumeratedActive) {
        throw Error(ErrorKind::TooManySigns, "sign enumeration capped at 12 active features");
    }
    const Matrix xa = select_columns(X, active_obs);
    const SpdFactor gram(xa.transpose() * xa);
    const IndexSet inactive = complement(active_obs, static_cast<int>(X.cols()));
    int count = 0;
    std::vector<int> signs(static_cast<std::size_t>(m));
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
        for (int k = 0; k < m; ++k) signs[k] = (mask >> k) & 1u ? -1 : 1;
        const Interval slice = polytope_slice(X, xa, gram, lambda, inactive, signs, line);
        if (slice.hi > slice.lo) ++count;
    }
    return count;
}

double quadrature_cdf(const TruncatedNormal& dist, double x)
{
    const double sd = std::sqrt(dist.variance);
    std::vector<Interval> support;
    for (const Interval& iv : dist.support.intervals()) {
        support.push_back({(iv.lo - dist.mean) / sd, (iv.hi - dist.mean) / sd});
    }
    if (support.empty()) throw Error(ErrorKind::DegenerateSupport, "empty support");
    const double xs = (x - dist.mean) / sd;

    // Rescale the density by its largest value on the support so that far
    // tails keep full relative precision: g(t) = exp(-(t^2 - peak^2) / 2).
    double peak = kInf;
    for (const Interval& iv : support) {
        const double closest = iv.lo > 0.0 ? iv.lo : (iv.hi < 0.0 ? iv.hi : 0.0);
        if (std::abs(closest) < std::abs(peak)) peak = closest;
    }
    const double reach = std::sqrt(peak * peak + 2.0 * 60.0);
    auto g = [peak](double t) { return std::exp(-0.5 * (t - peak) * (t + peak)); };

    auto integrate = [&](double lo, double hi) {
        lo = std::max(lo, -reach);
        hi = std::min(hi, reach);
        if (!(hi > lo)) return 0.0;
        const int chunks = std::max(1, static_cast<int>(std::ceil((hi - lo) / 0.25)));
        const double width = (hi - lo) / chunks;
        double total = 0.0;
        for (int c = 0; c < chunks; ++c) {
            const double a = lo + c * width;
            const double b = a + width;
            const double fa = g(a), fb = g(b), fm = g(0.5 * (a + b));
            const double tol = 1e-12 * width;
            total += adaptive_simpson(g, a, b, fa, fm, fb, simpson(fa, fm, fb, width), tol, 60);
        }
        return total;
    };

    double below = 0.0;
    double mass = 0.0;
    for (const Interval& iv : support) {
        mass += integrate(iv.lo, iv.hi);
        below += integrate(iv.lo, std::min(iv.hi, xs));
    }
    if (!(mass > 0.0)) throw Error(ErrorKind::DegenerateSupport, "support carries no mass");
    return below / mass;
}

} // namespace silasso::oracle
