#include <silasso/numerics.hpp>

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace silasso {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Beyond this point erfc underflows too early to be useful in log form, so
// the Laplace continued fraction takes over.
constexpr double kErfcCutoff = 30.0;

double log_sum_exp(double a, double b)
{
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

// log(exp(a) - exp(b)) for a >= b.
double log_diff_exp(double a, double b)
{
    if (b == -kInf) return a;
    if (b >= a) return -kInf;
    return a + std::log1p(-std::exp(b - a));
}

} // namespace

SpdFactor::SpdFactor(const Matrix& a) : llt_(a.rows())
{
    if (a.rows() != a.cols()) {
        throw Error(ErrorKind::InvalidArgument, "SPD solve needs a square matrix");
    }
    if (a.rows() == 0) return;
    llt_.compute(a);
    const double max_diag = a.diagonal().cwiseAbs().maxCoeff();
    if (llt_.info() != Eigen::Success || !(max_diag > 0.0)) {
        throw Error(ErrorKind::SingularMatrix,
                    "matrix is not positive definite; the design is likely not in "
                    "general position (consider a ridge term)");
    }
    const Vector pivots = llt_.matrixLLT().diagonal().array().square();
    if (pivots.minCoeff() < kSpdPivotTol * max_diag) {
        throw Error(ErrorKind::SingularMatrix,
                    "Cholesky pivot below threshold; the design is likely not in "
                    "general position (consider a ridge term)");
    }
}

Matrix SpdFactor::solve(const Matrix& b) const
{
    if (b.rows() != size()) {
        throw Error(ErrorKind::InvalidArgument, "SPD solve: dimension mismatch");
    }
    if (size() == 0) return Matrix(0, b.cols());
    return llt_.solve(b);
}

Vector SpdFactor::solve(const Vector& b) const
{
    if (b.size() != size()) {
        throw Error(ErrorKind::InvalidArgument, "SPD solve: dimension mismatch");
    }
    if (size() == 0) return Vector(0);
    return llt_.solve(b);
}

Matrix solve_spd(const Matrix& a, const Matrix& b)
{
    return SpdFactor(a).solve(b);
}

double std_normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double std_normal_pdf(double x)
{
    return std::exp(-0.5 * x * x - kLogSqrt2Pi);
}

double std_normal_log_sf(double x)
{
    if (x == kInf) return -kInf;
    if (x < kErfcCutoff) return std::log(0.5 * std::erfc(x / std::numbers::sqrt2));
    // Q(x) = phi(x) / (x + 1/(x + 2/(x + 3/(x + ...)))), evaluated bottom-up.
    double tail = x;
    for (int k = 60; k >= 1; --k) tail = x + k / tail;
    return -0.5 * x * x - kLogSqrt2Pi - std::log(tail);
}

double std_normal_log_mass(double lo, double hi)
{
    if (!(hi > lo)) return -kInf;
    if (hi <= 0.0) return std_normal_log_mass(-hi, -lo);
    if (lo < 0.0) {
        // erf terms have opposite signs here, so the difference does not cancel.
        return std::log(0.5 * (std::erf(hi / std::numbers::sqrt2) -
                               std::erf(lo / std::numbers::sqrt2)));
    }
    const double width = hi - lo;
    if (width * std::max(lo, 1.0) <= 1.0) {
        // Narrow interval: the difference of tails would cancel, integrate
        // phi(lo + t) / phi(lo) = exp(-lo t - t^2 / 2) directly instead.
        const double rel = boost::math::quadrature::gauss<double, 20>::integrate(
            [lo](double t) { return std::exp(-lo * t - 0.5 * t * t); }, 0.0, width);
        return -0.5 * lo * lo - kLogSqrt2Pi + std::log(rel);
    }
    return log_diff_exp(std_normal_log_sf(lo), std_normal_log_sf(hi));
}

IntervalUnion::IntervalUnion(std::vector<Interval> intervals)
{
    std::erase_if(intervals, [](const Interval& iv) { return !(iv.hi > iv.lo); });
    std::sort(intervals.begin(), intervals.end(),
              [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    for (const Interval& iv : intervals) {
        if (!intervals_.empty() && iv.lo <= intervals_.back().hi + kMergeTol) {
            intervals_.back().hi = std::max(intervals_.back().hi, iv.hi);
        } else {
            intervals_.push_back(iv);
        }
    }
}

bool IntervalUnion::contains(double x) const
{
    return std::any_of(intervals_.begin(), intervals_.end(),
                       [x](const Interval& iv) { return iv.contains(x); });
}

double IntervalUnion::total_length() const
{
    double total = 0.0;
    for (const Interval& iv : intervals_) total += iv.length();
    return total;
}

IntervalUnion IntervalUnion::intersect(const IntervalUnion& other) const
{
    std::vector<Interval> out;
    std::size_t i = 0, j = 0;
    while (i < intervals_.size() && j < other.intervals_.size()) {
        const Interval& a = intervals_[i];
        const Interval& b = other.intervals_[j];
        const double lo = std::max(a.lo, b.lo);
        const double hi = std::min(a.hi, b.hi);
        if (hi > lo) out.push_back({lo, hi});
        if (a.hi < b.hi) {
            ++i;
        } else {
            ++j;
        }
    }
    return IntervalUnion(std::move(out));
}

IntervalUnion IntervalUnion::unite(const IntervalUnion& other) const
{
    std::vector<Interval> all(intervals_.begin(), intervals_.end());
    all.insert(all.end(), other.intervals_.begin(), other.intervals_.end());
    return IntervalUnion(std::move(all));
}

bool IntervalUnion::subset_of(const IntervalUnion& other, double tol) const
{
    for (const Interval& iv : intervals_) {
        const bool covered = std::any_of(
            other.intervals_.begin(), other.intervals_.end(), [&](const Interval& o) {
                return o.lo <= iv.lo + tol && iv.hi <= o.hi + tol;
            });
        if (!covered) return false;
    }
    return true;
}

double max_endpoint_gap(const IntervalUnion& a, const IntervalUnion& b)
{
    if (a.size() != b.size()) return kInf;
    double gap = 0.0;
    auto endpoint_gap = [](double u, double v) {
        if (u == v) return 0.0;
        return std::abs(u - v);
    };
    for (std::size_t k = 0; k < a.size(); ++k) {
        gap = std::max(gap, endpoint_gap(a.intervals()[k].lo, b.intervals()[k].lo));
        gap = std::max(gap, endpoint_gap(a.intervals()[k].hi, b.intervals()[k].hi));
    }
    return gap;
}

std::pair<double, double> truncnorm_tails(const TruncatedNormal& dist, double x)
{
    if (!(dist.variance > 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "truncated normal needs positive variance");
    }
    const double sd = std::sqrt(dist.variance);
    const double xs = (x - dist.mean) / sd;
    double log_lower = -kInf;
    double log_upper = -kInf;
    for (const Interval& iv : dist.support.intervals()) {
        const double lo = (iv.lo - dist.mean) / sd;
        const double hi = (iv.hi - dist.mean) / sd;
        log_lower = log_sum_exp(log_lower, std_normal_log_mass(lo, std::min(hi, xs)));
        log_upper = log_sum_exp(log_upper, std_normal_log_mass(std::max(lo, xs), hi));
    }
    if (log_lower == -kInf && log_upper == -kInf) {
        throw Error(ErrorKind::DegenerateSupport, "truncation region carries no mass");
    }
    if (log_lower == -kInf) return {0.0, 1.0};
    if (log_upper == -kInf) return {1.0, 0.0};
    // cdf = L / (L + U) = 1 / (1 + exp(logU - logL)), and symmetrically for sf.
    const double cdf = 1.0 / (1.0 + std::exp(log_upper - log_lower));
    const double sf = 1.0 / (1.0 + std::exp(log_lower - log_upper));
    return {cdf, sf};
}

double truncnorm_cdf(const TruncatedNormal& dist, double x)
{
    return truncnorm_tails(dist, x).first;
}

double truncnorm_sf(const TruncatedNormal& dist, double x)
{
    return truncnorm_tails(dist, x).second;
}

} // namespace silasso
