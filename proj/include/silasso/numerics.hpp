#pragma once

#include <silasso/errors.hpp>

#include <Eigen/Dense>

#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace silasso {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Sorted, duplicate-free list of column indices.
using IndexSet = std::vector<int>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Pivot threshold relative to the largest diagonal entry.
inline constexpr double kSpdPivotTol = 1e-12;

/// Cholesky factor of a symmetric positive definite matrix. Construction
/// throws SingularMatrix when a pivot drops below kSpdPivotTol times the
/// largest diagonal entry.
class SpdFactor {
public:
    explicit SpdFactor(const Matrix& a);

    Matrix solve(const Matrix& b) const;
    Vector solve(const Vector& b) const;
    Eigen::Index size() const { return llt_.rows(); }

private:
    Eigen::LLT<Matrix> llt_;
};

Matrix solve_spd(const Matrix& a, const Matrix& b);

double std_normal_cdf(double x);
double std_normal_pdf(double x);

/// log(1 - Phi(x)), accurate for arbitrarily large positive x.
double std_normal_log_sf(double x);

/// log of the standard normal mass of [lo, hi]; -inf for empty intervals.
double std_normal_log_mass(double lo, double hi);

struct Interval {
    double lo;
    double hi;

    double length() const { return hi - lo; }
    bool contains(double x) const { return lo <= x && x <= hi; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Finite union of disjoint closed intervals, kept sorted. Endpoints may be
/// infinite. Intervals whose gap is at most kMergeTol are fused.
class IntervalUnion {
public:
    static constexpr double kMergeTol = 1e-10;

    IntervalUnion() = default;
    explicit IntervalUnion(std::vector<Interval> intervals);
    IntervalUnion(std::initializer_list<Interval> intervals)
        : IntervalUnion(std::vector<Interval>(intervals))
    {
    }

    static IntervalUnion real_line() { return IntervalUnion({{-kInf, kInf}}); }

    std::span<const Interval> intervals() const { return intervals_; }
    std::size_t size() const { return intervals_.size(); }
    bool empty() const { return intervals_.empty(); }
    bool contains(double x) const;
    double total_length() const;
    double lower() const { return intervals_.front().lo; }
    double upper() const { return intervals_.back().hi; }

    IntervalUnion intersect(const IntervalUnion& other) const;
    IntervalUnion unite(const IntervalUnion& other) const;

    /// True when every interval of this union lies inside other (up to tol).
    bool subset_of(const IntervalUnion& other, double tol = kMergeTol) const;

    friend bool operator==(const IntervalUnion&, const IntervalUnion&) = default;

private:
    std::vector<Interval> intervals_;
};

/// Largest endpoint discrepancy between two unions with the same interval
/// count; +inf when the counts differ.
double max_endpoint_gap(const IntervalUnion& a, const IntervalUnion& b);

struct TruncatedNormal {
    double mean = 0.0;
    double variance = 1.0;
    IntervalUnion support = IntervalUnion::real_line();
};

/// Mass of support ∩ (-inf, x] over mass of support.
double truncnorm_cdf(const TruncatedNormal& dist, double x);

/// Mass of support ∩ [x, inf) over mass of support; accurate where the cdf
/// is close to one.
double truncnorm_sf(const TruncatedNormal& dist, double x);

/// Both tails at once: {cdf, sf}.
std::pair<double, double> truncnorm_tails(const TruncatedNormal& dist, double x);

} // namespace silasso
