#include <silasso/cv_event.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

namespace silasso {

namespace {

constexpr double kCoefTol = 1e-12;

Matrix select_rows(const Matrix& X, const IndexSet& rows)
{
    Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    return out;
}

Vector select_rows(const Vector& v, const IndexSet& rows)
{
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
    return out;
}

struct FoldData {
    Matrix x_train;
    Matrix x_val;
    ParamLine train_line;
    Vector a_val;
    Vector b_val;
};

FoldData split_fold(const Matrix& X, const ParamLine& line, const IndexSet& val)
{
    const IndexSet train = complement(val, static_cast<int>(X.rows()));
    FoldData f;
    f.x_train = select_rows(X, train);
    f.x_val = select_rows(X, val);
    f.train_line.a = select_rows(line.a, train);
    f.train_line.b = select_rows(line.b, train);
    f.train_line.z_min = line.z_min;
    f.train_line.z_max = line.z_max;
    f.a_val = select_rows(line.a, val);
    f.b_val = select_rows(line.b, val);
    return f;
}

PiecewiseQuadratic curve_from_path(const SolutionPath& path, const Matrix& X_val,
                                   const Vector& a_val, const Vector& b_val)
{
    std::vector<QuadraticPiece> pieces;
    pieces.reserve(path.segments.size());
    for (const PathSegment& seg : path.segments) {
        // Residual at z_lo + t is c0 + c1 t.
        Vector c0 = a_val + b_val * seg.z_lo;
        Vector c1 = b_val;
        for (std::size_t k = 0; k < seg.active.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            c0 -= X_val.col(seg.active[k]) * seg.beta_at_lo[i];
            c1 -= X_val.col(seg.active[k]) * seg.psi[i];
        }
        pieces.push_back({seg.z_lo, seg.z_hi, 0.5 * c1.squaredNorm(), c0.dot(c1), 0.5 * c0.squaredNorm()});
    }
    return PiecewiseQuadratic(std::move(pieces));
}

// Magnitude scale of a pair of pieces over their common width.
double piece_scale(const QuadraticPiece& a, const QuadraticPiece& b)
{
    const double w = a.z_hi - a.z_lo;
    auto size = [w](const QuadraticPiece& q) {
        return std::abs(q.q2) * w * w + std::abs(q.q1) * w + std::abs(q.q0);
    };
    return std::max(size(a), size(b));
}

// Sub-intervals of [0, w] where d(t) = q2 t^2 + q1 t + q0 is <= 0 (strict
// false) or < 0 (strict true); tie pieces resolve to `tie_wins`.
std::vector<Interval> nonpositive_spans(double q2, double q1, double q0, double w, double scale,
                                        bool strict, bool tie_wins)
{
    const double tol = kCoefTol * scale;
    if (std::abs(q2) * w * w <= tol) q2 = 0.0;
    if (std::abs(q1) * w <= tol) q1 = 0.0;
    if (q2 == 0.0 && q1 == 0.0) {
        if (std::abs(q0) <= tol) return tie_wins ? std::vector<Interval>{{0.0, w}} : std::vector<Interval>{};
        return (q0 < 0.0 || (!strict && q0 == 0.0)) ? std::vector<Interval>{{0.0, w}}
                                                    : std::vector<Interval>{};
    }
    std::vector<double> cuts{0.0, w};
    if (q2 == 0.0) {
        cuts.push_back(-q0 / q1);
    } else {
        const double disc = q1 * q1 - 4.0 * q2 * q0;
        if (disc >= 0.0) {
            const double q = -0.5 * (q1 + std::copysign(std::sqrt(disc), q1));
            cuts.push_back(q / q2);
            if (q != 0.0) cuts.push_back(q0 / q);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    std::vector<Interval> out;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double lo = std::max(cuts[k], 0.0);
        const double hi = std::min(cuts[k + 1], w);
        if (!(hi > lo)) continue;
        const double mid = 0.5 * (lo + hi);
        const double d = (q2 * mid + q1) * mid + q0;
        if (d < 0.0 || (!strict && d == 0.0)) out.push_back({lo, hi});
    }
    return out;
}

struct FoldPaths {
    std::vector<PiecewiseQuadratic> curves;
    IntervalUnion training_models;
};

// Summed validation curves per lambda; when `with_models`, also the region
// where every (lambda, fold) training fit keeps its active set at z_obs.
FoldPaths trace_folds(const ProblemData& data, const ParamLine& line, double z_obs,
                      const CvConfig& config, bool with_models, int* segments_visited,
                      const PathOptions& options)
{
    FoldPaths out;
    out.training_models = IntervalUnion({{line.z_min, line.z_max}});
    std::vector<FoldData> folds;
    folds.reserve(config.folds.size());
    for (const IndexSet& val : config.folds) folds.push_back(split_fold(data.X, line, val));
    for (double lambda : config.lambda_grid) {
        PiecewiseQuadratic total;
        for (const FoldData& f : folds) {
            const SolutionPath path =
                compute_solution_path(f.x_train, lambda, data.delta, f.train_line, options);
            if (segments_visited) *segments_visited += static_cast<int>(path.segments.size());
            const PiecewiseQuadratic curve = curve_from_path(path, f.x_val, f.a_val, f.b_val);
            total = total.pieces().empty() ? curve : total + curve;
            if (with_models) {
                const IndexSet model = path.segment_at(z_obs).active;
                out.training_models =
                    out.training_models.intersect(region_tn_a(path, model).region);
            }
        }
        out.curves.push_back(std::move(total));
    }
    return out;
}

std::size_t lambda_index(const CvConfig& config)
{
    const auto it = std::find(config.lambda_grid.begin(), config.lambda_grid.end(), config.lambda_obs);
    if (it == config.lambda_grid.end()) {
        throw Error(ErrorKind::InvalidArgument, "selected lambda is not in the grid");
    }
    return static_cast<std::size_t>(it - config.lambda_grid.begin());
}

void check_selection(const ProblemData& data, const CvConfig& config)
{
    const double chosen = select_lambda(data, config.lambda_grid, config.folds);
    if (chosen != config.lambda_obs) {
        throw Error(ErrorKind::SelectionMismatch,
                    "selection rule picks lambda " + std::to_string(chosen) + " at the observed data, not " +
                        std::to_string(config.lambda_obs));
    }
}

} // namespace

QuadraticPiece QuadraticPiece::shifted(double new_lo, double new_hi) const
{
    const double d = new_lo - z_lo;
    return {new_lo, new_hi, q2, q1 + 2.0 * q2 * d, (q2 * d + q1) * d + q0};
}

PiecewiseQuadratic::PiecewiseQuadratic(std::vector<QuadraticPiece> pieces) : pieces_(std::move(pieces))
{
    for (std::size_t k = 0; k < pieces_.size(); ++k) {
        if (!(pieces_[k].z_lo < pieces_[k].z_hi) ||
            (k > 0 && pieces_[k].z_lo != pieces_[k - 1].z_hi)) {
            throw Error(ErrorKind::InvalidArgument, "quadratic pieces must tile the window");
        }
    }
}

std::vector<double> PiecewiseQuadratic::breakpoints() const
{
    std::vector<double> out;
    if (pieces_.empty()) return out;
    out.push_back(pieces_.front().z_lo);
    for (const QuadraticPiece& q : pieces_) out.push_back(q.z_hi);
    return out;
}

const QuadraticPiece& PiecewiseQuadratic::piece_at(double z) const
{
    if (pieces_.empty()) throw Error(ErrorKind::InvalidArgument, "empty curve");
    auto it = std::upper_bound(pieces_.begin(), pieces_.end(), z,
                               [](double v, const QuadraticPiece& q) { return v < q.z_lo; });
    if (it == pieces_.begin()) return pieces_.front();
    return *std::prev(it);
}

double PiecewiseQuadratic::operator()(double z) const { return piece_at(z).at(z); }

double PiecewiseQuadratic::max_relative_jump() const
{
    double worst = 0.0;
    for (std::size_t k = 1; k < pieces_.size(); ++k) {
        const double z = pieces_[k].z_lo;
        const double left = pieces_[k - 1].at(z);
        const double right = pieces_[k].q0;
        worst = std::max(worst, std::abs(left - right) / (1.0 + std::abs(right)));
    }
    return worst;
}

std::vector<std::pair<QuadraticPiece, QuadraticPiece>> overlay(const PiecewiseQuadratic& a,
                                                               const PiecewiseQuadratic& b)
{
    std::vector<std::pair<QuadraticPiece, QuadraticPiece>> out;
    const auto& pa = a.pieces();
    const auto& pb = b.pieces();
    std::size_t i = 0, j = 0;
    double lo = std::max(pa.front().z_lo, pb.front().z_lo);
    while (i < pa.size() && j < pb.size()) {
        const double hi = std::min(pa[i].z_hi, pb[j].z_hi);
        if (hi > lo) out.emplace_back(pa[i].shifted(lo, hi), pb[j].shifted(lo, hi));
        if (pa[i].z_hi == hi) ++i;
        if (pb[j].z_hi == hi) ++j;
        lo = std::max(lo, hi);
    }
    return out;
}

PiecewiseQuadratic PiecewiseQuadratic::operator+(const PiecewiseQuadratic& other) const
{
    std::vector<QuadraticPiece> out;
    for (const auto& [x, y] : overlay(*this, other)) {
        out.push_back({x.z_lo, x.z_hi, x.q2 + y.q2, x.q1 + y.q1, x.q0 + y.q0});
    }
    return PiecewiseQuadratic(std::move(out));
}

PiecewiseQuadratic PiecewiseQuadratic::operator-(const PiecewiseQuadratic& other) const
{
    std::vector<QuadraticPiece> out;
    for (const auto& [x, y] : overlay(*this, other)) {
        out.push_back({x.z_lo, x.z_hi, x.q2 - y.q2, x.q1 - y.q1, x.q0 - y.q0});
    }
    return PiecewiseQuadratic(std::move(out));
}

void CvConfig::validate(int n) const
{
    if (lambda_grid.empty()) throw Error(ErrorKind::InvalidArgument, "lambda grid is empty");
    for (double l : lambda_grid) {
        if (!(l > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid lambdas must be positive");
    }
    if (folds.empty()) throw Error(ErrorKind::InvalidArgument, "no validation folds");
    std::vector<int> seen(static_cast<std::size_t>(n), 0);
    for (const IndexSet& f : folds) {
        if (f.empty() || static_cast<int>(f.size()) >= n) {
            throw Error(ErrorKind::InvalidArgument, "each fold needs training and validation rows");
        }
        for (int i : f) {
            if (i < 0 || i >= n) throw Error(ErrorKind::InvalidArgument, "fold index out of range");
            ++seen[static_cast<std::size_t>(i)];
        }
    }
    if (folds.size() > 1 && std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
        throw Error(ErrorKind::InvalidArgument, "folds must partition the rows");
    }
    lambda_index(*this);
}

std::vector<IndexSet> CvConfig::kfold(int n, int k, std::uint64_t seed)
{
    if (k < 2 || k > n) throw Error(ErrorKind::InvalidArgument, "fold count must lie in [2, n]");
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the split does not depend on the
    // standard library's shuffle.
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    std::vector<IndexSet> folds(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) folds[static_cast<std::size_t>(i % k)].push_back(perm[static_cast<std::size_t>(i)]);
    for (IndexSet& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

PiecewiseQuadratic validation_error_curve(const Matrix& X_train, const Matrix& X_val,
                                          const ParamLine& train_line, const Vector& a_val,
                                          const Vector& b_val, double lambda, double delta,
                                          const PathOptions& options)
{
    const SolutionPath path = compute_solution_path(X_train, lambda, delta, train_line, options);
    return curve_from_path(path, X_val, a_val, b_val);
}

PiecewiseQuadratic cv_error_curve(const ProblemData& data, const ParamLine& line,
                                  const std::vector<IndexSet>& folds, double lambda,
                                  int* segments_visited, const PathOptions& options)
{
    CvConfig config;
    config.lambda_grid = {lambda};
    config.folds = folds;
    config.lambda_obs = lambda;
    return trace_folds(data, line, 0.0, config, false, segments_visited, options).curves.front();
}

std::vector<double> cv_errors(const ProblemData& data, const std::vector<double>& lambda_grid,
                              const std::vector<IndexSet>& folds)
{
    std::vector<double> out;
    out.reserve(lambda_grid.size());
    std::vector<std::pair<Matrix, Matrix>> designs;
    std::vector<std::pair<Vector, Vector>> responses;
    for (const IndexSet& val : folds) {
        const IndexSet train = complement(val, static_cast<int>(data.n()));
        designs.emplace_back(select_rows(data.X, train), select_rows(data.X, val));
        responses.emplace_back(select_rows(data.y, train), select_rows(data.y, val));
    }
    for (double lambda : lambda_grid) {
        double total = 0.0;
        for (std::size_t k = 0; k < folds.size(); ++k) {
            const Vector beta = LassoSolver(designs[k].first, lambda, data.delta).solve(responses[k].first).beta;
            total += 0.5 * (responses[k].second - designs[k].second * beta).squaredNorm();
        }
        out.push_back(total);
    }
    return out;
}

std::size_t select_lambda_index(const std::vector<double>& errors, const std::vector<double>& lambda_grid)
{
    if (errors.empty() || errors.size() != lambda_grid.size()) {
        throw Error(ErrorKind::InvalidArgument, "errors and grid must align");
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < errors.size(); ++k) {
        const double tol = kCoefTol * std::max(std::abs(errors[k]), std::abs(errors[best]));
        if (errors[k] < errors[best] - tol) {
            best = k;
        } else if (std::abs(errors[k] - errors[best]) <= tol && lambda_grid[k] < lambda_grid[best]) {
            best = k;
        }
    }
    return best;
}

double select_lambda(const ProblemData& data, const std::vector<double>& lambda_grid,
                     const std::vector<IndexSet>& folds)
{
    return lambda_grid[select_lambda_index(cv_errors(data, lambda_grid, folds), lambda_grid)];
}

IntervalUnion argmin_region(const std::vector<PiecewiseQuadratic>& curves,
                            const std::vector<double>& lambda_grid, std::size_t obs)
{
    if (curves.size() != lambda_grid.size() || obs >= curves.size()) {
        throw Error(ErrorKind::InvalidArgument, "curves and grid must align");
    }
    const PiecewiseQuadratic& mine = curves[obs];
    IntervalUnion region({{mine.pieces().front().z_lo, mine.pieces().back().z_hi}});
    for (std::size_t k = 0; k < curves.size(); ++k) {
        if (k == obs) continue;
        // A competitor with smaller lambda wins ties, so we must beat it strictly.
        const bool competitor_wins_ties = lambda_grid[k] < lambda_grid[obs];
        std::vector<Interval> keep;
        for (const auto& [a, b] : overlay(mine, curves[k])) {
            const double w = a.z_hi - a.z_lo;
            for (const Interval& s : nonpositive_spans(a.q2 - b.q2, a.q1 - b.q1, a.q0 - b.q0, w,
                                                       piece_scale(a, b), competitor_wins_ties,
                                                       !competitor_wins_ties)) {
                keep.push_back({a.z_lo + s.lo, a.z_lo + s.hi});
            }
        }
        region = region.intersect(IntervalUnion(std::move(keep)));
    }
    return region;
}

IntervalUnion cv_selection_region(const ProblemData& data, const TestTarget& target,
                                  const CvConfig& config, int* segments_visited,
                                  const PathOptions& options)
{
    config.validate(static_cast<int>(data.n()));
    check_selection(data, config);
    const FoldPaths fp = trace_folds(data, target.line, target.z_obs, config, false, segments_visited, options);
    return argmin_region(fp.curves, config.lambda_grid, lambda_index(config));
}

IntervalUnion region_with_cv(const ProblemData& data, const TestTarget& target,
                             const CvConfig& config, const IndexSet& active_obs,
                             const PathOptions& options)
{
    const IntervalUnion z2 = cv_selection_region(data, target, config, nullptr, options);
    const SolutionPath path =
        compute_solution_path(data.X, config.lambda_obs, data.delta, target.line, options);
    const IntervalUnion out = region_tn_a(path, active_obs).region.intersect(z2);
    if (out.empty()) throw Error(ErrorKind::EmptyRegion, "selection event is empty");
    return out;
}

IntervalUnion overconditioned_cv_region(const ProblemData& data, const TestTarget& target,
                                        const CvConfig& config, const PathOptions& options)
{
    config.validate(static_cast<int>(data.n()));
    check_selection(data, config);
    const FoldPaths fp = trace_folds(data, target.line, target.z_obs, config, true, nullptr, options);
    return argmin_region(fp.curves, config.lambda_grid, lambda_index(config))
        .intersect(fp.training_models);
}

void write_curves_json(std::ostream& out, const std::vector<PiecewiseQuadratic>& curves,
                       const std::vector<double>& lambda_grid)
{
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t k = 0; k < curves.size(); ++k) {
        nlohmann::json pieces = nlohmann::json::array();
        for (const QuadraticPiece& q : curves[k].pieces()) {
            pieces.push_back({{"z_lo", q.z_lo}, {"z_hi", q.z_hi}, {"q2", q.q2}, {"q1", q.q1}, {"q0", q.q0}});
        }
        arr.push_back({{"lambda", lambda_grid[k]}, {"pieces", std::move(pieces)}});
    }
    out << arr.dump(2) << '\n';
}

} // namespace silasso
