#include <silasso/homotopy.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace silasso {

namespace {

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

// (m)_{++}: positive values pass, everything else is "never".
double positive_part(double m) { return m > 0.0 ? m : kInf; }

SegmentCoefficients coefficients_with(const LassoSolver& solver, const IndexSet& active,
                                      const IndexSet& inactive, const ParamLine& line)
{
    const Matrix& X = solver.design();
    const auto m = static_cast<Eigen::Index>(active.size());
    const Vector xtb = X.transpose() * line.b;
    SegmentCoefficients out;
    out.psi = Vector::Zero(m);
    Vector slope = line.b;
    if (m > 0) {
        Matrix gram(m, m);
        Vector rhs(m);
        for (Eigen::Index k = 0; k < m; ++k) {
            const Vector& col = solver.gram_column(active[k]);
            for (Eigen::Index i = 0; i < m; ++i) gram(i, k) = col[active[i]];
            rhs[k] = xtb[active[k]];
        }
        gram.diagonal().array() += solver.ridge_weight();
        out.psi = SpdFactor(gram).solve(rhs);
        for (Eigen::Index k = 0; k < m; ++k) slope -= out.psi[k] * X.col(active[k]);
    }
    const double kappa = solver.delta() > 0.0 ? 1.0 / static_cast<double>(X.rows()) : 1.0;
    out.gamma.resize(static_cast<Eigen::Index>(inactive.size()));
    for (std::size_t k = 0; k < inactive.size(); ++k) {
        out.gamma[static_cast<Eigen::Index>(k)] = kappa * X.col(inactive[k]).dot(slope);
    }
    return out;
}

struct StepChoice {
    double step = kInf;
    PathEvent event;
};

StepChoice choose_step(const LassoSolution& sol, const SegmentCoefficients& coef, double lambda,
                       double tie_tol)
{
    // Candidates (step, type, coordinate); ties resolved toward the smallest
    // coordinate index.
    StepChoice best;
    auto offer = [&](double t, EventType type, int j) {
        if (t == kInf) return;
        if (t < best.step - tie_tol ||
            (std::abs(t - best.step) <= tie_tol && j < best.event.coordinate)) {
            best.step = std::min(t, best.step);
            best.event = {type, j};
        }
    };
    for (std::size_t k = 0; k < sol.active.size(); ++k) {
        const double psi = coef.psi[static_cast<Eigen::Index>(k)];
        if (psi == 0.0) continue;
        const double beta = sol.beta[sol.active[k]];
        offer(positive_part(-beta / psi), EventType::Deactivation, sol.active[k]);
    }
    for (std::size_t k = 0; k < sol.inactive.size(); ++k) {
        const double gamma = coef.gamma[static_cast<Eigen::Index>(k)];
        if (gamma == 0.0) continue;
        const double s = sol.subgrad_inactive[static_cast<Eigen::Index>(k)];
        offer(positive_part(lambda * (sign_of(gamma) - s) / gamma), EventType::Activation,
              sol.inactive[k]);
    }
    return best;
}

} // namespace

Vector PathSegment::beta_at(double z, int p) const
{
    Vector beta = Vector::Zero(p);
    for (std::size_t k = 0; k < active.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        beta[active[k]] = beta_at_lo[i] + psi[i] * (z - z_lo);
    }
    return beta;
}

const PathSegment& SolutionPath::segment_at(double z) const
{
    if (segments.empty()) throw Error(ErrorKind::InvalidArgument, "empty solution path");
    auto it = std::upper_bound(segments.begin(), segments.end(), z,
                               [](double v, const PathSegment& s) { return v < s.z_lo; });
    if (it == segments.begin()) return segments.front();
    return *std::prev(it);
}

SegmentCoefficients segment_coefficients(const IndexSet& active, const Matrix& X,
                                         const ParamLine& line, double delta)
{
    // lambda does not enter the slopes; any positive value will do.
    LassoSolver solver(X, 1.0, delta);
    return coefficients_with(solver, active, complement(active, static_cast<int>(X.cols())), line);
}

StepResult step_from_solution(const Matrix& X, double lambda, double delta,
                              const ParamLine& line, LassoSolution solution)
{
    LassoSolver solver(X, lambda, delta);
    StepResult out;
    out.coefficients = coefficients_with(solver, solution.active, solution.inactive, line);
    const StepChoice choice = choose_step(solution, out.coefficients, lambda, PathOptions{}.tie_tol);
    out.step = choice.step;
    out.event = choice.event;
    out.solution = std::move(solution);
    return out;
}

StepResult compute_step_size(const Matrix& X, const Vector& y_at_z, double lambda, double delta,
                             const ParamLine& line, double /*z*/)
{
    LassoSolver solver(X, lambda, delta);
    return step_from_solution(X, lambda, delta, line, solver.solve(y_at_z));
}

SolutionPath compute_solution_path(const Matrix& X, double lambda, double delta,
                                   const ParamLine& line, const PathOptions& options)
{
    if (!(line.z_min < line.z_max)) {
        throw Error(ErrorKind::InvalidArgument, "path window must satisfy z_min < z_max");
    }
    if (line.a.size() != X.rows() || line.b.size() != X.rows()) {
        throw Error(ErrorKind::InvalidArgument, "line vectors must have n entries");
    }
    const int p = static_cast<int>(X.cols());
    LassoSolver solver(X, lambda, delta, options.solver);

    SolutionPath path;
    path.p = p;
    path.transition_points.push_back(line.z_min);

    double z_lo = line.z_min;
    double z_eval = line.z_min;
    LassoSolution sol = solver.solve(line.at(z_eval));
    int short_steps = 0;

    while (true) {
        SegmentCoefficients coef = coefficients_with(solver, sol.active, sol.inactive, line);
        const StepChoice choice = choose_step(sol, coef, lambda, options.tie_tol);

        if (choice.step < options.min_step) {
            if (++short_steps >= 2) {
                throw Error(ErrorKind::StalledPath,
                            "two consecutive transition steps below min_step near z = " +
                                std::to_string(z_eval));
            }
        } else {
            short_steps = 0;
        }

        const double z_next = z_eval + choice.step;
        PathSegment seg;
        seg.z_lo = z_lo;
        seg.z_hi = std::min(z_next, line.z_max);
        seg.active = sol.active;
        seg.signs = sol.signs_active;
        seg.inactive = sol.inactive;
        const double back = z_eval - z_lo;
        seg.beta_at_lo.resize(static_cast<Eigen::Index>(seg.active.size()));
        for (std::size_t k = 0; k < seg.active.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            seg.beta_at_lo[i] = sol.beta[seg.active[k]] - coef.psi[i] * back;
        }
        seg.subgrad_at_lo = sol.subgrad_inactive;
        if (lambda > 0.0) seg.subgrad_at_lo -= coef.gamma * (back / lambda);
        seg.psi = std::move(coef.psi);
        seg.gamma = std::move(coef.gamma);
        seg.event = z_next >= line.z_max ? PathEvent{} : choice.event;

        if (!path.segments.empty() && path.segments.back().same_pattern(seg)) {
            // A spurious breakpoint: the re-solve landed on the same piece.
            path.segments.back().z_hi = seg.z_hi;
            path.segments.back().event = seg.event;
            path.transition_points.back() = seg.z_hi;
        } else {
            path.segments.push_back(std::move(seg));
            path.transition_points.push_back(path.segments.back().z_hi);
        }
        if (z_next >= line.z_max) break;

        // Re-solve just past the breakpoint, warm-started from the
        // extrapolated solution with the triggering coordinate toggled.
        z_lo = z_next;
        z_eval = z_next + options.nudge;
        const PathSegment& last = path.segments.back();
        WarmStart warm;
        warm.beta = last.beta_at(z_eval, p);
        warm.active = last.active;
        warm.signs = last.signs;
        const int j = choice.event.coordinate;
        if (choice.event.type == EventType::Deactivation) {
            for (std::size_t k = 0; k < warm.active.size(); ++k) {
                if (warm.active[k] == j) {
                    warm.active.erase(warm.active.begin() + static_cast<std::ptrdiff_t>(k));
                    warm.signs.erase(warm.signs.begin() + static_cast<std::ptrdiff_t>(k));
                    break;
                }
            }
            warm.beta[j] = 0.0;
        } else if (choice.event.type == EventType::Activation) {
            const auto pos = std::find(last.inactive.begin(), last.inactive.end(), j);
            const auto k = static_cast<Eigen::Index>(pos - last.inactive.begin());
            warm.active.push_back(j);
            warm.signs.push_back(sign_of(last.gamma[k]));
        }
        sol = solver.solve(line.at(z_eval), &warm);
    }
    return path;
}

std::string_view event_name(EventType type)
{
    switch (type) {
    case EventType::Activation: return "activation";
    case EventType::Deactivation: return "deactivation";
    case EventType::WindowEnd: return "window-end";
    }
    return "unknown";
}

void write_path_jsonl(std::ostream& out, const SolutionPath& path)
{
    for (const PathSegment& seg : path.segments) {
        nlohmann::json rec;
        rec["z_lo"] = seg.z_lo;
        rec["z_hi"] = seg.z_hi;
        rec["active"] = seg.active;
        rec["signs"] = seg.signs;
        rec["event"] = event_name(seg.event.type);
        rec["coordinate"] = seg.event.coordinate;
        out << rec.dump() << '\n';
    }
}

} // namespace silasso
