#pragma once

#include <silasso/lasso.hpp>

#include <iosfwd>
#include <vector>

namespace silasso {

/// Response restricted to the line y(z) = a + b z, z in [z_min, z_max].
struct ParamLine {
    Vector a;
    Vector b;
    double z_min = -20.0;
    double z_max = 20.0;

    Vector at(double z) const { return a + b * z; }
};

enum class EventType { Activation, Deactivation, WindowEnd };

struct PathEvent {
    EventType type = EventType::WindowEnd;
    int coordinate = -1;
};

/// One linear piece of the solution path. On [z_lo, z_hi) the active
/// coefficients are beta_at_lo + psi (z - z_lo) and the scaled inactive
/// subgradient is lambda * subgrad_at_lo + gamma (z - z_lo).
struct PathSegment {
    double z_lo = 0.0;
    double z_hi = 0.0;
    IndexSet active;
    std::vector<int> signs;
    Vector beta_at_lo;
    Vector psi;
    IndexSet inactive;
    Vector subgrad_at_lo;
    Vector gamma;
    PathEvent event;

    /// Full-length coefficient vector at z (p entries).
    Vector beta_at(double z, int p) const;
    bool same_pattern(const PathSegment& other) const
    {
        return active == other.active && signs == other.signs;
    }
};

struct SolutionPath {
    int p = 0;
    std::vector<PathSegment> segments;
    /// Breakpoints including both window ends.
    std::vector<double> transition_points;

    /// Segment whose half-open span [z_lo, z_hi) holds z (the last segment
    /// also owns z_max).
    const PathSegment& segment_at(double z) const;
};

struct SegmentCoefficients {
    Vector psi;
    Vector gamma;
};

/// Slopes of the active coefficients and of the scaled inactive subgradient
/// along the line. For delta > 0 the ridge enters as n*delta and gamma is
/// divided by n, matching the per-sample elastic-net objective.
SegmentCoefficients segment_coefficients(const IndexSet& active, const Matrix& X,
                                         const ParamLine& line, double delta);

struct StepResult {
    double step = kInf;
    LassoSolution solution;
    SegmentCoefficients coefficients;
    PathEvent event;
};

/// Distance from z to the next transition point given the solution there.
StepResult step_from_solution(const Matrix& X, double lambda, double delta,
                              const ParamLine& line, LassoSolution solution);

StepResult compute_step_size(const Matrix& X, const Vector& y_at_z, double lambda, double delta,
                             const ParamLine& line, double z);

struct PathOptions {
    double nudge = 1e-9;
    double min_step = 1e-8;
    double tie_tol = 1e-10;
    SolverOptions solver;
};

SolutionPath compute_solution_path(const Matrix& X, double lambda, double delta,
                                   const ParamLine& line, const PathOptions& options = {});

/// One JSON object per segment: z_lo, z_hi, active, signs, event.
void write_path_jsonl(std::ostream& out, const SolutionPath& path);

std::string_view event_name(EventType type);

} // namespace silasso
