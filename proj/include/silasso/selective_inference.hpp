#pragma once

#include <silasso/homotopy.hpp>
#include <silasso/lasso.hpp>
#include <silasso/numerics.hpp>

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace silasso {

enum class Variant { TnA, TnAs, Full, Marginal, L1Stable, CustomStable, Interaction };

std::string_view variant_name(Variant v);
/// Accepts tn-a, tn-as, full, marginal, tn-l1, tn-custom, interaction.
Variant parse_variant(std::string_view name);

/// Everything known at y_obs that target construction may need. Fields that a
/// variant does not use are left empty.
struct SelectionContext {
    const ProblemData* data = nullptr;
    IndexSet active_obs;
    std::vector<int> signs_obs;
    /// Stable set for the two stable-target variants.
    IndexSet stable_obs;
    /// Pairwise products of the selected columns, and which pair each is.
    Matrix x_inter;
    std::vector<std::pair<int, int>> inter_pairs;
    IndexSet inter_active_obs;
};

struct TestTarget {
    int feature = -1;
    Variant variant = Variant::TnA;
    Vector eta;
    ParamLine line;
    double z_obs = 0.0;
    double sigma2 = 0.0;

    double sd() const;
};

/// Builds eta for feature j (a column of X, or of x_inter for Interaction),
/// then the line y(z) = a + b z through y_obs with b = Sigma eta / sigma2.
/// The line window is [min(0, z_obs) - k sd, max(0, z_obs) + k sd]. With
/// delta > 0 eta comes from the ridge-regularised fit (Gram + n delta I).
TestTarget make_target(Variant variant, int j, const SelectionContext& ctx,
                       double window_sigmas = 20.0);

/// Line through y along Sigma eta, for callers that bring their own eta.
TestTarget target_from_eta(Variant variant, int j, Vector eta, const ProblemData& data,
                           double window_sigmas = 20.0);

/// Columns whose span defines eta for the variant (the identity X_T' eta = e_j
/// holds for this restriction when delta == 0).
IndexSet target_columns(Variant variant, int j, const SelectionContext& ctx);

/// Segment filter plus merge of the matching spans.
struct RegionResult {
    IntervalUnion region;
    int matched_segments = 0;
};

RegionResult region_membership(const SolutionPath& path,
                               const std::function<bool(const PathSegment&)>& predicate);
RegionResult region_tn_a(const SolutionPath& path, const IndexSet& active_obs);
RegionResult region_tn_as(const SolutionPath& path, const IndexSet& active_obs,
                          const std::vector<int>& signs_obs);
RegionResult region_contains(const SolutionPath& path, int j);

/// TN-A region further cut by the OLS cutoff rule: on the line, the OLS fit on
/// active_obs must clear |beta| >= cutoff exactly on stable_obs.
RegionResult region_custom_cutoff(const SolutionPath& path, const Matrix& X, const ParamLine& line,
                                  const IndexSet& active_obs, const IndexSet& stable_obs,
                                  double cutoff);

/// H_obs for the cutoff rule: selected features whose OLS coefficient on the
/// selected set has magnitude at least cutoff.
IndexSet cutoff_stable_set(const Matrix& X, const Vector& y, const IndexSet& active, double cutoff);

/// Pairwise products X_i * X_j for i < j in active, with the pair list.
std::pair<Matrix, std::vector<std::pair<int, int>>> interaction_design(const Matrix& X,
                                                                       const IndexSet& active);

/// Truncated-normal pivot F(z_obs) with the given mean.
double selective_pivot(const TestTarget& target, const IntervalUnion& region, double mean);
double selective_p_value(const TestTarget& target, const IntervalUnion& region);
std::pair<double, double> selective_ci(const TestTarget& target, const IntervalUnion& region,
                                       double alpha);

struct SelectiveResult {
    int feature = -1;
    std::string label;
    Variant variant = Variant::TnA;
    double z_obs = 0.0;
    double sigma2 = 0.0;
    double p_value = 1.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    IntervalUnion region;
    int matched_segments = 0;
    int segments_visited = 0;
    double wall_seconds = 0.0;
    /// Set when this feature failed; the numeric fields are then meaningless.
    std::optional<Error> error;

    bool ok() const { return !error.has_value(); }
};

/// Extra conditioning (for example a tuning-parameter selection event) applied
/// on top of the variant's own region.
using ExtraConditioning = std::function<IntervalUnion(const TestTarget&)>;

struct InferenceOptions {
    Variant variant = Variant::TnA;
    double alpha = 0.05;
    double window_sigmas = 20.0;
    double lambda_stable = 0.0;
    double cutoff = 1.0;
    int threads = 1;
    bool compute_ci = true;
    /// Restrict testing to these features (columns of X, or of x_inter).
    std::optional<IndexSet> features;
    ExtraConditioning extra;
    PathOptions path;
};

struct InferenceRun {
    LassoSolution selection;
    SelectionContext context;
    std::vector<SelectiveResult> results;
};

/// Selection-aware context at y_obs for the chosen variant (stable set, the
/// interaction design and its active set).
SelectionContext build_context(const ProblemData& data, const LassoSolution& selection,
                               const InferenceOptions& options);

/// Region for one target under the variant, tracing whichever paths it needs.
RegionResult variant_region(const TestTarget& target, const SelectionContext& ctx,
                            const InferenceOptions& options, int& segments_visited);

/// Solve at y_obs, then one target, region, p-value and CI per tested
/// feature. Per-feature failures are recorded in the result, not thrown.
InferenceRun run_inference(const ProblemData& data, const InferenceOptions& options);

void write_results_csv(std::ostream& out, const std::vector<SelectiveResult>& results);
void write_results_json(std::ostream& out, const std::vector<SelectiveResult>& results);

} // namespace silasso
