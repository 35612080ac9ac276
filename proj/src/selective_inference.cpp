#include <silasso/selective_inference.hpp>
#include <silasso/parallel.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace silasso {

namespace {

bool contains_index(const IndexSet& set, int j) { return std::find(set.begin(), set.end(), j) != set.end(); }

// {z in window : u + v z >= c}.
IntervalUnion affine_at_least(double u, double v, double c, const Interval& window)
{
    if (v == 0.0) return u >= c ? IntervalUnion({window}) : IntervalUnion();
    const double root = (c - u) / v;
    const Interval half = v > 0.0 ? Interval{root, kInf} : Interval{-kInf, root};
    return IntervalUnion({{std::max(half.lo, window.lo), std::min(half.hi, window.hi)}});
}

// {z in window : |u + v z| >= c} or, with keep_large false, < c.
IntervalUnion cutoff_set(double u, double v, double c, bool keep_large, const Interval& window)
{
    if (keep_large) {
        return affine_at_least(u, v, c, window).unite(affine_at_least(-u, -v, c, window));
    }
    return affine_at_least(u, v, -c, window).intersect(affine_at_least(-u, -v, -c, window));
}

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_region(const IntervalUnion& region)
{
    std::string out;
    for (const Interval& iv : region.intervals()) {
        if (!out.empty()) out += ';';
        out += '[' + format_double(iv.lo) + ',' + format_double(iv.hi) + ']';
    }
    return out;
}

// Value mu with truncnorm_cdf(mean mu) = level, the cdf being decreasing in mu.
double invert_pivot(const TestTarget& target, const IntervalUnion& region, double level)
{
    const double sd = target.sd();
    const double z = target.z_obs;
    auto g = [&](double mu) { return selective_pivot(target, region, mu); };
    double left_width = 40.0 * sd;
    double right_width = 40.0 * sd;
    const double limit = std::ldexp(sd, 20);
    while (g(z - left_width) < level) {
        left_width *= 2.0;
        if (left_width > limit) {
            throw Error(ErrorKind::BracketFailure, "confidence bound bracket exceeded 2^20 sigma");
        }
    }
    while (g(z + right_width) > level) {
        right_width *= 2.0;
        if (right_width > limit) {
            throw Error(ErrorKind::BracketFailure, "confidence bound bracket exceeded 2^20 sigma");
        }
    }
    double lo = z - left_width;
    double hi = z + right_width;
    while (hi - lo > 1e-9 * sd) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (g(mid) >= level ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

std::string_view variant_name(Variant v)
{
    switch (v) {
    case Variant::TnA: return "tn-a";
    case Variant::TnAs: return "tn-as";
    case Variant::Full: return "full";
    case Variant::Marginal: return "marginal";
    case Variant::L1Stable: return "tn-l1";
    case Variant::CustomStable: return "tn-custom";
    case Variant::Interaction: return "interaction";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name)
{
    for (Variant v : {Variant::TnA, Variant::TnAs, Variant::Full, Variant::Marginal,
                      Variant::L1Stable, Variant::CustomStable, Variant::Interaction}) {
        if (variant_name(v) == name) return v;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown variant '" + std::string(name) + "'");
}

double TestTarget::sd() const { return std::sqrt(sigma2); }

IndexSet target_columns(Variant variant, int j, const SelectionContext& ctx)
{
    const ProblemData& data = *ctx.data;
    switch (variant) {
    case Variant::TnA:
    case Variant::TnAs:
        if (!contains_index(ctx.active_obs, j)) {
            throw Error(ErrorKind::InvalidArgument, "tested feature is not in the active set");
        }
        return ctx.active_obs;
    case Variant::Full: {
        if (data.p() > data.n()) {
            throw Error(ErrorKind::RankDeficient, "full target needs p <= n");
        }
        IndexSet all(static_cast<std::size_t>(data.p()));
        for (int k = 0; k < static_cast<int>(data.p()); ++k) all[k] = k;
        return all;
    }
    case Variant::Marginal: return {j};
    case Variant::L1Stable:
    case Variant::CustomStable: {
        if (!contains_index(ctx.active_obs, j)) {
            throw Error(ErrorKind::InvalidArgument, "tested feature is not in the active set");
        }
        IndexSet cols = ctx.stable_obs;
        if (!contains_index(cols, j)) {
            cols.insert(std::upper_bound(cols.begin(), cols.end(), j), j);
        }
        return cols;
    }
    case Variant::Interaction: {
        if (!contains_index(ctx.inter_active_obs, j)) {
            throw Error(ErrorKind::InvalidArgument,
                        "tested interaction is not in the interaction active set");
        }
        if (ctx.x_inter.cols() > ctx.x_inter.rows()) {
            throw Error(ErrorKind::RankDeficient, "interaction target needs d <= n");
        }
        IndexSet all(static_cast<std::size_t>(ctx.x_inter.cols()));
        for (int k = 0; k < static_cast<int>(ctx.x_inter.cols()); ++k) all[k] = k;
        return all;
    }
    }
    throw Error(ErrorKind::InvalidArgument, "unknown variant");
}

TestTarget target_from_eta(Variant variant, int j, Vector eta, const ProblemData& data,
                           double window_sigmas)
{
    TestTarget t;
    t.feature = j;
    t.variant = variant;
    const Vector sigma_eta = data.sigma * eta;
    t.sigma2 = eta.dot(sigma_eta);
    if (!(t.sigma2 > 0.0)) {
        throw Error(ErrorKind::DegenerateSupport, "test statistic has zero variance");
    }
    t.z_obs = eta.dot(data.y);
    t.line.b = sigma_eta / t.sigma2;
    t.line.a = data.y - t.line.b * t.z_obs;
    const double sd = t.sd();
    t.line.z_min = std::min(0.0, t.z_obs) - window_sigmas * sd;
    t.line.z_max = std::max(0.0, t.z_obs) + window_sigmas * sd;
    t.eta = std::move(eta);
    return t;
}

TestTarget make_target(Variant variant, int j, const SelectionContext& ctx, double window_sigmas)
{
    if (ctx.data == nullptr) throw Error(ErrorKind::InvalidArgument, "missing problem data");
    const IndexSet cols = target_columns(variant, j, ctx);
    const Matrix& design = variant == Variant::Interaction ? ctx.x_inter : ctx.data->X;
    const Matrix xt = select_columns(design, cols);
    Vector e = Vector::Zero(static_cast<Eigen::Index>(cols.size()));
    e[std::find(cols.begin(), cols.end(), j) - cols.begin()] = 1.0;
    Matrix gram = xt.transpose() * xt;
    // Elastic net: the ridge-regularised fit on the same columns, which stays
    // defined when more than n features are selected.
    if (ctx.data->delta > 0) gram.diagonal().array() += static_cast<double>(ctx.data->n()) * ctx.data->delta;
    Vector eta = xt * SpdFactor(gram).solve(e);
    return target_from_eta(variant, j, std::move(eta), *ctx.data, window_sigmas);
}

RegionResult region_membership(const SolutionPath& path,
                               const std::function<bool(const PathSegment&)>& predicate)
{
    RegionResult out;
    std::vector<Interval> spans;
    for (const PathSegment& seg : path.segments) {
        if (!predicate(seg)) continue;
        ++out.matched_segments;
        spans.push_back({seg.z_lo, seg.z_hi});
    }
    out.region = IntervalUnion(std::move(spans));
    if (out.region.empty()) {
        throw Error(ErrorKind::EmptyRegion, "no path segment satisfies the selection event");
    }
    return out;
}

RegionResult region_tn_a(const SolutionPath& path, const IndexSet& active_obs)
{
    return region_membership(path, [&](const PathSegment& s) { return s.active == active_obs; });
}

RegionResult region_tn_as(const SolutionPath& path, const IndexSet& active_obs,
                          const std::vector<int>& signs_obs)
{
    return region_membership(path, [&](const PathSegment& s) {
        return s.active == active_obs && s.signs == signs_obs;
    });
}

RegionResult region_contains(const SolutionPath& path, int j)
{
    return region_membership(path, [j](const PathSegment& s) { return contains_index(s.active, j); });
}

RegionResult region_custom_cutoff(const SolutionPath& path, const Matrix& X, const ParamLine& line,
                                  const IndexSet& active_obs, const IndexSet& stable_obs,
                                  double cutoff)
{
    RegionResult out = region_tn_a(path, active_obs);
    const Interval window{line.z_min, line.z_max};
    IntervalUnion allowed({window});
    if (!active_obs.empty()) {
        const Matrix xa = select_columns(X, active_obs);
        const SpdFactor gram(xa.transpose() * xa);
        const Vector u = gram.solve(Vector(xa.transpose() * line.a));
        const Vector v = gram.solve(Vector(xa.transpose() * line.b));
        for (std::size_t k = 0; k < active_obs.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            const bool stable = contains_index(stable_obs, active_obs[k]);
            allowed = allowed.intersect(cutoff_set(u[i], v[i], cutoff, stable, window));
        }
    }
    out.region = out.region.intersect(allowed);
    if (out.region.empty()) {
        throw Error(ErrorKind::EmptyRegion, "cutoff rule leaves no admissible z");
    }
    return out;
}

IndexSet cutoff_stable_set(const Matrix& X, const Vector& y, const IndexSet& active, double cutoff)
{
    IndexSet out;
    if (active.empty()) return out;
    const Vector coef = least_squares_on(active, X, y);
    for (std::size_t k = 0; k < active.size(); ++k) {
        if (std::abs(coef[static_cast<Eigen::Index>(k)]) >= cutoff) out.push_back(active[k]);
    }
    return out;
}

std::pair<Matrix, std::vector<std::pair<int, int>>> interaction_design(const Matrix& X,
                                                                       const IndexSet& active)
{
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t a = 0; a < active.size(); ++a) {
        for (std::size_t b = a + 1; b < active.size(); ++b) pairs.emplace_back(active[a], active[b]);
    }
    Matrix out(X.rows(), static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        out.col(static_cast<Eigen::Index>(k)) =
            X.col(pairs[k].first).cwiseProduct(X.col(pairs[k].second));
    }
    return {std::move(out), std::move(pairs)};
}

double selective_pivot(const TestTarget& target, const IntervalUnion& region, double mean)
{
    return truncnorm_cdf(TruncatedNormal{mean, target.sigma2, region}, target.z_obs);
}

double selective_p_value(const TestTarget& target, const IntervalUnion& region)
{
    const auto [cdf, sf] = truncnorm_tails(TruncatedNormal{0.0, target.sigma2, region}, target.z_obs);
    return std::min(1.0, 2.0 * std::min(cdf, sf));
}

std::pair<double, double> selective_ci(const TestTarget& target, const IntervalUnion& region,
                                       double alpha)
{
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
    }
    const double lo = invert_pivot(target, region, 1.0 - 0.5 * alpha);
    const double hi = invert_pivot(target, region, 0.5 * alpha);
    return {lo, hi};
}

SelectionContext build_context(const ProblemData& data, const LassoSolution& selection,
                               const InferenceOptions& options)
{
    SelectionContext ctx;
    ctx.data = &data;
    ctx.active_obs = selection.active;
    ctx.signs_obs = selection.signs_active;
    switch (options.variant) {
    case Variant::L1Stable: {
        if (!(options.lambda_stable > data.lambda)) {
            throw Error(ErrorKind::InvalidArgument, "stable lambda must exceed lambda");
        }
        ctx.stable_obs = LassoSolver(data.X, options.lambda_stable, data.delta).solve(data.y).active;
        break;
    }
    case Variant::CustomStable:
        ctx.stable_obs = cutoff_stable_set(data.X, data.y, ctx.active_obs, options.cutoff);
        break;
    case Variant::Interaction: {
        auto [x_inter, pairs] = interaction_design(data.X, ctx.active_obs);
        ctx.x_inter = std::move(x_inter);
        ctx.inter_pairs = std::move(pairs);
        if (ctx.x_inter.cols() > 0) {
            ctx.inter_active_obs =
                LassoSolver(ctx.x_inter, data.lambda, data.delta).solve(data.y).active;
        }
        break;
    }
    default: break;
    }
    return ctx;
}

RegionResult variant_region(const TestTarget& target, const SelectionContext& ctx,
                            const InferenceOptions& options, int& segments_visited)
{
    const ProblemData& data = *ctx.data;
    auto trace = [&](const Matrix& X, double lambda) {
        SolutionPath path = compute_solution_path(X, lambda, data.delta, target.line, options.path);
        segments_visited += static_cast<int>(path.segments.size());
        return path;
    };
    const int j = target.feature;
    switch (target.variant) {
    case Variant::TnA: return region_tn_a(trace(data.X, data.lambda), ctx.active_obs);
    case Variant::TnAs:
        return region_tn_as(trace(data.X, data.lambda), ctx.active_obs, ctx.signs_obs);
    case Variant::Full:
    case Variant::Marginal: return region_contains(trace(data.X, data.lambda), j);
    case Variant::L1Stable: {
        RegionResult out = region_contains(trace(data.X, data.lambda), j);
        const RegionResult stable = region_tn_a(trace(data.X, options.lambda_stable), ctx.stable_obs);
        out.region = out.region.intersect(stable.region);
        if (out.region.empty()) throw Error(ErrorKind::EmptyRegion, "stable-set event is empty");
        return out;
    }
    case Variant::CustomStable:
        return region_custom_cutoff(trace(data.X, data.lambda), data.X, target.line, ctx.active_obs,
                                    ctx.stable_obs, options.cutoff);
    case Variant::Interaction: {
        RegionResult out = region_contains(trace(ctx.x_inter, data.lambda), j);
        const RegionResult base = region_tn_a(trace(data.X, data.lambda), ctx.active_obs);
        out.region = out.region.intersect(base.region);
        if (out.region.empty()) throw Error(ErrorKind::EmptyRegion, "interaction event is empty");
        return out;
    }
    }
    throw Error(ErrorKind::InvalidArgument, "unknown variant");
}

InferenceRun run_inference(const ProblemData& data, const InferenceOptions& options)
{
    data.validate();
    InferenceRun run;
    run.selection = LassoSolver(data.X, data.lambda, data.delta, options.path.solver).solve(data.y);
    if (run.selection.active.empty()) return run;
    run.context = build_context(data, run.selection, options);
    const SelectionContext& ctx = run.context;

    IndexSet features = options.variant == Variant::Interaction ? ctx.inter_active_obs : ctx.active_obs;
    if (options.features) features = *options.features;
    run.results.resize(features.size());

    parallel_for(features.size(), options.threads, [&](std::size_t i) {
        SelectiveResult& r = run.results[i];
        const auto start = std::chrono::steady_clock::now();
        r.feature = features[i];
        r.variant = options.variant;
        r.label = std::to_string(r.feature);
        if (options.variant == Variant::Interaction &&
            r.feature >= 0 && r.feature < static_cast<int>(ctx.inter_pairs.size())) {
            const auto& pr = ctx.inter_pairs[static_cast<std::size_t>(r.feature)];
            r.label = std::to_string(pr.first) + "x" + std::to_string(pr.second);
        }
        try {
            const TestTarget target = make_target(options.variant, r.feature, ctx, options.window_sigmas);
            r.z_obs = target.z_obs;
            r.sigma2 = target.sigma2;
            RegionResult region = variant_region(target, ctx, options, r.segments_visited);
            if (options.extra) {
                region.region = region.region.intersect(options.extra(target));
                if (region.region.empty()) {
                    throw Error(ErrorKind::EmptyRegion, "extra conditioning leaves no admissible z");
                }
            }
            r.region = std::move(region.region);
            r.matched_segments = region.matched_segments;
            r.p_value = selective_p_value(target, r.region);
            if (options.compute_ci) {
                std::tie(r.ci_lo, r.ci_hi) = selective_ci(target, r.region, options.alpha);
            }
        } catch (const Error& e) {
            r.error = e;
        }
        r.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });
    return run;
}

void write_results_csv(std::ostream& out, const std::vector<SelectiveResult>& results)
{
    out << "feature,label,variant,z_obs,sigma2,p_value,ci_lo,ci_hi,region,matched_segments,"
           "segments_visited,wall_seconds,error\n";
    for (const SelectiveResult& r : results) {
        out << r.feature << ',' << r.label << ',' << variant_name(r.variant) << ','
            << format_double(r.z_obs) << ',' << format_double(r.sigma2) << ',';
        if (r.ok()) {
            out << format_double(r.p_value) << ',' << format_double(r.ci_lo) << ','
                << format_double(r.ci_hi) << ",\"" << format_region(r.region) << "\",";
        } else {
            out << ",,,,";
        }
        out << r.matched_segments << ',' << r.segments_visited << ',' << format_double(r.wall_seconds)
            << ',' << (r.ok() ? "" : std::string(error_name(r.error->kind()))) << '\n';
    }
}

void write_results_json(std::ostream& out, const std::vector<SelectiveResult>& results)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const SelectiveResult& r : results) {
        nlohmann::json rec;
        rec["feature"] = r.feature;
        rec["label"] = r.label;
        rec["variant"] = variant_name(r.variant);
        rec["z_obs"] = r.z_obs;
        rec["sigma2"] = r.sigma2;
        rec["matched_segments"] = r.matched_segments;
        rec["segments_visited"] = r.segments_visited;
        rec["wall_seconds"] = r.wall_seconds;
        if (r.ok()) {
            rec["p_value"] = r.p_value;
            rec["ci"] = {r.ci_lo, r.ci_hi};
            nlohmann::json region = nlohmann::json::array();
            for (const Interval& iv : r.region.intervals()) region.push_back({iv.lo, iv.hi});
            rec["region"] = std::move(region);
        } else {
            rec["error"] = error_name(r.error->kind());
            rec["message"] = r.error->what();
        }
        arr.push_back(std::move(rec));
    }
    out << arr.dump(2) << '\n';
}

} // namespace silasso
