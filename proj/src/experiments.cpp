#include <silasso/experiments.hpp>
#include <silasso/parallel.hpp>

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

namespace silasso::experiments {

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Salts keep the data stream and a method's own stream apart.
constexpr std::uint64_t kMethodSalt = 0x6d6574686f64ULL;
constexpr std::uint64_t kPickSalt = 0x7069636bULL;

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }

double elapsed(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Vector signal_beta(int p, int count, double value)
{
    Vector beta = Vector::Zero(p);
    for (int j = 0; j < std::min(p, count); ++j) beta(j) = value;
    return beta;
}

IndexSet first_indices(int count)
{
    IndexSet s(static_cast<std::size_t>(std::max(0, count)));
    std::iota(s.begin(), s.end(), 0);
    return s;
}

double median(std::vector<double> v)
{
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double binomial_se(double rate, double count) { return count > 0 ? std::sqrt(rate * (1 - rate) / count) : 0.0; }

bool contains_index(const IndexSet& s, int j) { return std::find(s.begin(), s.end(), j) != s.end(); }

// Selection, context and the list of features a selective method will test.
struct Prepared {
    ProblemData data;
    InferenceOptions options;
    std::optional<CvConfig> cv;
    LassoSolution selection;
    SelectionContext context;
    IndexSet hypotheses;
};

// Filled in place: the context points at prep.data.
void prepare(Prepared& prep, const Method& method, const ProblemData& data, std::uint64_t seed,
             const MethodSettings& settings)
{
    prep.data = data;
    prep.options.variant = method.variant;
    prep.options.alpha = settings.alpha;
    prep.options.lambda_stable = settings.lambda_stable;
    prep.options.cutoff = settings.cutoff;
    prep.options.compute_ci = settings.compute_ci;
    if (!method.cv_grid.empty()) {
        CvConfig cv;
        cv.lambda_grid = method.cv_grid;
        cv.folds = CvConfig::kfold(static_cast<int>(data.n()), settings.folds, seed);
        cv.lambda_obs = select_lambda(data, cv.lambda_grid, cv.folds);
        prep.data.lambda = cv.lambda_obs;
        prep.cv = cv;
    }
    prep.selection = LassoSolver(prep.data.X, prep.data.lambda, prep.data.delta, prep.options.path.solver)
                         .solve(prep.data.y);
    if (prep.selection.active.empty()) return;
    prep.context = build_context(prep.data, prep.selection, prep.options);
    prep.hypotheses = method.variant == Variant::Interaction ? prep.context.inter_active_obs
                                                             : prep.context.active_obs;
}

// Runs run_inference on prepared data for the given features.
InferenceRun run_prepared(Prepared& prep, const Method& method, const IndexSet& features)
{
    InferenceOptions options = prep.options;
    options.features = features;
    if (prep.cv) {
        const CvConfig* cv = &*prep.cv;
        const ProblemData* d = &prep.data;
        if (method.overconditioned) {
            options.extra = [cv, d](const TestTarget& t) { return overconditioned_cv_region(*d, t, *cv); };
        } else {
            options.extra = [cv, d](const TestTarget& t) { return cv_selection_region(*d, t, *cv); };
        }
    } else {
        options.extra = nullptr;
    }
    return run_inference(prep.data, options);
}

TrialOutcome evaluate_selective(const Method& method, const ProblemData& data, const Vector& mu,
                                std::uint64_t seed, const MethodSettings& settings)
{
    TrialOutcome out;
    out.method = method.name;
    Prepared prep;
    prepare(prep, method, data, seed, settings);
    out.lambda_used = prep.data.lambda;
    out.selected = prep.hypotheses;
    if (out.selected.empty()) return out;

    IndexSet features = out.selected;
    if (settings.only && method.variant != Variant::Interaction) {
        IndexSet kept;
        for (int j : features) {
            if (contains_index(*settings.only, j)) kept.push_back(j);
        }
        features = std::move(kept);
    }
    if (features.empty()) return out;

    const InferenceRun run = run_prepared(prep, method, features);
    const double threshold = settings.alpha / static_cast<double>(out.hypotheses());
    for (const SelectiveResult& r : run.results) {
        if (!r.ok()) {
            if (!out.error) out.error = r.error->what();
            continue;
        }
        FeatureOutcome f;
        f.feature = r.feature;
        f.p_value = r.p_value;
        f.rejected = r.p_value < threshold;
        f.ci_lo = r.ci_lo;
        f.ci_hi = r.ci_hi;
        f.truth = make_target(method.variant, r.feature, prep.context, prep.options.window_sigmas).eta.dot(mu);
        f.matched_segments = r.matched_segments;
        f.segments_visited = r.segments_visited;
        f.seconds = r.wall_seconds;
        out.features.push_back(f);
    }
    return out;
}

// Even random split: Lasso on the first half, classical z-tests on the second.
TrialOutcome evaluate_splitting(const Method& method, const ProblemData& data, const Vector& mu,
                                std::uint64_t seed, const MethodSettings& settings)
{
    TrialOutcome out;
    out.method = method.name;
    out.lambda_used = data.lambda;
    const int n = static_cast<int>(data.n());
    if (n < 4) throw Error(ErrorKind::InvalidArgument, "data splitting needs at least four rows");

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    const int half = n / 2;
    IndexSet first(perm.begin(), perm.begin() + half);
    IndexSet second(perm.begin() + half, perm.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());

    const Matrix X1 = data.X(first, Eigen::all);
    const Vector y1 = data.y(first);
    const LassoSolution sel = LassoSolver(X1, data.lambda, data.delta).solve(y1);
    out.selected = sel.active;
    if (out.selected.empty()) return out;
    if (out.selected.size() >= second.size()) {
        out.error = "RankDeficient: selected model larger than the inference half";
        return out;
    }

    const Matrix X2 = select_columns(data.X(second, Eigen::all), out.selected);
    const Vector y2 = data.y(second);
    const Vector mu2 = mu(second);
    const Matrix S2 = data.sigma(second, second);
    Matrix gram_inv;
    try {
        gram_inv = SpdFactor(X2.transpose() * X2).solve(Matrix(Matrix::Identity(X2.cols(), X2.cols())));
    } catch (const Error& e) {
        out.error = e.what();
        return out;
    }
    const Matrix etas = X2 * gram_inv; // column k is eta for the k-th selected feature
    const double zq = boost::math::quantile(boost::math::normal(), 1 - settings.alpha / 2);
    const double threshold = settings.alpha / static_cast<double>(out.hypotheses());
    for (std::size_t k = 0; k < out.selected.size(); ++k) {
        const int j = out.selected[k];
        if (settings.only && !contains_index(*settings.only, j)) continue;
        const auto start = std::chrono::steady_clock::now();
        const Vector eta = etas.col(static_cast<Eigen::Index>(k));
        const double est = eta.dot(y2);
        const double se = std::sqrt(eta.dot(S2 * eta));
        FeatureOutcome f;
        f.feature = j;
        f.p_value = 2 * std_normal_cdf(-std::abs(est) / se);
        f.rejected = f.p_value < threshold;
        f.ci_lo = est - zq * se;
        f.ci_hi = est + zq * se;
        f.truth = eta.dot(mu2);
        f.seconds = elapsed(start);
        out.features.push_back(f);
    }
    return out;
}

SyntheticSpec make_spec(int n, int p, Vector beta, NoiseSpec noise, double lambda, std::uint64_t seed)
{
    SyntheticSpec spec;
    spec.n = n;
    spec.p = p;
    spec.beta_true = std::move(beta);
    spec.noise = noise;
    spec.lambda = lambda;
    spec.seed = seed;
    return spec;
}

// Data seed for one cell of a study grid, so cells do not share draws.
std::uint64_t cell_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
{
    return splitmix64(seed ^ splitmix64(a * 0x100000001b3ULL + b));
}

std::vector<Method> parse_methods(const std::vector<std::string>& names)
{
    std::vector<Method> methods;
    for (const std::string& m : names) methods.push_back(parse_method(m));
    return methods;
}

void check_positive(int v, const char* what)
{
    if (v < 1) throw Error(ErrorKind::InvalidArgument, std::string(what) + " must be at least 1");
}

} // namespace

std::string_view noise_name(NoiseFamily f)
{
    switch (f) {
    case NoiseFamily::Gaussian: return "gaussian";
    case NoiseFamily::Laplace: return "laplace";
    case NoiseFamily::SkewNormal: return "skew-normal";
    case NoiseFamily::StudentT: return "student-t";
    }
    return "unknown";
}

NoiseFamily parse_noise(std::string_view name)
{
    for (NoiseFamily f : {NoiseFamily::Gaussian, NoiseFamily::Laplace, NoiseFamily::SkewNormal,
                          NoiseFamily::StudentT}) {
        if (noise_name(f) == name) return f;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown noise family '" + std::string(name) + "'");
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial)
{
    return splitmix64(splitmix64(seed) ^ (trial + 0x632be59bd9b4e019ULL));
}

double sample_noise(const NoiseSpec& spec, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    switch (spec.family) {
    case NoiseFamily::Gaussian: return spec.sd * normal(rng);
    case NoiseFamily::Laplace: {
        std::exponential_distribution<double> ex;
        const double e1 = ex(rng);
        const double e2 = ex(rng);
        return spec.sd / std::sqrt(2.0) * (e1 - e2);
    }
    case NoiseFamily::SkewNormal: {
        const double d = spec.skew / std::sqrt(1 + spec.skew * spec.skew);
        const double u0 = normal(rng);
        const double u1 = normal(rng);
        const double x = d * std::abs(u0) + std::sqrt(1 - d * d) * u1;
        const double mean = d * std::sqrt(2 / M_PI);
        const double sd = std::sqrt(1 - 2 * d * d / M_PI);
        return spec.sd * (x - mean) / sd;
    }
    case NoiseFamily::StudentT: {
        std::student_t_distribution<double> t(spec.dof);
        return spec.sd * std::sqrt((spec.dof - 2) / spec.dof) * t(rng);
    }
    }
    return 0.0;
}

ProblemData generate(const SyntheticSpec& spec, int trial)
{
    if (spec.n < 1 || spec.p < 1) throw Error(ErrorKind::InvalidArgument, "n and p must be positive");
    if (spec.beta_true.size() != spec.p) throw Error(ErrorKind::InvalidArgument, "beta_true must have length p");
    if (!(spec.noise.sd > 0)) throw Error(ErrorKind::InvalidArgument, "noise sd must be positive");
    if (spec.noise.family == NoiseFamily::StudentT && !(spec.noise.dof > 2)) {
        throw Error(ErrorKind::InvalidArgument, "student-t noise needs dof > 2");
    }
    std::mt19937_64 rng(trial_seed(spec.seed, static_cast<std::uint64_t>(trial)));
    std::normal_distribution<double> normal;
    ProblemData d;
    d.X.resize(spec.n, spec.p);
    // Row-major fill so a row's draws do not depend on p's layout in memory.
    for (int i = 0; i < spec.n; ++i) {
        for (int j = 0; j < spec.p; ++j) d.X(i, j) = normal(rng);
    }
    d.y = d.X * spec.beta_true;
    for (int i = 0; i < spec.n; ++i) d.y(i) += sample_noise(spec.noise, rng);
    d.lambda = spec.lambda;
    d.delta = spec.delta;
    double var = spec.noise.sd * spec.noise.sd;
    if (spec.estimate_sigma) {
        if (spec.n <= spec.p) throw Error(ErrorKind::RankDeficient, "variance estimate needs n > p");
        const Vector resid = d.y - d.X * least_squares_on(first_indices(spec.p), d.X, d.y);
        var = resid.squaredNorm() / static_cast<double>(spec.n - spec.p);
    }
    d.sigma = var * Matrix::Identity(spec.n, spec.n);
    return d;
}

std::vector<double> dyadic_grid(int lo, int hi)
{
    std::vector<double> grid;
    for (int e = lo; e <= hi; ++e) grid.push_back(std::ldexp(1.0, e));
    return grid;
}

Method parse_method(std::string_view name)
{
    Method m;
    m.name = std::string(name);
    if (name == "ds") {
        m.kind = MethodKind::DataSplitting;
    } else if (name == "tn-validation" || name == "cv-small") {
        m.cv_grid = dyadic_grid(-1, 1);
    } else if (name == "cv-large") {
        m.cv_grid = dyadic_grid(-10, 10);
    } else if (name == "oc-small") {
        m.cv_grid = dyadic_grid(-1, 1);
        m.overconditioned = true;
    } else if (name == "oc-large") {
        m.cv_grid = dyadic_grid(-10, 10);
        m.overconditioned = true;
    } else {
        m.variant = parse_variant(name);
    }
    return m;
}

TrialOutcome evaluate_method(const Method& method, const ProblemData& data, const Vector& mu,
                             std::uint64_t seed, const MethodSettings& settings)
{
    try {
        if (method.kind == MethodKind::DataSplitting) return evaluate_splitting(method, data, mu, seed, settings);
        return evaluate_selective(method, data, mu, seed, settings);
    } catch (const Error& e) {
        TrialOutcome out;
        out.method = method.name;
        out.error = e.what();
        return out;
    }
}

KsResult ks_uniform(std::vector<double> samples)
{
    if (samples.empty()) throw Error(ErrorKind::InvalidArgument, "KS test needs samples");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double u = samples[i];
        d = std::max({d, (static_cast<double>(i) + 1) / n - u, u - static_cast<double>(i) / n});
    }
    // Asymptotic Kolmogorov series with Stephens' finite-n correction.
    const double rn = std::sqrt(n);
    const double t = (rn + 0.12 + 0.11 / rn) * d;
    double q = 0.0;
    if (t < 0.2) {
        q = 1.0;
    } else {
        for (int k = 1; k <= 100; ++k) {
            const double term = std::exp(-2.0 * k * k * t * t);
            q += (k % 2 ? 2.0 : -2.0) * term;
            if (term < 1e-16) break;
        }
    }
    return {d, std::clamp(q, 0.0, 1.0)};
}

void Table::write_csv(std::ostream& out) const
{
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

std::string config_hash(const nlohmann::json& config)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::filesystem::path write_study(const StudyOutput& out, const std::filesystem::path& root)
{
    // The worker count never changes the tables, so it stays out of the hash.
    nlohmann::json hashed = out.config;
    if (hashed.is_object()) hashed.erase("threads");
    const std::string hash = config_hash(hashed);
    const std::filesystem::path dir = root / out.study / hash;
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "table.csv");
        out.table.write_csv(f);
    }
    nlohmann::json files = {"table.csv"};
    if (!out.pivots.empty()) {
        std::ofstream f(dir / "pivots.csv");
        f << "variant,pivot\n";
        for (const auto& [v, x] : out.pivots) f << v << ',' << fmt(x) << '\n';
        files.push_back("pivots.csv");
    }
    const nlohmann::json manifest = {{"study", out.study},
                                     {"config", out.config},
                                     {"config_hash", hash},
                                     {"files", files},
                                     {"summary", out.summary}};
    std::ofstream f(dir / "manifest.json");
    f << manifest.dump(2) << '\n';
    return dir;
}

StudyOutput run_fpr_study(const FprConfig& config)
{
    check_positive(config.trials, "trials");
    check_positive(config.p, "p");
    const std::vector<Method> methods = parse_methods(config.methods);
    StudyOutput out;
    out.study = "fpr";
    out.config = config;
    out.table.header = {"noise", "n", "method", "lambda", "trials", "trials_with_selection",
                        "trials_rejecting", "fpr", "se", "failed_features", "failed_trials"};
    out.summary = nlohmann::json::object();

    for (std::size_t ni = 0; ni < config.noises.size(); ++ni) {
        NoiseSpec noise;
        noise.family = parse_noise(config.noises[ni]);
        const double lambda = noise.family == NoiseFamily::Gaussian ? config.lambda : config.lambda_non_gaussian;
        for (int n : config.ns) {
            SyntheticSpec spec = make_spec(n, config.p, Vector::Zero(config.p), noise, lambda,
                                           cell_seed(config.seed, ni, static_cast<std::uint64_t>(n)));
            spec.estimate_sigma = config.estimate_sigma;
            const auto trials = static_cast<std::size_t>(config.trials);
            // outcomes[t][m]
            std::vector<std::vector<TrialOutcome>> outcomes(trials);
            MethodSettings settings;
            settings.alpha = config.alpha;
            parallel_for(trials, config.threads, [&](std::size_t t) {
                const ProblemData data = generate(spec, static_cast<int>(t));
                const Vector mu = data.X * spec.beta_true;
                const std::uint64_t ms = trial_seed(spec.seed ^ kMethodSalt, t);
                for (const Method& m : methods) outcomes[t].push_back(evaluate_method(m, data, mu, ms, settings));
            });
            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                int with_sel = 0, rejecting = 0, failed = 0, failed_trials = 0;
                for (std::size_t t = 0; t < trials; ++t) {
                    const TrialOutcome& o = outcomes[t][mi];
                    failed_trials += o.error.has_value();
                    if (o.hypotheses() == 0) continue;
                    ++with_sel;
                    failed += static_cast<int>(o.hypotheses() - o.features.size());
                    if (std::any_of(o.features.begin(), o.features.end(),
                                    [](const FeatureOutcome& f) { return f.rejected; })) {
                        ++rejecting;
                    }
                }
                const double fpr = with_sel ? static_cast<double>(rejecting) / with_sel : 0.0;
                out.table.rows.push_back({std::string(noise_name(noise.family)), fmt(n), methods[mi].name,
                                          fmt(lambda), fmt(config.trials), fmt(with_sel), fmt(rejecting),
                                          fmt(fpr), fmt(binomial_se(fpr, with_sel)), fmt(failed),
                                          fmt(failed_trials)});
                out.summary[std::string(noise_name(noise.family))][std::to_string(n)][methods[mi].name] = fpr;
            }
        }
    }
    return out;
}

StudyOutput run_tpr_study(const TprConfig& config)
{
    check_positive(config.trials, "trials");
    check_positive(config.repeats, "repeats");
    const std::vector<Method> methods = parse_methods(config.methods);
    StudyOutput out;
    out.study = "tpr";
    out.config = config;
    out.table.header = {"n", "method", "repeat", "signal_selected", "signal_rejected", "tpr", "failed_features"};
    MethodSettings settings;
    settings.alpha = config.alpha;
    settings.folds = config.folds;
    settings.only = first_indices(config.signal_count);

    for (int n : config.ns) {
        const SyntheticSpec spec =
            make_spec(n, config.p, signal_beta(config.p, config.signal_count, config.signal), NoiseSpec{},
                      config.lambda, cell_seed(config.seed, static_cast<std::uint64_t>(n)));
        const auto total = static_cast<std::size_t>(config.trials) * static_cast<std::size_t>(config.repeats);
        std::vector<std::vector<TrialOutcome>> outcomes(total);
        parallel_for(total, config.threads, [&](std::size_t t) {
            const ProblemData data = generate(spec, static_cast<int>(t));
            const Vector mu = data.X * spec.beta_true;
            const std::uint64_t ms = trial_seed(spec.seed ^ kMethodSalt, t);
            for (const Method& m : methods) outcomes[t].push_back(evaluate_method(m, data, mu, ms, settings));
        });
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            std::vector<double> rates;
            for (int r = 0; r < config.repeats; ++r) {
                int selected = 0, rejected = 0, failed = 0;
                for (int t = 0; t < config.trials; ++t) {
                    const TrialOutcome& o =
                        outcomes[static_cast<std::size_t>(r * config.trials + t)][mi];
                    for (int j : o.selected) selected += contains_index(*settings.only, j);
                    int tested = 0;
                    for (const FeatureOutcome& f : o.features) {
                        ++tested;
                        rejected += f.rejected;
                    }
                    int signal_selected = 0;
                    for (int j : o.selected) signal_selected += contains_index(*settings.only, j);
                    failed += signal_selected - tested;
                }
                const double tpr = selected ? static_cast<double>(rejected) / selected : 0.0;
                rates.push_back(tpr);
                out.table.rows.push_back({fmt(n), methods[mi].name, fmt(r), fmt(selected), fmt(rejected),
                                          fmt(tpr), fmt(failed)});
            }
            out.summary["mean_tpr"][std::to_string(n)][methods[mi].name] =
                std::accumulate(rates.begin(), rates.end(), 0.0) / static_cast<double>(rates.size());
        }
    }
    return out;
}

StudyOutput run_ci_study(const CiConfig& config)
{
    check_positive(config.trials, "trials");
    const std::vector<Method> methods = parse_methods(config.methods);
    StudyOutput out;
    out.study = "ci";
    out.config = config;
    out.table.header = {"trial", "method", "feature", "selected_by_all", "ci_lo", "ci_hi", "length", "truth", "covered"};
    MethodSettings settings;
    settings.alpha = config.alpha;
    settings.folds = config.folds;
    settings.compute_ci = true;

    const SyntheticSpec spec =
        make_spec(config.n, config.p, signal_beta(config.p, config.signal_count, config.signal), NoiseSpec{},
                  config.lambda, cell_seed(config.seed, 0));
    const auto trials = static_cast<std::size_t>(config.trials);
    std::vector<std::vector<TrialOutcome>> outcomes(trials);
    parallel_for(trials, config.threads, [&](std::size_t t) {
        const ProblemData data = generate(spec, static_cast<int>(t));
        const Vector mu = data.X * spec.beta_true;
        const std::uint64_t ms = trial_seed(spec.seed ^ kMethodSalt, t);
        for (const Method& m : methods) outcomes[t].push_back(evaluate_method(m, data, mu, ms, settings));
    });

    std::map<std::string, std::vector<double>> common_lengths;
    std::map<std::string, std::pair<int, int>> coverage; // covered, total
    for (std::size_t t = 0; t < trials; ++t) {
        // Features with a finished interval under every method.
        std::set<int> common;
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            std::set<int> have;
            for (const FeatureOutcome& f : outcomes[t][mi].features) have.insert(f.feature);
            if (mi == 0) {
                common = have;
            } else {
                std::set<int> both;
                std::set_intersection(common.begin(), common.end(), have.begin(), have.end(),
                                      std::inserter(both, both.begin()));
                common = std::move(both);
            }
        }
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            for (const FeatureOutcome& f : outcomes[t][mi].features) {
                const bool in_all = common.count(f.feature) > 0;
                const bool covered = f.ci_lo <= f.truth && f.truth <= f.ci_hi;
                const double len = f.ci_hi - f.ci_lo;
                out.table.rows.push_back({fmt(t), methods[mi].name, fmt(f.feature), fmt(int(in_all)),
                                          fmt(f.ci_lo), fmt(f.ci_hi), fmt(len), fmt(f.truth),
                                          fmt(int(covered))});
                if (in_all) common_lengths[methods[mi].name].push_back(len);
                auto& c = coverage[methods[mi].name];
                c.first += covered;
                c.second += 1;
            }
        }
    }
    for (const Method& m : methods) {
        const auto& c = coverage[m.name];
        out.summary[m.name] = {{"median_length_common", median(common_lengths[m.name])},
                               {"common_features", common_lengths[m.name].size()},
                               {"coverage", c.second ? static_cast<double>(c.first) / c.second : 0.0},
                               {"intervals", c.second}};
    }
    return out;
}

StudyOutput run_pivot_qq(const QqConfig& config)
{
    check_positive(config.samples, "samples");
    StudyOutput out;
    out.study = "qq";
    out.config = config;
    out.table.header = {"variant", "samples", "trials_used", "failed_trials", "ks_statistic", "ks_p_value",
                        "dkw_eps", "within_dkw"};
    const SyntheticSpec spec =
        make_spec(config.n, config.p, signal_beta(config.p, config.signal_count, config.signal), NoiseSpec{},
                  config.lambda, cell_seed(config.seed, 0));
    MethodSettings settings;
    settings.lambda_stable = config.lambda_stable;
    settings.cutoff = config.cutoff;
    settings.folds = config.folds;

    // One trial: a pivot (or nothing) plus the untruncated control value.
    struct Draw {
        std::optional<double> pivot;
        std::optional<double> naive;
        bool failed = false;
    };
    auto draw = [&](const Method& method, std::size_t t) {
        Draw d;
        const ProblemData data = generate(spec, static_cast<int>(t));
        const Vector mu = data.X * spec.beta_true;
        try {
            Prepared prep;
            prepare(prep, method, data, trial_seed(spec.seed ^ kMethodSalt, t), settings);
            if (prep.hypotheses.empty()) return d;
            std::mt19937_64 pick(trial_seed(spec.seed ^ kPickSalt, t));
            const int j = prep.hypotheses[static_cast<std::size_t>(pick() % prep.hypotheses.size())];
            const InferenceRun run = run_prepared(prep, method, {j});
            const SelectiveResult& r = run.results.front();
            if (!r.ok()) {
                d.failed = true;
                return d;
            }
            const TestTarget target = make_target(method.variant, j, prep.context, prep.options.window_sigmas);
            const double truth = target.eta.dot(mu);
            d.pivot = selective_pivot(target, r.region, truth);
            d.naive = std_normal_cdf((target.z_obs - truth) / target.sd());
        } catch (const Error&) {
            d.failed = true;
        }
        return d;
    };

    auto record = [&](const std::string& name, const std::vector<double>& pivots, int used, int failed) {
        const KsResult ks = ks_uniform(pivots);
        const double eps = std::sqrt(std::log(2 / 0.01) / (2 * static_cast<double>(pivots.size())));
        out.table.rows.push_back({name, fmt(pivots.size()), fmt(used), fmt(failed), fmt(ks.statistic),
                                  fmt(ks.p_value), fmt(eps), fmt(int(ks.statistic <= eps))});
        out.summary[name] = {{"ks_statistic", ks.statistic}, {"ks_p_value", ks.p_value}, {"samples", pivots.size()}};
        std::vector<double> sorted = pivots;
        std::sort(sorted.begin(), sorted.end());
        for (double x : sorted) out.pivots.emplace_back(name, x);
    };

    const auto target = static_cast<std::size_t>(config.samples);
    std::vector<double> control;
    for (const std::string& name : config.variants) {
        const Method method = parse_method(name);
        if (method.kind != MethodKind::Selective) {
            throw Error(ErrorKind::InvalidArgument, "QQ study needs a selective variant, got '" + name + "'");
        }
        std::vector<double> pivots;
        std::size_t next = 0;
        int failed = 0;
        // Batches keep the output independent of the thread count: every
        // trial of a batch is evaluated, then consumed in order.
        const std::size_t batch = std::max<std::size_t>(64, static_cast<std::size_t>(config.threads) * 16);
        while (pivots.size() < target) {
            if (next > 50 * target) {
                throw Error(ErrorKind::NoConvergence, "variant '" + name + "' rarely yields a pivot");
            }
            std::vector<Draw> draws(batch);
            parallel_for(batch, config.threads, [&](std::size_t i) { draws[i] = draw(method, next + i); });
            for (const Draw& d : draws) {
                ++next;
                failed += d.failed;
                if (!d.pivot) continue;
                pivots.push_back(*d.pivot);
                if (name == config.variants.front() && control.size() < target) control.push_back(*d.naive);
                if (pivots.size() == target) break;
            }
        }
        record(name, pivots, static_cast<int>(next), failed);
    }
    if (!control.empty()) record("untruncated", control, static_cast<int>(control.size()), 0);
    return out;
}

StudyOutput run_scaling_study(const ScalingConfig& config)
{
    StudyOutput out;
    out.study = "scaling";
    out.config = config;
    out.table.header = {"n", "p", "lambda", "delta", "trial", "active", "features_tested", "failed_features",
                        "mean_segments_visited", "mean_matched_segments", "log2_visited_over_2a",
                        "mean_seconds", "max_seconds"};
    out.summary = nlohmann::json::array();
    for (std::size_t si = 0; si < config.shapes.size(); ++si) {
        const ScalingShape& shape = config.shapes[si];
        check_positive(shape.trials, "trials");
        SyntheticSpec spec = make_spec(shape.n, shape.p, signal_beta(shape.p, shape.signal_count, shape.signal),
                                       NoiseSpec{}, shape.lambda, cell_seed(config.seed, si));
        spec.delta = shape.delta;
        double worst_log2 = -kInf, sum_seconds = 0, max_seconds = 0;
        int min_active = std::numeric_limits<int>::max(), features_total = 0;
        for (int t = 0; t < shape.trials; ++t) {
            const ProblemData data = generate(spec, t);
            InferenceOptions options;
            options.compute_ci = false;
            options.threads = config.threads;
            const LassoSolution sel = LassoSolver(data.X, data.lambda, data.delta).solve(data.y);
            IndexSet features = sel.active;
            if (shape.max_features > 0 && static_cast<int>(features.size()) > shape.max_features) {
                // Spread the tested features over the selected set.
                IndexSet picked;
                const double step = static_cast<double>(features.size()) / shape.max_features;
                for (int k = 0; k < shape.max_features; ++k) {
                    picked.push_back(features[static_cast<std::size_t>(k * step)]);
                }
                features = std::move(picked);
            }
            options.features = features;
            const InferenceRun run = run_inference(data, options);
            const int active = static_cast<int>(run.selection.active.size());
            double visited = 0, matched = 0, secs = 0, secs_max = 0;
            int ok = 0, failed = 0;
            for (const SelectiveResult& r : run.results) {
                if (!r.ok()) {
                    ++failed;
                    continue;
                }
                ++ok;
                visited += r.segments_visited;
                matched += r.matched_segments;
                secs += r.wall_seconds;
                secs_max = std::max(secs_max, r.wall_seconds);
            }
            const double mv = ok ? visited / ok : 0.0;
            const double lg = ok ? std::log2(mv) - active : 0.0;
            out.table.rows.push_back({fmt(shape.n), fmt(shape.p), fmt(shape.lambda), fmt(shape.delta), fmt(t),
                                      fmt(active), fmt(ok), fmt(failed), fmt(mv), fmt(ok ? matched / ok : 0.0),
                                      fmt(lg), fmt(ok ? secs / ok : 0.0), fmt(secs_max)});
            if (ok) worst_log2 = std::max(worst_log2, lg);
            min_active = std::min(min_active, active);
            sum_seconds += secs;
            max_seconds = std::max(max_seconds, secs_max);
            features_total += ok;
        }
        out.summary.push_back({{"n", shape.n},
                               {"p", shape.p},
                               {"lambda", shape.lambda},
                               {"delta", shape.delta},
                               {"min_active", min_active},
                               {"max_log2_visited_over_2a", worst_log2},
                               {"features", features_total},
                               {"mean_seconds", features_total ? sum_seconds / features_total : 0.0},
                               {"max_seconds", max_seconds}});
    }
    return out;
}

} // namespace silasso::experiments
