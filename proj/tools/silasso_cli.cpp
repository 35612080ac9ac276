#include <silasso/cv_event.hpp>
#include <silasso/experiments.hpp>
#include <silasso/selective_inference.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace silasso;

namespace {

constexpr int kExitMalformed = 2;
constexpr int kExitNumerical = 3;

// Bad user input (files, flags, config); maps to exit code 2.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double parse_number(const std::string& cell, const std::string& where)
{
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw InputError(where + ": not a number: '" + cell + "'");
    }
    while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
    if (used != cell.size()) throw InputError(where + ": not a number: '" + cell + "'");
    if (!std::isfinite(v)) throw InputError(where + ": non-finite value");
    return v;
}

Matrix read_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            row.push_back(parse_number(cell, path + ":" + std::to_string(lineno)));
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw InputError(path + ":" + std::to_string(lineno) + ": ragged row");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError(path + ": empty file");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

Vector read_vector(const std::string& path)
{
    const Matrix m = read_csv(path);
    if (m.cols() == 1) return m.col(0);
    if (m.rows() == 1) return m.row(0).transpose();
    throw InputError(path + ": expected a single column");
}

Matrix read_sigma(const std::string& spec, Eigen::Index n)
{
    if (spec == "identity") return Matrix::Identity(n, n);
    if (spec.rfind("scalar:", 0) == 0) {
        const double v = parse_number(spec.substr(7), "--sigma");
        if (!(v > 0)) throw InputError("--sigma scalar must be positive");
        return v * Matrix::Identity(n, n);
    }
    Matrix s = read_csv(spec);
    if (s.rows() != n || s.cols() != n) {
        throw InputError("--sigma: expected an " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
    }
    return s;
}

std::vector<double> parse_grid(const std::string& text)
{
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) grid.push_back(parse_number(cell, "--lambda-grid"));
    if (grid.empty()) throw InputError("--lambda-grid is empty");
    return grid;
}

struct InferArgs {
    std::string x, y, sigma = "identity", variant = "tn-a", lambda_grid = "0.5,1,2", out = "results/infer";
    double lambda = 1.0, delta = 0.0, alpha = 0.05, zmin_sigmas = 20.0, cutoff = 1.0, lambda_stable = 0.0;
    bool cv = false;
    int folds = 5, threads = 1;
    std::uint64_t seed = 1;
};

int cmd_infer(const InferArgs& a)
{
    ProblemData data;
    data.X = read_csv(a.x);
    data.y = read_vector(a.y);
    if (data.y.size() != data.X.rows()) throw InputError("--x and --y have different row counts");
    data.sigma = read_sigma(a.sigma, data.X.rows());
    data.lambda = a.lambda;
    data.delta = a.delta;

    InferenceOptions options;
    const bool validation = a.variant == "tn-validation";
    try {
        options.variant = validation ? Variant::TnA : parse_variant(a.variant);
    } catch (const Error& e) {
        throw InputError(e.what());
    }
    options.alpha = a.alpha;
    options.window_sigmas = a.zmin_sigmas;
    options.cutoff = a.cutoff;
    options.lambda_stable = a.lambda_stable;
    options.threads = a.threads;

    nlohmann::json manifest = {{"variant", a.variant}, {"alpha", a.alpha}, {"n", data.n()},
                               {"p", data.p()},        {"delta", a.delta}, {"seed", a.seed}};
    CvConfig cv;
    if (a.cv || validation) {
        cv.lambda_grid = parse_grid(a.lambda_grid);
        cv.folds = CvConfig::kfold(static_cast<int>(data.n()), a.folds, a.seed);
        cv.lambda_obs = select_lambda(data, cv.lambda_grid, cv.folds);
        data.lambda = cv.lambda_obs;
        options.extra = [&](const TestTarget& t) { return cv_selection_region(data, t, cv); };
        manifest["cv"] = {{"lambda_grid", cv.lambda_grid}, {"folds", a.folds}, {"selected_lambda", cv.lambda_obs}};
    }
    manifest["lambda"] = data.lambda;

    const InferenceRun run = run_inference(data, options);
    manifest["active_set"] = run.selection.active;
    manifest["tested"] = run.results.size();

    fs::create_directories(a.out);
    {
        std::ofstream f(fs::path(a.out) / "results.csv");
        write_results_csv(f, run.results);
    }
    {
        std::ofstream f(fs::path(a.out) / "results.json");
        write_results_json(f, run.results);
    }
    {
        std::ofstream f(fs::path(a.out) / "manifest.json");
        f << manifest.dump(2) << '\n';
    }
    std::cout << "selected " << run.selection.active.size() << " feature(s) at lambda " << data.lambda
              << "; results in " << a.out << '\n';

    int failures = 0;
    for (const SelectiveResult& r : run.results) {
        if (r.ok()) continue;
        ++failures;
        std::cerr << "feature " << r.label << ": " << r.error->what() << '\n';
    }
    return failures ? kExitNumerical : 0;
}

struct ExperimentArgs {
    std::string study, config, variant, out = "results";
    std::optional<std::uint64_t> seed;
    std::optional<int> n, p, trials, threads, max_features;
    std::optional<double> delta, lambda;
};

nlohmann::json load_config(const std::string& path)
{
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

template <class Config>
Config from_config(const nlohmann::json& j)
{
    try {
        return j.get<Config>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }
}

// Fields shared by every study.
template <class Config>
void common_overrides(Config& c, const ExperimentArgs& a)
{
    if (a.seed) c.seed = *a.seed;
    if (a.threads) c.threads = *a.threads;
}

int cmd_experiment(const ExperimentArgs& a)
{
    using namespace silasso::experiments;
    const nlohmann::json cfg = load_config(a.config);
    StudyOutput out;
    if (a.study == "fpr") {
        auto c = from_config<FprConfig>(cfg);
        common_overrides(c, a);
        if (a.variant.size()) c.methods = {a.variant};
        if (a.n) c.ns = {*a.n};
        if (a.p) c.p = *a.p;
        if (a.trials) c.trials = *a.trials;
        if (a.lambda) c.lambda = *a.lambda;
        out = run_fpr_study(c);
    } else if (a.study == "tpr") {
        auto c = from_config<TprConfig>(cfg);
        common_overrides(c, a);
        if (a.variant.size()) c.methods = {a.variant};
        if (a.n) c.ns = {*a.n};
        if (a.p) c.p = *a.p;
        if (a.trials) c.trials = *a.trials;
        if (a.lambda) c.lambda = *a.lambda;
        out = run_tpr_study(c);
    } else if (a.study == "ci") {
        auto c = from_config<CiConfig>(cfg);
        common_overrides(c, a);
        if (a.variant.size()) c.methods = {a.variant};
        if (a.n) c.n = *a.n;
        if (a.p) c.p = *a.p;
        if (a.trials) c.trials = *a.trials;
        if (a.lambda) c.lambda = *a.lambda;
        out = run_ci_study(c);
    } else if (a.study == "qq") {
        auto c = from_config<QqConfig>(cfg);
        common_overrides(c, a);
        if (a.variant.size()) c.variants = {a.variant};
        if (a.n) c.n = *a.n;
        if (a.p) c.p = *a.p;
        if (a.trials) c.samples = *a.trials;
        if (a.lambda) c.lambda = *a.lambda;
        out = run_pivot_qq(c);
    } else if (a.study == "scaling") {
        auto c = from_config<ScalingConfig>(cfg);
        common_overrides(c, a);
        if (a.n || a.p || a.delta || a.lambda || a.trials || a.max_features) {
            ScalingShape s = c.shapes.empty() ? ScalingShape{} : c.shapes.front();
            if (a.delta && *a.delta > 0) {
                // Per-sample lambda scale: a value that selects well over n
                // features on the synthetic design, and only a sample of them timed.
                s.delta = *a.delta;
                s.lambda = 0.05;
                s.trials = 1;
                s.max_features = 10;
            }
            if (a.n) s.n = *a.n;
            if (a.p) s.p = *a.p;
            if (a.lambda) s.lambda = *a.lambda;
            if (a.trials) s.trials = *a.trials;
            if (a.max_features) s.max_features = *a.max_features;
            c.shapes = {s};
        }
        out = run_scaling_study(c);
    } else {
        throw InputError("unknown study '" + a.study + "' (expected fpr, tpr, ci, qq or scaling)");
    }
    const fs::path dir = write_study(out, a.out);
    std::cout << dir.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Selective inference for Lasso-selected features along the solution path"};
    app.require_subcommand(1);

    InferArgs ia;
    CLI::App* infer = app.add_subcommand("infer", "Test the features selected at the observed response");
    infer->add_option("--x", ia.x, "Design matrix, headerless CSV (n rows, p columns)")->required();
    infer->add_option("--y", ia.y, "Response, headerless CSV (n rows)")->required();
    infer->add_option("--sigma", ia.sigma, "Noise covariance: identity, scalar:<v>, or an n x n CSV file")
        ->capture_default_str();
    infer->add_option("--lambda", ia.lambda, "Regularization strength")->capture_default_str();
    infer->add_option("--elastic-delta", ia.delta, "Ridge weight; > 0 switches to the elastic net")
        ->capture_default_str();
    infer->add_option("--variant", ia.variant,
                      "tn-a, tn-as, full, marginal, tn-l1, tn-custom, interaction or tn-validation")
        ->capture_default_str();
    infer->add_option("--alpha", ia.alpha, "Significance level for the intervals")->capture_default_str();
    infer->add_option("--zmin-sigmas", ia.zmin_sigmas, "Half-width of the search window in sd units")
        ->capture_default_str();
    infer->add_flag("--cv", ia.cv, "Choose lambda by cross-validation and condition on that choice");
    infer->add_option("--lambda-grid", ia.lambda_grid, "Comma-separated candidate lambdas for --cv")
        ->capture_default_str();
    infer->add_option("--folds", ia.folds, "Cross-validation folds")->capture_default_str()->check(CLI::Range(2, 1000000));
    infer->add_option("--cutoff", ia.cutoff, "OLS magnitude cutoff for tn-custom")->capture_default_str();
    infer->add_option("--lambda-stable", ia.lambda_stable, "Larger lambda defining the tn-l1 stable set")
        ->capture_default_str();
    infer->add_option("--threads", ia.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    infer->add_option("--seed", ia.seed, "Seed for the fold split")->capture_default_str();
    infer->add_option("--out", ia.out, "Output directory")->capture_default_str();

    ExperimentArgs ea;
    CLI::App* exp = app.add_subcommand("experiment", "Run a simulation study and write its tables");
    exp->add_option("study", ea.study, "fpr, tpr, ci, qq or scaling")->required();
    exp->add_option("--config", ea.config, "JSON config; missing fields keep their defaults");
    exp->add_option("--seed", ea.seed, "Overrides the config seed");
    exp->add_option("--variant", ea.variant, "Run a single method or variant");
    exp->add_option("--n", ea.n, "Sample size");
    exp->add_option("--p", ea.p, "Feature count");
    exp->add_option("--elastic-delta", ea.delta,
                    "Scaling study: ridge weight; also sets lambda 0.05, 1 trial and 10 timed features");
    exp->add_option("--lambda", ea.lambda, "Regularization strength");
    exp->add_option("--trials", ea.trials, "Trials (pivot samples for qq)");
    exp->add_option("--max-features", ea.max_features, "Scaling study: features timed per trial");
    exp->add_option("--threads", ea.threads, "Worker threads")->check(CLI::PositiveNumber);
    exp->add_option("--out", ea.out, "Results root")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitMalformed;
    }

    try {
        if (*infer) return cmd_infer(ia);
        return cmd_experiment(ea);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMalformed;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == ErrorKind::InvalidArgument ? kExitMalformed : kExitNumerical;
    }
}
