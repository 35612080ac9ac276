#include <doctest.h>

#include <silasso/experiments.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace silasso;
using namespace silasso::experiments;

namespace {

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string csv(const Table& t)
{
    std::ostringstream os;
    t.write_csv(os);
    return os.str();
}

SyntheticSpec small_spec(int n, int p)
{
    SyntheticSpec spec;
    spec.n = n;
    spec.p = p;
    spec.beta_true = Vector::Zero(p);
    spec.beta_true[0] = 1.0;
    spec.seed = 11;
    return spec;
}

} // namespace

TEST_CASE("generate: same (seed, trial) gives identical data")
{
    const SyntheticSpec spec = small_spec(30, 6);
    const ProblemData a = generate(spec, 4);
    const ProblemData b = generate(spec, 4);
    CHECK(a.X == b.X);
    CHECK(a.y == b.y);
    CHECK(a.sigma == b.sigma);
    const ProblemData c = generate(spec, 5);
    CHECK(a.y != c.y);
    CHECK(trial_seed(1, 0) != trial_seed(1, 1));
    CHECK(trial_seed(1, 0) != trial_seed(2, 0));
}

TEST_CASE("generate: rejects bad specs")
{
    SyntheticSpec spec = small_spec(10, 3);
    spec.noise.sd = 0;
    CHECK_THROWS_AS(generate(spec, 0), Error);
    spec = small_spec(10, 3);
    spec.beta_true = Vector::Zero(2);
    CHECK_THROWS_AS(generate(spec, 0), Error);
    spec = small_spec(10, 3);
    spec.noise.family = NoiseFamily::StudentT;
    spec.noise.dof = 2;
    CHECK_THROWS_AS(generate(spec, 0), Error);
}

TEST_CASE("sample_noise: zero mean and the stated sd for every family")
{
    const int draws = 1000000;
    for (NoiseFamily f : {NoiseFamily::Gaussian, NoiseFamily::Laplace, NoiseFamily::SkewNormal,
                          NoiseFamily::StudentT}) {
        CAPTURE(noise_name(f));
        NoiseSpec spec;
        spec.family = f;
        spec.sd = 1.0;
        std::mt19937_64 rng(trial_seed(3, static_cast<std::uint64_t>(f)));
        double sum = 0, sq = 0;
        for (int i = 0; i < draws; ++i) {
            const double e = sample_noise(spec, rng);
            sum += e;
            sq += e * e;
        }
        const double mean = sum / draws;
        const double var = sq / draws - mean * mean;
        CHECK(std::abs(mean) <= 4 * spec.sd / 1000);
        CHECK(std::abs(var - 1) <= 0.01);
    }
    CHECK(parse_noise("skew-normal") == NoiseFamily::SkewNormal);
    CHECK_THROWS_AS(parse_noise("cauchy"), Error);
}

TEST_CASE("generate: estimated variance is the residual variance")
{
    SyntheticSpec spec = small_spec(200, 4);
    spec.noise.sd = 2.0;
    spec.estimate_sigma = true;
    const ProblemData d = generate(spec, 0);
    CHECK(d.sigma(0, 0) == doctest::Approx(4.0).epsilon(0.25));
    CHECK(d.sigma(1, 0) == 0.0);
}

TEST_CASE("ks_uniform: statistic and critical values")
{
    // Samples placed so that D is exactly the chosen value.
    auto with_d = [](int n, double scaled) {
        const double rn = std::sqrt(static_cast<double>(n));
        const double d = scaled / (rn + 0.12 + 0.11 / rn);
        std::vector<double> s;
        for (int i = 0; i < n; ++i) s.push_back((i + 1.0) / n - d);
        return std::make_pair(d, ks_uniform(s));
    };
    const auto [d05, r05] = with_d(5000, 1.3581);
    CHECK(r05.statistic == doctest::Approx(d05).epsilon(1e-12));
    CHECK(r05.p_value == doctest::Approx(0.05).epsilon(0.005));
    const auto [d01, r01] = with_d(5000, 1.6276);
    CHECK(r01.statistic == doctest::Approx(d01).epsilon(1e-12));
    CHECK(r01.p_value == doctest::Approx(0.01).epsilon(0.005));

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u;
    std::vector<double> uniform, shifted;
    for (int i = 0; i < 2000; ++i) {
        const double x = u(rng);
        uniform.push_back(x);
        shifted.push_back(x * x);
    }
    CHECK(ks_uniform(uniform).p_value > 0.01);
    CHECK(ks_uniform(shifted).p_value < 1e-6);
    CHECK_THROWS_AS(ks_uniform({}), Error);
}

TEST_CASE("parse_method: names and grids")
{
    CHECK(parse_method("tn-as").variant == Variant::TnAs);
    CHECK(parse_method("ds").kind == MethodKind::DataSplitting);
    CHECK(parse_method("tn-validation").cv_grid == std::vector<double>{0.5, 1.0, 2.0});
    CHECK(parse_method("cv-large").cv_grid.size() == 21);
    CHECK(parse_method("oc-small").overconditioned);
    CHECK_THROWS_AS(parse_method("bogus"), Error);
}

TEST_CASE("evaluate_method: rejections are exactly p < alpha / m")
{
    SyntheticSpec spec = small_spec(60, 6);
    spec.beta_true[1] = 0.5;
    MethodSettings settings;
    settings.alpha = 0.2;
    int checked = 0;
    for (const char* name : {"tn-a", "tn-as", "full", "marginal", "ds", "cv-small", "oc-small"}) {
        const Method m = parse_method(name);
        for (int t = 0; t < 15; ++t) {
            const ProblemData d = generate(spec, t);
            const Vector mu = d.X * spec.beta_true;
            const TrialOutcome o = evaluate_method(m, d, mu, trial_seed(9, t), settings);
            CAPTURE(name);
            CHECK_FALSE(o.error.has_value());
            const double m_hyp = static_cast<double>(o.hypotheses());
            for (const FeatureOutcome& f : o.features) {
                CHECK(f.rejected == (f.p_value < settings.alpha / m_hyp));
                CHECK(f.p_value >= 0.0);
                CHECK(f.p_value <= 1.0);
                ++checked;
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("evaluate_method: restricting to signal features keeps m")
{
    const SyntheticSpec spec = small_spec(80, 5);
    const ProblemData d = generate(spec, 2);
    const Vector mu = d.X * spec.beta_true;
    MethodSettings all;
    MethodSettings only = all;
    only.only = IndexSet{0};
    const TrialOutcome a = evaluate_method(parse_method("tn-a"), d, mu, 1, all);
    const TrialOutcome b = evaluate_method(parse_method("tn-a"), d, mu, 1, only);
    REQUIRE(b.features.size() == 1);
    CHECK(a.hypotheses() == b.hypotheses());
    CHECK(b.features[0].feature == 0);
    CHECK(b.features[0].p_value == a.features[0].p_value);
}

TEST_CASE("evaluate_method: data splitting z-test matches a direct computation")
{
    const SyntheticSpec spec = small_spec(40, 3);
    const ProblemData d = generate(spec, 1);
    const Vector mu = d.X * spec.beta_true;
    MethodSettings settings;
    settings.compute_ci = true;
    const TrialOutcome o = evaluate_method(parse_method("ds"), d, mu, 17, settings);
    REQUIRE(!o.features.empty());
    for (const FeatureOutcome& f : o.features) {
        // Symmetric interval around the estimate with half-width z * se.
        const double est = 0.5 * (f.ci_lo + f.ci_hi);
        const double se = (f.ci_hi - f.ci_lo) / (2 * 1.959963984540054);
        CHECK(f.p_value == doctest::Approx(2 * std_normal_cdf(-std::abs(est) / se)).epsilon(1e-10));
    }
    // Same seed, same split.
    const TrialOutcome again = evaluate_method(parse_method("ds"), d, mu, 17, settings);
    CHECK(again.selected == o.selected);
}

TEST_CASE("config_hash: stable and content sensitive")
{
    FprConfig c;
    const std::string h = config_hash(nlohmann::json(c));
    CHECK(h.size() == 16);
    CHECK(h == config_hash(nlohmann::json(c)));
    c.seed = 2;
    CHECK(h != config_hash(nlohmann::json(c)));
}

TEST_CASE("run_fpr_study: deterministic across thread counts and runs")
{
    FprConfig c;
    c.ns = {40};
    c.trials = 30;
    c.methods = {"tn-a", "ds"};
    c.noises = {"gaussian", "laplace"};
    c.seed = 7;
    const StudyOutput one = run_fpr_study(c);
    c.threads = 3;
    const StudyOutput three = run_fpr_study(c);
    CHECK(csv(one.table) == csv(three.table));
    REQUIRE(one.table.rows.size() == 4);
    for (const auto& row : one.table.rows) CHECK(row[4] == "30");

    const auto root = std::filesystem::temp_directory_path() / "silasso_test_results";
    std::filesystem::remove_all(root);
    const auto dir1 = write_study(one, root);
    const std::string first = slurp(dir1 / "table.csv");
    const auto dir2 = write_study(three, root);
    CHECK(dir1.parent_path() == dir2.parent_path());
    CHECK(slurp(dir2 / "table.csv") == first);
    CHECK(std::filesystem::exists(dir1 / "manifest.json"));
    const auto manifest = nlohmann::json::parse(slurp(dir1 / "manifest.json"));
    CHECK(manifest["study"] == "fpr");
    std::filesystem::remove_all(root);
}

TEST_CASE("run_pivot_qq: small run yields the requested samples")
{
    QqConfig c;
    c.variants = {"tn-a", "tn-validation"};
    c.samples = 150;
    const StudyOutput out = run_pivot_qq(c);
    REQUIRE(out.table.rows.size() == 3);
    CHECK(out.pivots.size() == 450);
    for (const auto& [v, x] : out.pivots) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
    CHECK(out.summary["tn-a"]["samples"] == 150);
}

TEST_CASE("run_tpr_study and run_ci_study: small runs")
{
    TprConfig t;
    t.ns = {60};
    t.trials = 10;
    t.repeats = 2;
    const StudyOutput tpr = run_tpr_study(t);
    CHECK(tpr.table.rows.size() == 6);
    CHECK(tpr.summary["mean_tpr"]["60"].contains("tn-a"));

    CiConfig ci;
    ci.trials = 5;
    ci.methods = {"tn-a", "tn-as"};
    const StudyOutput c = run_ci_study(ci);
    CHECK(!c.table.rows.empty());
    CHECK(c.summary["tn-a"]["intervals"].get<int>() > 0);
}

TEST_CASE("run_scaling_study: counts and the log2 ratio column")
{
    ScalingConfig c;
    c.shapes[0].n = 60;
    c.shapes[0].p = 20;
    c.shapes[0].trials = 2;
    const StudyOutput out = run_scaling_study(c);
    REQUIRE(out.table.rows.size() == 2);
    for (const auto& row : out.table.rows) {
        const double active = std::stod(row[5]);
        const double visited = std::stod(row[8]);
        CHECK(std::stod(row[10]) == doctest::Approx(std::log2(visited) - active));
    }
}
