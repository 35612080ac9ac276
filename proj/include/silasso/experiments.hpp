#pragma once

#include <silasso/cv_event.hpp>
#include <silasso/lasso.hpp>
#include <silasso/selective_inference.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace silasso::experiments {

enum class NoiseFamily { Gaussian, Laplace, SkewNormal, StudentT };

std::string_view noise_name(NoiseFamily f);
NoiseFamily parse_noise(std::string_view name);

/// Zero-mean noise with standard deviation sd. Skew-normal uses shape `skew`,
/// Student t uses `dof` degrees of freedom (dof > 2).
struct NoiseSpec {
    NoiseFamily family = NoiseFamily::Gaussian;
    double sd = 1.0;
    double skew = 10.0;
    double dof = 20.0;
};

struct SyntheticSpec {
    int n = 100;
    int p = 5;
    Vector beta_true;
    NoiseSpec noise;
    double lambda = 1.0;
    double delta = 0.0;
    std::uint64_t seed = 1;
    /// Replace the known noise variance by the residual variance of the full
    /// least-squares fit (needs n > p).
    bool estimate_sigma = false;
};

/// Per-trial stream seed: a splitmix64 mix of (seed, trial).
std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial);

double sample_noise(const NoiseSpec& spec, std::mt19937_64& rng);

/// Deterministic in (spec.seed, trial): X has iid N(0, 1) entries and
/// y = X beta + noise.
ProblemData generate(const SyntheticSpec& spec, int trial);

/// Lambda grid {2^lo, ..., 2^hi}.
std::vector<double> dyadic_grid(int lo, int hi);

enum class MethodKind { Selective, DataSplitting };

/// A comparison method. Selective methods may add a tuning-parameter
/// selection event (cv_grid non-empty), optionally over-conditioned.
struct Method {
    std::string name;
    MethodKind kind = MethodKind::Selective;
    Variant variant = Variant::TnA;
    std::vector<double> cv_grid;
    bool overconditioned = false;
};

/// Variant names, plus "ds" (data splitting), "tn-validation" / "cv-small"
/// (lambda in {1/2, 1, 2}), "cv-large" (2^-10 .. 2^10) and the
/// over-conditioned "oc-small" / "oc-large".
Method parse_method(std::string_view name);

struct MethodSettings {
    double alpha = 0.05;
    double lambda_stable = 15.0;
    double cutoff = 1.0;
    int folds = 5;
    bool compute_ci = false;
    /// Test only selected features in this set (Bonferroni still counts all
    /// selected features).
    std::optional<IndexSet> only;
};

struct FeatureOutcome {
    int feature = -1;
    double p_value = 1.0;
    bool rejected = false;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    /// eta' mu for the tested target.
    double truth = 0.0;
    int matched_segments = 0;
    int segments_visited = 0;
    double seconds = 0.0;
};

struct TrialOutcome {
    std::string method;
    int trial = -1;
    IndexSet selected;
    double lambda_used = 0.0;
    std::vector<FeatureOutcome> features;
    /// First per-feature failure, if any; failed features are dropped.
    std::optional<std::string> error;

    /// Hypotheses counted for Bonferroni.
    std::size_t hypotheses() const { return selected.size(); }
};

/// Runs one method on one data set. mu is the true mean of y. `seed` drives
/// the method's own randomness (data split, folds).
TrialOutcome evaluate_method(const Method& method, const ProblemData& data, const Vector& mu,
                             std::uint64_t seed, const MethodSettings& settings);

/// Two-sided one-sample Kolmogorov-Smirnov test against U(0, 1).
struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};
KsResult ks_uniform(std::vector<double> samples);

/// Tabular output with string cells, written as CSV.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void write_csv(std::ostream& out) const;
};

struct StudyOutput {
    std::string study;
    nlohmann::json config;
    Table table;
    /// Optional (variant, pivot) samples for the QQ study.
    std::vector<std::pair<std::string, double>> pivots;
    nlohmann::json summary;
};

/// FNV-1a over the canonical JSON dump of the config, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Writes results/<study>/<hash>/table.csv (hash of the config without
/// "threads"), manifest.json and (if any)
/// pivots.csv under root; returns the directory.
std::filesystem::path write_study(const StudyOutput& out, const std::filesystem::path& root);

struct FprConfig {
    std::vector<int> ns{100, 200, 300, 400};
    int p = 5;
    std::vector<std::string> methods{"tn-a", "tn-as", "ds"};
    std::vector<std::string> noises{"gaussian"};
    /// Lambda for Gaussian noise and for the other families.
    double lambda = 1.0;
    double lambda_non_gaussian = 0.5;
    double alpha = 0.05;
    int trials = 1200;
    std::uint64_t seed = 1;
    int threads = 1;
    bool estimate_sigma = false;
};

struct TprConfig {
    std::vector<int> ns{50, 100, 150, 200};
    int p = 5;
    double signal = 0.25;
    int signal_count = 2;
    std::vector<std::string> methods{"tn-a", "tn-as", "ds"};
    double lambda = 1.0;
    double alpha = 0.05;
    int trials = 100;
    int repeats = 10;
    int folds = 5;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct CiConfig {
    int n = 100;
    int p = 10;
    double signal = 0.25;
    int signal_count = 5;
    std::vector<std::string> methods{"tn-a", "tn-as", "ds"};
    double lambda = 1.0;
    double alpha = 0.05;
    int trials = 100;
    int folds = 5;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct QqConfig {
    int n = 100;
    int p = 5;
    double signal = 2.0;
    int signal_count = 2;
    std::vector<std::string> variants{"full",  "tn-a",      "tn-as",       "marginal",
                                      "tn-l1", "tn-custom", "interaction", "tn-validation"};
    double lambda = 5.0;
    double lambda_stable = 15.0;
    double cutoff = 1.0;
    int folds = 5;
    int samples = 1200;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct ScalingShape {
    int n = 100;
    int p = 50;
    double lambda = 1.0;
    double delta = 0.0;
    int signal_count = 10;
    double signal = 1.0;
    int trials = 5;
    /// Features tested per trial (the first ones selected); 0 tests all.
    int max_features = 0;
};

struct ScalingConfig {
    std::vector<ScalingShape> shapes{ScalingShape{}};
    std::uint64_t seed = 1;
    int threads = 1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FprConfig, ns, p, methods, noises, lambda,
                                                lambda_non_gaussian, alpha, trials, seed, threads,
                                                estimate_sigma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TprConfig, ns, p, signal, signal_count, methods,
                                                lambda, alpha, trials, repeats, folds, seed, threads)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CiConfig, n, p, signal, signal_count, methods, lambda,
                                                alpha, trials, folds, seed, threads)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(QqConfig, n, p, signal, signal_count, variants, lambda,
                                                lambda_stable, cutoff, folds, samples, seed, threads)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScalingShape, n, p, lambda, delta, signal_count,
                                                signal, trials, max_features)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScalingConfig, shapes, seed, threads)

/// Rejection rate under the global null: trials with at least one Bonferroni
/// rejection over trials with at least one hypothesis, per method, noise, n.
StudyOutput run_fpr_study(const FprConfig& config);

/// Conditional power per method, n and repeat; summary holds the mean over
/// repeats.
StudyOutput run_tpr_study(const TprConfig& config);

/// Per-feature intervals, lengths and coverage; summary holds median lengths
/// on features selected by every method, and coverage per method.
StudyOutput run_ci_study(const CiConfig& config);

/// Pivot at the true eta' mu for one randomly chosen selected feature per
/// trial until `samples` pivots exist, per variant, plus the untruncated
/// pivot as a negative control.
StudyOutput run_pivot_qq(const QqConfig& config);

/// Per shape: mean per-feature time, |A_obs|, segment counts and
/// log2(segments_visited / 2^|A_obs|).
StudyOutput run_scaling_study(const ScalingConfig& config);

} // namespace silasso::experiments
