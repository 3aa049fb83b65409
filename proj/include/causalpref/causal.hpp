#pragma once

#include "causalpref/corpus.hpp"
#include "causalpref/model.hpp"
#include "causalpref/train_config.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace causalpref {

class CausalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// P(. | h, x, y_<t) - P(. | 0, x, y_<t) over the whole vocabulary.
using EffectVector = std::vector<double>;

struct TokenWeights {
    std::vector<double> weights;  // one per target token
    std::vector<double> scores;   // data-side effect per target token (empty for uniform weights)
    double lambda = 1.0;
    double epsilon = 1.0;
    double delta = 0.0;
    std::uint64_t source_checksum = 0;  // checksum of the proxy that produced the scores

    static TokenWeights uniform(std::size_t n, double value = 1.0);
};

EffectVector prediction_effect(const ModelParams& theta, const Sample& sample, std::size_t t,
                               Precision precision = Precision::Double);

/// All target positions at once; row t equals prediction_effect(theta, sample, t).
std::vector<EffectVector> prediction_effects(const ModelParams& theta, const Sample& sample,
                                             Precision precision = Precision::Double);

double gt_token_effect(const ModelParams& theta0, const Sample& sample, std::size_t t,
                       Precision precision = Precision::Double);

/// Data-side effect of the history on every realized target token.
std::vector<double> gt_token_effects(const ModelParams& theta0, const Sample& sample,
                                     Precision precision = Precision::Double);

/// w_t = lambda when score_t > delta (strict), epsilon otherwise.
TokenWeights assign_weights(const std::vector<double>& scores, double delta, double lambda,
                            double epsilon);

struct WeightsFingerprint {
    std::uint64_t theta0_checksum = 0;
    std::uint64_t corpus_hash = 0;
    double delta = 0.0;
    double lambda = 0.0;
    double epsilon = 0.0;
    std::size_t n_samples = 0;

    bool operator==(const WeightsFingerprint&) const = default;
};

struct PrecomputedWeights {
    WeightsFingerprint fingerprint;
    std::vector<TokenWeights> per_sample;
    bool from_cache = false;
    std::size_t model_evaluations = 0;  // forward passes run (0 on a cache hit)

    double lambda_fraction() const;
};

/// Scores every target token of the corpus with the frozen proxy and applies assign_weights.
/// With a cache path: a matching cache is reused without touching the model, a cache with
/// different fingerprints raises CausalError, and a missing cache is written.
PrecomputedWeights precompute_weights(const ModelParams& theta0, const std::vector<Sample>& corpus,
                                      const TrainConfig& cfg,
                                      const std::optional<std::filesystem::path>& cache = {});

void write_weights_cache(const std::filesystem::path& path, const PrecomputedWeights& w);
PrecomputedWeights read_weights_cache(const std::filesystem::path& path);

struct PositionAttribution {
    std::size_t sample = 0;
    std::size_t position = 0;
    TokenId token = 0;
    double proxy_score = 0.0;   // data-side effect under theta0 (drives the weight)
    double model_effect = 0.0;  // P(y_t | h) - P(y_t | 0) under theta
    double weight = 0.0;
    double logit_diff = 0.0;    // z^h[y_t] - z^0[y_t] under theta
    std::optional<bool> pref;   // ground-truth mask when available
};

struct HistogramBin {
    double low = 0.0;
    double high = 0.0;
    std::size_t count = 0;
};

struct ClassificationScores {
    std::size_t true_pos = 0, false_pos = 0, false_neg = 0, true_neg = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double positive_rate = 0.0;  // mask rate m
    double flagged_rate = 0.0;   // lambda rate r
    // Expected scores of flagging tokens at random with rate r: precision m, recall r.
    double baseline_precision() const { return positive_rate; }
    double baseline_recall() const { return flagged_rate; }
};

struct AttributionReport {
    std::vector<PositionAttribution> positions;
    std::vector<HistogramBin> histogram;  // |logit diff|
    double mean_abs_logit_diff = 0.0;
    std::optional<double> mean_abs_logit_diff_pref;  // over mask=true positions
    std::optional<ClassificationScores> classification;
    std::uint64_t theta_checksum = 0;
    std::uint64_t theta0_checksum = 0;
};

inline constexpr std::size_t kHistogramBins = 64;

/// Uniform bins over [0, max |x|]; a single degenerate bin when every value is zero.
std::vector<HistogramBin> abs_histogram(const std::vector<double>& values,
                                        std::size_t bins = kHistogramBins);

ClassificationScores classify_against_mask(const std::vector<bool>& flagged,
                                           const std::vector<bool>& truth);

AttributionReport attribute(const ModelParams& theta, const ModelParams& theta0,
                            const std::vector<Sample>& corpus, const TrainConfig& cfg,
                            const std::vector<TokenWeights>* weights = nullptr);

std::string report_to_json(const AttributionReport& report, bool include_positions = true);
void write_histogram_csv(const std::filesystem::path& path, const std::vector<HistogramBin>& bins);

}  // namespace causalpref
