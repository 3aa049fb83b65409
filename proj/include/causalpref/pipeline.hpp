#pragma once

#include "causalpref/causal.hpp"
#include "causalpref/corpus.hpp"
#include "causalpref/engine.hpp"
#include "causalpref/metrics.hpp"
#include "causalpref/run_config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace causalpref {

/// A stage was run before the artifact it depends on exists.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Corpus, vocabulary and split as every later stage sees them.
struct LoadedCorpus {
    Vocab vocab;
    std::vector<Sample> all;
    std::vector<Sample> train;
    std::vector<Sample> heldout;
};

LoadedCorpus load_corpus(const RunConfig& cfg);
ModelDims model_dims(const RunConfig& cfg, const Vocab& vocab);

CorpusStats cmd_gen_synthetic(const RunConfig& cfg, std::ostream& log);
Vocab cmd_build_vocab(const RunConfig& cfg, std::ostream& log);

/// Uniform-loss BASE training of a fresh model on the training split; saved with tag "proxy".
std::filesystem::path cmd_pretrain_proxy(const RunConfig& cfg, std::ostream& log);

PrecomputedWeights cmd_weights(const RunConfig& cfg, std::ostream& log);

/// Fine-tunes the proxy with cfg.train.variant; writes model.ckpt and loss.csv under train_dir.
std::filesystem::path cmd_train(const RunConfig& cfg, std::ostream& log);

struct AttributionOutput {
    AttributionReport report;
    std::optional<AttributionReport> comparison;
    std::filesystem::path json;
};

/// Attribution of one checkpoint, or of two side by side, over the training split.
AttributionOutput cmd_attribute(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                const std::optional<std::filesystem::path>& compare_to,
                                std::ostream& log);

struct EvalOutput {
    CorpusEvaluation with_history;
    CorpusEvaluation without_history;
    std::filesystem::path csv;
};

/// Greedy generation on the held-out users, with and without their history.
EvalOutput cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream& log);

struct GradCheckLine {
    Variant variant;
    GradCheckResult result;
    bool passed = false;
};

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr std::size_t kGradCheckCoords = 50;

/// Fresh vocab-64, d_model-16, single-layer model; one check per variant. Returns 0 iff every
/// variant stays under the tolerance.
int cmd_gradcheck(const RunConfig& cfg, std::ostream& log, std::vector<GradCheckLine>* lines = nullptr,
                  const GradientHook& hook = {});

struct SweepRow {
    std::string sweep;  // "alpha" or "lambda"
    double alpha = 0.0;
    double lambda = 0.0;
    double final_loss = 0.0;
    double lambda_fraction = 0.0;
    MetricScores heldout;
    double heldout_pref_recall = 0.0;
    double mean_abs_logit_diff_pref = 0.0;
};

inline constexpr double kSweepAlphas[] = {0.01, 0.05, 0.1};
inline constexpr double kSweepLambdas[] = {0.7, 0.8, 0.9};

/// FULL training at every alpha (lambda from cfg) and every lambda (alpha from cfg).
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, std::ostream& log,
                                std::filesystem::path* csv_out = nullptr);

}  // namespace causalpref
