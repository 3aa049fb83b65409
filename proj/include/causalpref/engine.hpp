#pragma once

#include "causalpref/causal.hpp"
#include "causalpref/corpus.hpp"
#include "causalpref/loss.hpp"
#include "causalpref/model.hpp"
#include "causalpref/rng.hpp"
#include "causalpref/train_config.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace causalpref {

class EngineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// d(L)/d(theta), flat, in ParamLayout order.
struct Gradients {
    std::vector<double> data;

    double norm() const;
    bool all_finite() const;
};

struct LossAndGrads {
    LossBreakdown loss;
    Gradients grads;
};

struct BatchItem {
    const Sample* sample = nullptr;
    const TokenWeights* weights = nullptr;  // may be null for the uniform-weight variants
};

/// L = L_n + alpha * L_p over the batch (sums per sample, divided by |batch|) and dL/dtheta.
/// theta0 is read only to confirm that the weights were produced by it; it gets no gradient.
/// dropout_rng enables dropout (cfg.dropout) on the with-history pass; it is ignored whenever the
/// causal preference loss is active so both passes see the same deterministic network.
LossAndGrads loss_and_grads(const ModelParams& theta, const ModelParams& theta0,
                            std::span<const BatchItem> batch, const TrainConfig& cfg,
                            Rng* dropout_rng = nullptr);

LossAndGrads loss_and_grads(const ModelParams& theta, const ModelParams& theta0,
                            const std::vector<Sample>& batch,
                            const std::vector<TokenWeights>& weights, const TrainConfig& cfg);

/// Loss only, deterministic (no dropout).
LossBreakdown evaluate_loss(const ModelParams& theta, std::span<const BatchItem> batch,
                            const TrainConfig& cfg);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t step = 0;

    static AdamState zeros(std::size_t n) { return {std::vector<double>(n), std::vector<double>(n), 0}; }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Decoupled weight decay Adam with bias correction. Decay skips norm gains and biases.
void adamw_step(ModelParams& theta, const Gradients& grads, AdamState& state, const TrainConfig& cfg);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Test hook: lets a harness perturb the analytic gradient before comparison.
using GradientHook = std::function<void(Gradients&)>;

/// Compares analytic gradients with central differences at n_coords random coordinates.
/// Coordinates are drawn by picking a tensor uniformly, then an entry the sample can reach
/// (positional rows past the packed length are never drawn). Runs in double precision with dropout
/// and clipping off.
GradCheckResult grad_check(const ModelParams& theta, const ModelParams& theta0, const Sample& sample,
                           const TokenWeights& weights, const TrainConfig& cfg, std::size_t n_coords,
                           double h_step = 1e-5, std::uint64_t seed = 0,
                           const GradientHook& hook = {});

/// Generic form over any scalar loss with a known gradient.
GradCheckResult grad_check(std::vector<double>& x, const std::function<double(const std::vector<double>&)>& loss,
                           const std::vector<double>& analytic, const std::vector<std::size_t>& coords,
                           double h_step = 1e-5);

struct StepLog {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double normal = 0.0;
    double preference = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<StepLog> steps;
    std::vector<LossBreakdown> epochs;  // per-epoch means of the step losses
};

using ProgressFn = std::function<void(const StepLog&)>;

/// epochs x shuffled batches of loss_and_grads + adamw_step. theta0 must be the model the weights
/// were computed with; it is never modified.
TrainResult train(const std::vector<Sample>& corpus, const ModelParams& theta_init,
                  const ModelParams& theta0, const std::vector<TokenWeights>& weights,
                  const TrainConfig& cfg, const ProgressFn& progress = {});

void write_loss_log(const std::filesystem::path& path, const std::vector<StepLog>& steps);

}  // namespace causalpref
