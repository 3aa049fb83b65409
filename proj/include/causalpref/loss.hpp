#pragma once

#include "causalpref/corpus.hpp"
#include "causalpref/model.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace causalpref {

// Probabilities are clamped below at this value before any logarithm.
inline constexpr double kProbFloor = 1e-12;

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TokenLoss {
    double total = 0.0;
    std::vector<double> per_token;  // already multiplied by the token weight
};

/// sum_t w_t * -ln p_t(y_t)
TokenLoss weighted_normal_loss(const std::vector<std::vector<double>>& probs_with_history,
                               const TokenSeq& y, std::span<const double> weights);

/// sum_t w_t * CE(softmax(z_t^h - z_t^0), y_t). The history effect is taken in logit space and
/// renormalized, so the term is invariant to shifting both rows by the same constant.
TokenLoss causal_preference_loss(const Logits& with_history, const Logits& without_history,
                                 const TokenSeq& y, std::span<const double> weights);

/// Diagnostic alternative: clip p^h - p^0 at zero, renormalize (uniform when nothing survives),
/// then cross-entropy. Not used for training.
TokenLoss causal_preference_loss_prob_space(const std::vector<std::vector<double>>& probs_with,
                                            const std::vector<std::vector<double>>& probs_without,
                                            const TokenSeq& y, std::span<const double> weights);

struct LossBreakdown {
    double normal = 0.0;      // L_n
    double preference = 0.0;  // L_p
    double total = 0.0;       // L = L_n + alpha * L_p
    double alpha = 0.0;
    // per sample, per target token; the preference terms are empty when L_p was not evaluated
    std::vector<std::vector<double>> normal_terms;
    std::vector<std::vector<double>> preference_terms;
};

LossBreakdown total_loss(double normal, double preference, double alpha);

}  // namespace causalpref
