#include "causalpref/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace causalpref {

namespace {

void check_lengths(std::size_t rows, std::size_t targets, std::size_t weights, const char* what) {
    if (rows != targets || targets != weights) {
        throw LossError(std::string(what) + ": length mismatch (" + std::to_string(rows) +
                        " rows, " + std::to_string(targets) + " targets, " +
                        std::to_string(weights) + " weights)");
    }
}

double nll(double p) { return -std::log(std::max(p, kProbFloor)); }

}  // namespace

TokenLoss weighted_normal_loss(const std::vector<std::vector<double>>& probs_with_history,
                               const TokenSeq& y, std::span<const double> weights) {
    check_lengths(probs_with_history.size(), y.size(), weights.size(), "weighted_normal_loss");
    TokenLoss out;
    out.per_token.reserve(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) {
        const auto& p = probs_with_history[t];
        const auto idx = static_cast<std::size_t>(y[t]);
        if (idx >= p.size()) throw LossError("weighted_normal_loss: target id outside distribution");
        const double term = weights[t] * nll(p[idx]);
        out.per_token.push_back(term);
        out.total += term;
    }
    return out;
}

TokenLoss causal_preference_loss(const Logits& with_history, const Logits& without_history,
                                 const TokenSeq& y, std::span<const double> weights) {
    check_lengths(with_history.rows, y.size(), weights.size(), "causal_preference_loss");
    if (without_history.rows != with_history.rows || without_history.cols != with_history.cols) {
        throw LossError("causal_preference_loss: logit rows are not aligned");
    }
    TokenLoss out;
    out.per_token.reserve(y.size());
    std::vector<double> diff(with_history.cols);
    for (std::size_t t = 0; t < y.size(); ++t) {
        const auto zh = with_history.row(t);
        const auto z0 = without_history.row(t);
        for (std::size_t v = 0; v < diff.size(); ++v) diff[v] = zh[v] - z0[v];
        const auto q = softmax(diff);
        const auto idx = static_cast<std::size_t>(y[t]);
        if (idx >= q.size()) throw LossError("causal_preference_loss: target id outside vocabulary");
        const double term = weights[t] * nll(q[idx]);
        out.per_token.push_back(term);
        out.total += term;
    }
    return out;
}

TokenLoss causal_preference_loss_prob_space(const std::vector<std::vector<double>>& probs_with,
                                            const std::vector<std::vector<double>>& probs_without,
                                            const TokenSeq& y, std::span<const double> weights) {
    check_lengths(probs_with.size(), y.size(), weights.size(), "causal_preference_loss_prob_space");
    if (probs_without.size() != probs_with.size()) {
        throw LossError("causal_preference_loss_prob_space: rows are not aligned");
    }
    TokenLoss out;
    for (std::size_t t = 0; t < y.size(); ++t) {
        const auto& ph = probs_with[t];
        const auto& p0 = probs_without[t];
        std::vector<double> clipped(ph.size());
        double z = 0.0;
        for (std::size_t v = 0; v < ph.size(); ++v) {
            clipped[v] = std::max(0.0, ph[v] - p0[v]);
            z += clipped[v];
        }
        const auto idx = static_cast<std::size_t>(y[t]);
        const double q = z > 0.0 ? clipped[idx] / z : 1.0 / static_cast<double>(ph.size());
        const double term = weights[t] * nll(q);
        out.per_token.push_back(term);
        out.total += term;
    }
    return out;
}

LossBreakdown total_loss(double normal, double preference, double alpha) {
    if (alpha < 0.0) throw LossError("alpha must be >= 0");
    LossBreakdown b;
    b.normal = normal;
    b.preference = preference;
    b.alpha = alpha;
    b.total = normal + alpha * preference;
    return b;
}

}  // namespace causalpref
