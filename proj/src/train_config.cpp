#include "causalpref/train_config.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace causalpref {

Variant parse_variant(std::string_view name) {
    std::string up;
    for (char c : name) up.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (up == "NO_HISTORY_SFT") return Variant::NoHistorySft;
    if (up == "BASE") return Variant::Base;
    if (up == "CAUSAL_ONLY") return Variant::CausalOnly;
    if (up == "NORM_ONLY") return Variant::NormOnly;
    if (up == "FULL") return Variant::Full;
    throw std::invalid_argument("unknown variant '" + std::string(name) +
                                "' (expected NO_HISTORY_SFT, BASE, CAUSAL_ONLY, NORM_ONLY or FULL)");
}

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::NoHistorySft: return "NO_HISTORY_SFT";
        case Variant::Base: return "BASE";
        case Variant::CausalOnly: return "CAUSAL_ONLY";
        case Variant::NormOnly: return "NORM_ONLY";
        case Variant::Full: return "FULL";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("TrainConfig.alpha must be >= 0");
    if (!(epsilon > 0.0 && epsilon <= lambda && lambda <= 1.0)) {
        throw std::invalid_argument("TrainConfig needs 0 < epsilon <= lambda <= 1");
    }
    if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("TrainConfig.delta must be in [0, 1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("TrainConfig.dropout must be in [0, 1)");
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) {
        throw std::invalid_argument("TrainConfig learning_rate and weight_decay must be >= 0");
    }
    if (batch_size < 1) throw std::invalid_argument("TrainConfig.batch_size must be >= 1");
}

double TrainConfig::effective_alpha() const {
    return (variant == Variant::CausalOnly || variant == Variant::Full) ? alpha : 0.0;
}

}  // namespace causalpref
