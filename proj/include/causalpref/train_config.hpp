#pragma once

#include "causalpref/model.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace causalpref {

/// Ablation variants.
///   NoHistorySft  uniform weights, alpha = 0, history stripped from every input
///   Base          uniform weights, alpha = 0
///   CausalOnly    uniform weights in both losses, alpha > 0
///   NormOnly      weighted normal loss, alpha = 0
///   Full          weighted normal and causal preference losses, alpha > 0
enum class Variant { NoHistorySft, Base, CausalOnly, NormOnly, Full };

inline constexpr Variant kAllVariants[] = {Variant::NoHistorySft, Variant::Base, Variant::CausalOnly,
                                           Variant::NormOnly, Variant::Full};

Variant parse_variant(std::string_view name);
std::string_view to_string(Variant v);

struct TrainConfig {
    double alpha = 0.05;
    double delta = 0.05;
    double lambda = 0.9;
    double epsilon = 0.1;
    Variant variant = Variant::Full;
    double learning_rate = 3e-4;
    double weight_decay = 0.025;
    double dropout = 0.05;
    double clip_norm = 1.0;  // <= 0 disables clipping
    std::size_t epochs = 5;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    Precision precision = Precision::Single;

    void validate() const;

    /// alpha as the variant applies it (zero for variants without the causal preference loss).
    double effective_alpha() const;
    bool uses_weights() const { return variant == Variant::NormOnly || variant == Variant::Full; }
    bool strips_history() const { return variant == Variant::NoHistorySft; }
};

}  // namespace causalpref
