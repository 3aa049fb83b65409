#pragma once

#include "causalpref/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace causalpref {

enum class Precision { Single, Double };

Precision parse_precision(std::string_view name);
std::string_view to_string(Precision p);

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelDims {
    std::size_t vocab_size = 64;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t max_seq = kDefaultMaxSeq;

    std::size_t d_ff() const { return 4 * d_model; }
    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
    bool operator==(const ModelDims&) const = default;
};

/// One named tensor inside the flat parameter array. Matrices are row-major [rows x cols] and map a
/// row vector of width `rows` to width `cols`.
struct TensorSlot {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool decay = false;  // AdamW weight decay applies (never to norms or biases)
    std::size_t size() const { return rows * cols; }
};

struct LayerSlots {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

/// Fixed flat order: wte, wpe, then per layer ln1.g ln1.b wq wk wv wo ln2.g ln2.b w1 b1 w2 b2,
/// then lnf.g lnf.b. The output projection is tied to wte.
class ParamLayout {
public:
    explicit ParamLayout(const ModelDims& dims);

    const ModelDims& dims() const { return dims_; }
    std::size_t total() const { return total_; }
    const std::vector<TensorSlot>& slots() const { return slots_; }
    const TensorSlot& slot(std::string_view name) const;

    std::size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0;
    std::vector<LayerSlots> layers;

private:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool decay);

    ModelDims dims_;
    std::vector<TensorSlot> slots_;
    std::size_t total_ = 0;
};

std::size_t param_count(const ModelDims& dims);

struct ModelParams {
    ModelDims dims;
    std::vector<double> data;

    ParamLayout layout() const { return ParamLayout(dims); }
    std::span<double> tensor(std::string_view name);
    std::span<const double> tensor(std::string_view name) const;
    std::uint64_t checksum() const;
    bool all_finite() const;
};

ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// Row-major [rows x vocab] pre-softmax scores, one row per input position.
struct Logits {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

std::vector<double> softmax(std::span<const double> logits);

Logits forward(const ModelParams& params, std::span<const TokenId> ids,
               Precision precision = Precision::Double);
Logits forward(const ModelParams& params, const PackedContext& packed,
               Precision precision = Precision::Double);

/// Teacher-forced rows predicting each target token: row t conditions on everything before y_t.
Logits target_logits(const ModelParams& params, const Sample& sample, bool with_history,
                     Precision precision = Precision::Double);

/// Per-target-position next-token distributions; |result| == |y|.
std::vector<std::vector<double>> target_probs(const ModelParams& params, const Sample& sample,
                                              bool with_history,
                                              Precision precision = Precision::Double);

/// Argmax decoding from the packed prompt until EOS or max_new tokens; ties go to the smallest id.
TokenSeq greedy_decode(const ModelParams& params, const Sample& sample, bool with_history,
                       std::size_t max_new, Precision precision = Precision::Double);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelParams params;
    std::uint64_t vocab_hash = 0;
    std::uint64_t config_hash = 0;
    std::string tag;  // "init", "proxy", "trained:<variant>"
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the stored vocab hash against `expected_vocab_hash`.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_vocab_hash);

}  // namespace causalpref
