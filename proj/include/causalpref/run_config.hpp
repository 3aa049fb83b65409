#pragma once

#include "causalpref/corpus.hpp"
#include "causalpref/model.hpp"
#include "causalpref/train_config.hpp"

#include <filesystem>
#include <string>

namespace causalpref {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Generic uniform-loss pretraining that produces the frozen proxy.
struct ProxyConfig {
    std::size_t epochs = 40;
    double learning_rate = 3e-3;
    std::size_t batch_size = 8;
};

struct RunConfig {
    std::string run_name = "default";
    std::filesystem::path out_root;  // empty: $CAUSALPREF_OUT_ROOT, else ./runs
    std::size_t vocab_max_size = 1024;
    double heldout_fraction = 0.1;
    std::uint64_t seed = 0;  // model init and batch order

    SynthConfig synth;
    ModelDims dims;  // vocab_size is replaced by the built vocabulary's size
    TrainConfig train;
    ProxyConfig proxy;

    void validate() const;
    /// Hash of the canonical serialization; stamped into checkpoints and reports.
    std::uint64_t hash() const;
};

inline constexpr const char* kOutRootEnv = "CAUSALPREF_OUT_ROOT";

RunConfig default_run_config();

/// Sectioned plain text ([Run], [SynthConfig], [ModelDims], [TrainConfig], [ProxyConfig]);
/// '#' starts a comment. A file whose first non-space character is '{' is read as JSON.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every field, with its default documented inline.
std::string to_config_text(const RunConfig& cfg);
std::string to_config_json(const RunConfig& cfg);

/// Directory layout of one run.
class RunPaths {
public:
    explicit RunPaths(const RunConfig& cfg);

    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path corpus() const { return dir_ / "corpus.jsonl"; }
    std::filesystem::path vocab() const { return dir_ / "vocab.json"; }
    std::filesystem::path proxy_dir() const { return dir_ / ("proxy_seed" + seed_); }
    std::filesystem::path proxy_checkpoint() const { return proxy_dir() / "model.ckpt"; }
    /// One cache per (delta, lambda, epsilon) so sweeps never collide.
    std::filesystem::path weights_cache(const TrainConfig& cfg) const;
    std::filesystem::path train_dir(Variant v) const;
    std::filesystem::path reports_dir() const { return dir_ / "reports"; }
    std::filesystem::path sweep_dir() const { return dir_ / ("sweep_seed" + seed_); }

private:
    std::filesystem::path dir_;
    std::string seed_;
};

}  // namespace causalpref
