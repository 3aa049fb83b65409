#include "causalpref/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

using namespace causalpref;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string precision;
    std::string run_name;
};

RunConfig resolve(const Globals& g) {
    RunConfig cfg = g.config.empty() ? default_run_config() : load_run_config(g.config);
    if (g.seed) {
        cfg.seed = *g.seed;
        cfg.train.seed = *g.seed;
    }
    if (!g.precision.empty()) cfg.train.precision = parse_precision(g.precision);
    if (!g.run_name.empty()) cfg.run_name = g.run_name;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal preference modeling for personalized next-token generation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "run config (sectioned text or JSON)");
    app.add_option("--seed", g.seed, "overrides [Run] seed");
    app.add_option("--precision", g.precision, "single | double")->check(CLI::IsMember({"single", "double"}));
    app.add_option("--run-name", g.run_name, "overrides [Run] name");

    auto* gen = app.add_subcommand("gen-synthetic", "write the synthetic corpus with preference masks");
    auto* vocab = app.add_subcommand("build-vocab", "build the vocabulary from the corpus");
    auto* proxy = app.add_subcommand("pretrain-proxy", "uniform-loss pretraining of the frozen proxy");
    auto* weights = app.add_subcommand("weights", "score target tokens with the proxy and cache weights");

    auto* train_cmd = app.add_subcommand("train", "fine-tune the proxy with one variant");
    std::string variant;
    train_cmd->add_option("--variant", variant, "NO_HISTORY_SFT | BASE | CAUSAL_ONLY | NORM_ONLY | FULL");

    auto* attr = app.add_subcommand("attribute", "logit-difference attribution of a checkpoint");
    std::string ckpt, compare;
    attr->add_option("checkpoint", ckpt, "trained checkpoint")->required();
    attr->add_option("compare", compare, "second checkpoint reported alongside");

    auto* eval = app.add_subcommand("eval", "greedy generation metrics on held-out users");
    std::string eval_ckpt;
    eval->add_option("checkpoint", eval_ckpt, "trained checkpoint")->required();

    auto* gc = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients, every variant");
    bool corrupt = false;
    gc->add_flag("--corrupt", corrupt, "perturb the analytic gradient (harness self-test)");

    auto* sweep = app.add_subcommand("sweep", "FULL over the alpha and lambda grids");
    auto* print = app.add_subcommand("print-config", "print the resolved config with documented defaults");
    bool as_json = false;
    print->add_flag("--json", as_json, "emit JSON instead of sectioned text");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve(g);
        if (!variant.empty()) cfg.train.variant = parse_variant(variant);
        std::ostream& log = std::cout;

        if (*gen) {
            cmd_gen_synthetic(cfg, log);
        } else if (*vocab) {
            cmd_build_vocab(cfg, log);
        } else if (*proxy) {
            cmd_pretrain_proxy(cfg, log);
        } else if (*weights) {
            cmd_weights(cfg, log);
        } else if (*train_cmd) {
            cmd_train(cfg, log);
        } else if (*attr) {
            std::optional<std::filesystem::path> other;
            if (!compare.empty()) other = compare;
            cmd_attribute(cfg, ckpt, other, log);
        } else if (*eval) {
            cmd_eval(cfg, eval_ckpt, log);
        } else if (*gc) {
            GradientHook hook;
            if (corrupt) hook = [](Gradients& grads) { for (auto& v : grads.data) v = v * 1.5 + 1e-3; };
            return cmd_gradcheck(cfg, log, nullptr, hook);
        } else if (*sweep) {
            cmd_sweep(cfg, log);
        } else if (*print) {
            std::cout << (as_json ? to_config_json(cfg) + "\n" : to_config_text(cfg));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
