#include "causalpref/pipeline.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

using namespace causalpref;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(const std::string& name) {
    RunConfig c = default_run_config();
    c.out_root = test::tmp_dir("pipeline_" + name);
    c.run_name = name;
    c.synth.n_users = 8;
    c.synth.samples_per_user = 4;
    c.dims.d_model = 16;
    c.dims.n_layers = 1;
    c.dims.max_seq = 64;
    c.proxy.epochs = 2;
    c.train.epochs = 1;
    c.train.precision = Precision::Double;
    c.heldout_fraction = 0.25;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void prepare(const RunConfig& c, std::ostream& log) {
    cmd_gen_synthetic(c, log);
    cmd_build_vocab(c, log);
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("gen-synthetic creates its directory and is byte-stable") {
    std::ostringstream log;
    RunConfig c = small_config("gen");
    c.run_name = "nested";
    CHECK_FALSE(fs::exists(RunPaths(c).dir()));
    cmd_gen_synthetic(c, log);
    const std::string first = slurp(RunPaths(c).corpus());
    cmd_gen_synthetic(c, log);
    CHECK(slurp(RunPaths(c).corpus()) == first);
    CHECK(log.str().find("preference rate") != std::string::npos);
}

TEST_CASE("stages name the missing artifact") {
    std::ostringstream log;
    const RunConfig c = small_config("missing");
    CHECK_THROWS_WITH_AS(cmd_build_vocab(c, log), doctest::Contains("gen-synthetic"), MissingArtifact);
    prepare(c, log);
    CHECK_THROWS_WITH_AS(cmd_weights(c, log), doctest::Contains("pretrain-proxy"), MissingArtifact);
    CHECK_THROWS_WITH_AS(cmd_train(c, log), doctest::Contains("pretrain-proxy"), MissingArtifact);
    cmd_pretrain_proxy(c, log);
    CHECK_THROWS_WITH_AS(cmd_train(c, log), doctest::Contains("weights cache"), MissingArtifact);
    RunConfig base = c;
    base.train.variant = Variant::Base;
    CHECK_NOTHROW(cmd_train(base, log));
}

TEST_CASE("proxy with zero epochs is the initialization, and reloads bitwise") {
    std::ostringstream log;
    RunConfig c = small_config("proxy0");
    c.proxy.epochs = 0;
    prepare(c, log);
    const fs::path ck = cmd_pretrain_proxy(c, log);
    const LoadedCorpus corpus = load_corpus(c);
    const Checkpoint loaded = load_checkpoint(ck, corpus.vocab.hash());
    CHECK(loaded.tag == "proxy");
    CHECK(loaded.params.data == init_params(model_dims(c, corpus.vocab), c.seed).data);

    c.proxy.epochs = 1;
    cmd_pretrain_proxy(c, log);
    std::ifstream in(RunPaths(c).proxy_dir() / "loss.csv");
    std::string header, row;
    std::getline(in, header);
    CHECK(static_cast<bool>(std::getline(in, row)));
}

TEST_CASE("weights: cached rerun and empty histories") {
    std::ostringstream log;
    RunConfig c = small_config("weights");
    prepare(c, log);
    cmd_pretrain_proxy(c, log);
    const PrecomputedWeights a = cmd_weights(c, log);
    const PrecomputedWeights b = cmd_weights(c, log);
    CHECK_FALSE(a.from_cache);
    CHECK(b.from_cache);
    CHECK(b.model_evaluations == 0);
    for (std::size_t i = 0; i < a.per_sample.size(); ++i) CHECK(a.per_sample[i].weights == b.per_sample[i].weights);
    CHECK(log.str().find("lambda-weighted fraction") != std::string::npos);

    RunConfig e = small_config("weights_empty");
    fs::create_directories(RunPaths(e).dir());
    std::vector<TextSample> texts;
    for (int u = 0; u < 4; ++u) {
        for (int k = 0; k < 3; ++k) texts.push_back({"u" + std::to_string(u), "about t0", {}, "a b c", std::nullopt});
    }
    write_text_samples(RunPaths(e).corpus(), texts);
    cmd_build_vocab(e, log);
    cmd_pretrain_proxy(e, log);
    CHECK(cmd_weights(e, log).lambda_fraction() == 0.0);
}

TEST_CASE("train, attribute and eval over two seeds") {
    std::ostringstream log;
    RunConfig c = small_config("full");
    prepare(c, log);
    std::set<fs::path> dirs;
    for (std::uint64_t seed : {0u, 1u}) {
        c.seed = seed;
        c.train.seed = seed;
        cmd_pretrain_proxy(c, log);
        cmd_weights(c, log);
        c.train.variant = Variant::Full;
        const fs::path full = cmd_train(c, log);
        c.train.variant = Variant::Base;
        const fs::path base = cmd_train(c, log);
        CHECK(full != base);
        dirs.insert(full.parent_path());
        dirs.insert(base.parent_path());

        const AttributionOutput att = cmd_attribute(c, full, base, log);
        CHECK(att.comparison.has_value());
        const auto j = nlohmann::json::parse(slurp(att.json));
        CHECK(j["report"].contains("mean_abs_logit_diff_pref"));
        CHECK(j["compare_report"].contains("mean_abs_logit_diff_pref"));
        CHECK(j["report"].contains("precision"));

        const EvalOutput ev = cmd_eval(c, full, log);
        const std::string csv = slurp(ev.csv);
        CHECK(csv.find(std::to_string(c.hash())) != std::string::npos);
        CHECK(csv.find("with_history,summary") != std::string::npos);
        CHECK(csv.find("without_history,summary") != std::string::npos);
    }
    CHECK(dirs.size() == 4);

    const LoadedCorpus corpus = load_corpus(c);
    std::set<std::string> train_users;
    for (const auto& s : corpus.train) train_users.insert(s.user_id);
    CHECK_FALSE(corpus.heldout.empty());
    for (const auto& s : corpus.heldout) CHECK(train_users.count(s.user_id) == 0);
}

TEST_CASE("eval refuses an empty held-out set") {
    std::ostringstream log;
    RunConfig c = small_config("noheld");
    c.heldout_fraction = 0.0;
    prepare(c, log);
    c.train.variant = Variant::Base;
    cmd_pretrain_proxy(c, log);
    const fs::path ck = cmd_train(c, log);
    CHECK_THROWS_WITH(cmd_eval(c, ck, log), doctest::Contains("empty held-out set"));
}

TEST_CASE("gradcheck: one line per variant, corrupt hook fails") {
    std::ostringstream log;
    std::vector<GradCheckLine> lines;
    CHECK(cmd_gradcheck(default_run_config(), log, &lines) == 0);
    CHECK(lines.size() == 5);
    std::size_t newlines = 0;
    for (char ch : log.str()) newlines += ch == '\n';
    CHECK(newlines == 5);
    std::ostringstream bad;
    CHECK(cmd_gradcheck(default_run_config(), bad, nullptr, [](Gradients& g) { g.data[0] += 10.0; for (auto& v : g.data) v *= 2.0; }) != 0);
}

}
