#include "causalpref/causal.hpp"
#include "causalpref/engine.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <numeric>

using namespace causalpref;

namespace {

std::vector<Sample> random_corpus(std::size_t n, std::uint64_t seed, std::size_t n_hist = 2) {
    Rng r(seed);
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s = test::random_sample(r, 32, n_hist);
        s.pref_mask = std::vector<bool>(s.target.size());
        for (std::size_t t = 0; t < s.target.size(); ++t) (*s.pref_mask)[t] = r.uniform() < 0.5;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_SUITE("causal") {

TEST_CASE("empty history: zero effects, epsilon weights") {
    const ModelParams p = test::lively_params(test::tiny_dims(), 1);
    const auto corpus = random_corpus(5, 2, 0);
    for (const auto& s : corpus) {
        for (const auto& e : prediction_effects(p, s)) {
            for (double v : e) CHECK(v == 0.0);
        }
        for (double v : gt_token_effects(p, s)) CHECK(v == 0.0);
    }
    TrainConfig cfg;
    const PrecomputedWeights w = precompute_weights(p, corpus, cfg);
    CHECK(w.lambda_fraction() == 0.0);
    for (const auto& tw : w.per_sample) {
        for (double v : tw.weights) CHECK(v == cfg.epsilon);
    }
}

TEST_CASE("effect vectors sum to zero and stay in [-1, 1]") {
    const ModelParams p = test::lively_params(test::tiny_dims(), 3, 0.6);
    for (const auto& s : random_corpus(6, 4)) {
        const auto all = prediction_effects(p, s);
        REQUIRE(all.size() == s.target.size());
        for (std::size_t t = 0; t < all.size(); ++t) {
            CHECK(std::abs(std::accumulate(all[t].begin(), all[t].end(), 0.0)) < 1e-12);
            for (double v : all[t]) CHECK(std::abs(v) <= 1.0);
            CHECK(prediction_effect(p, s, t) == all[t]);
        }
        CHECK_THROWS_AS(prediction_effect(p, s, s.target.size()), CausalError);
    }
}

TEST_CASE("ground-truth token effect is the probability difference of the realized token") {
    const ModelParams p = test::lively_params(test::tiny_dims(), 5);
    for (const auto& s : random_corpus(4, 6)) {
        const auto ph = target_probs(p, s, true), p0 = target_probs(p, s, false);
        const auto g = gt_token_effects(p, s);
        for (std::size_t t = 0; t < s.target.size(); ++t) {
            const auto y = static_cast<std::size_t>(s.target[t]);
            CHECK(g[t] == doctest::Approx(ph[t][y] - p0[t][y]).epsilon(1e-12));
            CHECK(gt_token_effect(p, s, t) == g[t]);
        }
    }
}

TEST_CASE("a history that decides the token gives an effect near one") {
    // y = "a" whenever the history says "a"; without history the answer is "c".
    Sample with;
    with.user_id = "u0";
    with.history = {{5}};
    with.query = {7};
    with.target = {5};
    Sample without = with;
    without.history.clear();
    without.target = {6};
    TrainConfig cfg;
    cfg.variant = Variant::Base;
    cfg.precision = Precision::Double;
    cfg.learning_rate = 1e-2;
    cfg.weight_decay = 0.0;
    cfg.dropout = 0.0;
    cfg.epochs = 150;
    cfg.batch_size = 2;
    const ModelParams init = init_params(test::tiny_dims(), 7);
    const ModelParams p = train({with, without}, init, init, {}, cfg).params;
    CHECK(gt_token_effect(p, with, 0) > 0.95);
    CHECK(gt_token_effect(p, with, 0) <= 1.0);
}

TEST_CASE("weights threshold strictly") {
    const TokenWeights w = assign_weights({0.20, 0.0, 0.05, -0.3, 0.0500001}, 0.05, 0.9, 0.1);
    CHECK(w.weights == std::vector<double>{0.9, 0.1, 0.1, 0.1, 0.9});
    const TokenWeights none = assign_weights({1.0, 0.99, -1.0}, 1.0, 0.9, 0.1);
    for (double v : none.weights) CHECK(v == 0.1);
    CHECK_THROWS_AS(assign_weights({0.1}, 0.05, 0.1, 0.9), CausalError);
    CHECK_THROWS_AS(assign_weights({0.1}, -0.1, 0.9, 0.1), CausalError);
}

TEST_CASE("weights cache: reuse without model evaluation, mismatch is an error") {
    const auto dir = test::tmp_dir("causal_cache");
    const ModelParams p = test::lively_params(test::tiny_dims(), 8);
    const auto corpus = random_corpus(6, 9);
    TrainConfig cfg;
    cfg.delta = 0.0;
    const PrecomputedWeights first = precompute_weights(p, corpus, cfg, dir / "w.jsonl");
    CHECK_FALSE(first.from_cache);
    CHECK(first.model_evaluations > 0);
    const PrecomputedWeights second = precompute_weights(p, corpus, cfg, dir / "w.jsonl");
    CHECK(second.from_cache);
    CHECK(second.model_evaluations == 0);
    REQUIRE(second.per_sample.size() == first.per_sample.size());
    for (std::size_t i = 0; i < first.per_sample.size(); ++i) {
        CHECK(second.per_sample[i].weights == first.per_sample[i].weights);
        CHECK(second.per_sample[i].scores == first.per_sample[i].scores);
        CHECK(second.per_sample[i].source_checksum == p.checksum());
    }
    cfg.lambda = 0.8;
    CHECK_THROWS_AS(precompute_weights(p, corpus, cfg, dir / "w.jsonl"), CausalError);
    cfg.lambda = 0.9;
    const ModelParams other = test::lively_params(test::tiny_dims(), 10);
    CHECK_THROWS_AS(precompute_weights(other, corpus, cfg, dir / "w.jsonl"), CausalError);
}

TEST_CASE("histogram over absolute values") {
    const auto degenerate = abs_histogram({0.0, 0.0, -0.0});
    REQUIRE(degenerate.size() == 1);
    CHECK(degenerate[0].count == 3);

    const auto h = abs_histogram({-2.0, 0.5, 1.0, 2.0}, 4);
    REQUIRE(h.size() == 4);
    CHECK(h[0].count == 0);
    CHECK(h[1].count == 1);
    CHECK(h[2].count == 1);
    CHECK(h[3].count == 2);
    CHECK(h[3].high == 2.0);
}

TEST_CASE("classification against the mask") {
    const auto all = classify_against_mask({true, true, true}, {true, true, true});
    CHECK(all.precision == 1.0);
    CHECK(all.recall == 1.0);
    const auto c = classify_against_mask({true, false, true, false}, {true, true, false, false});
    CHECK(c.precision == 0.5);
    CHECK(c.recall == 0.5);
    CHECK(c.positive_rate == 0.5);
    CHECK(c.flagged_rate == 0.5);
}

TEST_CASE("random assignment baseline: precision m, recall r") {
    // Closed form: flagging independently at rate r against positives at rate m.
    const double m = 0.8, r = 0.3;
    Rng rng(11);
    double p_sum = 0.0, r_sum = 0.0;
    const int trials = 400;
    for (int k = 0; k < trials; ++k) {
        std::vector<bool> flagged(500), truth(500);
        for (std::size_t i = 0; i < 500; ++i) {
            truth[i] = rng.uniform() < m;
            flagged[i] = rng.uniform() < r;
        }
        const auto c = classify_against_mask(flagged, truth);
        p_sum += c.precision;
        r_sum += c.recall;
        CHECK(c.baseline_precision() == c.positive_rate);
        CHECK(c.baseline_recall() == c.flagged_rate);
    }
    CHECK(p_sum / trials == doctest::Approx(m).epsilon(0.01));
    CHECK(r_sum / trials == doctest::Approx(r).epsilon(0.02));
}

TEST_CASE("attribution report fields follow the mask") {
    const ModelParams theta0 = test::lively_params(test::tiny_dims(), 12);
    const ModelParams theta = test::lively_params(test::tiny_dims(), 13);
    TrainConfig cfg;
    auto corpus = random_corpus(5, 14);
    const AttributionReport masked = attribute(theta, theta0, corpus, cfg);
    CHECK(masked.classification.has_value());
    CHECK(masked.mean_abs_logit_diff_pref.has_value());
    CHECK(masked.mean_abs_logit_diff > 0.0);
    CHECK(masked.theta_checksum == theta.checksum());
    const auto j = nlohmann::json::parse(report_to_json(masked));
    CHECK(j.contains("precision"));
    CHECK(j.contains("recall"));
    CHECK(j.contains("histogram"));

    for (auto& s : corpus) s.pref_mask.reset();
    const AttributionReport plain = attribute(theta, theta0, corpus, cfg);
    CHECK_FALSE(plain.classification.has_value());
    const auto jp = nlohmann::json::parse(report_to_json(plain));
    CHECK_FALSE(jp.contains("precision"));
    CHECK_FALSE(jp.contains("recall"));
    CHECK(jp.contains("histogram"));
}

TEST_CASE("attribution on empty histories: zero logit differences, one bin") {
    const ModelParams p = test::lively_params(test::tiny_dims(), 15);
    const AttributionReport r = attribute(p, p, random_corpus(4, 16, 0), TrainConfig{});
    CHECK(r.mean_abs_logit_diff == 0.0);
    REQUIRE(r.histogram.size() == 1);
    for (const auto& pos : r.positions) CHECK(pos.logit_diff == 0.0);
}

}
