#include "causalpref/engine.hpp"
#include "causalpref/metrics.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

using namespace causalpref;

namespace {

std::vector<std::string> words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

// Shared id table so string examples become token sequences.
TokenSeq ids(const std::string& s) {
    static std::map<std::string, TokenId> table;
    TokenSeq out;
    for (const auto& w : words(s)) {
        auto [it, fresh] = table.emplace(w, static_cast<TokenId>(table.size() + kNumSpecials));
        out.push_back(it->second);
    }
    return out;
}

// BLEU over strings with n-grams keyed by joined text.
double oracle_bleu(const std::string& hyp, const std::string& ref) {
    const auto h = words(hyp), r = words(ref);
    if (h.empty() || r.empty()) return 0.0;
    auto grams = [](const std::vector<std::string>& w, std::size_t n) {
        std::map<std::string, int> c;
        for (std::size_t i = 0; i + n <= w.size(); ++i) {
            std::string key;
            for (std::size_t k = 0; k < n; ++k) key += w[i + k] + "\x1f";
            c[key]++;
        }
        return c;
    };
    double logp = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto hc = grams(h, n), rc = grams(r, n);
        int match = 0, total = 0;
        for (const auto& [g, c] : hc) {
            total += c;
            const auto it = rc.find(g);
            if (it != rc.end()) match += std::min(c, it->second);
        }
        if (match == 0 && n == 1) return 0.0;
        const double p = match > 0 ? double(match) / total : 1.0 / (total + 1);
        logp += std::log(p) / 4.0;
    }
    const double bp = h.size() < r.size() ? std::exp(1.0 - double(r.size()) / h.size()) : 1.0;
    return 100.0 * bp * std::exp(logp);
}

// METEOR-exact by enumerating every alignment.
double oracle_meteor(const std::string& hyp, const std::string& ref) {
    const auto h = words(hyp), r = words(ref);
    if (h.empty() || r.empty()) return 0.0;
    std::size_t best_m = 0, best_c = 0;
    std::vector<int> assign(h.size(), -1);
    std::vector<bool> used(r.size(), false);
    std::function<void(std::size_t)> rec = [&](std::size_t i) {
        if (i == h.size()) {
            std::size_t m = 0, c = 0;
            int prev_h = -2, prev_r = -2;
            for (std::size_t k = 0; k < h.size(); ++k) {
                if (assign[k] < 0) continue;
                ++m;
                if (!(int(k) == prev_h + 1 && assign[k] == prev_r + 1)) ++c;
                prev_h = int(k);
                prev_r = assign[k];
            }
            if (m > best_m || (m == best_m && c < best_c)) {
                best_m = m;
                best_c = c;
            }
            return;
        }
        assign[i] = -1;
        rec(i + 1);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (used[j] || r[j] != h[i]) continue;
            used[j] = true;
            assign[i] = int(j);
            rec(i + 1);
            used[j] = false;
            assign[i] = -1;
        }
    };
    rec(0);
    if (best_m == 0) return 0.0;
    const double P = double(best_m) / h.size(), R = double(best_m) / r.size();
    const double f = 10 * P * R / (R + 9 * P);
    return f * (1 - 0.5 * std::pow(double(best_c) / best_m, 3));
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("ROUGE hand examples") {
    const auto r1 = rouge_1(ids("the cat sat"), ids("the cat slept"));
    CHECK(std::abs(r1.precision - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(r1.recall - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(r1.f1 - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(rouge_l(ids("the cat sat"), ids("the cat slept")).f1 - 2.0 / 3.0) < 1e-12);
    CHECK(rouge_1(ids("a b c"), ids("a b c")).f1 == 1.0);
    CHECK(rouge_l(ids("a b c"), ids("a b c")).f1 == 1.0);
    CHECK(rouge_1({}, ids("a b")).f1 == 0.0);
    CHECK(rouge_l(ids("x y"), ids("a b")).f1 == 0.0);
    // clipping: repeated hypothesis tokens count once per reference occurrence
    CHECK(rouge_1(ids("the the the"), ids("the cat")).precision == doctest::Approx(1.0 / 3.0));
    // LCS ignores gaps
    CHECK(rouge_l(ids("a x b y c"), ids("a b c")).recall == 1.0);
}

TEST_CASE("BLEU against the string oracle") {
    const double v = bleu(ids("the the the the"), ids("the cat"));
    CHECK(std::abs(v - 31.94715521231362) < 1e-6);
    CHECK(std::abs(v - oracle_bleu("the the the the", "the cat")) < 1e-9);
    const char* pairs[][2] = {{"a b c d e", "a b c d f"},
                              {"the cat sat on the mat", "the cat was on the mat"},
                              {"a", "a b c d"},
                              {"b a", "a b"},
                              {"x y z", "a b c"}};
    for (const auto& p : pairs) {
        CAPTURE(p[0]);
        CHECK(std::abs(bleu(ids(p[0]), ids(p[1])) - oracle_bleu(p[0], p[1])) < 1e-9);
    }
    CHECK(bleu(ids("a b c d e"), ids("a b c d e")) == doctest::Approx(100.0));
    CHECK(bleu(ids("a b"), ids("a b")) == doctest::Approx(100.0));
    CHECK(bleu({}, ids("a b")) == 0.0);
}

TEST_CASE("BLEU brevity penalty never drops when a prefix grows") {
    const TokenSeq ref = ids("a b c d e f g h");
    double prev_bp = 0.0;
    for (std::size_t n = 1; n <= ref.size(); ++n) {
        const double bp = std::exp(std::min(0.0, 1.0 - double(ref.size()) / double(n)));
        CHECK(bp >= prev_bp);
        prev_bp = bp;
        CHECK(bleu(TokenSeq(ref.begin(), ref.begin() + n), ref) > 0.0);
    }
}

TEST_CASE("METEOR-exact against the brute-force oracle") {
    const auto a = meteor_align(ids("the cat sat on the mat"), ids("the cat was on the mat"));
    CHECK(a.matches == 5);
    CHECK(a.chunks == 2);
    const double v = meteor_exact(ids("the cat sat on the mat"), ids("the cat was on the mat"));
    CHECK(std::abs(v - 0.8066666666666666) < 1e-6);
    CHECK(std::abs(v - oracle_meteor("the cat sat on the mat", "the cat was on the mat")) < 1e-12);

    const char* pairs[][2] = {{"a b a b", "b a b a"},
                              {"the the cat", "cat the the"},
                              {"x a y b", "a b"},
                              {"a b c", "c b a"},
                              {"q r s", "a b c"}};
    for (const auto& p : pairs) {
        CAPTURE(p[0]);
        CHECK(std::abs(meteor_exact(ids(p[0]), ids(p[1])) - oracle_meteor(p[0], p[1])) < 1e-12);
    }
}

TEST_CASE("METEOR identity and empty cases") {
    const TokenSeq s = ids("a b c d");
    CHECK(meteor_exact(s, s) == doctest::Approx(1.0 - 0.5 / 64.0));
    CHECK(meteor_exact({}, s) == 0.0);
    CHECK(meteor_exact(ids("x y"), s) == 0.0);
}

TEST_CASE("random pairs agree with both oracles") {
    Rng r(3);
    const char* vocab[] = {"a", "b", "c", "d"};
    for (int k = 0; k < 40; ++k) {
        std::string h, f;
        for (std::size_t i = 0, n = 1 + r.below(6); i < n; ++i) h += std::string(vocab[r.below(4)]) + " ";
        for (std::size_t i = 0, n = 1 + r.below(6); i < n; ++i) f += std::string(vocab[r.below(4)]) + " ";
        CAPTURE(h);
        CAPTURE(f);
        CHECK(std::abs(bleu(ids(h), ids(f)) - oracle_bleu(h, f)) < 1e-9);
        CHECK(std::abs(meteor_exact(ids(h), ids(f)) - oracle_meteor(h, f)) < 1e-12);
    }
}

TEST_CASE("preference hits are clipped") {
    const TokenSeq target{5, 6, 5, 7};
    CHECK(pref_token_hits({5, 5, 5}, target, {true, false, true, false}) == 2);
    CHECK(pref_token_hits({5, 6}, target, {true, true, true, false}) == 2);
    CHECK(pref_token_hits({}, target, {true, true, true, true}) == 0);
}

TEST_CASE("corpus evaluation averages per sample and rejects an empty set") {
    const ModelParams p = test::lively_params(test::tiny_dims(), 1);
    CHECK_THROWS_WITH(evaluate_corpus(p, {}, true), "empty evaluation set");
    Rng r(2);
    std::vector<Sample> corpus{test::random_sample(r, 32), test::random_sample(r, 32)};
    corpus[0].pref_mask = std::vector<bool>(corpus[0].target.size(), true);
    const CorpusEvaluation ev = evaluate_corpus(p, corpus, true);
    REQUIRE(ev.samples.size() == 2);
    CHECK(ev.mean.rouge1_f == doctest::Approx((ev.samples[0].scores.rouge1_f + ev.samples[1].scores.rouge1_f) / 2));
    CHECK(ev.samples[0].generated.size() <= corpus[0].target.size());
    CHECK(ev.samples[0].has_mask);
    CHECK_FALSE(ev.samples[1].has_mask);
}

TEST_CASE("a model that reproduces the target scores maximally") {
    // Memorize one sample, then decode it.
    Sample s;
    s.user_id = "u0";
    s.query = {5, 6};
    s.target = {7, 8, 9, 10};
    s.pref_mask = std::vector<bool>{true, false, true, false};
    TrainConfig cfg;
    cfg.variant = Variant::Base;
    cfg.precision = Precision::Double;
    cfg.learning_rate = 1e-2;
    cfg.dropout = 0.0;
    cfg.weight_decay = 0.0;
    cfg.epochs = 200;
    const ModelParams init = init_params(test::tiny_dims(), 4);
    const ModelParams p = train({s}, init, init, {}, cfg).params;
    const CorpusEvaluation ev = evaluate_corpus(p, {s}, true);
    CHECK(ev.samples[0].generated == s.target);
    CHECK(ev.mean.rouge1_f == 1.0);
    CHECK(ev.mean.rougeL_f == 1.0);
    CHECK(ev.mean.bleu == doctest::Approx(100.0));
    CHECK(ev.mean.meteor == doctest::Approx(1.0 - 0.5 / 64.0));
    CHECK(ev.pref_recall == 1.0);
}

TEST_CASE("evaluation CSV: one row per sample plus summaries, config hash on every row") {
    const ModelParams p = test::lively_params(test::tiny_dims(), 5);
    Rng r(6);
    std::vector<Sample> corpus{test::random_sample(r, 32), test::random_sample(r, 32), test::random_sample(r, 32)};
    const auto a = evaluate_corpus(p, corpus, true), b = evaluate_corpus(p, corpus, false);
    const auto dir = test::tmp_dir("metrics_csv");
    write_evaluation_csv(dir / "e.csv", a, b, 12345);
    std::ifstream in(dir / "e.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "condition,row,user_id,rouge1_f,rougeL_f,meteor_exact,bleu,pref_recall,config_hash");
    std::size_t rows = 0, summaries = 0;
    while (std::getline(in, line)) {
        ++rows;
        summaries += line.find(",summary,") != std::string::npos;
        CHECK(line.substr(line.rfind(',') + 1) == "12345");
    }
    CHECK(rows == 8);
    CHECK(summaries == 2);
}

}
