#include "causalpref/loss.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace causalpref;

namespace {

// Scalar oracles, written out independently of the library.
double oracle_ce(const std::vector<double>& z, std::size_t y) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return -(z[y] - mx - std::log(s));
}

Logits one_row(std::vector<double> z) {
    Logits l;
    l.rows = 1;
    l.cols = z.size();
    l.data = std::move(z);
    return l;
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("weighted normal loss: scalar cases") {
    const std::vector<double> w1{1.0};
    CHECK(weighted_normal_loss({{0.5, 0.5}}, TokenSeq{0}, w1).total ==
          doctest::Approx(0.6931471805599453).epsilon(1e-12));

    const std::vector<double> w2{0.9, 0.1};
    const auto l = weighted_normal_loss({{0.5, 0.5, 0.0}, {0.25, 0.5, 0.25}}, TokenSeq{0, 2}, w2);
    CHECK(std::abs(l.total - 0.7624618986159398) < 1e-9);
    CHECK(l.per_token.size() == 2);
    CHECK(l.per_token[0] == doctest::Approx(0.9 * std::log(2.0)));

    const std::vector<double> zero{0.0, 0.0};
    CHECK(weighted_normal_loss({{0.5, 0.5}, {0.1, 0.9}}, TokenSeq{0, 1}, zero).total == 0.0);
    CHECK(weighted_normal_loss({{1.0, 0.0}, {0.0, 1.0}}, TokenSeq{0, 1}, w2).total == 0.0);
}

TEST_CASE("a zero probability is floored, not infinite") {
    const std::vector<double> w{1.0};
    const double l = weighted_normal_loss({{1.0, 0.0}}, TokenSeq{1}, w).total;
    CHECK(l == doctest::Approx(-std::log(kProbFloor)));
}

TEST_CASE("causal preference loss: logit-difference example") {
    const std::vector<double> w{1.0};
    const auto l = causal_preference_loss(one_row({2, 0, 0}), one_row({1, 0, 0}), TokenSeq{0}, w);
    CHECK(std::abs(l.total - 0.5514447139320511) < 1e-9);
    CHECK(std::abs(l.total - oracle_ce({1, 0, 0}, 0)) < 1e-12);
}

TEST_CASE("identical rows give ln(vocab) per token") {
    Rng r(1);
    std::vector<double> z(17);
    for (auto& v : z) v = r.normal();
    const std::vector<double> w{1.0};
    const auto l = causal_preference_loss(one_row(z), one_row(z), TokenSeq{3}, w);
    CHECK(l.total == doctest::Approx(std::log(17.0)).epsilon(1e-12));
}

TEST_CASE("shifting both rows by a constant leaves the loss unchanged") {
    Rng r(2);
    std::vector<double> a(9), b(9);
    for (auto& v : a) v = r.normal();
    for (auto& v : b) v = r.normal();
    const std::vector<double> w{0.7};
    const double base = causal_preference_loss(one_row(a), one_row(b), TokenSeq{4}, w).total;
    for (auto& v : a) v += 3.25;
    for (auto& v : b) v += 3.25;
    CHECK(causal_preference_loss(one_row(a), one_row(b), TokenSeq{4}, w).total ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("loss inputs are validated") {
    const std::vector<double> w{1.0};
    CHECK_THROWS_AS(weighted_normal_loss({{0.5, 0.5}}, TokenSeq{0, 1}, w), LossError);
    CHECK_THROWS_AS(weighted_normal_loss({{0.5, 0.5}}, TokenSeq{5}, w), LossError);
    CHECK_THROWS_AS(causal_preference_loss(one_row({1, 2}), one_row({1, 2, 3}), TokenSeq{0}, w), LossError);
}

TEST_CASE("probability-space diagnostic") {
    const std::vector<double> w{1.0};
    // p_h - p_0 = [0.3, 0, -0.3] -> clipped [0.3, 0, 0] -> [1, 0, 0]
    const auto l = causal_preference_loss_prob_space({{0.5, 0.3, 0.2}}, {{0.2, 0.3, 0.5}}, TokenSeq{0}, w);
    CHECK(l.total == doctest::Approx(0.0));
    // nothing survives -> uniform
    const auto u = causal_preference_loss_prob_space({{0.5, 0.5}}, {{0.5, 0.5}}, TokenSeq{1}, w);
    CHECK(u.total == doctest::Approx(std::log(2.0)));
}

TEST_CASE("total loss combines linearly in alpha") {
    CHECK(total_loss(1.0, 2.0, 0.0).total == 1.0);
    CHECK(total_loss(1.0, 2.0, 0.1).total == doctest::Approx(1.2));
    CHECK(total_loss(0.8, 3.0, 0.05).total == doctest::Approx(0.8 + 0.05 * 3.0));
    CHECK_THROWS_AS(total_loss(1.0, 2.0, -0.1), LossError);
}

}
