#include "causalpref/causal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace causalpref {

using nlohmann::json;

TokenWeights TokenWeights::uniform(std::size_t n, double value) {
    TokenWeights w;
    w.weights.assign(n, value);
    w.lambda = value;
    w.epsilon = value;
    return w;
}

std::vector<EffectVector> prediction_effects(const ModelParams& theta, const Sample& sample,
                                             Precision precision) {
    const auto with = target_probs(theta, sample, true, precision);
    const auto without = target_probs(theta, sample, false, precision);
    std::vector<EffectVector> out(with.size());
    for (std::size_t t = 0; t < with.size(); ++t) {
        out[t].resize(with[t].size());
        for (std::size_t v = 0; v < with[t].size(); ++v) out[t][v] = with[t][v] - without[t][v];
    }
    return out;
}

EffectVector prediction_effect(const ModelParams& theta, const Sample& sample, std::size_t t,
                               Precision precision) {
    if (t >= sample.target.size()) {
        throw CausalError("position " + std::to_string(t) + " is past the target length " +
                          std::to_string(sample.target.size()));
    }
    return prediction_effects(theta, sample, precision)[t];
}

std::vector<double> gt_token_effects(const ModelParams& theta0, const Sample& sample,
                                     Precision precision) {
    const auto with = target_probs(theta0, sample, true, precision);
    const auto without = target_probs(theta0, sample, false, precision);
    std::vector<double> out(sample.target.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        const auto y = static_cast<std::size_t>(sample.target[t]);
        out[t] = with[t][y] - without[t][y];
    }
    return out;
}

double gt_token_effect(const ModelParams& theta0, const Sample& sample, std::size_t t,
                       Precision precision) {
    if (t >= sample.target.size()) {
        throw CausalError("position " + std::to_string(t) + " is past the target length " +
                          std::to_string(sample.target.size()));
    }
    return gt_token_effects(theta0, sample, precision)[t];
}

TokenWeights assign_weights(const std::vector<double>& scores, double delta, double lambda,
                            double epsilon) {
    if (!(epsilon > 0.0 && epsilon <= lambda)) throw CausalError("need 0 < epsilon <= lambda");
    if (delta < 0.0) throw CausalError("delta must be >= 0");
    TokenWeights w;
    w.scores = scores;
    w.lambda = lambda;
    w.epsilon = epsilon;
    w.delta = delta;
    w.weights.reserve(scores.size());
    for (double s : scores) w.weights.push_back(s > delta ? lambda : epsilon);
    return w;
}

double PrecomputedWeights::lambda_fraction() const {
    std::size_t total = 0, high = 0;
    for (const auto& w : per_sample) {
        for (double v : w.weights) {
            ++total;
            // lambda == epsilon would make every token "high"; count strictly by the score test
            if (v == w.lambda && w.lambda != w.epsilon) ++high;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(high) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Cache

namespace {

json fingerprint_json(const WeightsFingerprint& f) {
    return json{{"theta0_checksum", f.theta0_checksum}, {"corpus_hash", f.corpus_hash},
                {"delta", f.delta},
                {"lambda", f.lambda},
                {"epsilon", f.epsilon},
                {"n_samples", f.n_samples}};
}

WeightsFingerprint fingerprint_from_json(const json& j) {
    WeightsFingerprint f;
    f.theta0_checksum = j.at("theta0_checksum").get<std::uint64_t>();
    f.corpus_hash = j.at("corpus_hash").get<std::uint64_t>();
    f.delta = j.at("delta").get<double>();
    f.lambda = j.at("lambda").get<double>();
    f.epsilon = j.at("epsilon").get<double>();
    f.n_samples = j.at("n_samples").get<std::size_t>();
    return f;
}

}  // namespace

void write_weights_cache(const std::filesystem::path& path, const PrecomputedWeights& w) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CausalError("cannot write weights cache " + path.string());
    out << json{{"header", fingerprint_json(w.fingerprint)}}.dump() << '\n';
    for (std::size_t i = 0; i < w.per_sample.size(); ++i) {
        out << json{{"sample_index", i},
                    {"weights", w.per_sample[i].weights},
                    {"scores", w.per_sample[i].scores}}
                   .dump()
            << '\n';
    }
}

PrecomputedWeights read_weights_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CausalError("cannot read weights cache " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw CausalError("weights cache " + path.string() + " is empty");
    PrecomputedWeights out;
    out.from_cache = true;
    try {
        out.fingerprint = fingerprint_from_json(json::parse(line).at("header"));
        std::size_t expected = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            if (j.at("sample_index").get<std::size_t>() != expected) {
                throw CausalError("weights cache rows out of order");
            }
            TokenWeights w;
            w.weights = j.at("weights").get<std::vector<double>>();
            w.scores = j.at("scores").get<std::vector<double>>();
            w.lambda = out.fingerprint.lambda;
            w.epsilon = out.fingerprint.epsilon;
            w.delta = out.fingerprint.delta;
            w.source_checksum = out.fingerprint.theta0_checksum;
            out.per_sample.push_back(std::move(w));
            ++expected;
        }
    } catch (const json::exception& e) {
        throw CausalError("corrupt weights cache " + path.string() + ": " + e.what());
    }
    if (out.per_sample.size() != out.fingerprint.n_samples) {
        throw CausalError("weights cache " + path.string() + " is truncated");
    }
    return out;
}

PrecomputedWeights precompute_weights(const ModelParams& theta0, const std::vector<Sample>& corpus,
                                      const TrainConfig& cfg,
                                      const std::optional<std::filesystem::path>& cache) {
    WeightsFingerprint fp;
    fp.theta0_checksum = theta0.checksum();
    fp.corpus_hash = corpus_hash(corpus);
    fp.delta = cfg.delta;
    fp.lambda = cfg.lambda;
    fp.epsilon = cfg.epsilon;
    fp.n_samples = corpus.size();

    if (cache && std::filesystem::exists(*cache)) {
        PrecomputedWeights cached = read_weights_cache(*cache);
        if (!(cached.fingerprint == fp)) {
            throw CausalError("weights cache " + cache->string() +
                              " was computed for a different proxy model, corpus or (delta, "
                              "lambda, epsilon); delete it and recompute");
        }
        return cached;
    }

    PrecomputedWeights out;
    out.fingerprint = fp;
    out.per_sample.reserve(corpus.size());
    for (const auto& s : corpus) {
        TokenWeights w = assign_weights(gt_token_effects(theta0, s), cfg.delta, cfg.lambda, cfg.epsilon);
        w.source_checksum = fp.theta0_checksum;
        out.per_sample.push_back(std::move(w));
        out.model_evaluations += 2;
    }
    if (cache) write_weights_cache(*cache, out);
    return out;
}

// ---------------------------------------------------------------------------
// Attribution

std::vector<HistogramBin> abs_histogram(const std::vector<double>& values, std::size_t bins) {
    double hi = 0.0;
    for (double v : values) hi = std::max(hi, std::abs(v));
    if (hi == 0.0 || bins <= 1) {
        return {HistogramBin{0.0, hi, values.size()}};
    }
    std::vector<HistogramBin> out(bins);
    const double width = hi / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        out[b].low = width * static_cast<double>(b);
        out[b].high = b + 1 == bins ? hi : width * static_cast<double>(b + 1);
    }
    for (double v : values) {
        auto b = static_cast<std::size_t>(std::abs(v) / width);
        out[std::min(b, bins - 1)].count += 1;
    }
    return out;
}

ClassificationScores classify_against_mask(const std::vector<bool>& flagged,
                                           const std::vector<bool>& truth) {
    if (flagged.size() != truth.size()) throw CausalError("classification: length mismatch");
    ClassificationScores c;
    for (std::size_t i = 0; i < flagged.size(); ++i) {
        if (flagged[i] && truth[i]) ++c.true_pos;
        else if (flagged[i]) ++c.false_pos;
        else if (truth[i]) ++c.false_neg;
        else ++c.true_neg;
    }
    const auto n = static_cast<double>(flagged.size());
    const double tp = static_cast<double>(c.true_pos);
    c.precision = c.true_pos + c.false_pos == 0 ? 0.0 : tp / static_cast<double>(c.true_pos + c.false_pos);
    c.recall = c.true_pos + c.false_neg == 0 ? 0.0 : tp / static_cast<double>(c.true_pos + c.false_neg);
    c.f1 = c.precision + c.recall == 0.0 ? 0.0 : 2.0 * c.precision * c.recall / (c.precision + c.recall);
    if (n > 0) {
        c.positive_rate = static_cast<double>(c.true_pos + c.false_neg) / n;
        c.flagged_rate = static_cast<double>(c.true_pos + c.false_pos) / n;
    }
    return c;
}

AttributionReport attribute(const ModelParams& theta, const ModelParams& theta0,
                            const std::vector<Sample>& corpus, const TrainConfig& cfg,
                            const std::vector<TokenWeights>* weights) {
    PrecomputedWeights computed;
    if (weights == nullptr) {
        computed = precompute_weights(theta0, corpus, cfg);
        weights = &computed.per_sample;
    }
    if (weights->size() != corpus.size()) throw CausalError("attribute: one TokenWeights per sample required");

    AttributionReport report;
    report.theta_checksum = theta.checksum();
    report.theta0_checksum = theta0.checksum();

    std::vector<double> diffs;
    std::vector<bool> flagged, truth;
    double pref_sum = 0.0;
    std::size_t pref_n = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Sample& s = corpus[i];
        const TokenWeights& w = (*weights)[i];
        const Logits zh = target_logits(theta, s, true);
        const Logits z0 = target_logits(theta, s, false);
        for (std::size_t t = 0; t < s.target.size(); ++t) {
            const auto y = static_cast<std::size_t>(s.target[t]);
            const auto ph = softmax(zh.row(t));
            const auto p0 = softmax(z0.row(t));
            PositionAttribution pa;
            pa.sample = i;
            pa.position = t;
            pa.token = s.target[t];
            pa.proxy_score = w.scores.empty() ? 0.0 : w.scores[t];
            pa.model_effect = ph[y] - p0[y];
            pa.weight = w.weights[t];
            pa.logit_diff = zh.row(t)[y] - z0.row(t)[y];
            diffs.push_back(pa.logit_diff);
            if (s.pref_mask) {
                pa.pref = (*s.pref_mask)[t];
                const bool scored = w.scores.size() == s.target.size();
                flagged.push_back(w.weights[t] == w.lambda &&
                                  (w.lambda != w.epsilon || (scored && w.scores[t] > w.delta)));
                truth.push_back(*pa.pref);
                if (*pa.pref) {
                    pref_sum += std::abs(pa.logit_diff);
                    ++pref_n;
                }
            }
            report.positions.push_back(pa);
        }
    }
    double sum = 0.0;
    for (double d : diffs) sum += std::abs(d);
    report.mean_abs_logit_diff = diffs.empty() ? 0.0 : sum / static_cast<double>(diffs.size());
    report.histogram = abs_histogram(diffs);
    if (!truth.empty()) {
        report.classification = classify_against_mask(flagged, truth);
        report.mean_abs_logit_diff_pref = pref_n == 0 ? 0.0 : pref_sum / static_cast<double>(pref_n);
    }
    return report;
}

std::string report_to_json(const AttributionReport& report, bool include_positions) {
    json j;
    j["theta_checksum"] = report.theta_checksum;
    j["theta0_checksum"] = report.theta0_checksum;
    j["scored_positions"] = report.positions.size();
    j["mean_abs_logit_diff"] = report.mean_abs_logit_diff;
    if (report.mean_abs_logit_diff_pref) {
        j["mean_abs_logit_diff_pref"] = *report.mean_abs_logit_diff_pref;
    }
    json hist = json::array();
    for (const auto& b : report.histogram) {
        hist.push_back({{"bin_low", b.low}, {"bin_high", b.high}, {"count", b.count}});
    }
    j["histogram"] = hist;
    if (report.classification) {
        const auto& c = *report.classification;
        j["precision"] = c.precision;
        j["recall"] = c.recall;
        j["f1"] = c.f1;
        j["mask_rate"] = c.positive_rate;
        j["lambda_rate"] = c.flagged_rate;
        j["baseline_precision"] = c.baseline_precision();
        j["baseline_recall"] = c.baseline_recall();
    }
    if (include_positions) {
        json rows = json::array();
        for (const auto& p : report.positions) {
            json r{{"sample", p.sample},           {"position", p.position},
                   {"token", p.token},             {"proxy_score", p.proxy_score},
                   {"model_effect", p.model_effect}, {"weight", p.weight},
                   {"logit_diff", p.logit_diff}};
            if (p.pref) r["pref"] = *p.pref;
            rows.push_back(std::move(r));
        }
        j["positions"] = rows;
    }
    return j.dump(2);
}

void write_histogram_csv(const std::filesystem::path& path, const std::vector<HistogramBin>& bins) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CausalError("cannot write " + path.string());
    out.precision(17);
    out << "bin_low,bin_high,count\n";
    for (const auto& b : bins) out << b.low << ',' << b.high << ',' << b.count << '\n';
}

}  // namespace causalpref
