#include "causalpref/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

namespace causalpref {

namespace {

PrfScore from_counts(double overlap, std::size_t hyp_len, std::size_t ref_len) {
    PrfScore s;
    if (hyp_len == 0 || ref_len == 0) return s;
    s.precision = overlap / static_cast<double>(hyp_len);
    s.recall = overlap / static_cast<double>(ref_len);
    if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

std::map<std::vector<TokenId>, std::size_t> ngram_counts(const TokenSeq& seq, std::size_t n) {
    std::map<std::vector<TokenId>, std::size_t> counts;
    if (seq.size() < n) return counts;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        ++counts[std::vector<TokenId>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                      seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

std::size_t clipped_overlap(const TokenSeq& hyp, const TokenSeq& ref, std::size_t n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    std::size_t overlap = 0;
    for (const auto& [gram, c] : h) {
        auto it = r.find(gram);
        if (it != r.end()) overlap += std::min(c, it->second);
    }
    return overlap;
}

}  // namespace

PrfScore rouge_1(const TokenSeq& hypothesis, const TokenSeq& reference) {
    return from_counts(static_cast<double>(clipped_overlap(hypothesis, reference, 1)),
                       hypothesis.size(), reference.size());
}

PrfScore rouge_l(const TokenSeq& hypothesis, const TokenSeq& reference) {
    const std::size_t n = hypothesis.size(), m = reference.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = hypothesis[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                           : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return from_counts(static_cast<double>(prev[m]), n, m);
}

double bleu(const TokenSeq& hypothesis, const TokenSeq& reference, std::size_t max_n) {
    if (hypothesis.empty() || reference.empty() || max_n == 0) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const double total = hypothesis.size() >= n ? static_cast<double>(hypothesis.size() - n + 1) : 0.0;
        const double matched = static_cast<double>(clipped_overlap(hypothesis, reference, n));
        double p;
        if (matched > 0.0) {
            p = matched / total;
        } else if (n == 1) {
            return 0.0;
        } else {
            p = 1.0 / (total + 1.0);
        }
        log_sum += std::log(p);
    }
    const double hyp_len = static_cast<double>(hypothesis.size());
    const double ref_len = static_cast<double>(reference.size());
    const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

// ---------------------------------------------------------------------------
// METEOR (exact matching only)

namespace {

struct AlignBest {
    std::size_t matches = 0;
    std::size_t chunks = 0;
    bool better_than(const AlignBest& o) const {
        return matches != o.matches ? matches > o.matches : chunks < o.chunks;
    }
};

class MeteorSearch {
public:
    MeteorSearch(const TokenSeq& hyp, const TokenSeq& ref) : hyp_(hyp), ref_(ref) {}

    AlignBest run() { return solve(0, kNone, 0); }

private:
    static constexpr std::size_t kNone = 64;

    // prev_ref: reference index the previous hypothesis token aligned to, kNone when unaligned.
    AlignBest solve(std::size_t i, std::size_t prev_ref, std::uint64_t used) {
        if (i == hyp_.size()) return {};
        const std::uint64_t key_hi = (static_cast<std::uint64_t>(i) << 8) | prev_ref;
        auto& bucket = memo_[key_hi];
        if (auto it = bucket.find(used); it != bucket.end()) return it->second;

        AlignBest best = solve(i + 1, kNone, used);  // leave hyp[i] unaligned
        for (std::size_t j = 0; j < ref_.size(); ++j) {
            if (ref_[j] != hyp_[i] || (used >> j) & 1U) continue;
            AlignBest cand = solve(i + 1, j, used | (std::uint64_t{1} << j));
            cand.matches += 1;
            const bool continues = prev_ref != kNone && prev_ref + 1 == j;
            if (!continues) cand.chunks += 1;
            if (cand.better_than(best)) best = cand;
        }
        bucket[used] = best;
        return best;
    }

    const TokenSeq& hyp_;
    const TokenSeq& ref_;
    std::unordered_map<std::uint64_t, std::unordered_map<std::uint64_t, AlignBest>> memo_;
};

// Left-to-right fallback for references of 64 tokens or more.
MeteorAlignment greedy_align(const TokenSeq& hyp, const TokenSeq& ref) {
    std::vector<bool> used(ref.size(), false);
    MeteorAlignment a;
    std::size_t prev = ref.size();
    for (TokenId tok : hyp) {
        std::size_t pick = ref.size();
        if (prev + 1 < ref.size() && !used[prev + 1] && ref[prev + 1] == tok) {
            pick = prev + 1;
        } else {
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (!used[j] && ref[j] == tok) {
                    pick = j;
                    break;
                }
            }
        }
        if (pick == ref.size()) {
            prev = ref.size();
            continue;
        }
        used[pick] = true;
        ++a.matches;
        if (!(prev < ref.size() && prev + 1 == pick)) ++a.chunks;
        prev = pick;
    }
    return a;
}

}  // namespace

MeteorAlignment meteor_align(const TokenSeq& hypothesis, const TokenSeq& reference) {
    if (reference.size() > 63) return greedy_align(hypothesis, reference);
    MeteorSearch search(hypothesis, reference);
    const AlignBest best = search.run();
    return {best.matches, best.chunks};
}

double meteor_exact(const TokenSeq& hypothesis, const TokenSeq& reference) {
    if (hypothesis.empty() || reference.empty()) return 0.0;
    const MeteorAlignment a = meteor_align(hypothesis, reference);
    if (a.matches == 0) return 0.0;
    const double m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(hypothesis.size());
    const double r = m / static_cast<double>(reference.size());
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    return f_mean * (1.0 - penalty);
}

MetricScores score_pair(const TokenSeq& hypothesis, const TokenSeq& reference) {
    MetricScores s;
    s.rouge1_f = rouge_1(hypothesis, reference).f1;
    s.rougeL_f = rouge_l(hypothesis, reference).f1;
    s.meteor = meteor_exact(hypothesis, reference);
    s.bleu = bleu(hypothesis, reference);
    return s;
}

std::size_t pref_token_hits(const TokenSeq& hypothesis, const TokenSeq& target,
                            const std::vector<bool>& mask) {
    std::map<TokenId, std::size_t> wanted;
    for (std::size_t t = 0; t < target.size() && t < mask.size(); ++t) {
        if (mask[t]) ++wanted[target[t]];
    }
    std::map<TokenId, std::size_t> produced;
    for (TokenId tok : hypothesis) ++produced[tok];
    std::size_t hits = 0;
    for (const auto& [tok, n] : wanted) {
        auto it = produced.find(tok);
        if (it != produced.end()) hits += std::min(n, it->second);
    }
    return hits;
}

CorpusEvaluation evaluate_corpus(const ModelParams& theta, const std::vector<Sample>& corpus,
                                 bool with_history, Precision precision) {
    if (corpus.empty()) throw std::invalid_argument("empty evaluation set");
    CorpusEvaluation out;
    std::size_t hits = 0, wanted = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Sample& s = corpus[i];
        SampleEvaluation ev;
        ev.sample = i;
        ev.user_id = s.user_id;
        ev.generated = greedy_decode(theta, s, with_history, s.target.size(), precision);
        ev.scores = score_pair(ev.generated, s.target);
        if (s.pref_mask) {
            ev.has_mask = true;
            const std::size_t n_pref =
                static_cast<std::size_t>(std::count(s.pref_mask->begin(), s.pref_mask->end(), true));
            const std::size_t h = pref_token_hits(ev.generated, s.target, *s.pref_mask);
            ev.pref_recall = n_pref == 0 ? 0.0 : static_cast<double>(h) / static_cast<double>(n_pref);
            hits += h;
            wanted += n_pref;
        }
        out.mean.rouge1_f += ev.scores.rouge1_f;
        out.mean.rougeL_f += ev.scores.rougeL_f;
        out.mean.meteor += ev.scores.meteor;
        out.mean.bleu += ev.scores.bleu;
        out.samples.push_back(std::move(ev));
    }
    const double n = static_cast<double>(corpus.size());
    out.mean.rouge1_f /= n;
    out.mean.rougeL_f /= n;
    out.mean.meteor /= n;
    out.mean.bleu /= n;
    out.pref_recall = wanted == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(wanted);
    return out;
}

void write_evaluation_csv(const std::filesystem::path& path, const CorpusEvaluation& with_history,
                          const CorpusEvaluation& without_history, std::uint64_t config_hash) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "condition,row,user_id,rouge1_f,rougeL_f,meteor_exact,bleu,pref_recall,config_hash\n";
    auto emit = [&](const char* cond, const CorpusEvaluation& ev) {
        for (const auto& s : ev.samples) {
            out << cond << ',' << s.sample << ',' << s.user_id << ',' << s.scores.rouge1_f << ','
                << s.scores.rougeL_f << ',' << s.scores.meteor << ',' << s.scores.bleu << ','
                << s.pref_recall << ',' << config_hash << '\n';
        }
        out << cond << ",summary,," << ev.mean.rouge1_f << ',' << ev.mean.rougeL_f << ','
            << ev.mean.meteor << ',' << ev.mean.bleu << ',' << ev.pref_recall << ',' << config_hash
            << '\n';
    };
    emit("with_history", with_history);
    emit("without_history", without_history);
}

}  // namespace causalpref
