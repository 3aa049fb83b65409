#pragma once

#include "causalpref/corpus.hpp"
#include "causalpref/model.hpp"

#include <filesystem>
#include <vector>

namespace causalpref {

struct PrfScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Clipped unigram overlap.
PrfScore rouge_1(const TokenSeq& hypothesis, const TokenSeq& reference);

/// Longest common subsequence.
PrfScore rouge_l(const TokenSeq& hypothesis, const TokenSeq& reference);

/// Sentence BLEU in [0, 100]: geometric mean of clipped n-gram precisions for n = 1..max_n with
/// add-one smoothing (numerator and denominator) on zero-match orders n >= 2, times the brevity
/// penalty exp(1 - |ref|/|hyp|) when the hypothesis is shorter.
double bleu(const TokenSeq& hypothesis, const TokenSeq& reference, std::size_t max_n = 4);

struct MeteorAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

/// Exact-match unigram alignment with the most matches and, among those, the fewest chunks.
MeteorAlignment meteor_align(const TokenSeq& hypothesis, const TokenSeq& reference);

/// F_mean = 10PR / (R + 9P), penalty = 0.5 (chunks / matches)^3, score = F_mean (1 - penalty).
double meteor_exact(const TokenSeq& hypothesis, const TokenSeq& reference);

struct MetricScores {
    double rouge1_f = 0.0;
    double rougeL_f = 0.0;
    double meteor = 0.0;  // exact-match variant
    double bleu = 0.0;    // 0..100
};

MetricScores score_pair(const TokenSeq& hypothesis, const TokenSeq& reference);

struct SampleEvaluation {
    std::size_t sample = 0;
    std::string user_id;
    TokenSeq generated;
    MetricScores scores;
    double pref_recall = 0.0;  // only meaningful when the sample has a pref_mask
    bool has_mask = false;
};

struct CorpusEvaluation {
    std::vector<SampleEvaluation> samples;
    MetricScores mean;
    double pref_recall = 0.0;  // clipped matches of masked target tokens / masked tokens, pooled
};

/// Clipped count of masked (preference) target tokens reproduced by the hypothesis.
std::size_t pref_token_hits(const TokenSeq& hypothesis, const TokenSeq& target,
                            const std::vector<bool>& mask);

/// Greedy-decodes |y| tokens per sample and averages each metric over samples.
CorpusEvaluation evaluate_corpus(const ModelParams& theta, const std::vector<Sample>& corpus,
                                 bool with_history, Precision precision = Precision::Double);

void write_evaluation_csv(const std::filesystem::path& path, const CorpusEvaluation& with_history,
                          const CorpusEvaluation& without_history, std::uint64_t config_hash);

}  // namespace causalpref
