#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace causalpref {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Reserved ids, fixed order.
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kPad = 4;
inline constexpr std::size_t kNumSpecials = 5;

inline constexpr std::size_t kDefaultMaxSeq = 256;

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sample as it appears on disk: plain strings, one history entry per past interaction
/// (oldest first).
struct TextSample {
    std::string user_id;
    std::string query;
    std::vector<std::string> history;
    std::string target;
    std::optional<std::vector<bool>> pref_mask;
};

struct Sample {
    std::string user_id;
    TokenSeq query;
    std::vector<TokenSeq> history;
    TokenSeq target;
    std::optional<std::vector<bool>> pref_mask;
};

/// Dense string <-> id bijection. Ids 0..4 are the specials in the order BOS, SEP, EOS, UNK, PAD.
class Vocab {
public:
    Vocab();
    explicit Vocab(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    TokenId id(std::string_view token) const;  // UNK when absent
    bool contains(std::string_view token) const;
    const std::string& token(TokenId id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::uint64_t hash() const;

    std::string to_json() const;
    static Vocab from_json(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

/// Lowercase, whitespace split, every punctuation character becomes its own token.
std::vector<std::string> split_words(std::string_view text);

Vocab build_vocab(const std::vector<TextSample>& samples, std::size_t max_size);

TokenSeq tokenize(std::string_view text, const Vocab& vocab);
std::string detokenize(const TokenSeq& ids, const Vocab& vocab);

Sample encode_sample(const TextSample& text, const Vocab& vocab);

TextSample parse_sample_line(std::string_view line, std::size_t line_no);
std::string sample_to_json_line(const TextSample& sample);

std::vector<TextSample> load_text_samples(const std::filesystem::path& path);
void write_text_samples(const std::filesystem::path& path, const std::vector<TextSample>& samples);

/// Loads and encodes a JSONL corpus. When max_len > 0, a sample whose with-history packing exceeds
/// max_len is rejected with an error naming its line.
std::vector<Sample> load_samples(const std::filesystem::path& path, const Vocab& vocab,
                                 std::size_t max_len = 0);

struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

/// BOS . h1 . SEP . h2 . SEP ... SEP . x . SEP . y  (null history: BOS . SEP . x . SEP . y)
struct PackedContext {
    TokenSeq ids;
    TokenSpan target_span;
    bool with_history = true;
};

std::size_t packed_length(const Sample& sample, bool with_history);

PackedContext pack_context(const Sample& sample, bool with_history, const Vocab& vocab,
                           std::size_t max_len);
/// Same layout, without the vocabulary range check.
PackedContext pack_context(const Sample& sample, bool with_history, std::size_t max_len);

/// Conditioning prefix used for generation: the packed layout up to and including the SEP before y.
TokenSeq pack_prompt(const Sample& sample, bool with_history);

std::uint64_t corpus_hash(const std::vector<Sample>& samples);

struct SynthConfig {
    std::size_t n_users = 20;
    std::size_t samples_per_user = 10;
    std::size_t pref_lexicon_size = 4;
    std::size_t pref_pool_size = 24;
    std::size_t shared_lexicon_size = 4;
    std::size_t n_topics = 4;
    double pref_injection_prob = 0.8;
    // Probability that a history token is drawn from the user's preference lexicon.
    double history_pref_prob = 0.9;
    std::size_t history_len = 3;
    std::size_t history_sentence_len = 5;
    std::size_t target_len = 8;
    std::size_t vocab_budget = 1024;
    std::uint64_t seed = 7;

    void validate() const;
};

struct SynthLexicons {
    std::vector<std::string> shared;
    std::vector<std::vector<std::string>> per_user;
};

std::string synth_user_id(std::size_t user);
SynthLexicons synth_lexicons(const SynthConfig& cfg);
std::vector<TextSample> gen_synthetic(const SynthConfig& cfg);

struct CorpusStats {
    std::size_t users = 0;
    std::size_t samples = 0;
    std::size_t target_tokens = 0;
    std::size_t pref_tokens = 0;
    double pref_rate() const {
        return target_tokens == 0 ? 0.0 : static_cast<double>(pref_tokens) / target_tokens;
    }
};

CorpusStats corpus_stats(const std::vector<TextSample>& samples);

struct UserSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};

/// Deterministic per-user split: users ranked by a hash of their id, the lowest
/// round(heldout_fraction * n_users) users (at least one when there are two or more) are held out.
UserSplit split_by_user(const std::vector<Sample>& samples, double heldout_fraction = 0.1);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace causalpref
