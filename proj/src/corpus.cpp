#include "causalpref/corpus.hpp"

#include "causalpref/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace causalpref {

using nlohmann::json;

namespace {

const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> specials = {"<bos>", "<sep>", "<eos>", "<unk>", "<pad>"};
    return specials;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& specials = special_tokens();
    if (tokens_.size() < specials.size() ||
        !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
        throw CorpusError("vocab must start with the special tokens <bos> <sep> <eos> <unk> <pad>");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
        if (!inserted) throw CorpusError("duplicate vocab entry '" + tokens_[i] + "'");
    }
}

TokenId Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
    return index_.count(std::string(token)) != 0;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw CorpusError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
        h = fnv1a(t, h);
        h = fnv1a(std::string_view("\n", 1), h);
    }
    return h;
}

std::string Vocab::to_json() const {
    json j;
    j["tokens"] = tokens_;
    return j.dump();
}

Vocab Vocab::from_json(std::string_view text) {
    json j = json::parse(text);
    if (!j.contains("tokens") || !j["tokens"].is_array()) {
        throw CorpusError("vocab file has no \"tokens\" array");
    }
    return Vocab(j["tokens"].get<std::vector<std::string>>());
}

void Vocab::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write " + path.string());
    out << to_json() << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot read vocab " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            words.emplace_back(1, raw);
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return words;
}

Vocab build_vocab(const std::vector<TextSample>& samples, std::size_t max_size) {
    if (samples.empty()) throw CorpusError("empty corpus");
    if (max_size < kNumSpecials) throw CorpusError("max_size must leave room for the 5 special tokens");

    std::map<std::string, std::size_t> counts;
    auto count_text = [&](std::string_view text) {
        for (auto& w : split_words(text)) ++counts[w];
    };
    for (const auto& s : samples) {
        count_text(s.query);
        for (const auto& h : s.history) count_text(h);
        count_text(s.target);
    }
    const auto& specials = special_tokens();
    for (const auto& sp : specials) counts.erase(sp);

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> tokens = specials;
    for (const auto& [word, n] : ranked) {
        if (tokens.size() >= max_size) break;
        tokens.push_back(word);
    }
    return Vocab(std::move(tokens));
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab) {
    TokenSeq ids;
    for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
    return ids;
}

std::string detokenize(const TokenSeq& ids, const Vocab& vocab) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += vocab.token(ids[i]);
    }
    return out;
}

Sample encode_sample(const TextSample& text, const Vocab& vocab) {
    Sample s;
    s.user_id = text.user_id;
    s.query = tokenize(text.query, vocab);
    for (const auto& h : text.history) s.history.push_back(tokenize(h, vocab));
    s.target = tokenize(text.target, vocab);
    s.pref_mask = text.pref_mask;
    if (s.query.empty()) throw CorpusError("sample for user '" + s.user_id + "' has an empty query");
    if (s.target.empty()) throw CorpusError("sample for user '" + s.user_id + "' has an empty target");
    if (s.pref_mask && s.pref_mask->size() != s.target.size()) {
        throw CorpusError("pref_mask length " + std::to_string(s.pref_mask->size()) +
                          " != target token count " + std::to_string(s.target.size()));
    }
    return s;
}

// ---------------------------------------------------------------------------
// JSONL

TextSample parse_sample_line(std::string_view line, std::size_t line_no) {
    const std::string where = "line " + std::to_string(line_no) + ": ";
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw CorpusError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw CorpusError(where + "expected a JSON object");

    auto require_string = [&](const char* key) {
        if (!j.contains(key)) throw CorpusError(where + "missing required field \"" + key + "\"");
        if (!j[key].is_string()) throw CorpusError(where + "field \"" + key + "\" must be a string");
        return j[key].get<std::string>();
    };

    TextSample s;
    s.user_id = require_string("user_id");
    s.query = require_string("query");
    s.target = require_string("target");
    if (!j.contains("history")) throw CorpusError(where + "missing required field \"history\"");
    if (!j["history"].is_array()) throw CorpusError(where + "field \"history\" must be an array");
    for (const auto& h : j["history"]) {
        if (!h.is_string()) throw CorpusError(where + "history entries must be strings");
        s.history.push_back(h.get<std::string>());
    }
    if (split_words(s.query).empty()) throw CorpusError(where + "query is empty");
    const auto target_words = split_words(s.target);
    if (target_words.empty()) throw CorpusError(where + "target is empty");

    if (j.contains("pref_mask")) {
        const auto& m = j["pref_mask"];
        if (!m.is_array()) throw CorpusError(where + "field \"pref_mask\" must be an array");
        std::vector<bool> mask;
        for (const auto& v : m) {
            if (v.is_boolean()) {
                mask.push_back(v.get<bool>());
            } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
                mask.push_back(v.get<int>() == 1);
            } else {
                throw CorpusError(where + "pref_mask entries must be 0 or 1");
            }
        }
        if (mask.size() != target_words.size()) {
            throw CorpusError(where + "pref_mask length " + std::to_string(mask.size()) +
                              " != target token count " + std::to_string(target_words.size()));
        }
        s.pref_mask = std::move(mask);
    }
    return s;
}

std::string sample_to_json_line(const TextSample& sample) {
    json j;
    j["user_id"] = sample.user_id;
    j["query"] = sample.query;
    j["history"] = sample.history;
    j["target"] = sample.target;
    if (sample.pref_mask) {
        std::vector<int> mask;
        for (bool b : *sample.pref_mask) mask.push_back(b ? 1 : 0);
        j["pref_mask"] = mask;
    }
    return j.dump();
}

std::vector<TextSample> load_text_samples(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot read corpus " + path.string());
    std::vector<TextSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_sample_line(line, line_no));
    }
    return out;
}

void write_text_samples(const std::filesystem::path& path, const std::vector<TextSample>& samples) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write " + path.string());
    for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
}

std::vector<Sample> load_samples(const std::filesystem::path& path, const Vocab& vocab,
                                 std::size_t max_len) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot read corpus " + path.string());
    std::vector<Sample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Sample s = encode_sample(parse_sample_line(line, line_no), vocab);
        if (max_len > 0 && packed_length(s, true) > max_len) {
            throw CorpusError("line " + std::to_string(line_no) + ": sample for user '" + s.user_id +
                              "' packs to " + std::to_string(packed_length(s, true)) +
                              " tokens, over the limit of " + std::to_string(max_len));
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Packing

std::size_t packed_length(const Sample& sample, bool with_history) {
    std::size_t n = 1;  // BOS
    if (with_history && !sample.history.empty()) {
        for (const auto& h : sample.history) n += h.size() + 1;
    } else {
        n += 1;
    }
    return n + sample.query.size() + 1 + sample.target.size();
}

TokenSeq pack_prompt(const Sample& sample, bool with_history) {
    TokenSeq ids;
    ids.push_back(kBos);
    if (with_history && !sample.history.empty()) {
        for (const auto& h : sample.history) {
            ids.insert(ids.end(), h.begin(), h.end());
            ids.push_back(kSep);
        }
    } else {
        ids.push_back(kSep);
    }
    ids.insert(ids.end(), sample.query.begin(), sample.query.end());
    ids.push_back(kSep);
    return ids;
}

PackedContext pack_context(const Sample& sample, bool with_history, std::size_t max_len) {
    PackedContext ctx;
    ctx.with_history = with_history;
    ctx.ids = pack_prompt(sample, with_history);
    ctx.target_span.begin = ctx.ids.size();
    ctx.ids.insert(ctx.ids.end(), sample.target.begin(), sample.target.end());
    ctx.target_span.end = ctx.ids.size();
    if (ctx.ids.size() > max_len) {
        throw CorpusError("sample for user '" + sample.user_id + "' packs to " +
                          std::to_string(ctx.ids.size()) + " tokens, over the limit of " +
                          std::to_string(max_len));
    }
    return ctx;
}

PackedContext pack_context(const Sample& sample, bool with_history, const Vocab& vocab,
                           std::size_t max_len) {
    auto check = [&](const TokenSeq& seq) {
        for (TokenId id : seq) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
                throw CorpusError("sample for user '" + sample.user_id + "' has token id " +
                                  std::to_string(id) + " outside the vocabulary");
            }
        }
    };
    check(sample.query);
    check(sample.target);
    for (const auto& h : sample.history) check(h);
    return pack_context(sample, with_history, max_len);
}

std::uint64_t corpus_hash(const std::vector<Sample>& samples) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix_seq = [&](const TokenSeq& seq, char tag) {
        h = fnv1a(std::string_view(&tag, 1), h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(seq.data()),
                                   seq.size() * sizeof(TokenId)),
                  h);
    };
    for (const auto& s : samples) {
        h = fnv1a(s.user_id, h);
        mix_seq(s.query, 'q');
        for (const auto& hist : s.history) mix_seq(hist, 'h');
        mix_seq(s.target, 'y');
    }
    return h;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SynthConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1) throw CorpusError(std::string("SynthConfig.") + name + " must be >= 1");
    };
    positive(n_users, "n_users");
    positive(samples_per_user, "samples_per_user");
    positive(pref_lexicon_size, "pref_lexicon_size");
    positive(pref_pool_size, "pref_pool_size");
    positive(shared_lexicon_size, "shared_lexicon_size");
    positive(n_topics, "n_topics");
    positive(history_len, "history_len");
    positive(history_sentence_len, "history_sentence_len");
    positive(target_len, "target_len");
    if (!(pref_injection_prob >= 0.0 && pref_injection_prob <= 1.0)) {
        throw CorpusError("SynthConfig.pref_injection_prob must be in [0, 1]");
    }
    if (!(history_pref_prob >= 0.0 && history_pref_prob <= 1.0)) {
        throw CorpusError("SynthConfig.history_pref_prob must be in [0, 1]");
    }
    if (pref_lexicon_size > pref_pool_size) {
        throw CorpusError("pref_lexicon_size exceeds pref_pool_size");
    }
    // specials + preference pool + shared lexicon + topics + the query word
    const std::size_t needed = kNumSpecials + pref_pool_size + shared_lexicon_size + n_topics + 1;
    if (needed > vocab_budget) {
        throw CorpusError("lexicon sizes need " + std::to_string(needed) +
                          " vocabulary entries, over the budget of " + std::to_string(vocab_budget));
    }
}

namespace {

std::string numbered(char prefix, std::size_t i) {
    std::ostringstream os;
    os << prefix << (i < 10 ? "0" : "") << i;
    return os.str();
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

}  // namespace

std::string synth_user_id(std::size_t user) {
    return "u" + std::string(user < 10 ? "0" : "") + std::to_string(user);
}

SynthLexicons synth_lexicons(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SynthLexicons lex;
    for (std::size_t i = 0; i < cfg.shared_lexicon_size; ++i) lex.shared.push_back(numbered('s', i));
    std::vector<std::size_t> pool(cfg.pref_pool_size);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t u = 0; u < cfg.n_users; ++u) {
        // Partial Fisher-Yates: first pref_lexicon_size entries form the user's lexicon.
        for (std::size_t i = 0; i < cfg.pref_lexicon_size; ++i) {
            const std::size_t j = i + rng.below(pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        std::vector<std::size_t> chosen(pool.begin(), pool.begin() + cfg.pref_lexicon_size);
        std::sort(chosen.begin(), chosen.end());
        std::vector<std::string> words;
        for (auto p : chosen) words.push_back(numbered('p', p));
        lex.per_user.push_back(std::move(words));
    }
    return lex;
}

std::vector<TextSample> gen_synthetic(const SynthConfig& cfg) {
    const SynthLexicons lex = synth_lexicons(cfg);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    auto pick = [&](const std::vector<std::string>& words) -> const std::string& {
        return words[rng.below(words.size())];
    };

    std::vector<TextSample> out;
    out.reserve(cfg.n_users * cfg.samples_per_user);
    for (std::size_t u = 0; u < cfg.n_users; ++u) {
        const auto& prefs = lex.per_user[u];
        const std::string topic = numbered('t', u % cfg.n_topics);
        for (std::size_t k = 0; k < cfg.samples_per_user; ++k) {
            TextSample s;
            s.user_id = synth_user_id(u);
            s.query = "about " + topic;
            for (std::size_t h = 0; h < cfg.history_len; ++h) {
                std::vector<std::string> words;
                for (std::size_t i = 0; i < cfg.history_sentence_len; ++i) {
                    words.push_back(rng.uniform() < cfg.history_pref_prob ? pick(prefs)
                                                                          : pick(lex.shared));
                }
                s.history.push_back(join_words(words));
            }
            std::vector<std::string> words;
            std::vector<bool> mask;
            for (std::size_t i = 0; i < cfg.target_len; ++i) {
                const bool pref = rng.uniform() < cfg.pref_injection_prob;
                words.push_back(pref ? pick(prefs) : pick(lex.shared));
                mask.push_back(pref);
            }
            s.target = join_words(words);
            s.pref_mask = std::move(mask);
            out.push_back(std::move(s));
        }
    }
    return out;
}

CorpusStats corpus_stats(const std::vector<TextSample>& samples) {
    CorpusStats st;
    std::set<std::string> users;
    for (const auto& s : samples) {
        users.insert(s.user_id);
        ++st.samples;
        if (s.pref_mask) {
            st.target_tokens += s.pref_mask->size();
            st.pref_tokens += static_cast<std::size_t>(
                std::count(s.pref_mask->begin(), s.pref_mask->end(), true));
        } else {
            st.target_tokens += split_words(s.target).size();
        }
    }
    st.users = users.size();
    return st;
}

UserSplit split_by_user(const std::vector<Sample>& samples, double heldout_fraction) {
    std::vector<std::string> users;
    for (const auto& s : samples) users.push_back(s.user_id);
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());

    std::vector<std::pair<std::uint64_t, std::string>> ranked;
    for (auto& u : users) ranked.emplace_back(fnv1a(u), u);
    std::sort(ranked.begin(), ranked.end());

    std::size_t n_held = static_cast<std::size_t>(std::llround(heldout_fraction * users.size()));
    if (n_held == 0 && users.size() >= 2 && heldout_fraction > 0.0) n_held = 1;
    std::set<std::string> held;
    for (std::size_t i = 0; i < n_held && i < ranked.size(); ++i) held.insert(ranked[i].second);

    UserSplit split;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        (held.count(samples[i].user_id) ? split.heldout : split.train).push_back(i);
    }
    return split;
}

}  // namespace causalpref
