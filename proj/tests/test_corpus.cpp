#include "helpers.hpp"

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace causalpref;

namespace {

TextSample text(std::string user, std::string query, std::vector<std::string> hist, std::string target) {
    return TextSample{std::move(user), std::move(query), std::move(hist), std::move(target), std::nullopt};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("vocab of an empty-text corpus holds only the specials") {
    const Vocab v = build_vocab({text("u1", "", {}, "")}, 10);
    CHECK(v.size() == kNumSpecials);
    CHECK(v.token(kBos) == "<bos>");
    CHECK(v.token(kPad) == "<pad>");
}

TEST_CASE("frequency ordering decides content ids") {
    const Vocab v = build_vocab({text("u1", "", {}, "a b"), text("u1", "", {}, "b c")}, 10);
    CHECK(v.size() == 8);
    CHECK(v.id("b") == static_cast<TokenId>(kNumSpecials));
    CHECK(v.id("a") < v.id("c"));
}

TEST_CASE("vocab build is byte-deterministic and round-trips") {
    const auto samples = gen_synthetic(SynthConfig{});
    const Vocab a = build_vocab(samples, 1024);
    const Vocab b = build_vocab(samples, 1024);
    CHECK(a.to_json() == b.to_json());
    const Vocab c = Vocab::from_json(a.to_json());
    CHECK(c.hash() == a.hash());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(c.id(a.token(static_cast<TokenId>(i))) == static_cast<TokenId>(i));
}

TEST_CASE("max_size caps the vocabulary and rejects less than the specials") {
    const Vocab v = build_vocab({text("u", "", {}, "a b c d e f g")}, 7);
    CHECK(v.size() == 7);
    CHECK_THROWS_AS(build_vocab({text("u", "", {}, "a")}, 4), CorpusError);
    CHECK_THROWS_AS(build_vocab({}, 10), CorpusError);
}

TEST_CASE("tokenize: lowercase, UNK, empty") {
    const Vocab v = build_vocab({text("u", "", {}, "a b")}, 10);
    CHECK(tokenize("", v).empty());
    CHECK(tokenize("A b", v) == TokenSeq{v.id("a"), v.id("b")});
    CHECK(tokenize("a zzz", v) == TokenSeq{v.id("a"), kUnk});
}

TEST_CASE("punctuation splits into separate tokens") {
    CHECK(split_words("Great, plot!") == std::vector<std::string>{"great", ",", "plot", "!"});
}

TEST_CASE("parse a JSONL line") {
    const TextSample s = parse_sample_line(
        R"({"user_id":"u1","query":"review of book","history":["loved the plot"],"target":"great plot twist"})", 1);
    CHECK(s.user_id == "u1");
    CHECK(s.history.size() == 1);
    CHECK_FALSE(s.pref_mask.has_value());
}

TEST_CASE("pref_mask length mismatch names the line") {
    try {
        parse_sample_line(R"({"user_id":"u1","query":"q","history":[],"target":"a b","pref_mask":[1]})", 17);
        FAIL("expected an error");
    } catch (const CorpusError& e) {
        CHECK(std::string(e.what()).find("17") != std::string::npos);
    }
}

TEST_CASE("malformed and incomplete lines are rejected") {
    CHECK_THROWS_AS(parse_sample_line("{not json", 1), CorpusError);
    CHECK_THROWS_AS(parse_sample_line(R"({"user_id":"u1","query":"q"})", 2), CorpusError);
}

TEST_CASE("empty file loads as an empty corpus") {
    const auto dir = test::tmp_dir("corpus_empty");
    std::ofstream(dir / "c.jsonl").close();
    CHECK(load_text_samples(dir / "c.jsonl").empty());
}

TEST_CASE("text samples round-trip through JSONL") {
    const auto dir = test::tmp_dir("corpus_rt");
    SynthConfig sc;
    sc.n_users = 3;
    const auto samples = gen_synthetic(sc);
    write_text_samples(dir / "c.jsonl", samples);
    const auto back = load_text_samples(dir / "c.jsonl");
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].target == samples[i].target);
        CHECK(back[i].history == samples[i].history);
        CHECK(back[i].pref_mask == samples[i].pref_mask);
    }
}

TEST_CASE("packed layout arithmetic") {
    Sample s;
    s.history = {{5, 6, 7}, {8, 9, 10}};
    s.query = {11, 12};
    s.target = {13, 14, 15, 16};
    CHECK(packed_length(s, true) == 16);
    const PackedContext p = pack_context(s, true, 64);
    CHECK(p.ids == TokenSeq{kBos, 5, 6, 7, kSep, 8, 9, 10, kSep, 11, 12, kSep, 13, 14, 15, 16});
    CHECK(p.target_span.size() == 4);
    const PackedContext n = pack_context(s, false, 64);
    CHECK(n.ids == TokenSeq{kBos, kSep, 11, 12, kSep, 13, 14, 15, 16});
    CHECK(n.target_span.size() == 4);
    CHECK(pack_prompt(s, true) == TokenSeq(p.ids.begin(), p.ids.begin() + 12));
}

TEST_CASE("empty history packs identically both ways") {
    Sample s;
    s.query = {5};
    s.target = {6, 7};
    CHECK(pack_context(s, true, 64).ids == pack_context(s, false, 64).ids);
}

TEST_CASE("overlong packing and out-of-range ids are errors") {
    Sample s;
    s.user_id = "u9";
    s.history = {{5, 6, 7}};
    s.query = {8};
    s.target = {9, 10};
    try {
        pack_context(s, true, 5);
        FAIL("expected an error");
    } catch (const CorpusError& e) {
        CHECK(std::string(e.what()).find("u9") != std::string::npos);
    }
    const Vocab v = build_vocab({text("u", "", {}, "a")}, 10);
    CHECK_THROWS_AS(pack_context(s, true, v, 64), CorpusError);
}

TEST_CASE("synthetic masks follow the injection probability") {
    SynthConfig sc;
    sc.pref_injection_prob = 0.0;
    for (const auto& s : gen_synthetic(sc)) {
        for (bool m : *s.pref_mask) CHECK_FALSE(m);
    }
    sc.pref_injection_prob = 1.0;
    for (const auto& s : gen_synthetic(sc)) {
        for (bool m : *s.pref_mask) CHECK(m);
    }
}

TEST_CASE("synthetic preference rate concentrates near the injection probability") {
    SynthConfig sc;
    sc.n_users = 20;
    sc.pref_injection_prob = 0.8;
    const CorpusStats st = corpus_stats(gen_synthetic(sc));
    CHECK(st.users == 20);
    CHECK(std::abs(st.pref_rate() - 0.8) <= 0.05);
}

TEST_CASE("synthetic generation is deterministic and seed-sensitive") {
    SynthConfig sc;
    const auto a = gen_synthetic(sc);
    const auto b = gen_synthetic(sc);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(sample_to_json_line(a[i]) == sample_to_json_line(b[i]));
    sc.seed += 1;
    const auto c = gen_synthetic(sc);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= sample_to_json_line(a[i]) != sample_to_json_line(c[i]);
    CHECK(differs);
}

TEST_CASE("masked target tokens come from the user's lexicon") {
    SynthConfig sc;
    const SynthLexicons lex = synth_lexicons(sc);
    const auto samples = gen_synthetic(sc);
    for (const auto& s : samples) {
        const std::size_t user = std::stoul(s.user_id.substr(1));
        const std::set<std::string> mine(lex.per_user[user].begin(), lex.per_user[user].end());
        const auto words = split_words(s.target);
        for (std::size_t t = 0; t < words.size(); ++t) {
            if ((*s.pref_mask)[t]) CHECK(mine.count(words[t]) == 1);
            else CHECK(mine.count(words[t]) == 0);
        }
    }
}

TEST_CASE("synthetic config validation") {
    SynthConfig sc;
    sc.pref_injection_prob = 1.5;
    CHECK_THROWS(sc.validate());
    sc = SynthConfig{};
    sc.pref_lexicon_size = sc.pref_pool_size + 1;
    CHECK_THROWS(sc.validate());
    sc = SynthConfig{};
    sc.vocab_budget = 10;
    CHECK_THROWS(sc.validate());
}

TEST_CASE("user split is disjoint, deterministic and covers everything") {
    SynthConfig sc;
    sc.n_users = 30;
    const auto texts = gen_synthetic(sc);
    const Vocab v = build_vocab(texts, 1024);
    std::vector<Sample> all;
    for (const auto& t : texts) all.push_back(encode_sample(t, v));
    const UserSplit a = split_by_user(all, 0.1);
    const UserSplit b = split_by_user(all, 0.1);
    CHECK(a.train == b.train);
    CHECK(a.heldout == b.heldout);
    CHECK(a.train.size() + a.heldout.size() == all.size());
    std::set<std::string> train_users, held_users;
    for (auto i : a.train) train_users.insert(all[i].user_id);
    for (auto i : a.heldout) held_users.insert(all[i].user_id);
    CHECK(held_users.size() == 3);
    for (const auto& u : held_users) CHECK(train_users.count(u) == 0);
}

TEST_CASE("load_samples rejects samples longer than the model context") {
    const auto dir = test::tmp_dir("corpus_long");
    SynthConfig sc;
    sc.n_users = 2;
    const auto texts = gen_synthetic(sc);
    write_text_samples(dir / "c.jsonl", texts);
    const Vocab v = build_vocab(texts, 1024);
    CHECK(load_samples(dir / "c.jsonl", v).size() == texts.size());
    CHECK_THROWS_AS(load_samples(dir / "c.jsonl", v, 10), CorpusError);
}

TEST_CASE("corpus files are byte-identical across reruns") {
    const auto dir = test::tmp_dir("corpus_bytes");
    write_text_samples(dir / "a.jsonl", gen_synthetic(SynthConfig{}));
    write_text_samples(dir / "b.jsonl", gen_synthetic(SynthConfig{}));
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
}

}
