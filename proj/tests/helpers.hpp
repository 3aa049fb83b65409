#pragma once

#include "causalpref/corpus.hpp"
#include "causalpref/model.hpp"
#include "causalpref/rng.hpp"

#include <filesystem>
#include <string>

namespace test {

using namespace causalpref;

inline ModelDims tiny_dims(std::size_t vocab = 32) {
    ModelDims d;
    d.vocab_size = vocab;
    d.d_model = 16;
    d.n_layers = 1;
    d.n_heads = 2;
    d.max_seq = 48;
    return d;
}

// Random init pushed off the 0.02 scale so outputs depend visibly on the input.
inline ModelParams lively_params(const ModelDims& d, std::uint64_t seed, double scale = 0.3) {
    ModelParams p = init_params(d, seed);
    Rng r(seed + 100);
    for (auto& v : p.data) v += scale * r.normal();
    return p;
}

inline TokenSeq random_seq(Rng& r, std::size_t n, std::size_t vocab) {
    TokenSeq s(n);
    for (auto& t : s) t = static_cast<TokenId>(kNumSpecials + r.below(vocab - kNumSpecials));
    return s;
}

inline Sample random_sample(Rng& r, std::size_t vocab, std::size_t n_hist = 2) {
    Sample s;
    s.user_id = "u" + std::to_string(r.below(1000));
    for (std::size_t i = 0; i < n_hist; ++i) s.history.push_back(random_seq(r, 3 + r.below(3), vocab));
    s.query = random_seq(r, 2, vocab);
    s.target = random_seq(r, 3 + r.below(3), vocab);
    return s;
}

inline std::filesystem::path tmp_dir(const std::string& name) {
    const auto p = std::filesystem::path(CAUSALPREF_TEST_TMP) / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace test
