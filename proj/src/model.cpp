#include "causalpref/model.hpp"

#include "causalpref/detail/transformer.hpp"
#include "causalpref/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace causalpref {

Precision parse_precision(std::string_view name) {
    if (name == "single" || name == "float" || name == "f32") return Precision::Single;
    if (name == "double" || name == "f64") return Precision::Double;
    throw ModelError("unknown precision '" + std::string(name) + "' (expected single or double)");
}

std::string_view to_string(Precision p) { return p == Precision::Single ? "single" : "double"; }

void ModelDims::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq < 1) {
        throw ModelError("model dimensions must all be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ModelError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                         std::to_string(n_heads));
    }
}

ParamLayout::ParamLayout(const ModelDims& dims) : dims_(dims) {
    dims_.validate();
    const std::size_t d = dims.d_model;
    const std::size_t f = dims.d_ff();
    wte = add("wte", dims.vocab_size, d, true);
    wpe = add("wpe", dims.max_seq, d, true);
    for (std::size_t l = 0; l < dims.n_layers; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        LayerSlots s{};
        s.ln1_g = add(p + "ln1.g", 1, d, false);
        s.ln1_b = add(p + "ln1.b", 1, d, false);
        s.wq = add(p + "attn.wq", d, d, true);
        s.wk = add(p + "attn.wk", d, d, true);
        s.wv = add(p + "attn.wv", d, d, true);
        s.wo = add(p + "attn.wo", d, d, true);
        s.ln2_g = add(p + "ln2.g", 1, d, false);
        s.ln2_b = add(p + "ln2.b", 1, d, false);
        s.w1 = add(p + "mlp.w1", d, f, true);
        s.b1 = add(p + "mlp.b1", 1, f, false);
        s.w2 = add(p + "mlp.w2", f, d, true);
        s.b2 = add(p + "mlp.b2", 1, d, false);
        layers.push_back(s);
    }
    lnf_g = add("lnf.g", 1, d, false);
    lnf_b = add("lnf.b", 1, d, false);
}

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols, bool decay) {
    const std::size_t offset = total_;
    slots_.push_back(TensorSlot{std::move(name), offset, rows, cols, decay});
    total_ += rows * cols;
    return offset;
}

const TensorSlot& ParamLayout::slot(std::string_view name) const {
    for (const auto& s : slots_) {
        if (s.name == name) return s;
    }
    throw ModelError("no parameter tensor named '" + std::string(name) + "'");
}

std::size_t param_count(const ModelDims& dims) { return ParamLayout(dims).total(); }

std::span<double> ModelParams::tensor(std::string_view name) {
    const auto s = layout().slot(name);
    return {data.data() + s.offset, s.size()};
}

std::span<const double> ModelParams::tensor(std::string_view name) const {
    const auto s = layout().slot(name);
    return {data.data() + s.offset, s.size()};
}

std::uint64_t ModelParams::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    const std::size_t dims_arr[] = {dims.vocab_size, dims.d_model, dims.n_layers, dims.n_heads,
                                    dims.max_seq};
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(dims_arr), sizeof(dims_arr)), h);
    return fnv1a(std::string_view(reinterpret_cast<const char*>(data.data()),
                                  data.size() * sizeof(double)),
                 h);
}

bool ModelParams::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    const ParamLayout layout(dims);
    ModelParams p;
    p.dims = dims;
    p.data.assign(layout.total(), 0.0);
    Rng rng(seed);
    for (const auto& s : layout.slots()) {
        const bool is_gain = s.name.ends_with(".g");
        for (std::size_t i = 0; i < s.size(); ++i) {
            double& v = p.data[s.offset + i];
            if (is_gain) {
                v = 1.0;
            } else if (s.decay) {
                v = 0.02 * rng.normal();
            }
        }
    }
    return p;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        z += out[i];
    }
    for (auto& v : out) v /= z;
    return out;
}

namespace {

template <class T>
Logits forward_as(const ModelParams& params, std::span<const TokenId> ids) {
    detail::Transformer<T> model(params);
    detail::Tape<T> tape;
    model.forward(ids, tape);
    Logits out;
    out.rows = tape.n;
    out.cols = params.dims.vocab_size;
    out.data.assign(tape.logits.begin(), tape.logits.end());
    return out;
}

}  // namespace

Logits forward(const ModelParams& params, std::span<const TokenId> ids, Precision precision) {
    return precision == Precision::Single ? forward_as<float>(params, ids)
                                          : forward_as<double>(params, ids);
}

Logits forward(const ModelParams& params, const PackedContext& packed, Precision precision) {
    return forward(params, std::span<const TokenId>(packed.ids), precision);
}

Logits target_logits(const ModelParams& params, const Sample& sample, bool with_history,
                     Precision precision) {
    const PackedContext packed = pack_context(sample, with_history, params.dims.max_seq);
    const Logits all = forward(params, packed, precision);
    Logits out;
    out.rows = packed.target_span.size();
    out.cols = all.cols;
    out.data.reserve(out.rows * out.cols);
    for (std::size_t t = 0; t < out.rows; ++t) {
        const auto row = all.row(packed.target_span.begin - 1 + t);
        out.data.insert(out.data.end(), row.begin(), row.end());
    }
    return out;
}

std::vector<std::vector<double>> target_probs(const ModelParams& params, const Sample& sample,
                                              bool with_history, Precision precision) {
    const Logits z = target_logits(params, sample, with_history, precision);
    std::vector<std::vector<double>> out;
    out.reserve(z.rows);
    for (std::size_t t = 0; t < z.rows; ++t) out.push_back(softmax(z.row(t)));
    return out;
}

TokenSeq greedy_decode(const ModelParams& params, const Sample& sample, bool with_history,
                       std::size_t max_new, Precision precision) {
    TokenSeq ids = pack_prompt(sample, with_history);
    TokenSeq generated;
    while (generated.size() < max_new && ids.size() < params.dims.max_seq) {
        const Logits z = forward(params, std::span<const TokenId>(ids), precision);
        const auto last = z.row(z.rows - 1);
        // max_element returns the first maximum, i.e. the smallest id on ties
        const auto best = static_cast<TokenId>(
            std::distance(last.begin(), std::max_element(last.begin(), last.end())));
        if (best == kEos) break;
        generated.push_back(best);
        ids.push_back(best);
    }
    return generated;
}

// ---------------------------------------------------------------------------
// Checkpoint: little-endian binary
//   magic "CPCK" | u32 format_version | u64 vocab, d_model, layers, heads, max_seq |
//   u64 vocab_hash | u64 config_hash | u32 tag length, tag bytes | u64 n | n x f64 (layout order)

namespace {

constexpr char kMagic[4] = {'C', 'P', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

template <class V>
void put(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::ifstream& in, const std::filesystem::path& path) {
    V v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) {
        throw ModelError("truncated checkpoint " + path.string());
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot write checkpoint " + path.string());
    const auto& d = ckpt.params.dims;
    out.write(kMagic, 4);
    put(out, Checkpoint::kFormatVersion);
    for (std::uint64_t v : {d.vocab_size, d.d_model, d.n_layers, d.n_heads, d.max_seq}) put(out, v);
    put(out, ckpt.vocab_hash);
    put(out, ckpt.config_hash);
    put(out, static_cast<std::uint32_t>(ckpt.tag.size()));
    out.write(ckpt.tag.data(), static_cast<std::streamsize>(ckpt.tag.size()));
    put(out, static_cast<std::uint64_t>(ckpt.params.data.size()));
    out.write(reinterpret_cast<const char*>(ckpt.params.data.data()),
              static_cast<std::streamsize>(ckpt.params.data.size() * sizeof(double)));
    if (!out) throw ModelError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot read checkpoint " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw ModelError(path.string() + " is not a checkpoint file");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != Checkpoint::kFormatVersion) {
        throw ModelError("unsupported checkpoint format version " + std::to_string(version));
    }
    Checkpoint ckpt;
    auto& d = ckpt.params.dims;
    d.vocab_size = get<std::uint64_t>(in, path);
    d.d_model = get<std::uint64_t>(in, path);
    d.n_layers = get<std::uint64_t>(in, path);
    d.n_heads = get<std::uint64_t>(in, path);
    d.max_seq = get<std::uint64_t>(in, path);
    d.validate();
    ckpt.vocab_hash = get<std::uint64_t>(in, path);
    ckpt.config_hash = get<std::uint64_t>(in, path);
    const auto tag_len = get<std::uint32_t>(in, path);
    ckpt.tag.resize(tag_len);
    if (!in.read(ckpt.tag.data(), tag_len)) throw ModelError("truncated checkpoint " + path.string());
    const auto n = get<std::uint64_t>(in, path);
    if (n != param_count(d)) {
        throw ModelError("checkpoint parameter count " + std::to_string(n) +
                         " does not match its dimensions");
    }
    ckpt.params.data.resize(n);
    if (!in.read(reinterpret_cast<char*>(ckpt.params.data.data()),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
        throw ModelError("truncated checkpoint " + path.string());
    }
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_vocab_hash) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.vocab_hash != expected_vocab_hash) {
        throw ModelError("checkpoint " + path.string() +
                         " was built against a different vocabulary (vocab hash mismatch)");
    }
    return ckpt;
}

}  // namespace causalpref
