#include "causalpref/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace causalpref {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    }
}

std::uint64_t to_uint(const std::string& v, const std::string& key) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return std::stoull(v);
}

struct Field {
    const char* section;
    const char* key;
    const char* doc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class M>
Field size_field(const char* section, const char* key, const char* doc, M member_ptr_fn) {
    return Field{section, key, doc,
                 [member_ptr_fn](const RunConfig& c) {
                     return std::to_string(member_ptr_fn(const_cast<RunConfig&>(c)));
                 },
                 [member_ptr_fn, key](RunConfig& c, const std::string& v) {
                     member_ptr_fn(c) = static_cast<std::remove_reference_t<decltype(member_ptr_fn(c))>>(
                         to_uint(v, key));
                 }};
}

template <class M>
Field real_field(const char* section, const char* key, const char* doc, M member_ptr_fn) {
    return Field{section, key, doc,
                 [member_ptr_fn](const RunConfig& c) {
                     return fmt_double(member_ptr_fn(const_cast<RunConfig&>(c)));
                 },
                 [member_ptr_fn, key](RunConfig& c, const std::string& v) {
                     member_ptr_fn(c) = to_double(v, key);
                 }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(Field{"Run", "name", "run directory name under the output root",
                          [](const RunConfig& c) { return c.run_name; },
                          [](RunConfig& c, const std::string& v) { c.run_name = v; }});
        f.push_back(Field{"Run", "out_root", "output root; empty uses $CAUSALPREF_OUT_ROOT, then ./runs",
                          [](const RunConfig& c) { return c.out_root.string(); },
                          [](RunConfig& c, const std::string& v) { c.out_root = v; }});
        f.push_back(size_field("Run", "seed", "model initialization and batch-order seed",
                               [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
        f.push_back(size_field("Run", "vocab_max_size", "upper bound on the built vocabulary (specials included)",
                               [](RunConfig& c) -> std::size_t& { return c.vocab_max_size; }));
        f.push_back(real_field("Run", "heldout_fraction", "fraction of users held out for evaluation",
                               [](RunConfig& c) -> double& { return c.heldout_fraction; }));

        f.push_back(size_field("SynthConfig", "n_users", "number of synthetic users",
                               [](RunConfig& c) -> std::size_t& { return c.synth.n_users; }));
        f.push_back(size_field("SynthConfig", "samples_per_user", "samples generated per user",
                               [](RunConfig& c) -> std::size_t& { return c.synth.samples_per_user; }));
        f.push_back(size_field("SynthConfig", "pref_lexicon_size", "preference words per user",
                               [](RunConfig& c) -> std::size_t& { return c.synth.pref_lexicon_size; }));
        f.push_back(size_field("SynthConfig", "pref_pool_size", "pool the per-user preference lexicons are drawn from",
                               [](RunConfig& c) -> std::size_t& { return c.synth.pref_pool_size; }));
        f.push_back(size_field("SynthConfig", "shared_lexicon_size", "words shared by every user",
                               [](RunConfig& c) -> std::size_t& { return c.synth.shared_lexicon_size; }));
        f.push_back(size_field("SynthConfig", "n_topics", "distinct topic words named by queries",
                               [](RunConfig& c) -> std::size_t& { return c.synth.n_topics; }));
        f.push_back(real_field("SynthConfig", "pref_injection_prob", "probability a target slot draws from the user's lexicon",
                               [](RunConfig& c) -> double& { return c.synth.pref_injection_prob; }));
        f.push_back(real_field("SynthConfig", "history_pref_prob", "probability a history word draws from the user's lexicon",
                               [](RunConfig& c) -> double& { return c.synth.history_pref_prob; }));
        f.push_back(size_field("SynthConfig", "history_len", "history sentences per sample",
                               [](RunConfig& c) -> std::size_t& { return c.synth.history_len; }));
        f.push_back(size_field("SynthConfig", "history_sentence_len", "words per history sentence",
                               [](RunConfig& c) -> std::size_t& { return c.synth.history_sentence_len; }));
        f.push_back(size_field("SynthConfig", "target_len", "target words per sample",
                               [](RunConfig& c) -> std::size_t& { return c.synth.target_len; }));
        f.push_back(size_field("SynthConfig", "vocab_budget", "maximum vocabulary the lexicons may occupy",
                               [](RunConfig& c) -> std::size_t& { return c.synth.vocab_budget; }));
        f.push_back(size_field("SynthConfig", "seed", "corpus generation seed",
                               [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; }));

        f.push_back(size_field("ModelDims", "d_model", "residual width",
                               [](RunConfig& c) -> std::size_t& { return c.dims.d_model; }));
        f.push_back(size_field("ModelDims", "n_layers", "transformer blocks",
                               [](RunConfig& c) -> std::size_t& { return c.dims.n_layers; }));
        f.push_back(size_field("ModelDims", "n_heads", "attention heads (must divide d_model)",
                               [](RunConfig& c) -> std::size_t& { return c.dims.n_heads; }));
        f.push_back(size_field("ModelDims", "max_seq", "maximum packed length; longer samples are rejected",
                               [](RunConfig& c) -> std::size_t& { return c.dims.max_seq; }));

        f.push_back(Field{"TrainConfig", "variant", "NO_HISTORY_SFT | BASE | CAUSAL_ONLY | NORM_ONLY | FULL",
                          [](const RunConfig& c) { return std::string(to_string(c.train.variant)); },
                          [](RunConfig& c, const std::string& v) {
                              try {
                                  c.train.variant = parse_variant(v);
                              } catch (const std::invalid_argument& e) {
                                  throw ConfigError(e.what());
                              }
                          }});
        f.push_back(real_field("TrainConfig", "alpha", "weight of the causal preference loss",
                               [](RunConfig& c) -> double& { return c.train.alpha; }));
        f.push_back(real_field("TrainConfig", "delta", "effect threshold for preference-driven tokens",
                               [](RunConfig& c) -> double& { return c.train.delta; }));
        f.push_back(real_field("TrainConfig", "lambda", "weight of preference-driven tokens",
                               [](RunConfig& c) -> double& { return c.train.lambda; }));
        f.push_back(real_field("TrainConfig", "epsilon", "weight of the remaining tokens",
                               [](RunConfig& c) -> double& { return c.train.epsilon; }));
        f.push_back(real_field("TrainConfig", "learning_rate", "AdamW learning rate",
                               [](RunConfig& c) -> double& { return c.train.learning_rate; }));
        f.push_back(real_field("TrainConfig", "weight_decay", "AdamW decoupled weight decay",
                               [](RunConfig& c) -> double& { return c.train.weight_decay; }));
        f.push_back(real_field("TrainConfig", "dropout", "residual-branch dropout (off whenever alpha > 0 applies)",
                               [](RunConfig& c) -> double& { return c.train.dropout; }));
        f.push_back(real_field("TrainConfig", "clip_norm", "global gradient-norm clip, 0 disables",
                               [](RunConfig& c) -> double& { return c.train.clip_norm; }));
        f.push_back(size_field("TrainConfig", "epochs", "passes over the training split",
                               [](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
        f.push_back(size_field("TrainConfig", "batch_size", "samples per optimizer step",
                               [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
        f.push_back(Field{"TrainConfig", "precision", "single | double",
                          [](const RunConfig& c) { return std::string(to_string(c.train.precision)); },
                          [](RunConfig& c, const std::string& v) {
                              try {
                                  c.train.precision = parse_precision(v);
                              } catch (const ModelError& e) {
                                  throw ConfigError(e.what());
                              }
                          }});

        f.push_back(size_field("ProxyConfig", "epochs", "uniform-loss pretraining epochs (0 keeps the initialization)",
                               [](RunConfig& c) -> std::size_t& { return c.proxy.epochs; }));
        f.push_back(real_field("ProxyConfig", "learning_rate", "pretraining learning rate",
                               [](RunConfig& c) -> double& { return c.proxy.learning_rate; }));
        f.push_back(size_field("ProxyConfig", "batch_size", "pretraining batch size",
                               [](RunConfig& c) -> std::size_t& { return c.proxy.batch_size; }));
        return f;
    }();
    return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
    for (const auto& f : fields()) {
        if (section == f.section && key == f.key) return &f;
    }
    return nullptr;
}

}  // namespace

RunConfig default_run_config() {
    RunConfig c;
    c.dims.d_model = 32;
    c.dims.n_layers = 2;
    c.dims.n_heads = 2;
    c.dims.max_seq = kDefaultMaxSeq;
    c.train.seed = c.seed;
    return c;
}

void RunConfig::validate() const {
    if (run_name.empty() || run_name.find('/') != std::string::npos ||
        run_name.find('\\') != std::string::npos || run_name == "." || run_name == "..") {
        throw ConfigError("run name '" + run_name + "' is not a valid path component");
    }
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
        throw ConfigError("heldout_fraction must be in [0, 1)");
    }
    if (train.epochs < 1) throw ConfigError("TrainConfig.epochs must be >= 1");
    if (proxy.batch_size < 1) throw ConfigError("ProxyConfig.batch_size must be >= 1");
    try {
        synth.validate();
        train.validate();
        ModelDims d = dims;
        d.vocab_size = std::max<std::size_t>(d.vocab_size, 1);
        d.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

// Where a run is stored does not change what it computes.
std::uint64_t RunConfig::hash() const {
    json j = json::parse(to_config_json(*this));
    j["Run"].erase("name");
    j["Run"].erase("out_root");
    return fnv1a(j.dump());
}

RunConfig parse_run_config(std::string_view text) {
    RunConfig cfg = default_run_config();
    const std::string body = trim(text);
    if (!body.empty() && body.front() == '{') {
        json j;
        try {
            j = json::parse(body);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("malformed JSON config: ") + e.what());
        }
        for (const auto& [section, entries] : j.items()) {
            if (!entries.is_object()) throw ConfigError("section '" + section + "' must be an object");
            for (const auto& [key, value] : entries.items()) {
                const Field* f = find_field(section, key);
                if (!f) throw ConfigError("unknown config key " + section + "." + key);
                f->set(cfg, value.is_string() ? value.get<std::string>() : value.dump());
            }
        }
    } else {
        std::istringstream in{std::string(text)};
        std::string line, section;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": bad section header");
                section = trim(t.substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
            }
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            const Field* f = find_field(section, key);
            if (!f) {
                throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key +
                                  "' in section [" + section + "]");
            }
            f->set(cfg, value);
        }
    }
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string to_config_text(const RunConfig& cfg) {
    std::ostringstream out;
    const RunConfig defaults = default_run_config();
    std::string section;
    for (const auto& f : fields()) {
        if (section != f.section) {
            if (!section.empty()) out << '\n';
            section = f.section;
            out << '[' << section << "]\n";
        }
        out << "# " << f.doc << " (default: " << f.get(defaults) << ")\n";
        out << f.key << " = " << f.get(cfg) << '\n';
    }
    return out.str();
}

std::string to_config_json(const RunConfig& cfg) {
    json j = json::object();
    for (const auto& f : fields()) j[f.section][f.key] = f.get(cfg);
    return j.dump();
}

RunPaths::RunPaths(const RunConfig& cfg) : seed_(std::to_string(cfg.seed)) {
    std::filesystem::path root = cfg.out_root;
    if (root.empty()) {
        const char* env = std::getenv(kOutRootEnv);
        root = env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
    }
    dir_ = root / cfg.run_name;
}

std::filesystem::path RunPaths::weights_cache(const TrainConfig& cfg) const {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "weights_d%g_l%g_e%g.jsonl", cfg.delta, cfg.lambda, cfg.epsilon);
    return proxy_dir() / buf;
}

std::filesystem::path RunPaths::train_dir(Variant v) const {
    return dir_ / "train" / (std::string(to_string(v)) + "_seed" + seed_);
}

}  // namespace causalpref
