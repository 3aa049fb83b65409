#include "causalpref/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include <json.hpp>

namespace causalpref {

namespace fs = std::filesystem;

namespace {

void require(const fs::path& p, const char* what, const char* stage) {
    if (!fs::exists(p)) {
        throw MissingArtifact(std::string(what) + " not found at " + p.string() + "; run `causalpref " +
                              stage + "` first");
    }
}

std::vector<Sample> pick(const std::vector<Sample>& all, const std::vector<std::size_t>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

ModelParams load_proxy(const RunConfig& cfg, const LoadedCorpus& corpus) {
    const RunPaths paths(cfg);
    require(paths.proxy_checkpoint(), "proxy checkpoint", "pretrain-proxy");
    Checkpoint ck = load_checkpoint(paths.proxy_checkpoint(), corpus.vocab.hash());
    if (!(ck.params.dims == model_dims(cfg, corpus.vocab))) {
        throw ConfigError("proxy checkpoint " + paths.proxy_checkpoint().string() +
                          " has different model dimensions than the config");
    }
    return std::move(ck.params);
}

void save_trained(const fs::path& dir, const TrainResult& res, const RunConfig& cfg,
                  const Vocab& vocab, const std::string& tag) {
    fs::create_directories(dir);
    save_checkpoint(dir / "model.ckpt", Checkpoint{res.params, vocab.hash(), cfg.hash(), tag});
    write_loss_log(dir / "loss.csv", res.steps);
}

ProgressFn epoch_printer(std::ostream& log, std::size_t steps_per_epoch) {
    return [&log, steps_per_epoch](const StepLog& s) {
        if (steps_per_epoch == 0 || (s.step + 1) % steps_per_epoch != 0) return;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "  epoch %zu  L_n %.5f  L_p %.5f  L %.5f\n", s.epoch + 1, s.normal,
                      s.preference, s.total);
        log << buf;
    };
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
    batch = std::max<std::size_t>(1, batch);
    return (n + batch - 1) / batch;
}

std::string checkpoint_label(const fs::path& ckpt) {
    const fs::path parent = ckpt.parent_path().filename();
    return parent.empty() ? ckpt.stem().string() : parent.string();
}

double final_total(const TrainResult& r) { return r.epochs.empty() ? 0.0 : r.epochs.back().total; }

}  // namespace

ModelDims model_dims(const RunConfig& cfg, const Vocab& vocab) {
    ModelDims d = cfg.dims;
    d.vocab_size = vocab.size();
    return d;
}

LoadedCorpus load_corpus(const RunConfig& cfg) {
    const RunPaths paths(cfg);
    require(paths.corpus(), "corpus", "gen-synthetic");
    require(paths.vocab(), "vocabulary", "build-vocab");
    LoadedCorpus c;
    c.vocab = Vocab::load(paths.vocab());
    c.all = load_samples(paths.corpus(), c.vocab, cfg.dims.max_seq);
    const UserSplit split = split_by_user(c.all, cfg.heldout_fraction);
    c.train = pick(c.all, split.train);
    c.heldout = pick(c.all, split.heldout);
    return c;
}

CorpusStats cmd_gen_synthetic(const RunConfig& cfg, std::ostream& log) {
    const RunPaths paths(cfg);
    const auto samples = gen_synthetic(cfg.synth);
    fs::create_directories(paths.dir());
    write_text_samples(paths.corpus(), samples);
    const CorpusStats st = corpus_stats(samples);
    char buf[200];
    std::snprintf(buf, sizeof(buf), "users %zu  samples %zu  target tokens %zu  preference rate %.4f\n",
                  st.users, st.samples, st.target_tokens, st.pref_rate());
    log << buf << "wrote " << paths.corpus().string() << '\n';
    return st;
}

Vocab cmd_build_vocab(const RunConfig& cfg, std::ostream& log) {
    const RunPaths paths(cfg);
    require(paths.corpus(), "corpus", "gen-synthetic");
    const Vocab vocab = build_vocab(load_text_samples(paths.corpus()), cfg.vocab_max_size);
    vocab.save(paths.vocab());
    log << "vocabulary " << vocab.size() << " tokens, hash " << vocab.hash() << '\n'
        << "wrote " << paths.vocab().string() << '\n';
    return vocab;
}

fs::path cmd_pretrain_proxy(const RunConfig& cfg, std::ostream& log) {
    const RunPaths paths(cfg);
    const LoadedCorpus corpus = load_corpus(cfg);
    if (corpus.train.empty()) throw ConfigError("training split is empty");
    const ModelParams init = init_params(model_dims(cfg, corpus.vocab), cfg.seed);

    TrainConfig t = cfg.train;
    t.variant = Variant::Base;
    t.epochs = cfg.proxy.epochs;
    t.learning_rate = cfg.proxy.learning_rate;
    t.batch_size = cfg.proxy.batch_size;

    log << "pretraining proxy on " << corpus.train.size() << " samples, " << t.epochs << " epochs\n";
    const TrainResult res = train(corpus.train, init, init, {}, t,
                                  epoch_printer(log, steps_per_epoch(corpus.train.size(), t.batch_size)));
    save_trained(paths.proxy_dir(), res, cfg, corpus.vocab, "proxy");
    log << "wrote " << paths.proxy_checkpoint().string() << '\n';
    return paths.proxy_checkpoint();
}

PrecomputedWeights cmd_weights(const RunConfig& cfg, std::ostream& log) {
    const RunPaths paths(cfg);
    const LoadedCorpus corpus = load_corpus(cfg);
    const ModelParams theta0 = load_proxy(cfg, corpus);
    const fs::path cache = paths.weights_cache(cfg.train);
    PrecomputedWeights w = precompute_weights(theta0, corpus.train, cfg.train, cache);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "lambda-weighted fraction %.4f (delta %g, lambda %g, epsilon %g)%s\n",
                  w.lambda_fraction(), cfg.train.delta, cfg.train.lambda, cfg.train.epsilon,
                  w.from_cache ? "  [cached]" : "");
    log << buf << "weights " << cache.string() << '\n';
    return w;
}

fs::path cmd_train(const RunConfig& cfg, std::ostream& log) {
    const RunPaths paths(cfg);
    const LoadedCorpus corpus = load_corpus(cfg);
    if (corpus.train.empty()) throw ConfigError("training split is empty");
    const ModelParams theta0 = load_proxy(cfg, corpus);

    std::vector<TokenWeights> weights;
    if (cfg.train.uses_weights()) {
        const fs::path cache = paths.weights_cache(cfg.train);
        require(cache, "weights cache", "weights");
        weights = precompute_weights(theta0, corpus.train, cfg.train, cache).per_sample;
    }

    const fs::path dir = paths.train_dir(cfg.train.variant);
    log << "training " << to_string(cfg.train.variant) << " (alpha " << cfg.train.effective_alpha()
        << ") on " << corpus.train.size() << " samples\n";
    const TrainResult res =
        train(corpus.train, theta0, theta0, weights, cfg.train,
              epoch_printer(log, steps_per_epoch(corpus.train.size(), cfg.train.batch_size)));
    save_trained(dir, res, cfg, corpus.vocab, "trained:" + std::string(to_string(cfg.train.variant)));
    log << "wrote " << (dir / "model.ckpt").string() << '\n';
    return dir / "model.ckpt";
}

AttributionOutput cmd_attribute(const RunConfig& cfg, const fs::path& checkpoint,
                                const std::optional<fs::path>& compare_to, std::ostream& log) {
    const RunPaths paths(cfg);
    const LoadedCorpus corpus = load_corpus(cfg);
    const ModelParams theta0 = load_proxy(cfg, corpus);

    std::vector<TokenWeights> weights;
    const fs::path cache = paths.weights_cache(cfg.train);
    if (fs::exists(cache)) {
        weights = precompute_weights(theta0, corpus.train, cfg.train, cache).per_sample;
    } else {
        weights = precompute_weights(theta0, corpus.train, cfg.train).per_sample;
    }

    auto run = [&](const fs::path& ck_path) {
        require(ck_path, "checkpoint", "train");
        const Checkpoint ck = load_checkpoint(ck_path, corpus.vocab.hash());
        return attribute(ck.params, theta0, corpus.train, cfg.train, &weights);
    };

    AttributionOutput out;
    out.report = run(checkpoint);
    if (compare_to) out.comparison = run(*compare_to);

    fs::create_directories(paths.reports_dir());
    std::string label = checkpoint_label(checkpoint);
    if (compare_to) label += "_vs_" + checkpoint_label(*compare_to);
    out.json = paths.reports_dir() / ("attribution_" + label + ".json");

    nlohmann::json j;
    j["config_hash"] = cfg.hash();
    j["checkpoint"] = checkpoint.string();
    j["report"] = nlohmann::json::parse(report_to_json(out.report));
    write_histogram_csv(paths.reports_dir() / ("histogram_" + checkpoint_label(checkpoint) + ".csv"),
                        out.report.histogram);
    if (out.comparison) {
        j["compare_checkpoint"] = compare_to->string();
        j["compare_report"] = nlohmann::json::parse(report_to_json(*out.comparison));
        write_histogram_csv(paths.reports_dir() / ("histogram_" + checkpoint_label(*compare_to) + ".csv"),
                            out.comparison->histogram);
    }
    std::ofstream(out.json, std::ios::binary) << j.dump(2) << '\n';

    auto summary = [&log](const std::string& name, const AttributionReport& r) {
        log << name << ": mean |logit diff| " << r.mean_abs_logit_diff;
        if (r.mean_abs_logit_diff_pref) log << ", at preference positions " << *r.mean_abs_logit_diff_pref;
        log << '\n';
        if (r.classification) {
            const auto& c = *r.classification;
            log << "  lambda-weight classification: precision " << c.precision << " (random "
                << c.baseline_precision() << "), recall " << c.recall << " (random " << c.baseline_recall()
                << ")\n";
        }
    };
    summary(checkpoint_label(checkpoint), out.report);
    if (out.comparison) summary(checkpoint_label(*compare_to), *out.comparison);
    log << "wrote " << out.json.string() << '\n';
    return out;
}

EvalOutput cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, std::ostream& log) {
    const RunPaths paths(cfg);
    const LoadedCorpus corpus = load_corpus(cfg);
    if (corpus.heldout.empty()) throw ConfigError("empty held-out set; raise heldout_fraction or add users");
    require(checkpoint, "checkpoint", "train");
    const Checkpoint ck = load_checkpoint(checkpoint, corpus.vocab.hash());

    EvalOutput out;
    out.with_history = evaluate_corpus(ck.params, corpus.heldout, true, cfg.train.precision);
    out.without_history = evaluate_corpus(ck.params, corpus.heldout, false, cfg.train.precision);
    out.csv = paths.reports_dir() / ("eval_" + checkpoint_label(checkpoint) + ".csv");
    write_evaluation_csv(out.csv, out.with_history, out.without_history, cfg.hash());

    auto line = [&log](const char* name, const CorpusEvaluation& e) {
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "%-16s rouge1 %.4f  rougeL %.4f  meteor_exact %.4f  bleu %.3f  pref_recall %.4f\n",
                      name, e.mean.rouge1_f, e.mean.rougeL_f, e.mean.meteor, e.mean.bleu, e.pref_recall);
        log << buf;
    };
    log << corpus.heldout.size() << " held-out samples\n";
    line("with history", out.with_history);
    line("without history", out.without_history);
    log << "wrote " << out.csv.string() << '\n';
    return out;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& log, std::vector<GradCheckLine>* lines,
                  const GradientHook& hook) {
    SynthConfig sc;
    sc.n_users = 4;
    sc.samples_per_user = 2;
    sc.seed = cfg.synth.seed;
    const auto texts = gen_synthetic(sc);
    const Vocab vocab = build_vocab(texts, 64);
    std::vector<Sample> corpus;
    for (const auto& t : texts) corpus.push_back(encode_sample(t, vocab));

    ModelDims d;
    d.vocab_size = 64;
    d.d_model = 16;
    d.n_layers = 1;
    d.n_heads = 2;
    d.max_seq = 32;
    // Perturbed away from the 0.02-scale init so no gradient sits at roundoff level.
    ModelParams theta = init_params(d, cfg.seed + 1);
    Rng jitter(cfg.seed + 3);
    for (auto& v : theta.data) v += 0.1 * jitter.normal();
    const ModelParams theta0 = init_params(d, cfg.seed + 2);

    TrainConfig t = cfg.train;
    t.precision = Precision::Double;
    const std::vector<double> scores = gt_token_effects(theta0, corpus[0]);
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    TokenWeights w = assign_weights(scores, sorted[sorted.size() / 2], t.lambda, t.epsilon);
    w.source_checksum = theta0.checksum();

    int status = 0;
    for (Variant v : kAllVariants) {
        t.variant = v;
        GradCheckLine line{v, {}, false};
        try {
            line.result = grad_check(theta, theta0, corpus[0], w, t, kGradCheckCoords, 1e-5, cfg.seed, hook);
            line.passed = line.result.max_rel_error < kGradCheckTolerance;
        } catch (const EngineError& e) {
            log << to_string(v) << ": " << e.what() << '\n';
            line.result.max_rel_error = std::numeric_limits<double>::infinity();
        }
        char buf[200];
        std::snprintf(buf, sizeof(buf), "%-15s max_rel_error %.3e over %zu coords  %s\n",
                      std::string(to_string(v)).c_str(), line.result.max_rel_error, line.result.coords,
                      line.passed ? "ok" : "FAIL");
        log << buf;
        if (!line.passed) status = 1;
        if (lines) lines->push_back(line);
    }
    return status;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, std::ostream& log, fs::path* csv_out) {
    const RunPaths paths(cfg);
    const LoadedCorpus corpus = load_corpus(cfg);
    if (corpus.train.empty()) throw ConfigError("training split is empty");
    if (corpus.heldout.empty()) throw ConfigError("empty held-out set; raise heldout_fraction or add users");
    const ModelParams theta0 = load_proxy(cfg, corpus);

    std::vector<std::pair<std::string, TrainConfig>> settings;
    for (double a : kSweepAlphas) {
        TrainConfig t = cfg.train;
        t.variant = Variant::Full;
        t.alpha = a;
        settings.emplace_back("alpha", t);
    }
    for (double l : kSweepLambdas) {
        TrainConfig t = cfg.train;
        t.variant = Variant::Full;
        t.lambda = l;
        settings.emplace_back("lambda", t);
    }

    const fs::path csv = paths.sweep_dir() / "sweep.csv";
    fs::create_directories(paths.sweep_dir());
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + csv.string());
    out.precision(10);
    out << "sweep,variant,alpha,lambda,delta,epsilon,seed,final_loss,lambda_fraction,rouge1_f,rougeL_f,"
           "meteor_exact,bleu,pref_recall,mean_abs_logit_diff_pref,config_hash\n";

    std::vector<SweepRow> rows;
    for (const auto& [sweep, t] : settings) {
        const PrecomputedWeights w = precompute_weights(theta0, corpus.train, t, paths.weights_cache(t));
        log << sweep << " sweep: alpha " << t.alpha << ", lambda " << t.lambda << '\n';
        const TrainResult res = train(corpus.train, theta0, theta0, w.per_sample, t);
        char name[96];
        std::snprintf(name, sizeof(name), "%s_a%g_l%g", sweep.c_str(), t.alpha, t.lambda);
        RunConfig row_cfg = cfg;
        row_cfg.train = t;
        save_trained(paths.sweep_dir() / name, res, row_cfg, corpus.vocab, "trained:FULL");

        const CorpusEvaluation ev = evaluate_corpus(res.params, corpus.heldout, true, t.precision);
        const AttributionReport rep = attribute(res.params, theta0, corpus.train, t, &w.per_sample);

        SweepRow row;
        row.sweep = sweep;
        row.alpha = t.alpha;
        row.lambda = t.lambda;
        row.final_loss = final_total(res);
        row.lambda_fraction = w.lambda_fraction();
        row.heldout = ev.mean;
        row.heldout_pref_recall = ev.pref_recall;
        row.mean_abs_logit_diff_pref = rep.mean_abs_logit_diff_pref.value_or(rep.mean_abs_logit_diff);
        out << sweep << ",FULL," << t.alpha << ',' << t.lambda << ',' << t.delta << ',' << t.epsilon << ','
            << cfg.seed << ',' << row.final_loss << ',' << row.lambda_fraction << ',' << ev.mean.rouge1_f
            << ',' << ev.mean.rougeL_f << ',' << ev.mean.meteor << ',' << ev.mean.bleu << ','
            << ev.pref_recall << ',' << row.mean_abs_logit_diff_pref << ',' << row_cfg.hash() << '\n';
        rows.push_back(row);
    }
    log << "wrote " << csv.string() << '\n';
    if (csv_out) *csv_out = csv;
    return rows;
}

}  // namespace causalpref
