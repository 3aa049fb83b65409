#include "causalpref/pipeline.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace causalpref;

namespace {

py::array_t<double> logits_array(const Logits& z) {
    py::array_t<double> out({z.rows, z.cols});
    std::copy(z.data.begin(), z.data.end(), out.mutable_data());
    return out;
}

Logits logits_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    Logits z;
    z.rows = static_cast<std::size_t>(a.shape(0));
    z.cols = static_cast<std::size_t>(a.shape(1));
    z.data.assign(a.data(), a.data() + a.size());
    return z;
}

// Runs a pipeline stage and hands its log text back alongside the result.
template <class F>
auto logged(F&& f) {
    std::ostringstream log;
    auto r = f(log);
    return std::make_pair(std::move(r), log.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Causal preference training for history-conditioned language models";

    py::register_exception<CorpusError>(m, "CorpusError", PyExc_ValueError);
    py::register_exception<ModelError>(m, "ModelError", PyExc_ValueError);
    py::register_exception<LossError>(m, "LossError", PyExc_ValueError);
    py::register_exception<CausalError>(m, "CausalError", PyExc_ValueError);
    py::register_exception<EngineError>(m, "EngineError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<MissingArtifact>(m, "MissingArtifact", PyExc_FileNotFoundError);

    py::enum_<Precision>(m, "Precision").value("SINGLE", Precision::Single).value("DOUBLE", Precision::Double);
    py::enum_<Variant>(m, "Variant")
        .value("NO_HISTORY_SFT", Variant::NoHistorySft)
        .value("BASE", Variant::Base)
        .value("CAUSAL_ONLY", Variant::CausalOnly)
        .value("NORM_ONLY", Variant::NormOnly)
        .value("FULL", Variant::Full);
    m.def("parse_variant", [](const std::string& s) { return parse_variant(s); });

    // corpus
    py::class_<TextSample>(m, "TextSample")
        .def(py::init<>())
        .def_readwrite("user_id", &TextSample::user_id)
        .def_readwrite("query", &TextSample::query)
        .def_readwrite("history", &TextSample::history)
        .def_readwrite("target", &TextSample::target)
        .def_readwrite("pref_mask", &TextSample::pref_mask);

    py::class_<Sample>(m, "Sample")
        .def(py::init<>())
        .def_readwrite("user_id", &Sample::user_id)
        .def_readwrite("query", &Sample::query)
        .def_readwrite("history", &Sample::history)
        .def_readwrite("target", &Sample::target)
        .def_readwrite("pref_mask", &Sample::pref_mask);

    py::class_<Vocab>(m, "Vocab")
        .def(py::init<>())
        .def(py::init<std::vector<std::string>>())
        .def("__len__", &Vocab::size)
        .def("id", [](const Vocab& v, const std::string& t) { return v.id(t); })
        .def("__contains__", [](const Vocab& v, const std::string& t) { return v.contains(t); })
        .def("token", &Vocab::token)
        .def_property_readonly("tokens", &Vocab::tokens)
        .def("hash", &Vocab::hash)
        .def("save", &Vocab::save)
        .def_static("load", &Vocab::load);

    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_readwrite("n_users", &SynthConfig::n_users)
        .def_readwrite("samples_per_user", &SynthConfig::samples_per_user)
        .def_readwrite("pref_lexicon_size", &SynthConfig::pref_lexicon_size)
        .def_readwrite("pref_pool_size", &SynthConfig::pref_pool_size)
        .def_readwrite("shared_lexicon_size", &SynthConfig::shared_lexicon_size)
        .def_readwrite("n_topics", &SynthConfig::n_topics)
        .def_readwrite("pref_injection_prob", &SynthConfig::pref_injection_prob)
        .def_readwrite("history_pref_prob", &SynthConfig::history_pref_prob)
        .def_readwrite("history_len", &SynthConfig::history_len)
        .def_readwrite("history_sentence_len", &SynthConfig::history_sentence_len)
        .def_readwrite("target_len", &SynthConfig::target_len)
        .def_readwrite("vocab_budget", &SynthConfig::vocab_budget)
        .def_readwrite("seed", &SynthConfig::seed)
        .def("validate", &SynthConfig::validate);

    m.def("gen_synthetic", &gen_synthetic);
    m.def("build_vocab", &build_vocab, py::arg("samples"), py::arg("max_size") = 1024);
    m.def("tokenize", [](const std::string& text, const Vocab& v) { return tokenize(text, v); });
    m.def("detokenize", &detokenize);
    m.def("encode_sample", &encode_sample);
    m.def("load_text_samples", &load_text_samples);
    m.def("write_text_samples", &write_text_samples);

    // model
    py::class_<ModelDims>(m, "ModelDims")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelDims::vocab_size)
        .def_readwrite("d_model", &ModelDims::d_model)
        .def_readwrite("n_layers", &ModelDims::n_layers)
        .def_readwrite("n_heads", &ModelDims::n_heads)
        .def_readwrite("max_seq", &ModelDims::max_seq)
        .def("validate", &ModelDims::validate);

    py::class_<ModelParams>(m, "ModelParams")
        .def_readonly("dims", &ModelParams::dims)
        .def_property(
            "data",
            [](const ModelParams& p) { return py::array_t<double>(static_cast<py::ssize_t>(p.data.size()), p.data.data()); },
            [](ModelParams& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
                if (static_cast<std::size_t>(a.size()) != p.data.size()) throw std::invalid_argument("size mismatch");
                std::copy(a.data(), a.data() + a.size(), p.data.begin());
            })
        .def("__len__", [](const ModelParams& p) { return p.data.size(); })
        .def("checksum", &ModelParams::checksum);

    m.def("param_count", &param_count);
    m.def("init_params", &init_params, py::arg("dims"), py::arg("seed") = 0);
    m.def(
        "forward",
        [](const ModelParams& p, const TokenSeq& ids, Precision prec) { return logits_array(forward(p, ids, prec)); },
        py::arg("params"), py::arg("ids"), py::arg("precision") = Precision::Double);
    m.def(
        "target_logits",
        [](const ModelParams& p, const Sample& s, bool h, Precision prec) {
            return logits_array(target_logits(p, s, h, prec));
        },
        py::arg("params"), py::arg("sample"), py::arg("with_history") = true, py::arg("precision") = Precision::Double);
    m.def("target_probs", &target_probs, py::arg("params"), py::arg("sample"), py::arg("with_history") = true,
          py::arg("precision") = Precision::Double);
    m.def("greedy_decode", &greedy_decode, py::arg("params"), py::arg("sample"), py::arg("with_history"),
          py::arg("max_new"), py::arg("precision") = Precision::Double);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def(py::init<>())
        .def_readwrite("params", &Checkpoint::params)
        .def_readwrite("vocab_hash", &Checkpoint::vocab_hash)
        .def_readwrite("config_hash", &Checkpoint::config_hash)
        .def_readwrite("tag", &Checkpoint::tag);
    m.def("save_checkpoint", &save_checkpoint);
    m.def("load_checkpoint", py::overload_cast<const std::filesystem::path&>(&load_checkpoint));

    // losses
    py::class_<TokenLoss>(m, "TokenLoss")
        .def_readonly("total", &TokenLoss::total)
        .def_readonly("per_token", &TokenLoss::per_token);
    m.def("weighted_normal_loss", [](const std::vector<std::vector<double>>& probs, const TokenSeq& y,
                                     const std::vector<double>& w) { return weighted_normal_loss(probs, y, w); });
    m.def("causal_preference_loss",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& zh,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& z0, const TokenSeq& y,
             const std::vector<double>& w) { return causal_preference_loss(logits_from(zh), logits_from(z0), y, w); });

    // causal attribution
    py::class_<TokenWeights>(m, "TokenWeights")
        .def_readonly("weights", &TokenWeights::weights)
        .def_readonly("scores", &TokenWeights::scores)
        .def_readonly("delta", &TokenWeights::delta)
        .def_readonly("lambda_", &TokenWeights::lambda)
        .def_readonly("epsilon", &TokenWeights::epsilon);
    m.def("prediction_effect", &prediction_effect, py::arg("theta"), py::arg("sample"), py::arg("t"),
          py::arg("precision") = Precision::Double);
    m.def("prediction_effects", &prediction_effects, py::arg("theta"), py::arg("sample"),
          py::arg("precision") = Precision::Double);
    m.def("gt_token_effects", &gt_token_effects, py::arg("theta0"), py::arg("sample"),
          py::arg("precision") = Precision::Double);
    m.def("assign_weights", &assign_weights, py::arg("scores"), py::arg("delta"), py::arg("lambda_"),
          py::arg("epsilon"));

    // metrics
    py::class_<PrfScore>(m, "PrfScore")
        .def_readonly("precision", &PrfScore::precision)
        .def_readonly("recall", &PrfScore::recall)
        .def_readonly("f1", &PrfScore::f1);
    py::class_<MetricScores>(m, "MetricScores")
        .def_readonly("rouge1_f", &MetricScores::rouge1_f)
        .def_readonly("rougeL_f", &MetricScores::rougeL_f)
        .def_readonly("meteor", &MetricScores::meteor)
        .def_readonly("bleu", &MetricScores::bleu);
    py::class_<CorpusEvaluation>(m, "CorpusEvaluation")
        .def_readonly("mean", &CorpusEvaluation::mean)
        .def_readonly("pref_recall", &CorpusEvaluation::pref_recall);
    m.def("rouge_1", &rouge_1);
    m.def("rouge_l", &rouge_l);
    m.def("bleu", &bleu, py::arg("hypothesis"), py::arg("reference"), py::arg("max_n") = 4);
    m.def("meteor_exact", &meteor_exact);
    m.def("score_pair", &score_pair);
    m.def("evaluate_corpus", &evaluate_corpus, py::arg("theta"), py::arg("corpus"), py::arg("with_history") = true,
          py::arg("precision") = Precision::Double);

    // training
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("alpha", &TrainConfig::alpha)
        .def_readwrite("delta", &TrainConfig::delta)
        .def_readwrite("lambda_", &TrainConfig::lambda)
        .def_readwrite("epsilon", &TrainConfig::epsilon)
        .def_readwrite("variant", &TrainConfig::variant)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("dropout", &TrainConfig::dropout)
        .def_readwrite("clip_norm", &TrainConfig::clip_norm)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("precision", &TrainConfig::precision)
        .def("validate", &TrainConfig::validate)
        .def("effective_alpha", &TrainConfig::effective_alpha);

    py::class_<StepLog>(m, "StepLog")
        .def_readonly("epoch", &StepLog::epoch)
        .def_readonly("step", &StepLog::step)
        .def_readonly("normal", &StepLog::normal)
        .def_readonly("preference", &StepLog::preference)
        .def_readonly("total", &StepLog::total)
        .def_readonly("grad_norm", &StepLog::grad_norm);
    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("params", &TrainResult::params)
        .def_readonly("steps", &TrainResult::steps);
    m.def(
        "train",
        [](const std::vector<Sample>& corpus, const ModelParams& init, const ModelParams& theta0,
           const std::vector<TokenWeights>& weights, const TrainConfig& cfg) {
            py::gil_scoped_release release;
            return train(corpus, init, theta0, weights, cfg);
        },
        py::arg("corpus"), py::arg("theta_init"), py::arg("theta0"), py::arg("weights"), py::arg("config"));

    // run configuration and pipeline stages
    py::class_<ProxyConfig>(m, "ProxyConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &ProxyConfig::epochs)
        .def_readwrite("learning_rate", &ProxyConfig::learning_rate)
        .def_readwrite("batch_size", &ProxyConfig::batch_size);
    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init(&default_run_config))
        .def_readwrite("run_name", &RunConfig::run_name)
        .def_readwrite("out_root", &RunConfig::out_root)
        .def_readwrite("vocab_max_size", &RunConfig::vocab_max_size)
        .def_readwrite("heldout_fraction", &RunConfig::heldout_fraction)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("synth", &RunConfig::synth)
        .def_readwrite("dims", &RunConfig::dims)
        .def_readwrite("train", &RunConfig::train)
        .def_readwrite("proxy", &RunConfig::proxy)
        .def("validate", &RunConfig::validate)
        .def("hash", &RunConfig::hash)
        .def("to_text", [](const RunConfig& c) { return to_config_text(c); })
        .def("to_json", [](const RunConfig& c) { return to_config_json(c); })
        .def_static("parse", [](const std::string& text) { return parse_run_config(text); })
        .def_static("load", &load_run_config);

    m.def("gen_synthetic_stage", [](const RunConfig& c) {
        return logged([&](std::ostream& log) { return cmd_gen_synthetic(c, log).samples; });
    });
    m.def("build_vocab_stage", [](const RunConfig& c) {
        return logged([&](std::ostream& log) { return cmd_build_vocab(c, log).size(); });
    });
    m.def("pretrain_proxy_stage", [](const RunConfig& c) {
        return logged([&](std::ostream& log) { return cmd_pretrain_proxy(c, log); });
    });
    m.def("weights_stage", [](const RunConfig& c) {
        return logged([&](std::ostream& log) { return cmd_weights(c, log).lambda_fraction(); });
    });
    m.def("train_stage", [](const RunConfig& c) {
        return logged([&](std::ostream& log) { return cmd_train(c, log); });
    });
    m.def("eval_stage", [](const RunConfig& c, const std::filesystem::path& ckpt) {
        return logged([&](std::ostream& log) { return cmd_eval(c, ckpt, log).csv; });
    });
    m.def(
        "attribute_stage",
        [](const RunConfig& c, const std::filesystem::path& ckpt, std::optional<std::filesystem::path> compare) {
            return logged([&](std::ostream& log) { return cmd_attribute(c, ckpt, compare, log).json; });
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("compare") = py::none());
    m.def("gradcheck_stage", [](const RunConfig& c) {
        return logged([&](std::ostream& log) { return cmd_gradcheck(c, log); });
    });
}
