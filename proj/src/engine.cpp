#include "causalpref/engine.hpp"

#include "causalpref/detail/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace causalpref {

double Gradients::norm() const {
    double s = 0.0;
    for (double g : data) s += g * g;
    return std::sqrt(s);
}

bool Gradients::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

namespace {

struct SampleTerms {
    double normal = 0.0;
    double preference = 0.0;
    std::vector<double> normal_terms;
    std::vector<double> preference_terms;
};

std::vector<double> effective_weights(const BatchItem& item, const TrainConfig& cfg,
                                      std::uint64_t theta0_checksum, std::size_t index) {
    const std::size_t n = item.sample->target.size();
    if (!cfg.uses_weights()) return std::vector<double>(n, 1.0);
    if (item.weights == nullptr) {
        throw EngineError("batch item " + std::to_string(index) + ": variant " +
                          std::string(to_string(cfg.variant)) + " needs precomputed token weights");
    }
    if (item.weights->weights.size() != n) {
        throw EngineError("batch item " + std::to_string(index) + ": token weights length " +
                          std::to_string(item.weights->weights.size()) + " != target length " +
                          std::to_string(n));
    }
    if (item.weights->source_checksum != 0 && theta0_checksum != 0 &&
        item.weights->source_checksum != theta0_checksum) {
        throw EngineError("batch item " + std::to_string(index) +
                          ": token weights were computed with a different proxy model");
    }
    return item.weights->weights;
}

template <class T>
std::vector<double> row_softmax(const T* row, std::size_t V) {
    std::vector<double> z(row, row + V);
    return softmax(z);
}

// Evaluates one sample; when grad is non-empty, accumulates scale * d(terms)/d(theta) into it.
template <class T>
SampleTerms eval_sample(const detail::Transformer<T>& model, const Sample& sample,
                        const std::vector<double>& w, const TrainConfig& cfg, double alpha,
                        double scale, std::span<T> grad, Rng* dropout_rng) {
    const std::size_t V = model.dims().vocab_size;
    const std::size_t max_seq = model.dims().max_seq;
    const bool keep_history = !cfg.strips_history();
    const bool with_lp = alpha > 0.0;

    const PackedContext packed = pack_context(sample, keep_history, max_seq);
    detail::Dropout dropout;
    if (!with_lp && dropout_rng != nullptr && cfg.dropout > 0.0) dropout = {cfg.dropout, dropout_rng};
    detail::Tape<T> tape_h;
    model.forward(packed.ids, tape_h, dropout);

    SampleTerms out;
    const bool need_grad = !grad.empty();
    std::vector<T> dlogits_h;
    if (need_grad) dlogits_h.assign(tape_h.n * V, T(0));

    const std::size_t first = packed.target_span.begin - 1;
    for (std::size_t t = 0; t < sample.target.size(); ++t) {
        const std::size_t r = first + t;
        const auto y = static_cast<std::size_t>(sample.target[t]);
        const auto p = row_softmax(tape_h.logits.data() + r * V, V);
        const double term = w[t] * -std::log(std::max(p[y], kProbFloor));
        out.normal_terms.push_back(term);
        out.normal += term;
        if (need_grad && p[y] >= kProbFloor) {
            T* dl = dlogits_h.data() + r * V;
            for (std::size_t v = 0; v < V; ++v) {
                dl[v] += static_cast<T>(scale * w[t] * (p[v] - (v == y ? 1.0 : 0.0)));
            }
        }
    }

    detail::Tape<T> tape_0;
    std::vector<T> dlogits_0;
    if (with_lp) {
        const PackedContext null_packed = pack_context(sample, false, max_seq);
        model.forward(null_packed.ids, tape_0);
        if (need_grad) dlogits_0.assign(tape_0.n * V, T(0));
        const std::size_t first0 = null_packed.target_span.begin - 1;
        std::vector<double> diff(V);
        for (std::size_t t = 0; t < sample.target.size(); ++t) {
            const T* zh = tape_h.logits.data() + (first + t) * V;
            const T* z0 = tape_0.logits.data() + (first0 + t) * V;
            for (std::size_t v = 0; v < V; ++v) {
                diff[v] = static_cast<double>(zh[v]) - static_cast<double>(z0[v]);
            }
            const auto q = softmax(diff);
            const auto y = static_cast<std::size_t>(sample.target[t]);
            const double term = w[t] * -std::log(std::max(q[y], kProbFloor));
            out.preference_terms.push_back(term);
            out.preference += term;
            if (need_grad && q[y] >= kProbFloor) {
                T* dh = dlogits_h.data() + (first + t) * V;
                T* d0 = dlogits_0.data() + (first0 + t) * V;
                for (std::size_t v = 0; v < V; ++v) {
                    const double g = scale * alpha * w[t] * (q[v] - (v == y ? 1.0 : 0.0));
                    dh[v] += static_cast<T>(g);
                    d0[v] -= static_cast<T>(g);
                }
            }
        }
    }

    if (need_grad) {
        model.backward(tape_h, dlogits_h, grad);
        if (with_lp) model.backward(tape_0, dlogits_0, grad);
    }
    return out;
}

// theta0_sum == 0 skips the weights fingerprint check.
template <class T>
LossAndGrads loss_and_grads_as(const ModelParams& theta, std::uint64_t theta0_sum,
                               std::span<const BatchItem> batch, const TrainConfig& cfg,
                               Rng* dropout_rng, bool want_grads) {
    if (batch.empty()) throw EngineError("loss_and_grads: empty batch");
    const double alpha = cfg.effective_alpha();
    const detail::Transformer<T> model(theta);
    const double scale = 1.0 / static_cast<double>(batch.size());

    LossAndGrads out;
    if (want_grads) out.grads.data.assign(theta.data.size(), 0.0);
    std::vector<T> sample_grad(want_grads ? theta.data.size() : 0);
    double normal = 0.0, preference = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::vector<double> w = effective_weights(batch[i], cfg, theta0_sum, i);
        if (want_grads) std::fill(sample_grad.begin(), sample_grad.end(), T(0));
        SampleTerms terms = eval_sample<T>(model, *batch[i].sample, w, cfg, alpha, scale,
                                           std::span<T>(sample_grad), dropout_rng);
        if (!std::isfinite(terms.normal) || !std::isfinite(terms.preference)) {
            throw EngineError("non-finite loss on batch item " + std::to_string(i) + " (user '" +
                              batch[i].sample->user_id + "')");
        }
        for (std::size_t k = 0; k < sample_grad.size(); ++k) {
            const double g = static_cast<double>(sample_grad[k]);
            if (!std::isfinite(g)) {
                throw EngineError("non-finite gradient on batch item " + std::to_string(i) +
                                  " (user '" + batch[i].sample->user_id + "')");
            }
            out.grads.data[k] += g;
        }
        normal += terms.normal;
        preference += terms.preference;
        out.loss.normal_terms.push_back(std::move(terms.normal_terms));
        out.loss.preference_terms.push_back(std::move(terms.preference_terms));
    }
    auto terms_n = std::move(out.loss.normal_terms);
    auto terms_p = std::move(out.loss.preference_terms);
    out.loss = total_loss(normal * scale, preference * scale, alpha);
    out.loss.normal_terms = std::move(terms_n);
    out.loss.preference_terms = std::move(terms_p);
    return out;
}

LossAndGrads dispatch(const ModelParams& theta, std::uint64_t theta0_sum,
                      std::span<const BatchItem> batch, const TrainConfig& cfg, Rng* dropout_rng,
                      bool want_grads) {
    return cfg.precision == Precision::Single
               ? loss_and_grads_as<float>(theta, theta0_sum, batch, cfg, dropout_rng, want_grads)
               : loss_and_grads_as<double>(theta, theta0_sum, batch, cfg, dropout_rng, want_grads);
}

}  // namespace

LossAndGrads loss_and_grads(const ModelParams& theta, const ModelParams& theta0,
                            std::span<const BatchItem> batch, const TrainConfig& cfg,
                            Rng* dropout_rng) {
    cfg.validate();
    return dispatch(theta, cfg.uses_weights() ? theta0.checksum() : 0, batch, cfg, dropout_rng, true);
}

LossAndGrads loss_and_grads(const ModelParams& theta, const ModelParams& theta0,
                            const std::vector<Sample>& batch,
                            const std::vector<TokenWeights>& weights, const TrainConfig& cfg) {
    if (!weights.empty() && weights.size() != batch.size()) {
        throw EngineError("loss_and_grads: one TokenWeights per sample required");
    }
    std::vector<BatchItem> items;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        items.push_back({&batch[i], weights.empty() ? nullptr : &weights[i]});
    }
    return loss_and_grads(theta, theta0, items, cfg);
}

LossBreakdown evaluate_loss(const ModelParams& theta, std::span<const BatchItem> batch,
                            const TrainConfig& cfg) {
    cfg.validate();
    return dispatch(theta, 0, batch, cfg, nullptr, false).loss;
}

// ---------------------------------------------------------------------------
// AdamW

void adamw_step(ModelParams& theta, const Gradients& grads, AdamState& state, const TrainConfig& cfg) {
    const std::size_t n = theta.data.size();
    if (grads.data.size() != n || state.m.size() != n || state.v.size() != n) {
        throw EngineError("adamw_step: parameter, gradient and moment shapes differ");
    }
    const ParamLayout layout = theta.layout();
    ++state.step;
    const double lr = cfg.learning_rate;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
    for (const auto& slot : layout.slots()) {
        const double decay = slot.decay ? 1.0 - lr * cfg.weight_decay : 1.0;
        for (std::size_t i = slot.offset; i < slot.offset + slot.size(); ++i) {
            const double g = grads.data[i];
            state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
            state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g * g;
            const double m_hat = state.m[i] / bc1;
            const double v_hat = state.v[i] / bc2;
            theta.data[i] = theta.data[i] * decay - lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
        }
    }
    if (cfg.precision == Precision::Single) {
        for (auto& v : theta.data) v = static_cast<double>(static_cast<float>(v));
    }
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(std::vector<double>& x,
                           const std::function<double(const std::vector<double>&)>& loss,
                           const std::vector<double>& analytic,
                           const std::vector<std::size_t>& coords, double h_step) {
    GradCheckResult r;
    for (std::size_t i : coords) {
        const double orig = x[i];
        x[i] = orig + h_step;
        const double plus = loss(x);
        x[i] = orig - h_step;
        const double minus = loss(x);
        x[i] = orig;
        const double numeric = (plus - minus) / (2.0 * h_step);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = std::abs(a - numeric) / denom;
        const double err = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        if (r.coords == 0 || err > r.max_rel_error) {
            r.max_rel_error = err;
            r.worst_index = i;
            r.worst_analytic = a;
            r.worst_numeric = numeric;
        }
        ++r.coords;
    }
    return r;
}

GradCheckResult grad_check(const ModelParams& theta, const ModelParams& theta0, const Sample& sample,
                           const TokenWeights& weights, const TrainConfig& cfg, std::size_t n_coords,
                           double h_step, std::uint64_t seed, const GradientHook& hook) {
    TrainConfig c = cfg;
    c.precision = Precision::Double;
    c.dropout = 0.0;
    c.clip_norm = 0.0;

    const BatchItem item{&sample, &weights};
    const std::span<const BatchItem> batch(&item, 1);
    LossAndGrads lg = loss_and_grads(theta, theta0, batch, c);
    if (hook) hook(lg.grads);

    const ParamLayout layout = theta.layout();
    const std::size_t seq_len = packed_length(sample, !c.strips_history());
    const std::size_t null_len = packed_length(sample, false);
    const std::size_t reach = std::max(seq_len, c.effective_alpha() > 0.0 ? null_len : 0);
    Rng rng(seed ^ 0x5bd1e995ULL);
    std::vector<std::size_t> coords;
    for (std::size_t k = 0; k < n_coords; ++k) {
        const auto& slot = layout.slots()[rng.below(layout.slots().size())];
        std::size_t extent = slot.size();
        if (slot.name == "wpe") extent = std::min(reach, slot.rows) * slot.cols;
        coords.push_back(slot.offset + rng.below(extent));
    }

    ModelParams probe = theta;
    auto loss = [&](const std::vector<double>& x) {
        probe.data = x;
        return dispatch(probe, 0, batch, c, nullptr, false).loss.total;
    };
    std::vector<double> x = theta.data;
    return grad_check(x, loss, lg.grads.data, coords, h_step);
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const std::vector<Sample>& corpus, const ModelParams& theta_init,
                  const ModelParams& theta0, const std::vector<TokenWeights>& weights,
                  const TrainConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    if (corpus.empty()) throw EngineError("train: empty corpus");
    if (cfg.uses_weights() && weights.size() != corpus.size()) {
        throw EngineError("train: variant " + std::string(to_string(cfg.variant)) +
                          " needs one TokenWeights per sample");
    }
    TrainResult result;
    result.params = theta_init;
    if (cfg.precision == Precision::Single) {
        for (auto& v : result.params.data) v = static_cast<double>(static_cast<float>(v));
    }
    AdamState state = AdamState::zeros(theta_init.data.size());

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch_size = std::max<std::size_t>(1, cfg.batch_size);
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffler(cfg.seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
        shuffler.shuffle(order.begin(), order.end());
        LossBreakdown epoch_sum;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::vector<BatchItem> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
                const std::size_t idx = order[k];
                batch.push_back({&corpus[idx], weights.empty() ? nullptr : &weights[idx]});
            }
            Rng dropout_rng(cfg.seed ^ (0xd1b54a32d192ed03ULL * (global_step + 1)));
            LossAndGrads lg = loss_and_grads(result.params, theta0, batch, cfg, &dropout_rng);
            const double gnorm = lg.grads.norm();
            if (cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm) {
                const double s = cfg.clip_norm / gnorm;
                for (auto& g : lg.grads.data) g *= s;
            }
            adamw_step(result.params, lg.grads, state, cfg);

            StepLog log{epoch, global_step, lg.loss.normal, lg.loss.preference, lg.loss.total, gnorm};
            result.steps.push_back(log);
            if (progress) progress(log);
            epoch_sum.normal += lg.loss.normal;
            epoch_sum.preference += lg.loss.preference;
            epoch_sum.total += lg.loss.total;
            ++epoch_steps;
            ++global_step;
        }
        const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(1, epoch_steps));
        LossBreakdown mean = total_loss(epoch_sum.normal * inv, epoch_sum.preference * inv,
                                        cfg.effective_alpha());
        result.epochs.push_back(mean);
    }
    return result;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<StepLog>& steps) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw EngineError("cannot write loss log " + path.string());
    out.precision(17);
    out << "epoch,step,L_n,L_p,L,grad_norm\n";
    for (const auto& s : steps) {
        out << s.epoch << ',' << s.step << ',' << s.normal << ',' << s.preference << ',' << s.total
            << ',' << s.grad_norm << '\n';
    }
}

}  // namespace causalpref
