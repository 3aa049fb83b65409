#pragma once

// Forward pass with an activation tape and the matching hand-written reverse pass for the
// pre-norm decoder. Instantiated for float (training default) and double (gradient checks).

#include "causalpref/model.hpp"
#include "causalpref/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace causalpref::detail {

template <class T>
struct LayerTape {
    std::vector<T> x_in;              // [n, d] residual stream entering the block
    std::vector<T> xhat1, rstd1, a;   // ln1: normalized, 1/std, output
    std::vector<T> q, k, v;           // [n, d]
    std::vector<T> probs;             // [heads, n, n] (row i valid for j <= i)
    std::vector<T> y;                 // [n, d] concatenated head outputs
    std::vector<T> drop1;             // dropout scale per entry of the attention branch, empty = off
    std::vector<T> x_mid;             // [n, d]
    std::vector<T> xhat2, rstd2, b;   // ln2
    std::vector<T> h_pre, h_act;      // [n, 4d]
    std::vector<T> drop2;
};

template <class T>
struct Tape {
    std::vector<TokenId> ids;
    std::size_t n = 0;
    std::vector<LayerTape<T>> layers;
    std::vector<T> x_final;           // residual stream after the last block
    std::vector<T> xhatf, rstdf, xf;  // final norm
    std::vector<T> logits;            // [n, vocab]
};

struct Dropout {
    double p = 0.0;
    Rng* rng = nullptr;
    bool active() const { return p > 0.0 && rng != nullptr; }
};

// C[n x m] += A[n x k] * B[k x m]
template <class T>
inline void matmul_acc(const T* A, const T* B, T* C, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        T* c = C + i * m;
        const T* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[p];
            const T* b = B + p * m;
            for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

// dB[k x m] += A^T[k x n] * dC[n x m]
template <class T>
inline void matmul_at_acc(const T* A, const T* dC, T* dB, std::size_t n, std::size_t k,
                          std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* a = A + i * k;
        const T* dc = dC + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[p];
            if (av == T(0)) continue;
            T* db = dB + p * m;
            for (std::size_t j = 0; j < m; ++j) db[j] += av * dc[j];
        }
    }
}

// dA[n x k] += dC[n x m] * B^T  where B is [k x m]
template <class T>
inline void matmul_bt_acc(const T* dC, const T* B, T* dA, std::size_t n, std::size_t k,
                          std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* dc = dC + i * m;
        T* da = dA + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T* b = B + p * m;
            T s = 0;
            for (std::size_t j = 0; j < m; ++j) s += dc[j] * b[j];
            da[p] += s;
        }
    }
}

template <class T>
class Transformer {
public:
    static constexpr T kLnEps = T(1e-5);

    explicit Transformer(const ModelParams& params)
        : layout_(params.dims), dims_(params.dims), w_(params.data.begin(), params.data.end()) {}

    const ModelDims& dims() const { return dims_; }
    const ParamLayout& layout() const { return layout_; }
    std::size_t size() const { return w_.size(); }

    void forward(std::span<const TokenId> ids, Tape<T>& tape, Dropout dropout = {}) const {
        const std::size_t n = ids.size();
        const std::size_t d = dims_.d_model;
        const std::size_t V = dims_.vocab_size;
        if (n == 0) throw ModelError("forward: empty input");
        if (n > dims_.max_seq) {
            throw ModelError("forward: sequence length " + std::to_string(n) + " exceeds max_seq " +
                             std::to_string(dims_.max_seq));
        }
        for (TokenId id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= V) {
                throw ModelError("forward: token id " + std::to_string(id) + " outside vocabulary");
            }
        }
        tape.ids.assign(ids.begin(), ids.end());
        tape.n = n;
        tape.layers.resize(dims_.n_layers);

        std::vector<T> x(n * d);
        const T* wte = w_.data() + layout_.wte;
        const T* wpe = w_.data() + layout_.wpe;
        for (std::size_t i = 0; i < n; ++i) {
            const T* e = wte + static_cast<std::size_t>(ids[i]) * d;
            const T* pe = wpe + i * d;
            for (std::size_t c = 0; c < d; ++c) x[i * d + c] = e[c] + pe[c];
        }

        for (std::size_t l = 0; l < dims_.n_layers; ++l) {
            block_forward(layout_.layers[l], tape.layers[l], x, n, dropout);
        }

        tape.x_final = x;
        layer_norm(x.data(), n, w_.data() + layout_.lnf_g, w_.data() + layout_.lnf_b, tape.xhatf,
                   tape.rstdf, tape.xf);
        tape.logits.assign(n * V, T(0));
        // logits = xf * wte^T
        for (std::size_t i = 0; i < n; ++i) {
            const T* xi = tape.xf.data() + i * d;
            T* out = tape.logits.data() + i * V;
            for (std::size_t v = 0; v < V; ++v) {
                const T* e = wte + v * d;
                T s = 0;
                for (std::size_t c = 0; c < d; ++c) s += xi[c] * e[c];
                out[v] = s;
            }
        }
    }

    /// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits). Rows of dlogits that are
    /// entirely zero are skipped.
    void backward(const Tape<T>& tape, std::span<const T> dlogits, std::span<T> grad) const {
        const std::size_t n = tape.n;
        const std::size_t d = dims_.d_model;
        const std::size_t V = dims_.vocab_size;
        const T* wte = w_.data() + layout_.wte;
        T* gwte = grad.data() + layout_.wte;

        std::vector<T> dxf(n * d, T(0));
        for (std::size_t i = 0; i < n; ++i) {
            const T* dl = dlogits.data() + i * V;
            bool any = false;
            for (std::size_t v = 0; v < V; ++v) {
                if (dl[v] != T(0)) {
                    any = true;
                    break;
                }
            }
            if (!any) continue;
            const T* xi = tape.xf.data() + i * d;
            T* dxi = dxf.data() + i * d;
            for (std::size_t v = 0; v < V; ++v) {
                const T g = dl[v];
                if (g == T(0)) continue;
                const T* e = wte + v * d;
                T* ge = gwte + v * d;
                for (std::size_t c = 0; c < d; ++c) {
                    dxi[c] += g * e[c];
                    ge[c] += g * xi[c];
                }
            }
        }

        std::vector<T> dx(n * d, T(0));
        layer_norm_backward(dxf.data(), tape.xhatf, tape.rstdf, n, w_.data() + layout_.lnf_g,
                            grad.data() + layout_.lnf_g, grad.data() + layout_.lnf_b, dx.data());

        for (std::size_t l = dims_.n_layers; l-- > 0;) {
            block_backward(layout_.layers[l], tape.layers[l], n, dx, grad);
        }

        T* gwpe = grad.data() + layout_.wpe;
        for (std::size_t i = 0; i < n; ++i) {
            T* ge = gwte + static_cast<std::size_t>(tape.ids[i]) * d;
            T* gp = gwpe + i * d;
            const T* dxi = dx.data() + i * d;
            for (std::size_t c = 0; c < d; ++c) {
                ge[c] += dxi[c];
                gp[c] += dxi[c];
            }
        }
    }

private:
    void layer_norm(const T* x, std::size_t n, const T* g, const T* b, std::vector<T>& xhat,
                    std::vector<T>& rstd, std::vector<T>& out) const {
        const std::size_t d = dims_.d_model;
        xhat.resize(n * d);
        rstd.resize(n);
        out.resize(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            const T* xi = x + i * d;
            T mean = 0;
            for (std::size_t c = 0; c < d; ++c) mean += xi[c];
            mean /= T(d);
            T var = 0;
            for (std::size_t c = 0; c < d; ++c) var += (xi[c] - mean) * (xi[c] - mean);
            var /= T(d);
            const T rs = T(1) / std::sqrt(var + kLnEps);
            rstd[i] = rs;
            for (std::size_t c = 0; c < d; ++c) {
                const T h = (xi[c] - mean) * rs;
                xhat[i * d + c] = h;
                out[i * d + c] = h * g[c] + b[c];
            }
        }
    }

    void layer_norm_backward(const T* dout, const std::vector<T>& xhat, const std::vector<T>& rstd,
                             std::size_t n, const T* g, T* dg, T* db, T* dx) const {
        const std::size_t d = dims_.d_model;
        for (std::size_t i = 0; i < n; ++i) {
            const T* dy = dout + i * d;
            const T* h = xhat.data() + i * d;
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t c = 0; c < d; ++c) {
                const T dh = dy[c] * g[c];
                mean_dh += dh;
                mean_dh_h += dh * h[c];
                dg[c] += dy[c] * h[c];
                db[c] += dy[c];
            }
            mean_dh /= T(d);
            mean_dh_h /= T(d);
            T* dxi = dx + i * d;
            for (std::size_t c = 0; c < d; ++c) {
                const T dh = dy[c] * g[c];
                dxi[c] += rstd[i] * (dh - mean_dh - h[c] * mean_dh_h);
            }
        }
    }

    static T gelu(T x) {
        const T c = T(0.7978845608028654);  // sqrt(2/pi)
        return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
    }

    static T gelu_grad(T x) {
        const T c = T(0.7978845608028654);
        const T u = c * (x + T(0.044715) * x * x * x);
        const T t = std::tanh(u);
        const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
    }

    void make_dropout(std::vector<T>& mask, std::size_t count, Dropout dropout) const {
        if (!dropout.active()) {
            mask.clear();
            return;
        }
        mask.resize(count);
        const T keep_scale = T(1) / T(1 - dropout.p);
        for (auto& m : mask) m = dropout.rng->uniform() < dropout.p ? T(0) : keep_scale;
    }

    void block_forward(const LayerSlots& s, LayerTape<T>& t, std::vector<T>& x, std::size_t n,
                       Dropout dropout) const {
        const std::size_t d = dims_.d_model;
        const std::size_t H = dims_.n_heads;
        const std::size_t hd = dims_.head_dim();
        const std::size_t f = dims_.d_ff();
        const T* w = w_.data();

        t.x_in = x;
        layer_norm(x.data(), n, w + s.ln1_g, w + s.ln1_b, t.xhat1, t.rstd1, t.a);
        t.q.assign(n * d, T(0));
        t.k.assign(n * d, T(0));
        t.v.assign(n * d, T(0));
        matmul_acc(t.a.data(), w + s.wq, t.q.data(), n, d, d);
        matmul_acc(t.a.data(), w + s.wk, t.k.data(), n, d, d);
        matmul_acc(t.a.data(), w + s.wv, t.v.data(), n, d, d);

        const T scale = T(1) / std::sqrt(T(hd));
        t.probs.assign(H * n * n, T(0));
        t.y.assign(n * d, T(0));
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                T* p = t.probs.data() + (h * n + i) * n;
                const T* qi = t.q.data() + i * d + h * hd;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const T* kj = t.k.data() + j * d + h * hd;
                    T sdot = 0;
                    for (std::size_t c = 0; c < hd; ++c) sdot += qi[c] * kj[c];
                    p[j] = sdot * scale;
                    mx = std::max(mx, p[j]);
                }
                T z = 0;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    z += p[j];
                }
                T* yi = t.y.data() + i * d + h * hd;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[j] /= z;
                    const T* vj = t.v.data() + j * d + h * hd;
                    for (std::size_t c = 0; c < hd; ++c) yi[c] += p[j] * vj[c];
                }
            }
        }

        std::vector<T> o(n * d, T(0));
        matmul_acc(t.y.data(), w + s.wo, o.data(), n, d, d);
        make_dropout(t.drop1, n * d, dropout);
        for (std::size_t i = 0; i < n * d; ++i) x[i] += t.drop1.empty() ? o[i] : o[i] * t.drop1[i];
        t.x_mid = x;

        layer_norm(x.data(), n, w + s.ln2_g, w + s.ln2_b, t.xhat2, t.rstd2, t.b);
        t.h_pre.assign(n * f, T(0));
        for (std::size_t i = 0; i < n; ++i) std::copy_n(w + s.b1, f, t.h_pre.data() + i * f);
        matmul_acc(t.b.data(), w + s.w1, t.h_pre.data(), n, d, f);
        t.h_act.resize(n * f);
        for (std::size_t i = 0; i < n * f; ++i) t.h_act[i] = gelu(t.h_pre[i]);
        std::vector<T> ff(n * d, T(0));
        for (std::size_t i = 0; i < n; ++i) std::copy_n(w + s.b2, d, ff.data() + i * d);
        matmul_acc(t.h_act.data(), w + s.w2, ff.data(), n, f, d);
        make_dropout(t.drop2, n * d, dropout);
        for (std::size_t i = 0; i < n * d; ++i) x[i] += t.drop2.empty() ? ff[i] : ff[i] * t.drop2[i];
    }

    // dx holds d(loss)/d(block output) on entry and d(loss)/d(block input) on exit.
    void block_backward(const LayerSlots& s, const LayerTape<T>& t, std::size_t n, std::vector<T>& dx,
                        std::span<T> grad) const {
        const std::size_t d = dims_.d_model;
        const std::size_t H = dims_.n_heads;
        const std::size_t hd = dims_.head_dim();
        const std::size_t f = dims_.d_ff();
        const T* w = w_.data();
        T* g = grad.data();

        // feed-forward branch
        std::vector<T> dff(n * d);
        for (std::size_t i = 0; i < n * d; ++i) dff[i] = t.drop2.empty() ? dx[i] : dx[i] * t.drop2[i];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) g[s.b2 + c] += dff[i * d + c];
        }
        matmul_at_acc(t.h_act.data(), dff.data(), g + s.w2, n, f, d);
        std::vector<T> dh(n * f, T(0));
        matmul_bt_acc(dff.data(), w + s.w2, dh.data(), n, f, d);
        for (std::size_t i = 0; i < n * f; ++i) dh[i] *= gelu_grad(t.h_pre[i]);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < f; ++c) g[s.b1 + c] += dh[i * f + c];
        }
        matmul_at_acc(t.b.data(), dh.data(), g + s.w1, n, d, f);
        std::vector<T> db(n * d, T(0));
        matmul_bt_acc(dh.data(), w + s.w1, db.data(), n, d, f);
        layer_norm_backward(db.data(), t.xhat2, t.rstd2, n, w + s.ln2_g, g + s.ln2_g, g + s.ln2_b,
                            dx.data());

        // attention branch
        std::vector<T> d_o(n * d);
        for (std::size_t i = 0; i < n * d; ++i) d_o[i] = t.drop1.empty() ? dx[i] : dx[i] * t.drop1[i];
        matmul_at_acc(t.y.data(), d_o.data(), g + s.wo, n, d, d);
        std::vector<T> dy(n * d, T(0));
        matmul_bt_acc(d_o.data(), w + s.wo, dy.data(), n, d, d);

        std::vector<T> dq(n * d, T(0)), dk(n * d, T(0)), dv(n * d, T(0));
        std::vector<T> dp(n);
        const T scale = T(1) / std::sqrt(T(hd));
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = t.probs.data() + (h * n + i) * n;
                const T* dyi = dy.data() + i * d + h * hd;
                T dot = 0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const T* vj = t.v.data() + j * d + h * hd;
                    T* dvj = dv.data() + j * d + h * hd;
                    T sdot = 0;
                    for (std::size_t c = 0; c < hd; ++c) {
                        sdot += dyi[c] * vj[c];
                        dvj[c] += p[j] * dyi[c];
                    }
                    dp[j] = sdot;
                    dot += p[j] * sdot;
                }
                const T* qi = t.q.data() + i * d + h * hd;
                T* dqi = dq.data() + i * d + h * hd;
                for (std::size_t j = 0; j <= i; ++j) {
                    const T ds = p[j] * (dp[j] - dot) * scale;
                    if (ds == T(0)) continue;
                    const T* kj = t.k.data() + j * d + h * hd;
                    T* dkj = dk.data() + j * d + h * hd;
                    for (std::size_t c = 0; c < hd; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
        matmul_at_acc(t.a.data(), dq.data(), g + s.wq, n, d, d);
        matmul_at_acc(t.a.data(), dk.data(), g + s.wk, n, d, d);
        matmul_at_acc(t.a.data(), dv.data(), g + s.wv, n, d, d);
        std::vector<T> da(n * d, T(0));
        matmul_bt_acc(dq.data(), w + s.wq, da.data(), n, d, d);
        matmul_bt_acc(dk.data(), w + s.wk, da.data(), n, d, d);
        matmul_bt_acc(dv.data(), w + s.wv, da.data(), n, d, d);
        layer_norm_backward(da.data(), t.xhat1, t.rstd1, n, w + s.ln1_g, g + s.ln1_g, g + s.ln1_b,
                            dx.data());
    }

    ParamLayout layout_;
    ModelDims dims_;
    std::vector<T> w_;
};

}  // namespace causalpref::detail
