#pragma once

// Desk-scale decoder-only transformer: pre-norm blocks, causal attention,
// learned absolute positions, untied output projection. Forward, manual
// backprop, input-embedding gradient norms, and a finite-difference checker.
// Templated on the scalar type: float for training and attribution, double
// for gradient verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#ifdef MIRAGE_USE_CBLAS
#include <cblas.h>
#endif

namespace mirage {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int vocab = 259;
    int dim = 64;
    int layers = 2;
    int heads = 2;
    int ctx = 512;

    int head_dim() const { return dim / heads; }
    int hidden() const { return 4 * dim; }

    void validate() const {
        if (vocab <= 0 || dim <= 0 || layers <= 0 || heads <= 0 || ctx <= 0) {
            throw ModelError("model dimensions must be positive");
        }
        if (dim % heads != 0) {
            throw ModelError("dim must be divisible by heads");
        }
    }
    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
    std::vector<T> ln1_g, ln1_b;
    std::vector<T> wq, bq, wk, bk, wv, bv, wo, bo;
    std::vector<T> ln2_g, ln2_b;
    std::vector<T> w1, b1, w2, b2;
};

template <typename T>
struct Parameters {
    ModelConfig cfg;
    std::vector<T> tok_emb;  // vocab x dim
    std::vector<T> pos_emb;  // ctx x dim
    std::vector<LayerParams<T>> layers;
    std::vector<T> lnf_g, lnf_b;
    std::vector<T> w_out;  // vocab x dim
    std::vector<T> b_out;  // vocab

    static Parameters zeros(const ModelConfig& cfg) {
        cfg.validate();
        Parameters p;
        p.cfg = cfg;
        const std::size_t d = static_cast<std::size_t>(cfg.dim);
        const std::size_t h = static_cast<std::size_t>(cfg.hidden());
        const std::size_t v = static_cast<std::size_t>(cfg.vocab);
        p.tok_emb.assign(v * d, T(0));
        p.pos_emb.assign(static_cast<std::size_t>(cfg.ctx) * d, T(0));
        p.layers.resize(static_cast<std::size_t>(cfg.layers));
        for (auto& l : p.layers) {
            l.ln1_g.assign(d, T(0));
            l.ln1_b.assign(d, T(0));
            l.wq.assign(d * d, T(0));
            l.bq.assign(d, T(0));
            l.wk.assign(d * d, T(0));
            l.bk.assign(d, T(0));
            l.wv.assign(d * d, T(0));
            l.bv.assign(d, T(0));
            l.wo.assign(d * d, T(0));
            l.bo.assign(d, T(0));
            l.ln2_g.assign(d, T(0));
            l.ln2_b.assign(d, T(0));
            l.w1.assign(h * d, T(0));
            l.b1.assign(h, T(0));
            l.w2.assign(d * h, T(0));
            l.b2.assign(d, T(0));
        }
        p.lnf_g.assign(d, T(0));
        p.lnf_b.assign(d, T(0));
        p.w_out.assign(v * d, T(0));
        p.b_out.assign(v, T(0));
        return p;
    }

    // Tensors in declared order; drives init, Adam, and serialization.
    std::vector<std::vector<T>*> tensors() {
        std::vector<std::vector<T>*> out{&tok_emb, &pos_emb};
        for (auto& l : layers) {
            for (auto* t : {&l.ln1_g, &l.ln1_b, &l.wq, &l.bq, &l.wk, &l.bk,
                            &l.wv, &l.bv, &l.wo, &l.bo, &l.ln2_g, &l.ln2_b,
                            &l.w1, &l.b1, &l.w2, &l.b2}) {
                out.push_back(t);
            }
        }
        for (auto* t : {&lnf_g, &lnf_b, &w_out, &b_out}) {
            out.push_back(t);
        }
        return out;
    }
    std::vector<const std::vector<T>*> tensors() const {
        auto mut = const_cast<Parameters*>(this)->tensors();
        return {mut.begin(), mut.end()};
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto* t : tensors()) n += t->size();
        return n;
    }
};

// Seeded Gaussian init; layernorm gains start at 1.
template <typename T>
Parameters<T> init_params(const ModelConfig& cfg, std::uint64_t seed,
                          double init_std = 0.02) {
    Parameters<T> p = Parameters<T>::zeros(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, init_std);
    for (auto* t : p.tensors()) {
        for (auto& x : *t) x = static_cast<T>(dist(rng));
    }
    for (auto& l : p.layers) {
        std::fill(l.ln1_g.begin(), l.ln1_g.end(), T(1));
        std::fill(l.ln1_b.begin(), l.ln1_b.end(), T(0));
        std::fill(l.ln2_g.begin(), l.ln2_g.end(), T(1));
        std::fill(l.ln2_b.begin(), l.ln2_b.end(), T(0));
    }
    std::fill(p.lnf_g.begin(), p.lnf_g.end(), T(1));
    std::fill(p.lnf_b.begin(), p.lnf_b.end(), T(0));
    return p;
}

template <typename To, typename From>
Parameters<To> convert_params(const Parameters<From>& src) {
    Parameters<To> dst = Parameters<To>::zeros(src.cfg);
    auto st = src.tensors();
    auto dt = dst.tensors();
    for (std::size_t i = 0; i < st.size(); ++i) {
        for (std::size_t j = 0; j < st[i]->size(); ++j) {
            (*dt[i])[j] = static_cast<To>((*st[i])[j]);
        }
    }
    return dst;
}

namespace detail {

constexpr double kLnEps = 1e-5;

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
    const T pdf = std::exp(-x * x / T(2)) /
                  std::sqrt(T(2) * T(3.14159265358979323846));
    return cdf + x * pdf;
}

#ifdef MIRAGE_USE_CBLAS
// Single-threaded BLAS keeps results bitwise-reproducible regardless of the
// caller's thread budget.
inline void ensure_single_thread_blas() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}
#endif

// y[t] = W x[t] + b for all rows; W is out_dim x in_dim row-major.
template <typename T>
void linear_forward(const std::vector<T>& w, const std::vector<T>& b,
                    const std::vector<T>& x, std::vector<T>& y,
                    std::size_t n, std::size_t in_dim, std::size_t out_dim) {
    y.assign(n * out_dim, T(0));
#ifdef MIRAGE_USE_CBLAS
    if constexpr (std::is_same_v<T, float>) {
        ensure_single_thread_blas();
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans,
                    static_cast<int>(n), static_cast<int>(out_dim),
                    static_cast<int>(in_dim), 1.0f, x.data(),
                    static_cast<int>(in_dim), w.data(),
                    static_cast<int>(in_dim), 0.0f, y.data(),
                    static_cast<int>(out_dim));
        for (std::size_t t = 0; t < n; ++t) {
            T* yr = y.data() + t * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) yr[o] += b[o];
        }
        return;
    }
#endif
    for (std::size_t t = 0; t < n; ++t) {
        const T* xr = x.data() + t * in_dim;
        T* yr = y.data() + t * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const T* wr = w.data() + o * in_dim;
            T acc = b[o];
            for (std::size_t i = 0; i < in_dim; ++i) {
                acc += wr[i] * xr[i];
            }
            yr[o] = acc;
        }
    }
}

template <typename T>
void linear_backward(const std::vector<T>& w, const std::vector<T>& x,
                     const std::vector<T>& dy, std::vector<T>& dx,
                     std::vector<T>* dw, std::vector<T>* db, std::size_t n,
                     std::size_t in_dim, std::size_t out_dim) {
    dx.assign(n * in_dim, T(0));
#ifdef MIRAGE_USE_CBLAS
    if constexpr (std::is_same_v<T, float>) {
        ensure_single_thread_blas();
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                    static_cast<int>(n), static_cast<int>(in_dim),
                    static_cast<int>(out_dim), 1.0f, dy.data(),
                    static_cast<int>(out_dim), w.data(),
                    static_cast<int>(in_dim), 0.0f, dx.data(),
                    static_cast<int>(in_dim));
        if (dw) {
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans,
                        static_cast<int>(out_dim), static_cast<int>(in_dim),
                        static_cast<int>(n), 1.0f, dy.data(),
                        static_cast<int>(out_dim), x.data(),
                        static_cast<int>(in_dim), 1.0f, dw->data(),
                        static_cast<int>(in_dim));
        }
        if (db) {
            for (std::size_t t = 0; t < n; ++t) {
                const T* dyr = dy.data() + t * out_dim;
                for (std::size_t o = 0; o < out_dim; ++o) (*db)[o] += dyr[o];
            }
        }
        return;
    }
#endif
    for (std::size_t t = 0; t < n; ++t) {
        const T* dyr = dy.data() + t * out_dim;
        const T* xr = x.data() + t * in_dim;
        T* dxr = dx.data() + t * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const T g = dyr[o];
            if (g == T(0)) continue;
            const T* wr = w.data() + o * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) {
                dxr[i] += wr[i] * g;
            }
            if (dw) {
                T* dwr = dw->data() + o * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) {
                    dwr[i] += g * xr[i];
                }
            }
            if (db) (*db)[o] += g;
        }
    }
}

template <typename T>
void layernorm_forward(const std::vector<T>& g, const std::vector<T>& b,
                       const std::vector<T>& x, std::vector<T>& y,
                       std::vector<T>& mean, std::vector<T>& rstd,
                       std::size_t n, std::size_t d) {
    y.assign(n * d, T(0));
    mean.assign(n, T(0));
    rstd.assign(n, T(0));
    for (std::size_t t = 0; t < n; ++t) {
        const T* xr = x.data() + t * d;
        T mu = T(0);
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t i = 0; i < d; ++i) {
            const T c = xr[i] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T r = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
        mean[t] = mu;
        rstd[t] = r;
        T* yr = y.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) {
            yr[i] = g[i] * (xr[i] - mu) * r + b[i];
        }
    }
}

template <typename T>
void layernorm_backward(const std::vector<T>& g, const std::vector<T>& x,
                        const std::vector<T>& mean, const std::vector<T>& rstd,
                        const std::vector<T>& dy, std::vector<T>& dx,
                        std::vector<T>* dg, std::vector<T>* db, std::size_t n,
                        std::size_t d) {
    dx.assign(n * d, T(0));
    std::vector<T> xhat(d), dxh(d);
    for (std::size_t t = 0; t < n; ++t) {
        const T* xr = x.data() + t * d;
        const T* dyr = dy.data() + t * d;
        const T mu = mean[t];
        const T r = rstd[t];
        T m1 = T(0), m2 = T(0);
        for (std::size_t i = 0; i < d; ++i) {
            xhat[i] = (xr[i] - mu) * r;
            dxh[i] = dyr[i] * g[i];
            m1 += dxh[i];
            m2 += dxh[i] * xhat[i];
            if (dg) (*dg)[i] += dyr[i] * xhat[i];
            if (db) (*db)[i] += dyr[i];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        T* dxr = dx.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) {
            dxr[i] = r * (dxh[i] - m1 - xhat[i] * m2);
        }
    }
}

template <typename T>
void softmax_row(const T* logits, T* probs, std::size_t n) {
    T mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    for (std::size_t i = 0; i < n; ++i) probs[i] /= sum;
}

}  // namespace detail

template <typename T>
struct LayerCache {
    std::vector<T> x_in, ln1_out, ln1_mean, ln1_rstd;
    std::vector<T> q, k, v;
    std::vector<T> att;         // heads x n x n, causal
    std::vector<T> att_concat;  // pre-output-projection
    std::vector<T> x_mid, ln2_out, ln2_mean, ln2_rstd;
    std::vector<T> h_pre, h_act, mlp_out;
};

template <typename T>
struct ForwardCache {
    std::vector<int> ids;
    std::size_t n = 0;
    std::vector<T> x0;  // input embeddings (token + position)
    std::vector<LayerCache<T>> layers;
    std::vector<T> xf, lnf_out, lnf_mean, lnf_rstd;
    std::vector<T> logits;  // n x vocab
};

template <typename T>
void check_prefix(const Parameters<T>& p, std::span<const int> ids) {
    if (ids.size() > static_cast<std::size_t>(p.cfg.ctx)) {
        throw ModelError("context overflow: " + std::to_string(ids.size()) +
                         " > " + std::to_string(p.cfg.ctx));
    }
    for (int id : ids) {
        if (id < 0 || id >= p.cfg.vocab) {
            throw ModelError("token id out of vocabulary: " +
                             std::to_string(id));
        }
    }
}

// Full forward pass with cached activations. When x_override is given it
// replaces the embedding lookup (used by the finite-difference checker).
template <typename T>
ForwardCache<T> forward(const Parameters<T>& p, std::span<const int> ids,
                        const std::vector<T>* x_override = nullptr) {
    check_prefix(p, ids);
    const std::size_t n = ids.size();
    const std::size_t d = static_cast<std::size_t>(p.cfg.dim);
    const std::size_t hd = static_cast<std::size_t>(p.cfg.head_dim());
    const std::size_t nh = static_cast<std::size_t>(p.cfg.heads);
    const std::size_t hidden = static_cast<std::size_t>(p.cfg.hidden());
    const std::size_t v = static_cast<std::size_t>(p.cfg.vocab);

    ForwardCache<T> c;
    c.ids.assign(ids.begin(), ids.end());
    c.n = n;
    if (n == 0) {
        return c;
    }

    if (x_override) {
        if (x_override->size() != n * d) {
            throw ModelError("embedding override has wrong size");
        }
        c.x0 = *x_override;
    } else {
        c.x0.assign(n * d, T(0));
        for (std::size_t t = 0; t < n; ++t) {
            const T* te = p.tok_emb.data() + static_cast<std::size_t>(ids[t]) * d;
            const T* pe = p.pos_emb.data() + t * d;
            T* xr = c.x0.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) xr[i] = te[i] + pe[i];
        }
    }

    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<T> x = c.x0;
    c.layers.resize(p.layers.size());
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        const LayerParams<T>& lp = p.layers[li];
        LayerCache<T>& lc = c.layers[li];
        lc.x_in = x;
        detail::layernorm_forward(lp.ln1_g, lp.ln1_b, lc.x_in, lc.ln1_out,
                                  lc.ln1_mean, lc.ln1_rstd, n, d);
        detail::linear_forward(lp.wq, lp.bq, lc.ln1_out, lc.q, n, d, d);
        detail::linear_forward(lp.wk, lp.bk, lc.ln1_out, lc.k, n, d, d);
        detail::linear_forward(lp.wv, lp.bv, lc.ln1_out, lc.v, n, d, d);

        lc.att.assign(nh * n * n, T(0));
        lc.att_concat.assign(n * d, T(0));
        std::vector<T> scores;
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * hd;
            for (std::size_t t = 0; t < n; ++t) {
                scores.assign(t + 1, T(0));
                const T* qr = lc.q.data() + t * d + off;
                for (std::size_t j = 0; j <= t; ++j) {
                    const T* kr = lc.k.data() + j * d + off;
                    T acc = T(0);
                    for (std::size_t i = 0; i < hd; ++i) acc += qr[i] * kr[i];
                    scores[j] = acc * scale;
                }
                T* arow = lc.att.data() + (h * n + t) * n;
                detail::softmax_row(scores.data(), arow, t + 1);
                T* orow = lc.att_concat.data() + t * d + off;
                for (std::size_t j = 0; j <= t; ++j) {
                    const T a = arow[j];
                    const T* vr = lc.v.data() + j * d + off;
                    for (std::size_t i = 0; i < hd; ++i) orow[i] += a * vr[i];
                }
            }
        }

        std::vector<T> attn_out;
        detail::linear_forward(lp.wo, lp.bo, lc.att_concat, attn_out, n, d, d);
        lc.x_mid.assign(n * d, T(0));
        for (std::size_t i = 0; i < n * d; ++i) {
            lc.x_mid[i] = lc.x_in[i] + attn_out[i];
        }

        detail::layernorm_forward(lp.ln2_g, lp.ln2_b, lc.x_mid, lc.ln2_out,
                                  lc.ln2_mean, lc.ln2_rstd, n, d);
        detail::linear_forward(lp.w1, lp.b1, lc.ln2_out, lc.h_pre, n, d,
                               hidden);
        lc.h_act.assign(n * hidden, T(0));
        for (std::size_t i = 0; i < n * hidden; ++i) {
            lc.h_act[i] = detail::gelu(lc.h_pre[i]);
        }
        detail::linear_forward(lp.w2, lp.b2, lc.h_act, lc.mlp_out, n, hidden,
                               d);
        x.assign(n * d, T(0));
        for (std::size_t i = 0; i < n * d; ++i) {
            x[i] = lc.x_mid[i] + lc.mlp_out[i];
        }
    }

    c.xf = x;
    detail::layernorm_forward(p.lnf_g, p.lnf_b, c.xf, c.lnf_out, c.lnf_mean,
                              c.lnf_rstd, n, d);
    detail::linear_forward(p.w_out, p.b_out, c.lnf_out, c.logits, n, d, v);
    return c;
}

// Backprop from dlogits (n x vocab). Parameter gradients accumulate into
// *grads when non-null; *dx0 receives the gradient w.r.t. the summed input
// embeddings when non-null.
template <typename T>
void backward(const Parameters<T>& p, const ForwardCache<T>& c,
              const std::vector<T>& dlogits, Parameters<T>* grads,
              std::vector<T>* dx0) {
    const std::size_t n = c.n;
    const std::size_t d = static_cast<std::size_t>(p.cfg.dim);
    const std::size_t hd = static_cast<std::size_t>(p.cfg.head_dim());
    const std::size_t nh = static_cast<std::size_t>(p.cfg.heads);
    const std::size_t hidden = static_cast<std::size_t>(p.cfg.hidden());
    const std::size_t v = static_cast<std::size_t>(p.cfg.vocab);
    if (dlogits.size() != n * v) {
        throw ModelError("dlogits has wrong size");
    }
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    std::vector<T> d_lnf_out;
    detail::linear_backward(p.w_out, c.lnf_out, dlogits, d_lnf_out,
                            grads ? &grads->w_out : nullptr,
                            grads ? &grads->b_out : nullptr, n, d, v);
    std::vector<T> dx;
    detail::layernorm_backward(p.lnf_g, c.xf, c.lnf_mean, c.lnf_rstd,
                               d_lnf_out, dx, grads ? &grads->lnf_g : nullptr,
                               grads ? &grads->lnf_b : nullptr, n, d);

    for (std::size_t li = p.layers.size(); li-- > 0;) {
        const LayerParams<T>& lp = p.layers[li];
        const LayerCache<T>& lc = c.layers[li];
        LayerParams<T>* lg = grads ? &grads->layers[li] : nullptr;

        // MLP block
        std::vector<T> dh_act;
        detail::linear_backward(lp.w2, lc.h_act, dx, dh_act,
                                lg ? &lg->w2 : nullptr, lg ? &lg->b2 : nullptr,
                                n, hidden, d);
        for (std::size_t i = 0; i < n * hidden; ++i) {
            dh_act[i] *= detail::gelu_grad(lc.h_pre[i]);
        }
        std::vector<T> d_ln2_out;
        detail::linear_backward(lp.w1, lc.ln2_out, dh_act, d_ln2_out,
                                lg ? &lg->w1 : nullptr, lg ? &lg->b1 : nullptr,
                                n, d, hidden);
        std::vector<T> d_x_mid_ln;
        detail::layernorm_backward(lp.ln2_g, lc.x_mid, lc.ln2_mean,
                                   lc.ln2_rstd, d_ln2_out, d_x_mid_ln,
                                   lg ? &lg->ln2_g : nullptr,
                                   lg ? &lg->ln2_b : nullptr, n, d);
        std::vector<T> d_x_mid(n * d);
        for (std::size_t i = 0; i < n * d; ++i) {
            d_x_mid[i] = dx[i] + d_x_mid_ln[i];
        }

        // attention block
        std::vector<T> d_att_concat;
        detail::linear_backward(lp.wo, lc.att_concat, d_x_mid, d_att_concat,
                                lg ? &lg->wo : nullptr, lg ? &lg->bo : nullptr,
                                n, d, d);
        std::vector<T> dq(n * d, T(0)), dk(n * d, T(0)), dv(n * d, T(0));
        std::vector<T> datt(n), dscore(n);
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * hd;
            for (std::size_t t = 0; t < n; ++t) {
                const T* arow = lc.att.data() + (h * n + t) * n;
                const T* dor = d_att_concat.data() + t * d + off;
                T dot_sum = T(0);
                for (std::size_t j = 0; j <= t; ++j) {
                    const T* vr = lc.v.data() + j * d + off;
                    T acc = T(0);
                    for (std::size_t i = 0; i < hd; ++i) acc += dor[i] * vr[i];
                    datt[j] = acc;
                    dot_sum += arow[j] * acc;
                    T* dvr = dv.data() + j * d + off;
                    const T a = arow[j];
                    for (std::size_t i = 0; i < hd; ++i) dvr[i] += a * dor[i];
                }
                T* dqr = dq.data() + t * d + off;
                for (std::size_t j = 0; j <= t; ++j) {
                    const T ds = arow[j] * (datt[j] - dot_sum) * scale;
                    if (ds == T(0)) continue;
                    const T* kr = lc.k.data() + j * d + off;
                    const T* qr = lc.q.data() + t * d + off;
                    T* dkr = dk.data() + j * d + off;
                    for (std::size_t i = 0; i < hd; ++i) {
                        dqr[i] += ds * kr[i];
                        dkr[i] += ds * qr[i];
                    }
                }
            }
        }

        std::vector<T> d_ln1_out(n * d, T(0)), tmp;
        detail::linear_backward(lp.wq, lc.ln1_out, dq, tmp,
                                lg ? &lg->wq : nullptr, lg ? &lg->bq : nullptr,
                                n, d, d);
        for (std::size_t i = 0; i < n * d; ++i) d_ln1_out[i] += tmp[i];
        detail::linear_backward(lp.wk, lc.ln1_out, dk, tmp,
                                lg ? &lg->wk : nullptr, lg ? &lg->bk : nullptr,
                                n, d, d);
        for (std::size_t i = 0; i < n * d; ++i) d_ln1_out[i] += tmp[i];
        detail::linear_backward(lp.wv, lc.ln1_out, dv, tmp,
                                lg ? &lg->wv : nullptr, lg ? &lg->bv : nullptr,
                                n, d, d);
        for (std::size_t i = 0; i < n * d; ++i) d_ln1_out[i] += tmp[i];

        std::vector<T> d_x_in_ln;
        detail::layernorm_backward(lp.ln1_g, lc.x_in, lc.ln1_mean, lc.ln1_rstd,
                                   d_ln1_out, d_x_in_ln,
                                   lg ? &lg->ln1_g : nullptr,
                                   lg ? &lg->ln1_b : nullptr, n, d);
        for (std::size_t i = 0; i < n * d; ++i) {
            dx[i] = d_x_mid[i] + d_x_in_ln[i];
        }
    }

    if (dx0) {
        *dx0 = dx;
    }
    if (grads) {
        for (std::size_t t = 0; t < n; ++t) {
            T* te = grads->tok_emb.data() +
                    static_cast<std::size_t>(c.ids[t]) * d;
            T* pe = grads->pos_emb.data() + t * d;
            const T* dxr = dx.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) {
                te[i] += dxr[i];
                pe[i] += dxr[i];
            }
        }
    }
}

template <typename T>
std::vector<T> next_distribution(const Parameters<T>& p,
                                 std::span<const int> prefix) {
    if (prefix.empty()) {
        throw ModelError("next_distribution needs a non-empty prefix");
    }
    ForwardCache<T> c = forward(p, prefix);
    std::vector<T> probs(static_cast<std::size_t>(p.cfg.vocab));
    detail::softmax_row(c.logits.data() + (c.n - 1) * probs.size(),
                        probs.data(), probs.size());
    return probs;
}

// Teacher-forced per-step distributions: k-th output equals
// next_distribution(prefix ++ forced[..k]).
template <typename T>
std::vector<std::vector<T>> sequence_distributions(
    const Parameters<T>& p, std::span<const int> prefix,
    std::span<const int> forced) {
    if (forced.empty()) {
        return {};
    }
    if (prefix.empty()) {
        throw ModelError("sequence_distributions needs a non-empty prefix");
    }
    std::vector<int> all(prefix.begin(), prefix.end());
    all.insert(all.end(), forced.begin(), forced.end());
    ForwardCache<T> c = forward(p, all);
    const std::size_t v = static_cast<std::size_t>(p.cfg.vocab);
    std::vector<std::vector<T>> out;
    out.reserve(forced.size());
    for (std::size_t k = 0; k < forced.size(); ++k) {
        std::vector<T> probs(v);
        detail::softmax_row(c.logits.data() + (prefix.size() - 1 + k) * v,
                            probs.data(), v);
        out.push_back(std::move(probs));
    }
    return out;
}

enum class GradientMode { prob_diff, prob_only };

struct GradientTarget {
    std::size_t step = 0;  // generation step the scalar belongs to
    int target = 0;
    std::optional<int> foil;
    GradientMode mode = GradientMode::prob_diff;
};

template <typename T>
void validate_target(const Parameters<T>& p, std::span<const int> prefix,
                     const GradientTarget& t) {
    if (prefix.empty()) {
        throw ModelError("gradient target needs a non-empty prefix");
    }
    if (t.target < 0 || t.target >= p.cfg.vocab) {
        throw ModelError("gradient target token out of vocabulary");
    }
    if (t.mode == GradientMode::prob_diff) {
        if (!t.foil) {
            throw ModelError("prob_diff mode requires a foil token");
        }
        if (*t.foil == t.target) {
            throw ModelError("foil must differ from the target token");
        }
        if (*t.foil < 0 || *t.foil >= p.cfg.vocab) {
            throw ModelError("foil token out of vocabulary");
        }
    }
    if (t.step > prefix.size()) {
        throw ModelError("gradient target step beyond prefix");
    }
}

// L2 norm of d(scalar)/d(input embedding) per prefix position, where scalar
// is p(target) - p(foil) (prob_diff) or p(target) (prob_only) from the
// next-token distribution after the full prefix.
template <typename T>
std::vector<double> input_gradient_norms(const Parameters<T>& p,
                                         std::span<const int> prefix,
                                         const GradientTarget& target) {
    validate_target(p, prefix, target);
    ForwardCache<T> c = forward(p, prefix);
    const std::size_t n = c.n;
    const std::size_t v = static_cast<std::size_t>(p.cfg.vocab);
    const std::size_t d = static_cast<std::size_t>(p.cfg.dim);

    std::vector<T> probs(v);
    detail::softmax_row(c.logits.data() + (n - 1) * v, probs.data(), v);
    const std::size_t a = static_cast<std::size_t>(target.target);

    // d(p_a - p_b)/d(logit_k) = p_a (1[k=a] - p_k) - p_b (1[k=b] - p_k)
    std::vector<T> dlogits(n * v, T(0));
    T* row = dlogits.data() + (n - 1) * v;
    const T pa = probs[a];
    for (std::size_t k = 0; k < v; ++k) {
        row[k] = pa * ((k == a ? T(1) : T(0)) - probs[k]);
    }
    if (target.mode == GradientMode::prob_diff) {
        const std::size_t b = static_cast<std::size_t>(*target.foil);
        const T pb = probs[b];
        for (std::size_t k = 0; k < v; ++k) {
            row[k] -= pb * ((k == b ? T(1) : T(0)) - probs[k]);
        }
    }

    std::vector<T> dx0;
    backward(p, c, dlogits, static_cast<Parameters<T>*>(nullptr), &dx0);
    std::vector<double> norms(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double g = static_cast<double>(dx0[t * d + i]);
            acc += g * g;
        }
        norms[t] = std::sqrt(acc);
    }
    return norms;
}

// Central-difference verification of input_gradient_norms in double
// precision; returns the max relative error over prefix positions.
template <typename T>
double finite_diff_check(const Parameters<T>& p, std::span<const int> prefix,
                         const GradientTarget& target, double eps) {
    if (eps <= 0.0) {
        throw ModelError("finite_diff_check needs eps > 0");
    }
    Parameters<double> pd = convert_params<double>(p);
    validate_target(pd, prefix, target);
    std::vector<double> analytic = input_gradient_norms(pd, prefix, target);

    const std::size_t n = prefix.size();
    const std::size_t d = static_cast<std::size_t>(pd.cfg.dim);
    const std::size_t v = static_cast<std::size_t>(pd.cfg.vocab);
    const std::size_t a = static_cast<std::size_t>(target.target);

    std::vector<double> base(n * d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const double* te =
            pd.tok_emb.data() + static_cast<std::size_t>(prefix[t]) * d;
        const double* pe = pd.pos_emb.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) base[t * d + i] = te[i] + pe[i];
    }

    auto scalar_at = [&](const std::vector<double>& x) {
        ForwardCache<double> c = forward(pd, prefix, &x);
        std::vector<double> probs(v);
        detail::softmax_row(c.logits.data() + (n - 1) * v, probs.data(), v);
        double s = probs[a];
        if (target.mode == GradientMode::prob_diff) {
            s -= probs[static_cast<std::size_t>(*target.foil)];
        }
        return s;
    };

    double max_rel = 0.0;
    std::vector<double> x = base;
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t idx = t * d + i;
            x[idx] = base[idx] + eps;
            const double up = scalar_at(x);
            x[idx] = base[idx] - eps;
            const double down = scalar_at(x);
            x[idx] = base[idx];
            const double g = (up - down) / (2.0 * eps);
            acc += g * g;
        }
        const double fd = std::sqrt(acc);
        const double denom = std::max({std::abs(fd), std::abs(analytic[t]),
                                       1e-8});
        max_rel = std::max(max_rel, std::abs(fd - analytic[t]) / denom);
    }
    return max_rel;
}

// Greedy decoding until eos or max_new tokens; ties go to the lower id.
template <typename T>
std::vector<int> generate_greedy(const Parameters<T>& p,
                                 std::span<const int> prompt,
                                 std::size_t max_new, int eos_id) {
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (std::size_t s = 0; s < max_new; ++s) {
        if (seq.size() >= static_cast<std::size_t>(p.cfg.ctx)) break;
        std::vector<T> probs = next_distribution(p, seq);
        int best = 0;
        for (std::size_t k = 1; k < probs.size(); ++k) {
            if (probs[k] > probs[static_cast<std::size_t>(best)]) {
                best = static_cast<int>(k);
            }
        }
        if (best == eos_id) break;
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

template <typename T>
std::vector<int> generate_sampled(const Parameters<T>& p,
                                  std::span<const int> prompt,
                                  std::size_t max_new, int eos_id,
                                  std::uint64_t seed, double temperature) {
    if (temperature <= 0.0) {
        throw ModelError("temperature must be positive");
    }
    std::mt19937_64 rng(seed);
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (std::size_t s = 0; s < max_new; ++s) {
        if (seq.size() >= static_cast<std::size_t>(p.cfg.ctx)) break;
        ForwardCache<T> c = forward(p, seq);
        const std::size_t v = static_cast<std::size_t>(p.cfg.vocab);
        std::vector<double> scaled(v);
        for (std::size_t k = 0; k < v; ++k) {
            scaled[k] = static_cast<double>(c.logits[(c.n - 1) * v + k]) /
                        temperature;
        }
        std::vector<double> probs(v);
        detail::softmax_row(scaled.data(), probs.data(), v);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double r = u(rng), cum = 0.0;
        int pick = static_cast<int>(v) - 1;
        for (std::size_t k = 0; k < v; ++k) {
            cum += probs[k];
            if (r < cum) {
                pick = static_cast<int>(k);
                break;
            }
        }
        if (pick == eos_id) break;
        out.push_back(pick);
        seq.push_back(pick);
    }
    return out;
}

}  // namespace mirage
