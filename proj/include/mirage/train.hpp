#pragma once

// Next-token training for the bundled model: Adam, seeded Gaussian init,
// one sequence per optimizer step, per-epoch mean cross-entropy in nats.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mirage/model.hpp"

namespace mirage {

struct TrainConfig {
    int epochs = 3;
    int batch_size = 16;  // sequences per optimizer step (last batch may be short)
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double init_std = 0.02;
    double grad_clip = 1.0;  // global-norm clip; <= 0 disables
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs <= 0 || batch_size <= 0 || lr <= 0.0 || beta1 < 0.0 ||
            beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || adam_eps <= 0.0 ||
            init_std <= 0.0) {
            throw ModelError("invalid training hyperparameters");
        }
    }
};

struct TrainResult {
    Parameters<float> params;
    std::vector<double> epoch_loss;  // mean cross-entropy, nats/token
};

// A training sequence with the loss masked to a subset of positions.
// loss_start supervises predictions of ids[loss_start..] (0 = plain
// full-sequence LM loss); a non-empty loss_mask instead marks the exact
// supervised target positions (mask[t] => predict ids[t] from the prefix,
// position 0 is never a target). Prompt-heavy corpora train much faster when
// supervision targets the answer tokens only.
struct TrainSequence {
    std::vector<int> ids;
    std::size_t loss_start = 0;
    std::vector<std::uint8_t> loss_mask;

    std::size_t supervised_positions() const {
        if (!loss_mask.empty()) {
            std::size_t n = 0;
            for (std::size_t t = 1; t < loss_mask.size(); ++t) {
                if (loss_mask[t]) ++n;
            }
            return n;
        }
        const std::size_t first = std::max<std::size_t>(loss_start, 1);
        return ids.size() > first ? ids.size() - first : 0;
    }
};

namespace detail {

// Cross-entropy over the sequence's supervised target positions; fills
// dlogits with the mean-normalized softmax-minus-onehot gradient.
template <typename T>
double sequence_loss_grad(const Parameters<T>& p, const ForwardCache<T>& c,
                          const TrainSequence& seq, std::vector<T>& dlogits,
                          std::size_t& preds_out) {
    const std::size_t n = c.n;
    const std::size_t v = static_cast<std::size_t>(p.cfg.vocab);
    auto supervised = [&](std::size_t target_pos) {
        if (!seq.loss_mask.empty()) {
            return seq.loss_mask[target_pos] != 0;
        }
        return target_pos >= std::max<std::size_t>(seq.loss_start, 1);
    };
    const std::size_t preds = seq.supervised_positions();
    preds_out = preds;
    dlogits.assign(n * v, T(0));
    double loss = 0.0;
    std::vector<T> probs(v);
    const T inv = T(1) / static_cast<T>(preds);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        if (!supervised(t + 1)) continue;
        softmax_row(c.logits.data() + t * v, probs.data(), v);
        const std::size_t tgt = static_cast<std::size_t>(c.ids[t + 1]);
        loss -= std::log(std::max(static_cast<double>(probs[tgt]), 1e-30));
        T* row = dlogits.data() + t * v;
        for (std::size_t k = 0; k < v; ++k) {
            row[k] = probs[k] * inv;
        }
        row[tgt] -= inv;
    }
    return loss / static_cast<double>(preds);
}

}  // namespace detail

namespace detail {

inline void validate_corpus(const ModelConfig& cfg,
                            const std::vector<TrainSequence>& corpus) {
    if (corpus.empty()) {
        throw ModelError("training corpus is empty");
    }
    for (const auto& seq : corpus) {
        if (seq.ids.size() < 2) {
            throw ModelError("training sequences need at least two tokens");
        }
        if (seq.ids.size() > static_cast<std::size_t>(cfg.ctx)) {
            throw ModelError("training sequence exceeds context length");
        }
        if (!seq.loss_mask.empty() &&
            seq.loss_mask.size() != seq.ids.size()) {
            throw ModelError("loss_mask length differs from sequence length");
        }
        if (seq.supervised_positions() == 0) {
            throw ModelError("sequence has no supervised positions");
        }
    }
}

}  // namespace detail

// Core loop: epoch_corpus(epoch) supplies that epoch's sequences, so a
// caller can re-render its corpus every epoch (data augmentation) or switch
// corpora mid-run (curriculum stages) while optimizer state carries over.
template <class CorpusFn>
TrainResult train_with(const ModelConfig& cfg, CorpusFn&& epoch_corpus,
                       const TrainConfig& tc) {
    cfg.validate();
    tc.validate();

    TrainResult result;
    result.params = init_params<float>(cfg, tc.seed, tc.init_std);
    Parameters<float>& params = result.params;
    Parameters<float> grads = Parameters<float>::zeros(cfg);
    Parameters<float> m = Parameters<float>::zeros(cfg);
    Parameters<float> v = Parameters<float>::zeros(cfg);
    auto pt = params.tensors();
    auto gt = grads.tensors();
    auto mt = m.tensors();
    auto vt = v.tensors();

    std::mt19937_64 shuffle_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order;

    std::vector<float> dlogits;
    std::size_t step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const std::vector<TrainSequence> corpus = epoch_corpus(epoch);
        detail::validate_corpus(cfg, corpus);
        order.resize(corpus.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t token_sum = 0;
        const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
        for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
            const std::size_t b1 = std::min(b0 + bs, order.size());
            for (auto* g : gt) std::fill(g->begin(), g->end(), 0.0f);
            for (std::size_t oi = b0; oi < b1; ++oi) {
                const TrainSequence& seq = corpus[order[oi]];
                ForwardCache<float> cache = forward(params, seq.ids);
                std::size_t preds = 0;
                const double loss = detail::sequence_loss_grad(
                    params, cache, seq, dlogits, preds);
                if (!std::isfinite(loss)) {
                    throw ModelError("NaN/inf loss at epoch " +
                                     std::to_string(epoch) + ", step " +
                                     std::to_string(step) + ", sequence " +
                                     std::to_string(order[oi]));
                }
                loss_sum += loss * static_cast<double>(preds);
                token_sum += preds;
                backward(params, cache, dlogits, &grads,
                         static_cast<std::vector<float>*>(nullptr));
            }
            const float inv_b = 1.0f / static_cast<float>(b1 - b0);
            for (auto* g : gt) {
                for (float& x : *g) x *= inv_b;
            }

            if (tc.grad_clip > 0.0) {
                double sq = 0.0;
                for (auto* g : gt) {
                    for (float x : *g) sq += static_cast<double>(x) * x;
                }
                const double norm = std::sqrt(sq);
                if (norm > tc.grad_clip) {
                    const float s = static_cast<float>(tc.grad_clip / norm);
                    for (auto* g : gt) {
                        for (float& x : *g) x *= s;
                    }
                }
            }

            ++step;
            const double bc1 = 1.0 - std::pow(tc.beta1, step);
            const double bc2 = 1.0 - std::pow(tc.beta2, step);
            for (std::size_t ti = 0; ti < pt.size(); ++ti) {
                std::vector<float>& pv = *pt[ti];
                std::vector<float>& gv = *gt[ti];
                std::vector<float>& mv = *mt[ti];
                std::vector<float>& vv = *vt[ti];
                for (std::size_t i = 0; i < pv.size(); ++i) {
                    const double g = gv[i];
                    const double mn = tc.beta1 * mv[i] + (1.0 - tc.beta1) * g;
                    const double vn =
                        tc.beta2 * vv[i] + (1.0 - tc.beta2) * g * g;
                    mv[i] = static_cast<float>(mn);
                    vv[i] = static_cast<float>(vn);
                    pv[i] -= static_cast<float>(
                        tc.lr * (mn / bc1) /
                        (std::sqrt(vn / bc2) + tc.adam_eps));
                }
            }
        }
        result.epoch_loss.push_back(loss_sum /
                                    static_cast<double>(token_sum));
    }
    return result;
}

inline TrainResult train(const ModelConfig& cfg,
                         const std::vector<TrainSequence>& corpus,
                         const TrainConfig& tc) {
    return train_with(cfg, [&](int) { return corpus; }, tc);
}

inline TrainResult train(const ModelConfig& cfg,
                         const std::vector<std::vector<int>>& corpus,
                         const TrainConfig& tc) {
    std::vector<TrainSequence> seqs;
    seqs.reserve(corpus.size());
    for (const auto& ids : corpus) seqs.push_back({ids, 0});
    return train(cfg, seqs, tc);
}

}  // namespace mirage
