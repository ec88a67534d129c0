#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lanecascade/errors.hpp"
#include "lanecascade/geometry.hpp"
#include "lanecascade/nn/tensor.hpp"
#include "lanecascade/rng.hpp"

namespace lanecascade {

// ---------------------------------------------------------------------------
// Binary warm-up phase: background vs any-boundary cross entropy.
// ---------------------------------------------------------------------------

inline InstanceMap to_binary_mask(const InstanceMap& map) {
    InstanceMap mask = map;
    for (auto& v : mask.data) v = v > 0 ? 1 : 0;
    return mask;
}

namespace detail {

inline void check_logits_vs_maps(const nn::Tensor& logits, const std::vector<const InstanceMap*>& maps,
                                 int expected_channels) {
    if (logits.shape.size() != 4 || logits.dim(1) != expected_channels)
        throw InvalidArgumentError("loss: expected (N," + std::to_string(expected_channels) + ",H,W) logits, got " +
                                   logits.shape_str());
    if (static_cast<int>(maps.size()) != logits.dim(0))
        throw InvalidArgumentError("loss: batch size mismatch between logits and ground truth");
    for (const auto* m : maps)
        if (m->height != logits.dim(2) || m->width != logits.dim(3))
            throw InvalidArgumentError("loss: spatial size mismatch between logits and ground truth");
}

// Log-softmax of one pixel's channel column, in double precision.
inline void pixel_log_softmax(const nn::Tensor& logits, int n, int h, int w, double* lp, int C) {
    double mx = logits.at(n, 0, h, w);
    for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.at(n, c, h, w)));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += std::exp(logits.at(n, c, h, w) - mx);
    const double lse = mx + std::log(sum);
    for (int c = 0; c < C; ++c) lp[c] = logits.at(n, c, h, w) - lse;
}

}  // namespace detail

// Mean two-way cross entropy between the binary head and the collapsed mask.
// Pass a non-null gradient tensor to also get d(loss)/d(logits).
inline double binary_phase_loss_grad(const nn::Tensor& logits, const std::vector<const InstanceMap*>& maps,
                                     nn::Tensor* dlogits) {
    detail::check_logits_vs_maps(logits, maps, 2);
    const int N = logits.dim(0), H = logits.dim(2), W = logits.dim(3);
    if (dlogits) *dlogits = nn::Tensor(logits.shape);
    const double inv_count = 1.0 / (static_cast<double>(N) * H * W);
    double loss = 0.0;
    double lp[2];
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                detail::pixel_log_softmax(logits, n, h, w, lp, 2);
                const int y = maps[static_cast<std::size_t>(n)]->data[static_cast<std::size_t>(h) * W + w] > 0;
                loss -= lp[y];
                if (dlogits)
                    for (int c = 0; c < 2; ++c)
                        dlogits->at(n, c, h, w) =
                            static_cast<float>((std::exp(lp[c]) - (c == y ? 1.0 : 0.0)) * inv_count);
            }
    return loss * inv_count;
}

inline double binary_phase_loss(const nn::Tensor& logits, const InstanceMap& gt_map) {
    const InstanceMap* ptr = &gt_map;
    return binary_phase_loss_grad(logits, {ptr}, nullptr);
}

// ---------------------------------------------------------------------------
/// Instance phase: pairwise KL clustering of per-pixel channel distributions.
// ---------------------------------------------------------------------------

struct InstanceLossConfig {
    double margin = 2.0;
    int pair_budget = 4096;
    bool symmetric = true;

    void validate() const {
        if (margin <= 0.0) throw InvalidArgumentError("instance loss margin must be positive");
        if (pair_budget < 1) throw InvalidArgumentError("pair_budget must be >= 1");
    }
};

struct PixelPair {
    int a = 0;  // flat row-major pixel index
    int b = 0;
    bool same = false;
};

/// Stratified pair sampling: alternating same-instance / cross-instance picks.
// Depends only on (map, budget, seed) — never on the predictions — so the loss
// inherits exact channel-permutation invariance.
inline std::vector<PixelPair> sample_pairs(const InstanceMap& map, int budget, std::uint64_t seed) {
    if (budget < 1) throw InvalidArgumentError("sample_pairs: budget must be >= 1");
    std::vector<std::vector<int>> by_id(kMaxInstances + 1);
    const int total = map.width * map.height;
    for (int i = 0; i < total; ++i) {
        const int id = map.data[static_cast<std::size_t>(i)];
        if (id > kMaxInstances)
            throw InstanceBudgetError("instance map value " + std::to_string(id) + " exceeds the limit of " +
                                      std::to_string(kMaxInstances));
        by_id[static_cast<std::size_t>(id)].push_back(i);
    }
    std::vector<int> present, pairable;
    for (int id = 0; id <= kMaxInstances; ++id) {
        if (!by_id[static_cast<std::size_t>(id)].empty()) present.push_back(id);
        if (by_id[static_cast<std::size_t>(id)].size() >= 2) pairable.push_back(id);
    }
    if (total < 2) throw InvalidArgumentError("sample_pairs: map must contain at least 2 pixels");

    Rng rng(seed);
    std::vector<PixelPair> pairs;
    pairs.reserve(static_cast<std::size_t>(budget));
    for (int k = 0; k < budget; ++k) {
        bool want_same = (k % 2 == 0);
        if (want_same && pairable.empty()) want_same = false;
        if (!want_same && present.size() < 2) want_same = true;
        PixelPair pair;
        pair.same = want_same;
        if (want_same) {
            const auto& px = by_id[static_cast<std::size_t>(
                pairable[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pairable.size()) - 1))])];
            const int i = rng.uniform_int(0, static_cast<int>(px.size()) - 1);
            int j = rng.uniform_int(0, static_cast<int>(px.size()) - 2);
            if (j >= i) ++j;
            pair.a = px[static_cast<std::size_t>(i)];
            pair.b = px[static_cast<std::size_t>(j)];
        } else {
            const int ia = rng.uniform_int(0, static_cast<int>(present.size()) - 1);
            int ib = rng.uniform_int(0, static_cast<int>(present.size()) - 2);
            if (ib >= ia) ++ib;
            const auto& pa = by_id[static_cast<std::size_t>(present[static_cast<std::size_t>(ia)])];
            const auto& pb = by_id[static_cast<std::size_t>(present[static_cast<std::size_t>(ib)])];
            pair.a = pa[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pa.size()) - 1))];
            pair.b = pb[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pb.size()) - 1))];
        }
        pairs.push_back(pair);
    }
    return pairs;
}

// KL(P||Q) for explicit probability vectors; exact for one-hot P, and Q is
// floored so a zero-probability mismatch stays finite.
inline double kl_divergence(const double* p, const double* q, int channels) {
    double kl = 0.0;
    for (int c = 0; c < channels; ++c)
        if (p[c] > 0.0) kl += p[c] * (std::log(p[c]) - std::log(std::max(q[c], 1e-12)));
    return std::max(kl, 0.0);
}

// Mean pair cost over sampled pairs: same-instance pairs pay KL, cross-instance
// pairs pay a hinge pushing KL above the margin.
inline double instance_pair_loss(const nn::Tensor& probabilities, const InstanceMap& instance_map,
                                 const InstanceLossConfig& config, std::uint64_t sampling_seed) {
    config.validate();
    if (probabilities.shape.size() != 4 || probabilities.dim(0) != 1)
        throw InvalidArgumentError("instance_pair_loss: expected (1,C,H,W) probabilities, got " +
                                   probabilities.shape_str());
    const int C = probabilities.dim(1), H = probabilities.dim(2), W = probabilities.dim(3);
    if (instance_map.width != W || instance_map.height != H)
        throw InvalidArgumentError("instance_pair_loss: map size mismatch");
    // Same pair stream as the gradient path uses for image 0 of a batch.
    const auto pairs = sample_pairs(instance_map, config.pair_budget, derive_seed(sampling_seed, "pairs", 0));
    std::vector<double> p(static_cast<std::size_t>(C)), q(static_cast<std::size_t>(C));
    double total = 0.0;
    for (const auto& pair : pairs) {
        for (int c = 0; c < C; ++c) {
            p[static_cast<std::size_t>(c)] = probabilities.at(0, c, pair.a / W, pair.a % W);
            q[static_cast<std::size_t>(c)] = probabilities.at(0, c, pair.b / W, pair.b % W);
        }
        const double kl_pq = kl_divergence(p.data(), q.data(), C);
        if (pair.same) {
            total += kl_pq;
            if (config.symmetric) total += kl_divergence(q.data(), p.data(), C);
        } else {
            total += std::max(0.0, config.margin - kl_pq);
            if (config.symmetric) total += std::max(0.0, config.margin - kl_divergence(q.data(), p.data(), C));
        }
    }
    return total / static_cast<double>(pairs.size());
}

// Same loss from logits, with the analytic gradient. Internally double; the
// per-pixel distributions come from a log-softmax so one-hot saturation never
// produces non-finite terms.
inline double instance_pair_loss_grad(const nn::Tensor& logits, const std::vector<const InstanceMap*>& maps,
                                      const InstanceLossConfig& config, std::uint64_t sampling_seed,
                                      nn::Tensor* dlogits) {
    config.validate();
    const int C = logits.dim(1);
    detail::check_logits_vs_maps(logits, maps, C);
    const int N = logits.dim(0), H = logits.dim(2), W = logits.dim(3);
    if (dlogits) *dlogits = nn::Tensor(logits.shape);

    std::vector<double> lp(static_cast<std::size_t>(C)), lq(static_cast<std::size_t>(C));
    std::vector<double> P(static_cast<std::size_t>(C)), Q(static_cast<std::size_t>(C));
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const auto pairs =
            sample_pairs(*maps[static_cast<std::size_t>(n)], config.pair_budget, derive_seed(sampling_seed, "pairs", n));
        const double w_pair = 1.0 / (static_cast<double>(N) * pairs.size());
        for (const auto& pair : pairs) {
            const int ha = pair.a / W, wa = pair.a % W, hb = pair.b / W, wb = pair.b % W;
            detail::pixel_log_softmax(logits, n, ha, wa, lp.data(), C);
            detail::pixel_log_softmax(logits, n, hb, wb, lq.data(), C);
            for (int c = 0; c < C; ++c) {
                P[static_cast<std::size_t>(c)] = std::exp(lp[static_cast<std::size_t>(c)]);
                Q[static_cast<std::size_t>(c)] = std::exp(lq[static_cast<std::size_t>(c)]);
            }
            // One direction at a time: (f, s) = (P at pixel u, Q at pixel v).
            auto accumulate = [&](const double* f, const double* lf, int hu, int wu, const double* s,
                                  const double* ls, int hv, int wv) {
                double kl = 0.0;
                for (int c = 0; c < C; ++c) kl += f[c] * (lf[c] - ls[c]);
                kl = std::max(kl, 0.0);
                // sign: +1 pulls the pair together, -1 pushes apart while the
                // hinge is active.
                double sign;
                if (pair.same) {
                    total += kl * w_pair;
                    sign = 1.0;
                } else {
                    const double hinge = config.margin - kl;
                    if (hinge <= 0.0) return;
                    total += hinge * w_pair;
                    sign = -1.0;
                }
                if (!dlogits) return;
                for (int c = 0; c < C; ++c) {
                    dlogits->at(n, c, hu, wu) +=
                        static_cast<float>(sign * w_pair * f[c] * ((lf[c] - ls[c]) - kl));
                    dlogits->at(n, c, hv, wv) += static_cast<float>(sign * w_pair * (s[c] - f[c]));
                }
            };
            accumulate(P.data(), lp.data(), ha, wa, Q.data(), lq.data(), hb, wb);
            if (config.symmetric) accumulate(Q.data(), lq.data(), hb, wb, P.data(), lp.data(), ha, wa);
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Curriculum controller.
// ---------------------------------------------------------------------------

enum class TrainPhase { binary, instance };

struct CurriculumState {
    TrainPhase phase = TrainPhase::binary;
    int epoch = 0;
    int switch_epoch = 50;
};

inline CurriculumState curriculum_step(const CurriculumState& state, int epoch) {
    if (epoch < 0) throw InvalidArgumentError("curriculum_step: epoch must be >= 0");
    CurriculumState next = state;
    next.epoch = epoch;
    next.phase = epoch < state.switch_epoch ? TrainPhase::binary : TrainPhase::instance;
    return next;
}

/// True exactly once per training run: the step where the head must be rebuilt
// from 2 to kMaxInstances+1 channels.
inline bool curriculum_transition(const CurriculumState& prev, const CurriculumState& next) {
    return prev.phase == TrainPhase::binary && next.phase == TrainPhase::instance;
}

}  // namespace lanecascade
