#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxseg/grid.hpp"
#include "voxseg/tensor.hpp"

// Segmentation losses over per-voxel class probabilities.
//
// All functions take probabilities P of shape (C, X, Y, Z) — typically the
// output of softmax_classes — and an integer label grid of matching spatial
// dims. Gradients are with respect to P; chain through softmax_classes_backward
// to reach logits. Losses that involve log(P) clamp probabilities to
// [kProbEps, 1 - kProbEps] first.

namespace voxseg {

inline constexpr double kProbEps = 1e-7;

template <typename T>
struct LossValue {
    T total = T(0);
    // Per-term values when the combined loss is used; meaningless otherwise.
    T attention = T(0);
    T dice = T(0);
    bool has_terms = false;
};

namespace detail {

template <typename T>
void check_probs_target(const Tensor<T>& probs, const Grid3<std::uint8_t>& target,
                        const std::string& what) {
    if (probs.rank() != 4)
        throw ShapeError(what + ": probabilities must have shape (C, X, Y, Z), got " +
                         probs.shape_string());
    if (probs.dim(1) != static_cast<std::size_t>(target.nx()) ||
        probs.dim(2) != static_cast<std::size_t>(target.ny()) ||
        probs.dim(3) != static_cast<std::size_t>(target.nz()))
        throw ShapeError(what + ": probability spatial dims " + probs.shape_string() +
                         " do not match target dims " + target.dims_string());
    for (std::size_t i = 0; i < target.size(); ++i)
        if (target[i] >= probs.dim(0))
            throw ValidationError(what + ": target label " + std::to_string(int(target[i])) +
                                  " out of range for " + std::to_string(probs.dim(0)) +
                                  " classes");
}

template <typename T>
void check_weights(const Tensor<T>& weights, const Tensor<T>& probs, const std::string& what) {
    require_same_shape(weights, probs, (what + ": weight maps").c_str());
    for (std::size_t i = 0; i < weights.numel(); ++i) {
        if (!std::isfinite(static_cast<double>(weights[i])))
            throw ValidationError(what + ": weight map contains non-finite value");
        if (weights[i] < T(0))
            throw ValidationError(what + ": weight map contains negative value");
    }
}

template <typename T>
T clamp_prob(T p) {
    const T lo = static_cast<T>(kProbEps);
    const T hi = T(1) - lo;
    return p < lo ? lo : (p > hi ? hi : p);
}

}  // namespace detail

// Softmax across the class axis of a (C, X, Y, Z) logits tensor.
template <typename T>
Tensor<T> softmax_classes(const Tensor<T>& logits) {
    if (logits.rank() != 4)
        throw ShapeError("softmax_classes: expected (C, X, Y, Z), got " + logits.shape_string());
    const std::size_t c_n = logits.dim(0);
    const std::size_t sp = logits.numel() / c_n;
    Tensor<T> probs(logits.shape());
    for (std::size_t i = 0; i < sp; ++i) {
        T m = logits[i];
        for (std::size_t c = 1; c < c_n; ++c) m = std::max(m, logits[c * sp + i]);
        T denom = T(0);
        for (std::size_t c = 0; c < c_n; ++c) {
            const T e = std::exp(logits[c * sp + i] - m);
            probs[c * sp + i] = e;
            denom += e;
        }
        for (std::size_t c = 0; c < c_n; ++c) probs[c * sp + i] /= denom;
    }
    return probs;
}

// Jacobian-vector product of softmax: given dL/dP returns dL/dz where
// dz_c = P_c * (g_c - sum_k g_k P_k).
template <typename T>
Tensor<T> softmax_classes_backward(const Tensor<T>& probs, const Tensor<T>& dprobs) {
    require_same_shape(probs, dprobs, "softmax_classes_backward");
    const std::size_t c_n = probs.dim(0);
    const std::size_t sp = probs.numel() / c_n;
    Tensor<T> dlogits(probs.shape());
    for (std::size_t i = 0; i < sp; ++i) {
        T dot = T(0);
        for (std::size_t c = 0; c < c_n; ++c) dot += dprobs[c * sp + i] * probs[c * sp + i];
        for (std::size_t c = 0; c < c_n; ++c)
            dlogits[c * sp + i] = probs[c * sp + i] * (dprobs[c * sp + i] - dot);
    }
    return dlogits;
}

// Mean voxel-wise cross-entropy: -mean_i log P_{true(i), i}.
template <typename T>
T cross_entropy_loss(const Tensor<T>& probs, const Grid3<std::uint8_t>& target) {
    detail::check_probs_target(probs, target, "cross_entropy_loss");
    const std::size_t sp = target.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < sp; ++i)
        acc -= std::log(static_cast<double>(detail::clamp_prob(probs[target[i] * sp + i])));
    return static_cast<T>(acc / static_cast<double>(sp));
}

template <typename T>
void cross_entropy_grad(const Tensor<T>& probs, const Grid3<std::uint8_t>& target,
                        Tensor<T>& dprobs) {
    detail::check_probs_target(probs, target, "cross_entropy_grad");
    require_same_shape(dprobs, probs, "cross_entropy_grad: dprobs");
    const std::size_t sp = target.size();
    const T inv_n = T(1) / static_cast<T>(sp);
    dprobs.zero();
    for (std::size_t i = 0; i < sp; ++i) {
        const std::size_t k = target[i] * sp + i;
        dprobs[k] = -inv_n / detail::clamp_prob(probs[k]);
    }
}

struct FocalParams {
    double gamma = 2.0;
    std::vector<double> alpha;  // per-class weights; empty means all 1

    void validate(std::size_t num_classes, const std::string& what) const {
        if (!(gamma >= 0.0) || !std::isfinite(gamma))
            throw ValidationError(what + ": gamma must be finite and >= 0");
        if (alpha.empty()) return;
        if (alpha.size() != num_classes)
            throw ValidationError(what + ": alpha has " + std::to_string(alpha.size()) +
                                  " entries for " + std::to_string(num_classes) + " classes");
        for (double a : alpha)
            if (!(a > 0.0)) throw ValidationError(what + ": alpha entries must be positive");
    }

    double class_weight(std::uint8_t c) const { return alpha.empty() ? 1.0 : alpha[c]; }
};

// Focal loss: -mean_i alpha_{T_i} (1 - P_true)^gamma * log(P_true).
// gamma = 0 with unit alpha reduces to cross-entropy.
template <typename T>
T focal_loss(const Tensor<T>& probs, const Grid3<std::uint8_t>& target,
             const FocalParams& fp = {}) {
    detail::check_probs_target(probs, target, "focal_loss");
    fp.validate(probs.dim(0), "focal_loss");
    const std::size_t sp = target.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < sp; ++i) {
        const double p = detail::clamp_prob(probs[target[i] * sp + i]);
        acc -= fp.class_weight(target[i]) * std::pow(1.0 - p, fp.gamma) * std::log(p);
    }
    return static_cast<T>(acc / static_cast<double>(sp));
}

template <typename T>
void focal_grad(const Tensor<T>& probs, const Grid3<std::uint8_t>& target, Tensor<T>& dprobs,
                const FocalParams& fp = {}) {
    detail::check_probs_target(probs, target, "focal_grad");
    require_same_shape(dprobs, probs, "focal_grad: dprobs");
    fp.validate(probs.dim(0), "focal_grad");
    const std::size_t sp = target.size();
    const double inv_n = 1.0 / static_cast<double>(sp);
    dprobs.zero();
    for (std::size_t i = 0; i < sp; ++i) {
        const std::size_t k = target[i] * sp + i;
        const double p = detail::clamp_prob(probs[k]);
        const double q = 1.0 - p;
        // d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p
        double g = -std::pow(q, fp.gamma) / p;
        if (fp.gamma > 0.0) g += fp.gamma * std::pow(q, fp.gamma - 1.0) * std::log(p);
        dprobs[k] = static_cast<T>(fp.class_weight(target[i]) * g * inv_n);
    }
}

// Soft-Dice loss averaged over foreground classes (background excluded):
//   L = 1 - (1/M) sum_c (2 sum_i P_ci T_ci + eps) / (sum_i P_ci + sum_i T_ci + eps)
// where M counts foreground classes with any ground-truth voxels or any
// predicted mass; a class absent from both is skipped rather than scored.
template <typename T>
T dice_loss(const Tensor<T>& probs, const Grid3<std::uint8_t>& target, double eps = 1e-5) {
    detail::check_probs_target(probs, target, "dice_loss");
    const std::size_t c_n = probs.dim(0);
    const std::size_t sp = target.size();
    double acc = 0.0;
    int counted = 0;
    for (std::size_t c = 1; c < c_n; ++c) {
        double inter = 0.0, p_sum = 0.0, t_sum = 0.0;
        for (std::size_t i = 0; i < sp; ++i) {
            const double p = probs[c * sp + i];
            p_sum += p;
            if (target[i] == c) {
                inter += p;
                t_sum += 1.0;
            }
        }
        if (t_sum == 0.0 && p_sum == 0.0) continue;
        acc += (2.0 * inter + eps) / (p_sum + t_sum + eps);
        ++counted;
    }
    if (counted == 0) return T(0);
    return static_cast<T>(1.0 - acc / static_cast<double>(counted));
}

template <typename T>
void dice_grad(const Tensor<T>& probs, const Grid3<std::uint8_t>& target, Tensor<T>& dprobs,
               double eps = 1e-5) {
    detail::check_probs_target(probs, target, "dice_grad");
    require_same_shape(dprobs, probs, "dice_grad: dprobs");
    const std::size_t c_n = probs.dim(0);
    const std::size_t sp = target.size();
    dprobs.zero();

    std::vector<double> num(c_n, 0.0), den(c_n, 0.0);
    std::vector<bool> count(c_n, false);
    int counted = 0;
    for (std::size_t c = 1; c < c_n; ++c) {
        double inter = 0.0, p_sum = 0.0, t_sum = 0.0;
        for (std::size_t i = 0; i < sp; ++i) {
            const double p = probs[c * sp + i];
            p_sum += p;
            if (target[i] == c) {
                inter += p;
                t_sum += 1.0;
            }
        }
        if (t_sum == 0.0 && p_sum == 0.0) continue;
        num[c] = 2.0 * inter + eps;
        den[c] = p_sum + t_sum + eps;
        count[c] = true;
        ++counted;
    }
    if (counted == 0) return;
    const double inv_m = 1.0 / static_cast<double>(counted);
    for (std::size_t c = 1; c < c_n; ++c) {
        if (!count[c]) continue;
        // d/dP_ci of -(num/den)/M: the numerator moves only when T_i == c.
        for (std::size_t i = 0; i < sp; ++i) {
            const double t = target[i] == c ? 1.0 : 0.0;
            dprobs[c * sp + i] =
                static_cast<T>(-inv_m * (2.0 * t * den[c] - num[c]) / (den[c] * den[c]));
        }
    }
}

// Surface-weighted attention loss. Per voxel i and class c:
//   W_ci * (1 - P_ci)^2   when the voxel belongs to class c,
//   W_ci * P_ci^2         otherwise,
// reduced as the mean over voxels and the sum over classes. Weights near a
// class boundary approach 1 and decay as 1/(d+1) with distance d from it, so
// mistakes close to a surface dominate the objective.
template <typename T>
T attention_loss(const Tensor<T>& probs, const Grid3<std::uint8_t>& target,
                 const Tensor<T>& weights) {
    detail::check_probs_target(probs, target, "attention_loss");
    detail::check_weights(weights, probs, "attention_loss");
    const std::size_t c_n = probs.dim(0);
    const std::size_t sp = target.size();
    double acc = 0.0;
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t i = 0; i < sp; ++i) {
            const double p = probs[c * sp + i];
            const double e = target[i] == c ? 1.0 - p : p;
            acc += static_cast<double>(weights[c * sp + i]) * e * e;
        }
    return static_cast<T>(acc / static_cast<double>(sp));
}

template <typename T>
void attention_grad(const Tensor<T>& probs, const Grid3<std::uint8_t>& target,
                    const Tensor<T>& weights, Tensor<T>& dprobs) {
    detail::check_probs_target(probs, target, "attention_grad");
    detail::check_weights(weights, probs, "attention_grad");
    require_same_shape(dprobs, probs, "attention_grad: dprobs");
    const std::size_t c_n = probs.dim(0);
    const std::size_t sp = target.size();
    const double inv_n = 1.0 / static_cast<double>(sp);
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t i = 0; i < sp; ++i) {
            const std::size_t k = c * sp + i;
            const double p = probs[k];
            const double w = weights[k];
            const double g = target[i] == c ? -2.0 * w * (1.0 - p) : 2.0 * w * p;
            dprobs[k] = static_cast<T>(g * inv_n);
        }
}

// Training objective: attention term plus lambda_dice * soft-Dice.
template <typename T>
LossValue<T> combined_loss(const Tensor<T>& probs, const Grid3<std::uint8_t>& target,
                           const Tensor<T>& weights, double lambda_dice = 1.0) {
    LossValue<T> lv;
    lv.attention = attention_loss(probs, target, weights);
    lv.dice = dice_loss(probs, target);
    lv.total = lv.attention + static_cast<T>(lambda_dice) * lv.dice;
    lv.has_terms = true;
    return lv;
}

template <typename T>
void combined_grad(const Tensor<T>& probs, const Grid3<std::uint8_t>& target,
                   const Tensor<T>& weights, Tensor<T>& dprobs, double lambda_dice = 1.0) {
    attention_grad(probs, target, weights, dprobs);
    Tensor<T> d_dice(probs.shape());
    dice_grad(probs, target, d_dice);
    const T lam = static_cast<T>(lambda_dice);
    for (std::size_t i = 0; i < dprobs.numel(); ++i) dprobs[i] += lam * d_dice[i];
}

}  // namespace voxseg
