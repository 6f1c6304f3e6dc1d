#pragma once

// Hybrid segmentation loss.
//
//   L_pixel  = -1/N sum_i [ w1 y_i log s(x_i) + w0 (1 - y_i) log(1 - s(x_i)) ]
//   L_lesion = 1 - (2 |P . Y| + eps) / (|P| + |Y| + eps)        (soft Dice)
//   L_total  = lambda1 L_pixel + lambda2 L_lesion(s(x))
//
// L_pixel is evaluated from logits with softplus for stability.

#include <cmath>
#include <string>

#include "gtd/numerics/tape.hpp"
#include "gtd/segnet/config.hpp"

namespace gtd::segnet {

using num::Tensor;

namespace detail {

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline void check_binary_targets(const Tensor& logits, const Tensor& targets, const char* op) {
    Tensor::require_same(logits, targets, op);
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (targets[i] != 0.0 && targets[i] != 1.0)
            throw ContractError(std::string(op) + ": target " + std::to_string(targets[i]) + " at index " +
                                std::to_string(i) + " is not in {0, 1}");
}

} // namespace detail

inline double loss_pixel(const Tensor& logits, const Tensor& targets, double w0, double w1) {
    detail::check_binary_targets(logits, targets, "loss_pixel");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double x = logits[i], y = targets[i];
        s += w1 * y * detail::softplus(-x) + w0 * (1.0 - y) * detail::softplus(x);
    }
    return s / static_cast<double>(logits.size());
}

inline Tensor loss_pixel_grad(const Tensor& logits, const Tensor& targets, double w0, double w1) {
    Tensor g(logits.dims());
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double s = num::ops::sigmoid(logits[i]), y = targets[i];
        g[i] = inv_n * (w1 * y * (s - 1.0) + w0 * (1.0 - y) * s);
    }
    return g;
}

/// Soft Dice on probabilities. Both-empty inputs give 0 through eps.
inline double loss_lesion(const Tensor& probs, const Tensor& targets, double eps) {
    Tensor::require_same(probs, targets, "loss_lesion");
    if (eps < 0.0) throw ContractError("loss_lesion: eps must be >= 0");
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        inter += probs[i] * targets[i];
        sp += probs[i];
        sy += targets[i];
    }
    const double den = sp + sy + eps;
    if (den == 0.0) return 0.0;
    return 1.0 - (2.0 * inter + eps) / den;
}

inline Tensor loss_lesion_grad(const Tensor& probs, const Tensor& targets, double eps) {
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        inter += probs[i] * targets[i];
        sp += probs[i];
        sy += targets[i];
    }
    const double den = sp + sy + eps;
    Tensor g(probs.dims());
    if (den == 0.0) return g;
    const double num = 2.0 * inter + eps;
    for (std::size_t i = 0; i < probs.size(); ++i) g[i] = -(2.0 * targets[i] * den - num) / (den * den);
    return g;
}

struct LossParts {
    double pixel = 0.0;
    double lesion = 0.0;
    double total = 0.0;
};

inline LossParts loss_total_parts(const Tensor& logits, const Tensor& targets, const LossConfig& cfg) {
    cfg.validate();
    LossParts p;
    p.pixel = loss_pixel(logits, targets, cfg.w0, cfg.w1);
    p.lesion = loss_lesion(num::ops::sigmoid(logits), targets, cfg.epsilon);
    p.total = cfg.lambda1 * p.pixel + cfg.lambda2 * p.lesion;
    return p;
}

inline double loss_total(const Tensor& logits, const Tensor& targets, const LossConfig& cfg) {
    return loss_total_parts(logits, targets, cfg).total;
}

// Tape versions.

inline num::Var tape_loss_pixel(num::GradTape& tape, num::Var logits, const Tensor& targets, double w0, double w1) {
    const double v = loss_pixel(tape.value(logits), targets, w0, w1);
    return tape.custom("loss_pixel", {logits}, Tensor::scalar(v),
                       [targets, w0, w1](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                           auto grad = loss_pixel_grad(*in[0], targets, w0, w1);
                           for (auto& x : grad.data()) x *= g[0];
                           return std::vector<Tensor>{std::move(grad)};
                       });
}

inline num::Var tape_loss_lesion(num::GradTape& tape, num::Var probs, const Tensor& targets, double eps) {
    const double v = loss_lesion(tape.value(probs), targets, eps);
    return tape.custom("loss_lesion", {probs}, Tensor::scalar(v),
                       [targets, eps](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                           auto grad = loss_lesion_grad(*in[0], targets, eps);
                           for (auto& x : grad.data()) x *= g[0];
                           return std::vector<Tensor>{std::move(grad)};
                       });
}

struct TapeLoss {
    num::Var total;
    LossParts parts;
};

inline TapeLoss tape_loss_total(num::GradTape& tape, num::Var logits, const Tensor& targets, const LossConfig& cfg) {
    cfg.validate();
    detail::check_binary_targets(tape.value(logits), targets, "loss_total");
    auto lp = tape_loss_pixel(tape, logits, targets, cfg.w0, cfg.w1);
    auto ll = tape_loss_lesion(tape, tape.sigmoid(logits), targets, cfg.epsilon);
    TapeLoss out;
    out.parts.pixel = tape.value(lp)[0];
    out.parts.lesion = tape.value(ll)[0];
    out.total = tape.add(tape.scale(lp, cfg.lambda1), tape.scale(ll, cfg.lambda2));
    out.parts.total = tape.value(out.total)[0];
    return out;
}

} // namespace gtd::segnet
