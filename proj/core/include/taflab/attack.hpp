#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "taflab/cam.hpp"
#include "taflab/nn.hpp"
#include "taflab/rng.hpp"
#include "taflab/tensor.hpp"

// Temporal adversarial augmentation: iterative sign-gradient ascent on the
// CAM loss over the N lowest-mass frames, projected into an l-inf ball around
// the original clip and clipped to the [0,1] pixel range. Every frame is
// perturbed; N only selects which frames enter the loss. A cross-entropy
// variant drives the same machinery for ablations. The model is used on the
// clean normalization path in eval mode throughout, so no running statistics
// move and no parameters change.

namespace taflab {

enum class LabelPolicy {
    random_if_correct,  // correct prediction: uniform over other classes; else the true label
    always_true,
    always_random,  // uniform over the other classes regardless of the prediction
};

enum class InclusionPolicy { all, correct_only, incorrect_only };

enum class LossKind { cam, cross_entropy };

struct AttackConfig {
    float epsilon = 64.0f / 255.0f;  // per-pixel budget in [0,1] units
    float beta = 32.0f / 255.0f;     // step size, same units
    std::size_t steps = 1;           // sign-gradient iterations
    std::size_t frames_n = 8;        // frames entering the CAM loss
    LabelPolicy label_policy = LabelPolicy::random_if_correct;
    InclusionPolicy inclusion = InclusionPolicy::incorrect_only;
    LossKind loss = LossKind::cam;

    // epsilon = 0 is the degenerate identity attack and exempt from the step
    // size constraint.
    void validate(std::size_t frames) const {
        if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
        if (epsilon > 0 && (beta <= 0 || beta > epsilon))
            throw ConfigError("attack: need 0 < beta <= epsilon");
        if (steps < 1) throw ConfigError("attack: need at least one step");
        if (frames_n < 1 || frames_n > frames)
            throw ConfigError("attack: frames_n=" + std::to_string(frames_n) + " outside [1," +
                              std::to_string(frames) + "]");
    }
};

template <class S>
struct AugmentedBatchT {
    TensorT<S> clips;             // [B*T,C,H,W], perturbed
    std::vector<S> deltas;        // clips - originals, flat
    std::vector<int> targets;     // per-clip label driving the loss
    std::vector<char> included;   // which originals were attacked
    bool degenerate_seen = false;  // some iteration hit a flat CAM stack
};

inline int assign_target(int pred, int true_label, LabelPolicy policy, std::size_t classes,
                         Rng& rng) {
    auto random_other = [&] {
        int t = rng.uniform_int(0, static_cast<int>(classes) - 2);
        return t >= true_label ? t + 1 : t;
    };
    switch (policy) {
        case LabelPolicy::always_true: return true_label;
        case LabelPolicy::always_random: return random_other();
        case LabelPolicy::random_if_correct: return pred == true_label ? random_other() : true_label;
    }
    return true_label;
}

namespace detail {

// Sign-PGD over the clips selected by `attack_ids`, sharing one forward pass
// per iteration. Returns the perturbed values for those clips only.
template <class S>
std::pair<std::vector<S>, bool> pgd_on_subset(VideoModelT<S>& model, const std::vector<S>& all,
                                              const Shape& clip_shape,
                                              const std::vector<std::size_t>& attack_ids,
                                              const std::vector<int>& targets,
                                              const AttackConfig& cfg) {
    const std::size_t per_clip = shape_numel(clip_shape) / 1;
    const std::size_t M = attack_ids.size();
    const std::size_t T = model.cfg.frames;
    const std::size_t clip_elems = per_clip;

    std::vector<S> orig(M * clip_elems);
    for (std::size_t j = 0; j < M; ++j)
        std::copy_n(all.data() + attack_ids[j] * clip_elems, clip_elems,
                    orig.data() + j * clip_elems);
    std::vector<S> cur = orig;
    bool degenerate_seen = false;
    if (cfg.epsilon == 0 || M == 0) return {cur, false};

    Shape xshape{M * T, model.cfg.channels, model.cfg.height, model.cfg.width};
    std::vector<int> tg(M);
    for (std::size_t j = 0; j < M; ++j) tg[j] = targets[attack_ids[j]];

    const S eps = static_cast<S>(cfg.epsilon);
    const S beta = static_cast<S>(cfg.beta);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        auto x = TensorT<S>::from_data(xshape, cur, true);
        TensorT<S> loss;
        if (cfg.loss == LossKind::cam) {
            auto stacks = compute_cam_batch(model, x, M, tg, BnPath::clean, Mode::eval);
            TensorT<S> sum;
            bool have = false;
            for (auto& st : stacks) {
                if (st.degenerate) {
                    degenerate_seen = true;  // flat stack: that clip takes a zero step
                    continue;
                }
                auto l = cam_loss(st, cfg.frames_n);
                sum = have ? add(sum, l) : l;
                have = true;
            }
            if (!have) continue;
            loss = sum;
        } else {
            auto fwd = model.forward(x, M, BnPath::clean, Mode::eval);
            loss = mul_scalar(cross_entropy(fwd.logits, tg), static_cast<S>(M));
        }
        backward(loss);
        const auto& g = x.grad();
        model.zero_grad();
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const S gi = g[i];
            if (gi > 0)
                cur[i] += beta;
            else if (gi < 0)
                cur[i] -= beta;
            cur[i] = std::clamp(cur[i], orig[i] - eps, orig[i] + eps);
            cur[i] = std::clamp(cur[i], S(0), S(1));
        }
    }
    return {cur, degenerate_seen};
}

}  // namespace detail

// Batch entry point: clean-path eval predictions decide inclusion, targets
// follow the label policy, excluded clips pass through untouched.
template <class S>
AugmentedBatchT<S> attack_batch(VideoModelT<S>& model, const TensorT<S>& x, std::size_t clips,
                                const std::vector<int>& labels, const AttackConfig& cfg, Rng& rng) {
    cfg.validate(model.cfg.frames);
    if (clips == 0) throw ContractError("attack_batch: empty batch");
    if (labels.size() != clips)
        throw ShapeError("attack_batch: " + std::to_string(clips) + " clips vs " +
                         std::to_string(labels.size()) + " labels");

    auto fwd = model.forward(x, clips, BnPath::clean, Mode::eval);
    const auto& lv = fwd.logits.values();
    const std::size_t C = model.cfg.classes;
    std::vector<int> preds(clips);
    for (std::size_t b = 0; b < clips; ++b) {
        const S* row = lv.data() + b * C;
        preds[b] = static_cast<int>(std::max_element(row, row + C) - row);
    }

    AugmentedBatchT<S> out;
    out.targets.resize(clips);
    out.included.resize(clips);
    std::vector<std::size_t> attack_ids;
    for (std::size_t b = 0; b < clips; ++b) {
        out.targets[b] = assign_target(preds[b], labels[b], cfg.label_policy, C, rng);
        const bool correct = preds[b] == labels[b];
        const bool in = cfg.inclusion == InclusionPolicy::all ||
                        (cfg.inclusion == InclusionPolicy::correct_only && correct) ||
                        (cfg.inclusion == InclusionPolicy::incorrect_only && !correct);
        out.included[b] = in ? 1 : 0;
        if (in) attack_ids.push_back(b);
    }

    const std::size_t clip_elems = x.size() / clips;
    Shape clip_shape{model.cfg.frames, model.cfg.channels, model.cfg.height, model.cfg.width};
    auto [perturbed, degen] =
        detail::pgd_on_subset(model, x.values(), clip_shape, attack_ids, out.targets, cfg);
    out.degenerate_seen = degen;

    std::vector<S> result = x.values();
    for (std::size_t j = 0; j < attack_ids.size(); ++j)
        std::copy_n(perturbed.data() + j * clip_elems, clip_elems,
                    result.data() + attack_ids[j] * clip_elems);
    out.deltas.resize(result.size());
    for (std::size_t i = 0; i < result.size(); ++i) out.deltas[i] = result[i] - x.values()[i];
    out.clips = TensorT<S>::from_data(x.shape(), std::move(result));
    return out;
}

// Single-clip CAM attack at an explicit target label.
template <class S>
AugmentedBatchT<S> temporal_attack(VideoModelT<S>& model, const TensorT<S>& clip, int target,
                                   const AttackConfig& cfg) {
    cfg.validate(model.cfg.frames);
    AttackConfig c = cfg;
    c.loss = LossKind::cam;
    AugmentedBatchT<S> out;
    out.targets = {target};
    out.included = {1};
    Shape clip_shape{model.cfg.frames, model.cfg.channels, model.cfg.height, model.cfg.width};
    auto [cur, degen] =
        detail::pgd_on_subset(model, clip.values(), clip_shape, {0}, out.targets, c);
    out.degenerate_seen = degen;
    out.deltas.resize(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) out.deltas[i] = cur[i] - clip.values()[i];
    out.clips = TensorT<S>::from_data(clip.shape(), std::move(cur));
    return out;
}

// Single-clip cross-entropy ascent at label y.
template <class S>
AugmentedBatchT<S> vanilla_attack(VideoModelT<S>& model, const TensorT<S>& clip, int y,
                                  const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.loss = LossKind::cross_entropy;
    c.validate(model.cfg.frames);
    AugmentedBatchT<S> out;
    out.targets = {y};
    out.included = {1};
    Shape clip_shape{model.cfg.frames, model.cfg.channels, model.cfg.height, model.cfg.width};
    auto [cur, degen] =
        detail::pgd_on_subset(model, clip.values(), clip_shape, {0}, out.targets, c);
    out.degenerate_seen = degen;
    out.deltas.resize(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) out.deltas[i] = cur[i] - clip.values()[i];
    out.clips = TensorT<S>::from_data(clip.shape(), std::move(cur));
    return out;
}

using AugmentedBatch = AugmentedBatchT<float>;

}  // namespace taflab
