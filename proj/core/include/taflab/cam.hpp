#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "taflab/nn.hpp"
#include "taflab/tensor.hpp"

// Per-frame class activation maps for the temporal attack. A map for frame i
// is the channel sum of the final feature activations weighted by the
// spatial-mean gradient of the cross-entropy at the target label; the weight
// factor is treated as a constant, so the maps stay differentiable with
// respect to the clip through the activation factor only. The stack is
// normalized jointly over all frames of a clip by (x - min) / max; values can
// exceed 1 when min < 0, which is intentional.

namespace taflab {

template <class S>
struct CamStackT {
    std::size_t frames = 0, h = 0, w = 0;
    TensorT<S> raw;               // [T,h,w], pre-normalization, in-graph
    TensorT<S> maps;              // [T,h,w], normalized, in-graph unless degenerate
    std::vector<S> frame_mass;    // spatial sum of each normalized map
    std::vector<std::size_t> pi;  // frame indices, ascending by frame_mass
    int target_label = 0;
    bool degenerate = false;
};

// Stable ascending sort of frame indices by mass; ties keep the lower index.
template <class S>
std::vector<std::size_t> rank_frames(const std::vector<S>& frame_mass) {
    std::vector<std::size_t> pi(frame_mass.size());
    std::iota(pi.begin(), pi.end(), std::size_t{0});
    std::stable_sort(pi.begin(), pi.end(),
                     [&](std::size_t a, std::size_t b) { return frame_mass[a] < frame_mass[b]; });
    return pi;
}

// Value-level joint normalization of a raw stack. Degenerate (flat or
// non-positive-max) stacks map to the uniform value 1/(h*w*T).
template <class S>
std::pair<std::vector<S>, bool> normalize_stack_values(const std::vector<S>& raw, std::size_t frames,
                                                       S eps = S(1e-8)) {
    const auto [mn_it, mx_it] = std::minmax_element(raw.begin(), raw.end());
    const S mn = *mn_it, mx = *mx_it;
    if (mx - mn <= eps || mx <= eps)
        return {std::vector<S>(raw.size(), S(1) / static_cast<S>(raw.size())), true};
    std::vector<S> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mn) / mx;
    return {out, false};
}

// In-graph counterpart used inside compute_cam; min and max participate in the
// gradient through the extremum subgradients. `raw` is one clip's [T,h,w].
template <class S>
std::pair<TensorT<S>, bool> normalize_stack(const TensorT<S>& raw, S eps = S(1e-8)) {
    const auto& v = raw.values();
    const auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
    if (*mx_it - *mn_it <= eps || *mx_it <= eps)
        return {TensorT<S>::filled(raw.shape(), S(1) / static_cast<S>(v.size())), true};
    return {div(sub(raw, reduce_min(raw)), reduce_max(raw)), false};
}

// One stack per clip, built from an already-run forward pass. features is the
// final activation map [clips*T,C,h,w] and logits [clips,classes], both still
// on the tape; targets are the labels entering the cross-entropy whose
// feature gradient supplies the channel weights. All gradients left behind by
// the internal backward pass are wiped before returning.
template <class S>
std::vector<CamStackT<S>> cam_from_forward(const TensorT<S>& features, const TensorT<S>& logits,
                                           std::size_t clips, std::size_t frames,
                                           const std::vector<int>& targets) {
    if (targets.size() != clips)
        throw ShapeError("cam_from_forward: " + std::to_string(clips) + " clips vs " +
                         std::to_string(targets.size()) + " targets");
    const std::size_t T = frames;
    if (features.dim(0) != clips * T)
        throw ShapeError("cam_from_forward: features " + shape_str(features.shape()) + " vs " +
                         std::to_string(clips) + " clips of " + std::to_string(T) + " frames");
    auto ce = cross_entropy(logits, targets);
    backward(ce);

    const auto& fsh = features.shape();  // [clips*T, C, h, w]
    const std::size_t C = fsh[1], h = fsh[2], w = fsh[3], hw = h * w;
    const auto& fg = features.node()->ensure_grad();

    // channel weights: spatial mean of the feature gradient, frozen as data
    std::vector<S> wv(clips * T * C);
    for (std::size_t f = 0; f < clips * T; ++f)
        for (std::size_t c = 0; c < C; ++c) {
            S s = 0;
            const S* p = fg.data() + (f * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
            wv[f * C + c] = s / static_cast<S>(hw);
        }
    zero_all_grads(ce);
    auto weights = TensorT<S>::from_data({clips * T, C, 1, 1}, std::move(wv));

    auto raw_all = reshape(reduce_sum(mul(features, weights), {1}), {clips, T, h, w});

    std::vector<CamStackT<S>> out(clips);
    for (std::size_t b = 0; b < clips; ++b) {
        auto& st = out[b];
        st.frames = T;
        st.h = h;
        st.w = w;
        st.target_label = targets[b];
        st.raw = reshape(slice0(raw_all, b, 1), {T, h, w});
        auto [maps, degen] = normalize_stack(st.raw);
        st.maps = maps;
        st.degenerate = degen;
        st.frame_mass.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            S s = 0;
            const S* p = st.maps.values().data() + t * hw;
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
            st.frame_mass[t] = s;
        }
        st.pi = rank_frames(st.frame_mass);
    }
    return out;
}

// x is the stacked batch [clips*T,C,H,W]; may require grad.
template <class S>
std::vector<CamStackT<S>> compute_cam_batch(VideoModelT<S>& model, const TensorT<S>& x,
                                            std::size_t clips, const std::vector<int>& targets,
                                            BnPath path = BnPath::clean, Mode mode = Mode::eval) {
    auto fwd = model.forward(x, clips, path, mode);
    return cam_from_forward(fwd.features, fwd.logits, clips, model.cfg.frames, targets);
}

template <class S>
CamStackT<S> compute_cam(VideoModelT<S>& model, const TensorT<S>& clip, int label,
                         BnPath path = BnPath::clean, Mode mode = Mode::eval) {
    return compute_cam_batch(model, clip, 1, std::vector<int>{label}, path, mode)[0];
}

// Mean over the N smallest-mass frames of each map's spatial mean;
// differentiable through the normalized maps.
template <class S>
TensorT<S> cam_loss(const CamStackT<S>& stack, std::size_t N) {
    if (N < 1 || N > stack.frames)
        throw DomainError("cam_loss: N=" + std::to_string(N) + " outside [1," +
                          std::to_string(stack.frames) + "]");
    const std::size_t hw = stack.h * stack.w;
    std::vector<S> mask(stack.frames * hw, S(0));
    const S v = S(1) / (static_cast<S>(N) * static_cast<S>(hw));
    for (std::size_t j = 0; j < N; ++j)
        std::fill_n(mask.data() + stack.pi[j] * hw, hw, v);
    return reduce_sum(mul(stack.maps, TensorT<S>::from_data(stack.maps.shape(), std::move(mask))));
}

// Entropy of the frame-mass distribution; high when attention is spread
// evenly over frames. Non-positive total mass falls back to the uniform
// distribution's entropy.
template <class S>
S frame_mass_entropy(const std::vector<S>& frame_mass) {
    S total = 0;
    for (S m : frame_mass) total += std::max(m, S(0));
    if (total <= S(0)) return std::log(static_cast<S>(frame_mass.size()));
    S ent = 0;
    for (S m : frame_mass) {
        const S p = std::max(m, S(0)) / total;
        if (p > S(0)) ent -= p * std::log(p);
    }
    return ent;
}

using CamStack = CamStackT<float>;

}  // namespace taflab
