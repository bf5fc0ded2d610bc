#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "taflab/rng.hpp"
#include "taflab/tensor.hpp"

// Neural building blocks for the video classifier: dual-path batch
// normalization, parameter-free temporal shift, the temporal-shift conv
// backbone with an exposed final feature map, cross-entropy, and momentum SGD.

namespace taflab {

enum class BnPath { clean, adversarial };
enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <class S>
struct BnPathStateT {
    TensorT<S> gamma, beta;  // learnable, [C]
    std::vector<S> running_mean, running_var;
    std::uint64_t stat_updates = 0;  // instrumentation: training-mode stat writes

    void init(std::size_t channels) {
        gamma = TensorT<S>::filled({channels}, S(1), true);
        beta = TensorT<S>::zeros({channels}, true);
        running_mean.assign(channels, S(0));
        running_var.assign(channels, S(1));
        stat_updates = 0;
    }
};

// x [N,C,H,W]; training mode normalizes with batch statistics and updates the
// running ones, eval mode uses the stored running statistics.
template <class S>
TensorT<S> batch_norm(const TensorT<S>& x, BnPathStateT<S>& bn, S momentum, S eps, Mode mode) {
    const auto& sh = x.shape();
    if (sh.size() != 4 || sh[1] != bn.gamma.size())
        throw ShapeError("batch_norm: input " + shape_str(sh) + " vs " +
                         std::to_string(bn.gamma.size()) + " channels");
    const std::size_t N = sh[0], C = sh[1], HW = sh[2] * sh[3];
    const std::size_t per_ch = N * HW;
    const auto& xv = x.values();

    std::vector<S> mean(C), var(C);
    if (mode == Mode::train) {
        for (std::size_t c = 0; c < C; ++c) {
            S m = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const S* p = xv.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) m += p[i];
            }
            m /= static_cast<S>(per_ch);
            S v = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const S* p = xv.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) v += (p[i] - m) * (p[i] - m);
            }
            v /= static_cast<S>(per_ch);
            mean[c] = m;
            var[c] = v;
            bn.running_mean[c] = (S(1) - momentum) * bn.running_mean[c] + momentum * m;
            bn.running_var[c] = (S(1) - momentum) * bn.running_var[c] + momentum * v;
        }
        bn.stat_updates++;
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }

    auto invstd = std::make_shared<std::vector<S>>(C);
    for (std::size_t c = 0; c < C; ++c) (*invstd)[c] = S(1) / std::sqrt(var[c] + eps);

    auto xhat = std::make_shared<std::vector<S>>(xv.size());
    std::vector<S> out(xv.size());
    const auto& gv = bn.gamma.values();
    const auto& bv = bn.beta.values();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const S* p = xv.data() + (n * C + c) * HW;
            S* xh = xhat->data() + (n * C + c) * HW;
            S* o = out.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                xh[i] = (p[i] - mean[c]) * (*invstd)[c];
                o[i] = gv[c] * xh[i] + bv[c];
            }
        }

    auto xn = x.node();
    auto gn = bn.gamma.node();
    auto btn = bn.beta.node();
    const bool train = (mode == Mode::train);
    auto backprop = [xn, gn, btn, xhat, invstd, N, C, HW, train](NodeT<S>& self) {
        const auto& g = self.grad;
        const auto& gamma = gn->value;
        std::vector<S>* gg = gn->requires_grad ? &gn->ensure_grad() : nullptr;
        std::vector<S>* gb = btn->requires_grad ? &btn->ensure_grad() : nullptr;
        for (std::size_t c = 0; c < C; ++c) {
            S sum_g = 0, sum_gx = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const S* gp = g.data() + (n * C + c) * HW;
                const S* xh = xhat->data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    sum_g += gp[i];
                    sum_gx += gp[i] * xh[i];
                }
            }
            if (gg) (*gg)[c] += sum_gx;
            if (gb) (*gb)[c] += sum_g;
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const S per = static_cast<S>(N * HW);
                const S k = gamma[c] * (*invstd)[c];
                for (std::size_t n = 0; n < N; ++n) {
                    const S* gp = g.data() + (n * C + c) * HW;
                    const S* xh = xhat->data() + (n * C + c) * HW;
                    S* gxp = gx.data() + (n * C + c) * HW;
                    if (train) {
                        for (std::size_t i = 0; i < HW; ++i)
                            gxp[i] += k * (gp[i] - sum_g / per - xh[i] * sum_gx / per);
                    } else {
                        for (std::size_t i = 0; i < HW; ++i) gxp[i] += k * gp[i];
                    }
                }
            }
        }
    };
    return make_op_tensor<S>(sh, std::move(out), {xn, gn, btn}, std::move(backprop));
}

// Two disjoint normalization states sharing the surrounding conv weights.
// Switching the active path never touches the other path's parameters or
// statistics; the evaluation entry points always use the clean path.
template <class S>
struct DualBatchNormT {
    BnPathStateT<S> clean, adversarial;
    S momentum = S(0.1);
    S eps = S(1e-5);

    void init(std::size_t channels) {
        clean.init(channels);
        adversarial.init(channels);
    }

    BnPathStateT<S>& path(BnPath p) { return p == BnPath::clean ? clean : adversarial; }

    TensorT<S> forward(const TensorT<S>& x, BnPath p, Mode mode) {
        return batch_norm(x, path(p), momentum, eps, mode);
    }

    // Both paths start from the same pretrained statistics when fine-tuning
    // begins.
    void copy_clean_to_adversarial() {
        adversarial.gamma.values() = clean.gamma.values();
        adversarial.beta.values() = clean.beta.values();
        adversarial.running_mean = clean.running_mean;
        adversarial.running_var = clean.running_var;
    }
};

// ---------------------------------------------------------------------------
// temporal shift
// ---------------------------------------------------------------------------

// x [B*T,C,H,W] grouped in clips of `frames`. The first quarter of channels
// is shifted one frame forward (reading from t-1), the second quarter one
// frame back (reading from t+1); zero-padded at clip boundaries.
// Parameter-free; the backward pass is the inverse shift.
template <class S>
TensorT<S> temporal_shift(const TensorT<S>& x, std::size_t frames) {
    const auto& sh = x.shape();
    if (sh.size() != 4 || frames == 0 || sh[0] % frames != 0)
        throw ShapeError("temporal_shift: input " + shape_str(sh) + " with T=" + std::to_string(frames));
    const std::size_t clips = sh[0] / frames, C = sh[1], HW = sh[2] * sh[3];
    const std::size_t q = C / 4;
    const auto& xv = x.values();
    std::vector<S> out(xv.size(), S(0));

    auto src_frame = [q](std::size_t c, std::size_t t) -> std::ptrdiff_t {
        if (c < q) return static_cast<std::ptrdiff_t>(t) - 1;       // forward shift
        if (c < 2 * q) return static_cast<std::ptrdiff_t>(t) + 1;   // backward shift
        return static_cast<std::ptrdiff_t>(t);
    };
    for (std::size_t b = 0; b < clips; ++b)
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t c = 0; c < C; ++c) {
                const std::ptrdiff_t ts = src_frame(c, t);
                if (ts < 0 || ts >= static_cast<std::ptrdiff_t>(frames)) continue;
                const S* src = xv.data() + ((b * frames + static_cast<std::size_t>(ts)) * C + c) * HW;
                S* dst = out.data() + ((b * frames + t) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i];
            }

    auto xn = x.node();
    auto backprop = [xn, clips, frames, C, HW, src_frame](NodeT<S>& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t b = 0; b < clips; ++b)
            for (std::size_t t = 0; t < frames; ++t)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::ptrdiff_t ts = src_frame(c, t);
                    if (ts < 0 || ts >= static_cast<std::ptrdiff_t>(frames)) continue;
                    const S* gp = self.grad.data() + ((b * frames + t) * C + c) * HW;
                    S* gs = gx.data() + ((b * frames + static_cast<std::size_t>(ts)) * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) gs[i] += gp[i];
                }
    };
    return make_op_tensor<S>(sh, std::move(out), {xn}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// cross-entropy
// ---------------------------------------------------------------------------

// logits [B,classes]; mean of -log softmax(logits_b)[label_b] over the batch.
// Gradient is (softmax - one_hot) / B.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int>& labels) {
    const auto& sh = logits.shape();
    if (sh.size() != 2 || sh[0] != labels.size())
        throw ShapeError("cross_entropy: logits " + shape_str(sh) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t B = sh[0], C = sh[1];
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw DomainError("cross_entropy: label " + std::to_string(y) + " out of range");

    auto probs = std::make_shared<std::vector<S>>(logits.values().size());
    const auto& lv = logits.values();
    S loss = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const S* row = lv.data() + b * C;
        S* p = probs->data() + b * C;
        S mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        S z = 0;
        for (std::size_t c = 0; c < C; ++c) {
            p[c] = std::exp(row[c] - mx);
            z += p[c];
        }
        for (std::size_t c = 0; c < C; ++c) p[c] /= z;
        loss -= std::log(std::max(p[static_cast<std::size_t>(labels[b])], S(1e-30)));
    }
    loss /= static_cast<S>(B);

    auto ln = logits.node();
    auto lab = std::make_shared<std::vector<int>>(labels);
    auto backprop = [ln, probs, lab, B, C](NodeT<S>& self) {
        auto& gl = ln->ensure_grad();
        const S g = self.grad[0] / static_cast<S>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                S d = (*probs)[b * C + c];
                if (static_cast<std::size_t>((*lab)[b]) == c) d -= S(1);
                gl[b * C + c] += g * d;
            }
    };
    return make_op_tensor<S>({1}, {loss}, {ln}, std::move(backprop));
}

// Per-sample softmax probabilities; value-level helper for evaluation.
template <class S>
std::vector<S> softmax_rows(const std::vector<S>& logits, std::size_t B, std::size_t C) {
    std::vector<S> p(logits.size());
    for (std::size_t b = 0; b < B; ++b) {
        const S* row = logits.data() + b * C;
        S* pr = p.data() + b * C;
        S mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        S z = 0;
        for (std::size_t c = 0; c < C; ++c) {
            pr[c] = std::exp(row[c] - mx);
            z += pr[c];
        }
        for (std::size_t c = 0; c < C; ++c) pr[c] /= z;
    }
    return p;
}

// ---------------------------------------------------------------------------
// the video model
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::size_t frames = 8;
    std::size_t channels = 1;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t classes = 16;
};

// Temporal-shift conv backbone at desk scale: a strided stem plus four
// shift+conv+BN+relu blocks (widths 16 -> 16 -> 32 -> 32 -> 64), global
// average pooling over space and frames, and a linear classifier. The final
// block's activation map is exposed per frame as the CAM feature hook.
template <class S>
struct VideoModelT {
    struct Block {
        TensorT<S> w;  // [F,C,k,k]
        DualBatchNormT<S> bn;
        std::size_t stride = 1, pad = 1;
        bool shift = false;
    };

    ModelConfig cfg;
    Block stem;
    std::array<Block, 4> blocks;
    TensorT<S> fc_w, fc_b;
    std::size_t feat_channels = 64, feat_h = 4, feat_w = 4;

    explicit VideoModelT(ModelConfig c = {}) : cfg(c) {
        auto make = [](std::size_t out_c, std::size_t in_c, std::size_t k, std::size_t stride,
                       std::size_t pad, bool shift) {
            Block b;
            b.w = TensorT<S>::zeros({out_c, in_c, k, k}, true);
            b.bn.init(out_c);
            b.stride = stride;
            b.pad = pad;
            b.shift = shift;
            return b;
        };
        stem = make(16, cfg.channels, 4, 2, 1, false);   // 32 -> 16
        blocks[0] = make(16, 16, 4, 2, 1, true);         // 16 -> 8
        blocks[1] = make(32, 16, 3, 1, 1, true);         // 8  -> 8
        blocks[2] = make(32, 32, 4, 2, 1, true);         // 8  -> 4
        blocks[3] = make(64, 32, 3, 1, 1, true);         // 4  -> 4
        fc_w = TensorT<S>::zeros({feat_channels, cfg.classes}, true);
        fc_b = TensorT<S>::zeros({cfg.classes}, true);
    }

    void init(Rng& rng) {
        auto he = [&](TensorT<S>& w, std::size_t fan_in) {
            const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& v : w.values()) v = static_cast<S>(rng.normal() * std);
        };
        auto fan = [](const TensorT<S>& w) { return w.dim(1) * w.dim(2) * w.dim(3); };
        he(stem.w, fan(stem.w));
        for (auto& b : blocks) he(b.w, fan(b.w));
        he(fc_w, fc_w.dim(0));
    }

    struct Forward {
        TensorT<S> logits;    // [clips, classes]
        TensorT<S> features;  // [clips*T, Cf, h, w]
    };

    // x is a stacked batch [clips*T, C, H, W].
    Forward forward(const TensorT<S>& x, std::size_t clips, BnPath path, Mode mode) {
        const auto& sh = x.shape();
        if (sh.size() != 4 || sh[0] != clips * cfg.frames || sh[1] != cfg.channels ||
            sh[2] != cfg.height || sh[3] != cfg.width)
            throw ShapeError("forward: input " + shape_str(sh) + " does not match model config");
        auto h = run_block(stem, x, path, mode);
        for (auto& b : blocks) h = run_block(b, h, path, mode);
        Forward out;
        out.features = h;
        auto pooled = reduce_mean(h, {2, 3});                       // [clips*T, Cf]
        auto per_clip = reduce_mean(reshape(pooled, {clips, cfg.frames, feat_channels}), {1});
        out.logits = add(matmul(per_clip, fc_w), fc_b);             // [clips, classes]
        return out;
    }

    std::vector<std::pair<std::string, TensorT<S>*>> parameters() {
        std::vector<std::pair<std::string, TensorT<S>*>> ps;
        auto add_block = [&](const std::string& name, Block& b) {
            ps.emplace_back(name + ".conv.w", &b.w);
            ps.emplace_back(name + ".bn.clean.gamma", &b.bn.clean.gamma);
            ps.emplace_back(name + ".bn.clean.beta", &b.bn.clean.beta);
            ps.emplace_back(name + ".bn.adv.gamma", &b.bn.adversarial.gamma);
            ps.emplace_back(name + ".bn.adv.beta", &b.bn.adversarial.beta);
        };
        add_block("stem", stem);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            add_block("block" + std::to_string(i + 1), blocks[i]);
        ps.emplace_back("fc.w", &fc_w);
        ps.emplace_back("fc.b", &fc_b);
        return ps;
    }

    // Running statistics, by name; mutable for checkpoint restore.
    std::vector<std::pair<std::string, std::vector<S>*>> buffers() {
        std::vector<std::pair<std::string, std::vector<S>*>> bs;
        auto add_block = [&](const std::string& name, Block& b) {
            bs.emplace_back(name + ".bn.clean.running_mean", &b.bn.clean.running_mean);
            bs.emplace_back(name + ".bn.clean.running_var", &b.bn.clean.running_var);
            bs.emplace_back(name + ".bn.adv.running_mean", &b.bn.adversarial.running_mean);
            bs.emplace_back(name + ".bn.adv.running_var", &b.bn.adversarial.running_var);
        };
        add_block("stem", stem);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            add_block("block" + std::to_string(i + 1), blocks[i]);
        return bs;
    }

    void copy_clean_bn_to_adversarial() {
        stem.bn.copy_clean_to_adversarial();
        for (auto& b : blocks) b.bn.copy_clean_to_adversarial();
    }

    void zero_grad() {
        for (auto& [name, p] : parameters()) p->zero_grad();
    }

    std::uint64_t stat_updates(BnPath path) {
        std::uint64_t n = stem.bn.path(path).stat_updates;
        for (auto& b : blocks) n += b.bn.path(path).stat_updates;
        return n;
    }

private:
    TensorT<S> run_block(Block& b, const TensorT<S>& x, BnPath path, Mode mode) {
        auto h = b.shift ? temporal_shift(x, cfg.frames) : x;
        h = conv2d(h, b.w, b.stride, b.pad);
        h = b.bn.forward(h, path, mode);
        return relu(h);
    }
};

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

// Momentum SGD: v <- mu*v + (g + wd*w); w <- w - lr*v. Weight decay is applied
// to conv and classifier weights only, not to BN parameters or biases.
template <class S>
struct SgdT {
    S momentum = S(0.9);
    S weight_decay = S(5e-4);
    std::map<std::string, std::vector<S>> velocity;

    static bool decays(const std::string& name) {
        return name == "fc.w" || name.ends_with("conv.w");
    }

    void step(std::vector<std::pair<std::string, TensorT<S>*>> params, S lr) {
        if (lr < S(0)) throw DomainError("sgd: negative learning rate");
        for (auto& [name, p] : params) {
            auto& v = velocity[name];
            if (v.size() != p->size()) v.assign(p->size(), S(0));
            const bool has_g = p->has_grad();
            const S wd = decays(name) ? weight_decay : S(0);
            auto& w = p->values();
            const auto& g = p->grad();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const S gi = (has_g ? g[i] : S(0)) + wd * w[i];
                v[i] = momentum * v[i] + gi;
                w[i] -= lr * v[i];
            }
        }
    }
};

using VideoModel = VideoModelT<float>;
using Sgd = SgdT<float>;

}  // namespace taflab
