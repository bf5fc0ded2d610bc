#include "taflab/taf.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "taflab/cam.hpp"
#include "taflab/rng.hpp"

namespace taflab {

namespace {

// rank of the true label among the logits; ties resolve to the lower index
std::size_t label_rank(const float* row, std::size_t classes, int label) {
    const float ly = row[label];
    std::size_t rank = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (row[c] > ly) ++rank;
        else if (row[c] == ly && static_cast<int>(c) < label) ++rank;
    }
    return rank;
}

void count_topk(const Tensor& logits, const std::vector<int>& labels, std::size_t classes,
                std::size_t& top1, std::size_t& top5) {
    const auto& lv = logits.values();
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const std::size_t r = label_rank(lv.data() + b * classes, classes, labels[b]);
        if (r == 0) ++top1;
        if (r < 5) ++top5;
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace

std::string MetricsRecord::csv_line() const {
    return std::to_string(epoch) + "," + split + "," + fmt(top1) + "," + fmt(top5) + "," +
           fmt(clean_loss) + "," + fmt(adv_loss) + "," + fmt(cam_entropy);
}

std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, std::size_t global_epoch) {
    return Rng(run_seed).fork(0xE70C0000ULL + global_epoch).next_u64();
}

TrainResult train_baseline(VideoModel& model, Sgd& opt, const Dataset& train, const Dataset& val,
                           std::size_t epochs, const LrSchedule& sched, std::size_t batch_size,
                           std::uint64_t seed, std::size_t start_epoch) {
    TrainResult res;
    Loader loader(train.clips, batch_size);
    auto params = model.parameters();
    const auto probe = probe_indices(val.clips.size(), 64, 0);
    for (std::size_t e = 0; e < epochs; ++e) {
        const std::size_t epoch = start_epoch + e;
        const float lr = sched.at(e);
        loader.shuffle(epoch_shuffle_seed(seed, epoch));
        double loss_sum = 0;
        std::size_t top1 = 0, top5 = 0, seen = 0;
        for (std::size_t i = 0; i < loader.num_batches(); ++i) {
            auto b = loader.batch(i);
            auto fwd = model.forward(b.x, b.clips, BnPath::clean, Mode::train);
            auto loss = cross_entropy(fwd.logits, b.labels);
            count_topk(fwd.logits, b.labels, model.cfg.classes, top1, top5);
            seen += b.clips;
            loss_sum += loss.item() * static_cast<double>(b.clips);
            model.zero_grad();
            backward(loss);
            opt.step(params, lr);
            model.zero_grad();
        }
        MetricsRecord tr;
        tr.epoch = epoch;
        tr.split = "train";
        tr.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(seen);
        tr.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(seen);
        tr.clean_loss = loss_sum / static_cast<double>(seen);
        res.metrics.push_back(tr);

        auto ev = evaluate(model, val);
        ev.epoch = epoch;
        ev.cam_entropy = probe_entropy(model, val, probe);
        res.metrics.push_back(ev);
    }
    return res;
}

TrainResult finetune_taf(VideoModel& model, Sgd& opt, const Dataset& train, const Dataset& val,
                         const TafConfig& cfg, std::size_t start_epoch) {
    cfg.validate();
    cfg.attack.validate(model.cfg.frames);
    model.copy_clean_bn_to_adversarial();

    TrainResult res;
    Loader loader(train.clips, cfg.batch_size);
    auto params = model.parameters();
    Rng attack_rng = Rng(cfg.seed).fork(0xA77ACC);
    const bool clean_only = cfg.alpha == 1.0f;
    const std::size_t T = model.cfg.frames;
    const std::size_t clip_elems =
        T * model.cfg.channels * model.cfg.height * model.cfg.width;
    const auto probe = probe_indices(val.clips.size(), 64, 0);

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const std::size_t epoch = start_epoch + e;
        const float lr = cfg.lr.at(e);
        loader.shuffle(epoch_shuffle_seed(cfg.seed, epoch));
        double clean_sum = 0, adv_sum = 0;
        std::size_t top1 = 0, top5 = 0, seen = 0, adv_seen = 0;
        for (std::size_t i = 0; i < loader.num_batches(); ++i) {
            auto b = loader.batch(i);

            Tensor loss;
            double adv_item = 0;
            Tensor ce_clean, ce_adv;
            bool have_adv = false;
            if (clean_only) {
                auto fwd = model.forward(b.x, b.clips, BnPath::clean, Mode::train);
                count_topk(fwd.logits, b.labels, model.cfg.classes, top1, top5);
                ce_clean = cross_entropy(fwd.logits, b.labels);
                loss = ce_clean;
            } else {
                auto aug = attack_batch(model, b.x, b.clips, b.labels, cfg.attack, attack_rng);

                auto fwd = model.forward(b.x, b.clips, BnPath::clean, Mode::train);
                count_topk(fwd.logits, b.labels, model.cfg.classes, top1, top5);
                ce_clean = cross_entropy(fwd.logits, b.labels);

                std::vector<std::size_t> incl;
                for (std::size_t c = 0; c < b.clips; ++c)
                    if (aug.included[c]) incl.push_back(c);
                if (!incl.empty()) {
                    // adversarial term: included clips only, TRUE labels
                    std::vector<float> xv(incl.size() * clip_elems);
                    std::vector<int> ly(incl.size());
                    for (std::size_t j = 0; j < incl.size(); ++j) {
                        std::copy_n(aug.clips.values().data() + incl[j] * clip_elems, clip_elems,
                                    xv.data() + j * clip_elems);
                        ly[j] = b.labels[incl[j]];
                    }
                    auto xadv = Tensor::from_data({incl.size() * T, model.cfg.channels,
                                                   model.cfg.height, model.cfg.width},
                                                  std::move(xv));
                    auto afwd = model.forward(xadv, incl.size(), BnPath::adversarial, Mode::train);
                    ce_adv = cross_entropy(afwd.logits, ly);
                    have_adv = true;
                    adv_item = ce_adv.item();
                    adv_sum += adv_item * static_cast<double>(incl.size());
                    adv_seen += incl.size();
                }
                loss = have_adv ? add(mul_scalar(ce_clean, cfg.alpha),
                                      mul_scalar(ce_adv, 1.0f - cfg.alpha))
                                : mul_scalar(ce_clean, cfg.alpha);
            }

            clean_sum += ce_clean.item() * static_cast<double>(b.clips);
            seen += b.clips;
            res.step_losses.push_back({loss.item(), ce_clean.item(), adv_item});

            model.zero_grad();
            backward(loss);
            opt.step(params, lr);
            model.zero_grad();
        }
        MetricsRecord tr;
        tr.epoch = epoch;
        tr.split = "train";
        tr.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(seen);
        tr.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(seen);
        tr.clean_loss = clean_sum / static_cast<double>(seen);
        tr.adv_loss = adv_seen ? adv_sum / static_cast<double>(adv_seen) : 0.0;
        res.metrics.push_back(tr);

        auto ev = evaluate(model, val);
        ev.epoch = epoch;
        ev.cam_entropy = probe_entropy(model, val, probe);
        res.metrics.push_back(ev);
    }
    return res;
}

MetricsRecord evaluate(VideoModel& model, const Dataset& split,
                       const std::optional<CorruptionSpec>& corruption, std::size_t batch_size) {
    MetricsRecord rec;
    rec.split = "val";
    std::vector<VideoClip> clips;
    const std::vector<VideoClip>* use = &split.clips;
    if (corruption) {
        clips.reserve(split.clips.size());
        for (const auto& c : split.clips) clips.push_back(corrupt(c, *corruption));
        use = &clips;
    }
    Loader loader(*use, batch_size);
    std::size_t top1 = 0, top5 = 0, seen = 0;
    double loss_sum = 0;
    for (std::size_t i = 0; i < loader.num_batches(); ++i) {
        auto b = loader.batch(i);
        auto fwd = model.forward(b.x, b.clips, BnPath::clean, Mode::eval);
        count_topk(fwd.logits, b.labels, model.cfg.classes, top1, top5);
        loss_sum += cross_entropy(fwd.logits, b.labels).item() * static_cast<double>(b.clips);
        seen += b.clips;
    }
    rec.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(seen);
    rec.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(seen);
    rec.clean_loss = loss_sum / static_cast<double>(seen);
    return rec;
}

std::vector<std::size_t> probe_indices(std::size_t split_size, std::size_t count,
                                       std::uint64_t seed) {
    // partial Fisher-Yates prefix on our own stream
    std::vector<std::size_t> all(split_size);
    for (std::size_t i = 0; i < split_size; ++i) all[i] = i;
    Rng rng = Rng(seed).fork(0x9B0BE);
    const std::size_t n = std::min(count, split_size);
    for (std::size_t i = 0; i < n; ++i)
        std::swap(all[i], all[static_cast<std::size_t>(rng.uniform_int(
                              static_cast<int>(i), static_cast<int>(split_size) - 1))]);
    all.resize(n);
    return all;
}

double probe_entropy(VideoModel& model, const Dataset& split,
                     const std::vector<std::size_t>& probe) {
    if (probe.empty()) throw ContractError("probe_entropy: empty probe set");
    const std::size_t T = model.cfg.frames;
    const std::size_t clip_elems = T * model.cfg.channels * model.cfg.height * model.cfg.width;
    double sum = 0;
    const std::size_t chunk = 16;  // bounds the tape size
    for (std::size_t lo = 0; lo < probe.size(); lo += chunk) {
        const std::size_t hi = std::min(lo + chunk, probe.size());
        std::vector<float> xv((hi - lo) * clip_elems);
        std::vector<int> labels(hi - lo);
        for (std::size_t j = lo; j < hi; ++j) {
            const auto& c = split.clips.at(probe[j]);
            std::copy(c.pixels.begin(), c.pixels.end(),
                      xv.begin() + static_cast<std::ptrdiff_t>((j - lo) * clip_elems));
            labels[j - lo] = c.label;
        }
        auto x = Tensor::from_data(
            {(hi - lo) * T, model.cfg.channels, model.cfg.height, model.cfg.width}, std::move(xv));
        auto stacks = compute_cam_batch(model, x, hi - lo, labels, BnPath::clean, Mode::eval);
        for (const auto& st : stacks) sum += frame_mass_entropy(st.frame_mass);
    }
    return sum / static_cast<double>(probe.size());
}

std::vector<AblationCell> default_ablation_grid(const TafConfig& base) {
    std::vector<AblationCell> cells;
    auto push = [&](const std::string& axis, const std::string& label, TafConfig cfg) {
        cells.push_back({axis, label, std::move(cfg)});
    };
    for (float a : {0.2f, 0.5f, 0.7f, 0.8f}) {
        TafConfig c = base;
        c.alpha = a;
        push("alpha", fmt(a), c);
    }
    for (auto [eps255, k] : {std::pair{6, 1}, {6, 3}, {64, 1}, {64, 3}}) {
        TafConfig c = base;
        c.attack.epsilon = static_cast<float>(eps255) / 255.0f;
        c.attack.beta = c.attack.epsilon / 2.0f;
        c.attack.steps = static_cast<std::size_t>(k);
        push("attack", "eps" + std::to_string(eps255) + "_k" + std::to_string(k), c);
    }
    for (std::size_t n : {std::size_t{2}, std::size_t{4}, std::size_t{8}}) {
        TafConfig c = base;
        c.attack.frames_n = n;
        push("frames_n", std::to_string(n), c);
    }
    {
        TafConfig c = base;
        c.attack.inclusion = InclusionPolicy::all;
        push("inclusion", "all", c);
        c.attack.inclusion = InclusionPolicy::correct_only;
        push("inclusion", "correct", c);
        c.attack.inclusion = InclusionPolicy::incorrect_only;
        push("inclusion", "incorrect", c);
    }
    {
        TafConfig c = base;
        c.attack.loss = LossKind::cam;
        push("loss", "cam", c);
        c.attack.loss = LossKind::cross_entropy;
        push("loss", "ce", c);
    }
    return cells;
}

std::vector<AblationRow> ablation_sweep(const Checkpoint& pretrained, const Dataset& train,
                                        const Dataset& val, const std::vector<AblationCell>& cells) {
    if (cells.empty()) throw ContractError("ablation_sweep: empty grid");
    std::vector<AblationRow> rows;
    for (const auto& cell : cells) {
        VideoModel model;
        Sgd opt;
        apply_checkpoint(pretrained, model, &opt);
        (void)finetune_taf(model, opt, train, val, cell.cfg, static_cast<std::size_t>(pretrained.epoch()));
        auto ev = evaluate(model, val);
        rows.push_back({cell.axis, cell.label, ev.top1, ev.top5});
    }
    return rows;
}

}  // namespace taflab
