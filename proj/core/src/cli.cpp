#include "taflab/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "taflab/attack.hpp"
#include "taflab/cam.hpp"
#include "taflab/checkpoint.hpp"
#include "taflab/errors.hpp"
#include "taflab/ppm.hpp"
#include "taflab/taf.hpp"

namespace taflab {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::string> kFlagAliases = {
    {"epsilon", "attack.epsilon"},     {"beta", "attack.beta"},
    {"steps", "attack.steps"},         {"frames-n", "attack.frames_n"},
    {"inclusion", "attack.inclusion"}, {"loss", "attack.loss"},
    {"label-policy", "attack.label_policy"},
    {"epochs", "taf.epochs"},          {"train-epochs", "train.epochs"},
    {"dataset-dir", "dataset_dir"},    {"taf-checkpoint", "taf_checkpoint"},
    {"axis", "ablate_axis"},
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::pair<Dataset, Dataset> obtain_dataset(const RunConfig& cfg) {
    if (!cfg.dataset_dir.empty()) {
        const auto tdir = (fs::path(cfg.dataset_dir) / "train").string();
        const auto vdir = (fs::path(cfg.dataset_dir) / "val").string();
        if (fs::exists(fs::path(tdir) / "header.txt") && fs::exists(fs::path(vdir) / "header.txt"))
            return {load_dataset(tdir), load_dataset(vdir)};
        auto [train, val] = generate_dataset(cfg.data);
        save_dataset(train, tdir);
        save_dataset(val, vdir);
        return {std::move(train), std::move(val)};
    }
    return generate_dataset(cfg.data);
}

void prepare_out(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec) throw IoError("cli: cannot create output directory " + cfg.out);
    std::ofstream echo(fs::path(cfg.out) / "config.txt");
    echo << echo_config(cfg);
    if (!echo) throw IoError("cli: cannot write resolved config in " + cfg.out);
}

void write_metrics(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream os(path);
    os << kMetricsHeader << "\n";
    for (const auto& r : records) os << r.csv_line() << "\n";
    if (!os) throw IoError("cli: cannot write " + path);
}

Checkpoint require_checkpoint(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("cli: this command needs --checkpoint");
    return load_checkpoint(cfg.checkpoint);
}

void print_eval(const MetricsRecord& ev) {
    std::ostringstream os;
    os.precision(2);
    os << std::fixed << "top1=" << ev.top1 << " top5=" << ev.top5 << " loss=" << ev.clean_loss;
    std::cout << os.str() << "\n";
}

int cmd_train(const RunConfig& cfg) {
    prepare_out(cfg);
    auto [train, val] = obtain_dataset(cfg);
    VideoModel model;
    Sgd opt;
    std::size_t start_epoch = 0;
    if (!cfg.checkpoint.empty()) {
        apply_checkpoint(load_checkpoint(cfg.checkpoint), model, &opt);
        start_epoch = static_cast<std::size_t>(load_checkpoint(cfg.checkpoint).epoch());
    } else {
        Rng rng(cfg.seed);
        model.init(rng);
    }
    auto res = train_baseline(model, opt, train, val, cfg.train_epochs, cfg.train_schedule(),
                              cfg.batch_size, cfg.seed, start_epoch);
    write_metrics((fs::path(cfg.out) / "metrics.csv").string(), res.metrics);
    save_checkpoint(checkpoint_from_model(model, &opt, static_cast<int>(start_epoch + cfg.train_epochs),
                                          fnv1a(echo_config(cfg))),
                    (fs::path(cfg.out) / "checkpoint.ckpt").string());
    if (!res.metrics.empty()) print_eval(res.metrics.back());
    return 0;
}

int cmd_finetune(const RunConfig& cfg) {
    prepare_out(cfg);
    auto [train, val] = obtain_dataset(cfg);
    auto ck = require_checkpoint(cfg);
    VideoModel model;
    Sgd opt;
    apply_checkpoint(ck, model, &opt);
    auto res = finetune_taf(model, opt, train, val, cfg.taf_config(),
                            static_cast<std::size_t>(ck.epoch()));
    write_metrics((fs::path(cfg.out) / "metrics.csv").string(), res.metrics);
    {
        std::ofstream os(fs::path(cfg.out) / "steps.csv");
        os << "step,total,clean,adv\n";
        os.precision(10);
        for (std::size_t i = 0; i < res.step_losses.size(); ++i)
            os << i << "," << res.step_losses[i].total << "," << res.step_losses[i].clean << ","
               << res.step_losses[i].adv << "\n";
    }
    save_checkpoint(
        checkpoint_from_model(model, &opt, ck.epoch() + static_cast<int>(cfg.taf_epochs),
                              fnv1a(echo_config(cfg))),
        (fs::path(cfg.out) / "checkpoint.ckpt").string());
    if (!res.metrics.empty()) print_eval(res.metrics.back());
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    prepare_out(cfg);
    auto [train, val] = obtain_dataset(cfg);
    VideoModel model;
    if (!cfg.checkpoint.empty()) apply_checkpoint(load_checkpoint(cfg.checkpoint), model, nullptr);
    else {
        Rng rng(cfg.seed);
        model.init(rng);
    }
    auto ev = evaluate(model, val);
    write_metrics((fs::path(cfg.out) / "eval.csv").string(), {ev});
    print_eval(ev);
    return 0;
}

int cmd_eval_corrupt(const RunConfig& cfg) {
    prepare_out(cfg);
    auto [train, val] = obtain_dataset(cfg);
    auto ck = require_checkpoint(cfg);
    VideoModel model;
    apply_checkpoint(ck, model, nullptr);
    std::ofstream os(fs::path(cfg.out) / "corruption.tsv");
    os << "kind\tseverity\ttop1\ttop5\n";
    os.precision(10);
    for (const auto& [name, kind] : kCorruptionKinds) {
        CorruptionSpec cs{kind, cfg.severity, cfg.seed};
        auto ev = evaluate(model, val, cs);
        os << name << "\t" << cfg.severity << "\t" << ev.top1 << "\t" << ev.top5 << "\n";
        std::cout << name << " top1=" << ev.top1 << "\n";
    }
    if (!os) throw IoError("cli: cannot write corruption report");
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    prepare_out(cfg);
    auto [train, val] = obtain_dataset(cfg);
    auto ck = require_checkpoint(cfg);
    auto grid = default_ablation_grid(cfg.taf_config());
    if (!cfg.ablate_axis.empty()) {
        std::erase_if(grid, [&](const AblationCell& c) { return c.axis != cfg.ablate_axis; });
        if (grid.empty()) throw ConfigError("cli: unknown ablation axis '" + cfg.ablate_axis + "'");
    }
    auto rows = ablation_sweep(ck, train, val, grid);
    std::ofstream os(fs::path(cfg.out) / "ablation.tsv");
    os << "axis\tlabel\ttop1\ttop5\n";
    os.precision(10);
    for (const auto& r : rows)
        os << r.axis << "\t" << r.label << "\t" << r.top1 << "\t" << r.top5 << "\n";
    if (!os) throw IoError("cli: cannot write ablation report");
    return 0;
}

Tensor clip_tensor(const VideoClip& c) {
    return Tensor::from_data({c.frames, c.channels, c.height, c.width}, c.pixels);
}

std::vector<Image> cam_row(VideoModel& model, const VideoClip& clip) {
    auto st = compute_cam(model, clip_tensor(clip), clip.label);
    std::vector<Image> row;
    for (std::size_t t = 0; t < clip.frames; ++t)
        row.push_back(cam_overlay(clip.pixels.data() + t * clip.height * clip.width, clip.height,
                                  clip.width, st.maps.values().data() + t * st.h * st.w, st.h,
                                  st.w));
    return row;
}

int cmd_cam_dump(const RunConfig& cfg) {
    prepare_out(cfg);
    auto [train, val] = obtain_dataset(cfg);
    auto ck = require_checkpoint(cfg);
    VideoModel base;
    apply_checkpoint(ck, base, nullptr);
    VideoModel second;
    apply_checkpoint(cfg.taf_checkpoint.empty() ? ck : load_checkpoint(cfg.taf_checkpoint), second,
                     nullptr);
    for (std::size_t i = 0; i < std::min(cfg.dump_clips, val.clips.size()); ++i) {
        const auto& clip = val.clips[i];
        // row 1: first model's attention, row 2: second model's
        auto grid = compose_grid({cam_row(base, clip), cam_row(second, clip)});
        write_ppm(grid,
                  (fs::path(cfg.out) / ("cam_" + std::to_string(clip.clip_id) + ".ppm")).string());
    }
    return 0;
}

int cmd_attack_dump(const RunConfig& cfg) {
    prepare_out(cfg);
    auto [train, val] = obtain_dataset(cfg);
    auto ck = require_checkpoint(cfg);
    VideoModel model;
    apply_checkpoint(ck, model, nullptr);
    AttackConfig ac = cfg.attack_config();
    ac.inclusion = InclusionPolicy::all;
    Rng rng(cfg.seed);
    for (std::size_t i = 0; i < std::min(cfg.dump_clips, val.clips.size()); ++i) {
        const auto& clip = val.clips[i];
        auto x = clip_tensor(clip);
        auto aug = attack_batch(model, x, 1, {clip.label}, ac, rng);
        const std::size_t fsz = clip.height * clip.width;
        std::vector<Image> orig, pert, delta;
        for (std::size_t t = 0; t < clip.frames; ++t) {
            orig.push_back(gray_image(clip.pixels.data() + t * fsz, clip.height, clip.width));
            pert.push_back(
                gray_image(aug.clips.values().data() + t * fsz, clip.height, clip.width));
            delta.push_back(delta_heatmap(aug.deltas.data() + t * fsz, clip.height, clip.width,
                                          std::max(ac.epsilon, 1e-6f)));
        }
        VideoClip attacked = clip;
        attacked.pixels = aug.clips.values();
        auto grid = compose_grid(
            {orig, pert, delta, cam_row(model, clip), cam_row(model, attacked)});
        write_ppm(grid,
                  (fs::path(cfg.out) / ("attack_" + std::to_string(clip.clip_id) + ".ppm")).string());
    }
    return 0;
}

}  // namespace

RunConfig resolve_config(const std::vector<std::string>& args) {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> flags;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const auto& a = args[i];
        if (a.size() < 3 || a.substr(0, 2) != "--")
            throw ConfigError("cli: expected --key value, got '" + a + "'");
        if (i + 1 >= args.size()) throw ConfigError("cli: flag '" + a + "' is missing its value");
        std::string key = a.substr(2);
        const auto& value = args[++i];
        if (key == "config") {
            config_path = value;
            continue;
        }
        auto alias = kFlagAliases.find(key);
        if (alias != kFlagAliases.end()) key = alias->second;
        flags.emplace_back(key, value);
    }
    return parse_config(config_path, flags);
}

int run_cli(int argc, const char* const* argv) {
    const std::string usage =
        "usage: taflab {train|finetune|eval|eval-corrupt|ablate|cam-dump|attack-dump} "
        "[--config FILE] [--key value ...]\n";
    if (argc < 2) {
        std::cerr << usage;
        return 1;
    }
    const std::string cmd = argv[1];
    std::vector<std::string> args(argv + 2, argv + argc);
    try {
        const RunConfig cfg = resolve_config(args);
        if (cmd == "train") return cmd_train(cfg);
        if (cmd == "finetune") return cmd_finetune(cfg);
        if (cmd == "eval") return cmd_eval(cfg);
        if (cmd == "eval-corrupt") return cmd_eval_corrupt(cfg);
        if (cmd == "ablate") return cmd_ablate(cfg);
        if (cmd == "cam-dump") return cmd_cam_dump(cfg);
        if (cmd == "attack-dump") return cmd_attack_dump(cfg);
        std::cerr << "unknown command '" << cmd << "'\n" << usage;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace taflab
