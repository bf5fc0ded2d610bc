#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <taflab/checkpoint.hpp>
#include <taflab/cli.hpp>
#include <taflab/config.hpp>
#include <taflab/errors.hpp>

using namespace taflab;
namespace fs = std::filesystem;

namespace {

// Scratch directory removed when the suite object dies.
struct Scratch {
    fs::path dir;
    Scratch() {
        dir = fs::temp_directory_path() / "taflab_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

int run(const std::vector<std::string>& argv) {
    std::vector<const char*> raw = {"taflab"};
    for (const auto& a : argv) raw.push_back(a.c_str());
    return run_cli(static_cast<int>(raw.size()), raw.data());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// Arguments that make every command finish in seconds: a tiny dataset and a
// one-epoch schedule. The model geometry (8 frames, 32x32) is fixed, so only
// the split sizes shrink.
std::vector<std::string> tiny_args(const Scratch& s, const std::string& out) {
    return {"--data.train_size", "32",  "--data.val_size", "16",
            "--train-epochs",    "1",   "--epochs",        "1",
            "--batch_size",      "16",  "--dataset-dir",   s.path("data"),
            "--out",             s.path(out)};
}

void append(std::vector<std::string>& args, std::initializer_list<std::string> extra) {
    args.insert(args.end(), extra);
}

}  // namespace

TEST_CASE("flag aliases map to dotted keys and flags override the file") {
    Scratch s;
    {
        std::ofstream f(s.path("run.cfg"));
        f << "# comment line\n";
        f << "alpha=0.5\n";
        f << "attack.steps=3\n";
        f << "out=from_file\n";
    }
    auto cfg = resolve_config({"--config", s.path("run.cfg"), "--alpha", "0.7", "--epsilon", "16",
                               "--frames-n", "4", "--label-policy", "true"});
    CHECK(cfg.alpha == 0.7f);            // flag beats file
    CHECK(cfg.steps == 3);               // file beats default (1)
    CHECK(cfg.out == "from_file");       // file beats default
    CHECK(cfg.epsilon255 == 16.0f);      // alias --epsilon -> attack.epsilon
    CHECK(cfg.frames_n == 4);            // alias --frames-n -> attack.frames_n
    CHECK(cfg.label_policy == "true");   // alias --label-policy
    CHECK(cfg.attack_config().epsilon == doctest::Approx(16.0f / 255.0f));
}

TEST_CASE("unknown keys and malformed flags are rejected by name") {
    CHECK_THROWS_WITH_AS((void)resolve_config({"--no.such.key", "1"}),
                         doctest::Contains("no.such.key"), ConfigError);
    CHECK_THROWS_AS((void)resolve_config({"--alpha"}), ConfigError);       // missing value
    CHECK_THROWS_AS((void)resolve_config({"alpha", "0.5"}), ConfigError);  // missing --
    Scratch s;
    {
        std::ofstream f(s.path("bad.cfg"));
        f << "alpha 0.5\n";  // no '='
    }
    CHECK_THROWS_AS((void)resolve_config({"--config", s.path("bad.cfg")}), ConfigError);
    CHECK_THROWS_AS((void)resolve_config({"--config", s.path("absent.cfg")}), ConfigError);
    CHECK_THROWS_WITH_AS((void)resolve_config({"--inclusion", "sometimes"}).attack_config(),
                         doctest::Contains("sometimes"), ConfigError);
}

TEST_CASE("echoed config re-parses to the identical key set") {
    RunConfig cfg;
    cfg.alpha = 0.33f;
    cfg.epsilon255 = 12.5f;
    cfg.data.noise_floor = 0.123456789f;
    cfg.out = "somewhere";
    cfg.label_policy = "random";

    Scratch s;
    {
        std::ofstream f(s.path("echo.cfg"));
        f << echo_config(cfg);
    }
    auto back = parse_config(s.path("echo.cfg"), {});
    CHECK(echo_config(back) == echo_config(cfg));
    CHECK(back.alpha == cfg.alpha);
    CHECK(back.epsilon255 == cfg.epsilon255);
    CHECK(back.data.noise_floor == cfg.data.noise_floor);
}

TEST_CASE("train, finetune and eval run end to end on a tiny dataset") {
    Scratch s;

    auto train_args = tiny_args(s, "base");
    train_args.insert(train_args.begin(), "train");
    REQUIRE(run(train_args) == 0);
    REQUIRE(fs::exists(s.path("base/checkpoint.ckpt")));
    REQUIRE(fs::exists(s.path("base/config.txt")));

    const std::string metrics = read_file(s.path("base/metrics.csv"));
    CHECK(metrics.rfind("epoch,split,top1,top5,clean_loss,adv_loss,cam_entropy\n", 0) == 0);
    CHECK(count_lines(metrics) == 3);  // header + train row + val row
    CHECK(metrics.find("0,train,") != std::string::npos);
    CHECK(metrics.find("0,val,") != std::string::npos);

    auto ft_args = tiny_args(s, "taf");
    ft_args.insert(ft_args.begin(), "finetune");
    append(ft_args, {"--checkpoint", s.path("base/checkpoint.ckpt"), "--inclusion", "all"});
    REQUIRE(run(ft_args) == 0);
    REQUIRE(fs::exists(s.path("taf/checkpoint.ckpt")));
    const std::string ft_metrics = read_file(s.path("taf/metrics.csv"));
    CHECK(count_lines(ft_metrics) == 3);
    CHECK(ft_metrics.find("1,val,") != std::string::npos);  // epochs continue globally
    const std::string steps = read_file(s.path("taf/steps.csv"));
    CHECK(steps.rfind("step,total,clean,adv\n", 0) == 0);
    CHECK(count_lines(steps) == 3);  // header + 32/16 batches

    auto eval_args = tiny_args(s, "eval");
    eval_args.insert(eval_args.begin(), "eval");
    append(eval_args, {"--checkpoint", s.path("taf/checkpoint.ckpt")});
    REQUIRE(run(eval_args) == 0);
    CHECK(count_lines(read_file(s.path("eval/eval.csv"))) == 2);

    SUBCASE("identical rerun reproduces metrics byte for byte") {
        auto again = tiny_args(s, "base2");
        again.insert(again.begin(), "train");
        REQUIRE(run(again) == 0);
        CHECK(read_file(s.path("base2/metrics.csv")) == metrics);
        // checkpoints embed a hash of the resolved config (the out dirs
        // differ), so compare the stored tensors instead of raw bytes
        auto a = load_checkpoint(s.path("base/checkpoint.ckpt"));
        auto b = load_checkpoint(s.path("base2/checkpoint.ckpt"));
        REQUIRE(a.tensors.size() == b.tensors.size());
        for (const auto& [name, entry] : a.tensors) {
            if (name == "__fingerprint") continue;
            REQUIRE(b.tensors.count(name) == 1);
            CHECK(b.tensors.at(name).second == entry.second);
        }
    }
}

TEST_CASE("corruption report covers every kind and dumps are valid images") {
    Scratch s;
    auto train_args = tiny_args(s, "base");
    train_args.insert(train_args.begin(), "train");
    REQUIRE(run(train_args) == 0);

    SUBCASE("eval-corrupt writes one row per corruption kind") {
        auto args = tiny_args(s, "corr");
        args.insert(args.begin(), "eval-corrupt");
        append(args, {"--checkpoint", s.path("base/checkpoint.ckpt"), "--severity", "2"});
        REQUIRE(run(args) == 0);
        const std::string tsv = read_file(s.path("corr/corruption.tsv"));
        CHECK(tsv.rfind("kind\tseverity\ttop1\ttop5\n", 0) == 0);
        CHECK(count_lines(tsv) == 9);  // header + 8 kinds
        for (const char* kind : {"gaussian-noise", "impulse-noise", "speckle-noise",
                                 "gaussian-blur", "defocus-blur", "zoom-blur", "snow",
                                 "brightness"})
            CHECK(tsv.find(std::string(kind) + "\t2\t") != std::string::npos);
    }

    SUBCASE("cam-dump emits one binary image grid per requested clip") {
        auto args = tiny_args(s, "cam");
        args.insert(args.begin(), "cam-dump");
        append(args, {"--checkpoint", s.path("base/checkpoint.ckpt"), "--dump_clips", "1"});
        REQUIRE(run(args) == 0);
        // validation clip ids start after the training split
        const std::string ppm = read_file(s.path("cam/cam_32.ppm"));
        CHECK(ppm.rfind("P6\n", 0) == 0);
        // 2 rows x 8 frames of 32x32 RGB plus 2px separators
        const std::size_t w = 8 * 32 + 7 * 2, h = 2 * 32 + 2;
        CHECK(ppm.find(std::to_string(w) + " " + std::to_string(h) + "\n") != std::string::npos);
        CHECK(ppm.size() > w * h * 3);
    }

    SUBCASE("attack-dump stacks original, perturbed, delta and both attention rows") {
        auto args = tiny_args(s, "atk");
        args.insert(args.begin(), "attack-dump");
        append(args, {"--checkpoint", s.path("base/checkpoint.ckpt"), "--dump_clips", "1"});
        REQUIRE(run(args) == 0);
        const std::string ppm = read_file(s.path("atk/attack_32.ppm"));
        CHECK(ppm.rfind("P6\n", 0) == 0);
        const std::size_t w = 8 * 32 + 7 * 2, h = 5 * 32 + 4 * 2;
        CHECK(ppm.find(std::to_string(w) + " " + std::to_string(h) + "\n") != std::string::npos);
    }

    SUBCASE("ablate restricted to one axis reports exactly its cells") {
        auto args = tiny_args(s, "abl");
        args.insert(args.begin(), "ablate");
        append(args, {"--checkpoint", s.path("base/checkpoint.ckpt"), "--axis", "alpha"});
        REQUIRE(run(args) == 0);
        const std::string tsv = read_file(s.path("abl/ablation.tsv"));
        CHECK(tsv.rfind("axis\tlabel\ttop1\ttop5\n", 0) == 0);
        CHECK(count_lines(tsv) == 5);  // header + 4 alpha cells
        CHECK(tsv.find("\nalpha\t") != std::string::npos);
        CHECK(tsv.find("epsilon") == std::string::npos);
    }
}

TEST_CASE("failures exit nonzero without touching valid outputs") {
    Scratch s;
    CHECK(run({"finetune", "--out", s.path("x")}) == 1);     // finetune needs --checkpoint
    CHECK(run({"train", "--bogus", "1"}) == 1);              // unknown key
    CHECK(run({"frobnicate"}) == 1);                         // unknown command
    CHECK(run_cli(1, nullptr) == 1);                         // no command at all
    CHECK(run({"eval", "--checkpoint", s.path("missing.ckpt"), "--out", s.path("x")}) == 1);
}
