#pragma once

#include <string>
#include <utility>
#include <vector>

#include "taflab/data.hpp"
#include "taflab/taf.hpp"

// Flat key=value run configuration. Nesting is expressed with dotted keys
// (attack.epsilon); precedence is command-line flags over file over defaults;
// unknown keys are rejected by name. Attack magnitudes are configured in
// 1/255 pixel units and converted when the attack config is built.

namespace taflab {

struct RunConfig {
    SyntheticSpec data;

    float alpha = 0.7f;
    std::size_t taf_epochs = 15;
    std::size_t batch_size = 32;
    float taf_lr = 0.01f;
    float taf_lr_decay = 10.0f;
    std::size_t taf_lr_decay_epoch = 10;

    float epsilon255 = 64.0f;  // attack budget, 1/255 units
    float beta255 = 32.0f;     // attack step size, 1/255 units
    std::size_t steps = 1;
    std::size_t frames_n = 8;
    std::string label_policy = "adaptive";  // adaptive | true | random
    std::string inclusion = "incorrect";   // all | correct | incorrect
    std::string loss = "cam";              // cam | ce

    std::size_t train_epochs = 30;
    float train_lr = 0.05f;
    float train_lr_decay = 10.0f;
    std::size_t train_lr_decay_epoch = 20;

    std::uint64_t seed = 0;
    std::string out = "run";
    std::string dataset_dir;
    std::string checkpoint;
    std::string taf_checkpoint;  // second model for side-by-side CAM dumps
    int severity = 3;
    std::size_t dump_clips = 2;
    std::string ablate_axis;  // empty runs the full grid

    AttackConfig attack_config() const;
    TafConfig taf_config() const;
    LrSchedule train_schedule() const;
};

// file_path may be empty (defaults only); flags are (key, value) pairs that
// override the file. Throws ConfigError naming the offending key.
RunConfig parse_config(const std::string& file_path,
                       const std::vector<std::pair<std::string, std::string>>& flags);

// Every key, one per line; re-parsing the echo reproduces the config exactly.
std::string echo_config(const RunConfig& cfg);

}  // namespace taflab
