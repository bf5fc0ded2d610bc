#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "taflab/tensor.hpp"

// Synthetic two-phase-motion benchmark. Each clip shows a small bright sprite
// executing one primitive motion (up/down/left/right) for the first phase of
// the clip and a second one for the rest; the label encodes the ORDERED pair,
// so 4 motions give 16 classes and order sensitivity by construction.
// Corruption generators produce out-of-distribution variants in eight kinds
// with a fixed severity-to-parameter table.

namespace taflab {

struct VideoClip {
    std::vector<float> pixels;  // [T*C*H*W], all values in [0,1]
    int label = 0;
    std::uint64_t clip_id = 0;
    std::size_t frames = 0, channels = 0, height = 0, width = 0;
};

struct SyntheticSpec {
    std::size_t n_classes = 16;
    std::size_t frames = 8;
    std::size_t height = 32, width = 32;
    std::size_t sprite = 6;       // square sprite side, pixels
    std::size_t phase_split = 4;  // first frame of the second phase
    float noise_floor = 0.08f;    // background noise amplitude
    std::size_t train_size = 4000, val_size = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Dataset {
    SyntheticSpec spec;
    std::vector<VideoClip> clips;
};

// label = 4 * first_motion + second_motion with up=0, down=1, left=2, right=3
std::pair<Dataset, Dataset> generate_dataset(const SyntheticSpec& spec);

enum class CorruptionKind {
    gaussian_noise,
    impulse_noise,
    speckle_noise,
    gaussian_blur,
    defocus_blur,
    zoom_blur,
    snow,
    brightness,
};

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    int severity = 3;  // 1..5
    std::uint64_t seed = 0;
};

extern const std::vector<std::pair<std::string, CorruptionKind>> kCorruptionKinds;

CorruptionKind corruption_kind_from_name(const std::string& name);
std::string corruption_kind_name(CorruptionKind kind);

VideoClip corrupt(const VideoClip& clip, const CorruptionSpec& spec);

// Deterministic shuffled batch stream; the final partial batch is kept.
struct Batch {
    Tensor x;  // [n*T, C, H, W]
    std::vector<int> labels;
    std::vector<std::uint64_t> clip_ids;
    std::size_t clips = 0;
};

class Loader {
public:
    Loader(const std::vector<VideoClip>& clips, std::size_t batch_size);

    void shuffle(std::uint64_t seed);  // Fisher-Yates on our own stream
    std::size_t num_batches() const;
    Batch batch(std::size_t index) const;

private:
    const std::vector<VideoClip>* clips_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
};

// Directory layout: header.txt (key=value spec fields), labels.txt
// ("clip_id label" per line), clips/<clip_id>.raw (little-endian f32).
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace taflab
