#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "taflab/nn.hpp"
#include "taflab/tensor.hpp"

// Checkpoint file: magic bytes "TAFCKPT1", little-endian throughout; then a
// u64 count of tensors; per tensor: u64 name length, UTF-8 name, u64 rank,
// u64 dims, raw 32-bit floats. Model parameters, both normalization paths'
// statistics, optimizer velocity, the epoch counter and the config
// fingerprint are all stored as named tensors.

namespace taflab {

struct Checkpoint {
    // Ordered by name so save -> load -> save is byte-identical.
    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;

    int epoch() const;
    std::uint64_t fingerprint() const;
    void set_epoch(int epoch);
    void set_fingerprint(std::uint64_t fp);
};

Checkpoint checkpoint_from_model(VideoModel& model, const Sgd* opt, int epoch,
                                 std::uint64_t config_fingerprint);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Restores parameters, running statistics and (when opt != nullptr) the
// optimizer velocity. Throws IoError on any missing name or dimension
// mismatch.
void apply_checkpoint(const Checkpoint& ck, VideoModel& model, Sgd* opt);

}  // namespace taflab
