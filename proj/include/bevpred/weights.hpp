#pragma once

#include "bevpred/geometry.hpp"
#include "bevpred/heads.hpp"
#include "bevpred/posesync.hpp"
#include "bevpred/pyramid.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bevpred {

struct ModelConfig {
    BevGrid grid{32, 32, 0.5, default_z_anchors()};
    PosesyncConfig posesync;
    PyramidConfig pyramid;
    HeadsConfig heads;

    std::size_t channels() const { return posesync.channels; }
    void validate() const;
};

struct ModelWeights {
    PosesyncWeights posesync;
    PyramidWeights pyramid;
    HeadsWeights heads;
};

/// Allocates every weight tensor with the shapes the config implies (zeros).
ModelWeights make_model(const ModelConfig& cfg);

/// Seeded uniform(-1/sqrt(C), 1/sqrt(C)) init over all learnable tensors.
void init_weights(ModelWeights& w, const ModelConfig& cfg, std::uint64_t seed);

std::vector<std::pair<std::string, Tensor*>> named_tensors(ModelWeights& w);
std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelWeights& w);

/// Closed-form learnable-scalar count derived from the config alone.
std::uint64_t count_params(const ModelConfig& cfg);
/// Enumeration count: sum of numel over every weight tensor.
std::uint64_t count_params(const ModelWeights& w);

/// Per-module closed forms (exposed for the accounting tests).
std::uint64_t posesync_param_count(const ModelConfig& cfg);
std::uint64_t pyramid_param_count(const ModelConfig& cfg);
std::uint64_t heads_param_count(const ModelConfig& cfg);

/// Weights manifest: `<dir>/manifest.txt` lists name=file, one BTF per tensor.
void save_weights(const std::string& dir, const ModelWeights& w);
ModelWeights load_weights(const std::string& manifest_path, const ModelConfig& cfg);

} // namespace bevpred
