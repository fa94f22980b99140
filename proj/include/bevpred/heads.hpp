#pragma once

#include "bevpred/tensor.hpp"

#include <cstddef>
#include <vector>

namespace bevpred {

/// One decoder head: conv3x3 -> channel layernorm -> GELU -> conv1x1.
struct HeadWeights {
    Tensor conv3_w; // C x C x 3 x 3
    Tensor conv3_b; // C
    Tensor ln_gamma, ln_beta;
    Tensor conv1_w; // out x C
    Tensor conv1_b; // out
};

struct HeadsConfig {
    std::size_t classes = 3; // background, vehicle, pedestrian
    std::size_t channels = 16;
};

struct HeadsWeights {
    HeadWeights seg;    // classes
    HeadWeights center; // 1, sigmoid
    HeadWeights offset; // 2
    HeadWeights flow;   // 2
    HeadWeights hdmap;  // 2, frame 0 only; trunk doubles as the spatial prior
};

struct PredictionFrame {
    Tensor seg;    // classes x X x Y logits
    Tensor center; // 1 x X x Y, post-sigmoid
    Tensor offset; // 2 x X x Y, cells
    Tensor flow;   // 2 x X x Y, cells/frame
};

struct PredictionBundle {
    std::vector<PredictionFrame> frames; // t = 0..T'
    Tensor hdmap;                        // 2 x X x Y logits (drivable, lane)
};

/// Everything but the final projection; input and output are X x Y x C.
Tensor head_trunk(const HeadWeights& w, const Tensor& x);

/// Full head on one frame; returns out x X x Y.
Tensor run_head(const HeadWeights& w, const Tensor& x);

/// Applies every head to each predicted frame (hdmap to frame 0 only).
PredictionBundle run_heads(const Tensor& d0, const HeadsWeights& weights,
                           const HeadsConfig& cfg);

Tensor sigmoid(const Tensor& x);

} // namespace bevpred
