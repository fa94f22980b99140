#pragma once

#include "bevpred/heads.hpp"
#include "bevpred/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bevpred {

struct InstanceCenter {
    std::size_t x = 0, y = 0;
    double score = 0.0;
};

struct InstanceParams {
    double center_threshold = 0.1; // sigma_c
    std::size_t max_instances = 100;
    double match_radius = 3.0; // cells
};

struct TrackPoint {
    std::uint32_t id = 0;
    int frame = 0;
    double x = 0.0, y = 0.0; // centroid, cells
};

struct InstanceVideo {
    std::vector<Tensor> id_maps; // X x Y, 0 = background
    std::vector<TrackPoint> tracks;
};

/// 3x3 local maxima of the heatmap with score >= threshold, strongest first,
/// at most max_k.
std::vector<InstanceCenter> find_centers(const Tensor& heat, double threshold, std::size_t max_k);

/// Cells with seg prob > 0.5 vote at (cell + offset) and join the nearest
/// center; returns a per-frame id map with ids 1..centers.size().
Tensor assign_pixels(const Tensor& seg_prob, const Tensor& offset,
                     const std::vector<InstanceCenter>& centers);

struct DecodedFrame {
    std::vector<InstanceCenter> centers;
    Tensor id_map; // ids index into centers (1-based)
    Tensor flow;   // 2 x X x Y, used for propagation to the next frame
};

/// Links per-frame detections into temporally consistent tracks: centroids
/// propagated by mean flow, greedy nearest-neighbor matching in score order
/// within match_radius; unmatched detections start fresh ids.
InstanceVideo associate_tracks(const std::vector<DecodedFrame>& frames, double match_radius);

/// Full decode of a prediction bundle (vehicle class).
InstanceVideo decode_instances(const PredictionBundle& bundle, const InstanceParams& params);

void save_instance_video(const std::string& dir, const InstanceVideo& video);
InstanceVideo load_instance_video(const std::string& dir);

} // namespace bevpred
