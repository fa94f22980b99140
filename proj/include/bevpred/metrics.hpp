#pragma once

#include "bevpred/instances.hpp"
#include "bevpred/tensor.hpp"

#include <cstdint>
#include <vector>

namespace bevpred {

/// Dataset-accumulated IoU over binary frame masks:
/// sum_t |pred ∩ gt| / sum_t |pred ∪ gt|; 1.0 when every union is empty.
double seg_iou(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt);

struct VpqFrameTerm {
    std::size_t tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;
    double vpq = 0.0, vrq = 0.0, vsq = 0.0;
};

struct VpqResult {
    double vpq = 0.0, vrq = 0.0, vsq = 0.0; // means over frames 0..H
    std::vector<VpqFrameTerm> per_frame;
};

/// Video panoptic quality. Per frame, a (pred, gt) pair is a true positive
/// iff its frame IoU exceeds 0.5 and the pred track is bound to that gt track
/// (a pred binds to the gt it first TP-matches; overlapping a different gt
/// later counts against it). Per-frame IoU sums use a sorted order so any id
/// relabeling reproduces the scores bit-exactly.
VpqResult vpq(const InstanceVideo& pred, const InstanceVideo& gt);

/// Center crop of an X x Y map (or C x X x Y / frames x X x Y via the
/// overloads used in the evaluator) to new_x x new_y cells.
Tensor center_crop(const Tensor& map, std::size_t new_x, std::size_t new_y);

} // namespace bevpred
