#pragma once

#include "bevpred/geometry.hpp"
#include "bevpred/rng.hpp"
#include "bevpred/scene.hpp"
#include "bevpred/tensor.hpp"

namespace bevpred {

/// Image-view augmentation ranges; draw() records the applied transform so
/// intrinsics can be updated exactly.
struct ImageAugConfig {
    double scale_lo = 0.9, scale_hi = 1.1;
    double max_rotation = 0.1; // rad
    bool allow_hflip = true;
};

struct ImageAug {
    double scale = 1.0;
    double rotation = 0.0;
    bool hflip = false;
};

ImageAug draw_image_aug(const ImageAugConfig& cfg, Rng& rng);

/// Homogeneous 2D pixel transform of the augmentation (flip, then rotate and
/// scale about the image center).
Mat3 image_aug_matrix(const ImageAug& aug, std::size_t width, std::size_t height);

struct AugmentedImage {
    Tensor feature; // H x W x C, resampled
    Mat3 calib;     // K' = A * K; general 3x3, no longer a plain pinhole
};

/// Resamples the feature map under the augmentation and returns the updated
/// calibration, so project(K', p) == aug(project(K, p)) for every 3D point.
AugmentedImage apply_image_aug(const Tensor& feature, const Intrinsics& k, const ImageAug& aug);

enum class BevRotation { R0 = 0, R90 = 1, R180 = 2, R270 = 3 };

/// Right-angle BEV augmentation: exact index permutations; offset/flow
/// channels additionally get the vector part of the transform.
struct BevAug {
    BevRotation rotation = BevRotation::R0;
    bool flip_x = false;
    bool flip_y = false;
};

BevAug draw_bev_aug(Rng& rng);

/// Scalar rasters (features X x Y x C, or channel-first C x X x Y via
/// transform_bev_channels) are permuted; id maps stay exact.
Tensor transform_bev_cells(const Tensor& map, const BevAug& aug);      // X x Y or X x Y x C
Tensor transform_bev_channels(const Tensor& map, const BevAug& aug);   // C x X x Y
/// 2 x X x Y vector field: cells permuted and vectors rotated/flipped.
Tensor transform_bev_vectors(const Tensor& field, const BevAug& aug);

GroundTruthFrame transform_gt(const GroundTruthFrame& gt, const BevAug& aug);

} // namespace bevpred
