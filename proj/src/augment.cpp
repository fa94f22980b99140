#include "bevpred/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace bevpred {

ImageAug draw_image_aug(const ImageAugConfig& cfg, Rng& rng) {
    ImageAug a;
    a.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    a.rotation = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
    a.hflip = cfg.allow_hflip && rng.uniform() < 0.5;
    return a;
}

Mat3 image_aug_matrix(const ImageAug& aug, std::size_t width, std::size_t height) {
    const double cu = (static_cast<double>(width) - 1.0) / 2.0;
    const double cv = (static_cast<double>(height) - 1.0) / 2.0;
    Mat3 flip = Mat3::identity();
    if (aug.hflip) {
        flip(0, 0) = -1.0;
        flip(0, 2) = static_cast<double>(width) - 1.0;
    }
    const double c = std::cos(aug.rotation) * aug.scale;
    const double s = std::sin(aug.rotation) * aug.scale;
    Mat3 rs = Mat3::identity();
    rs(0, 0) = c;
    rs(0, 1) = -s;
    rs(1, 0) = s;
    rs(1, 1) = c;
    Mat3 to_ctr = Mat3::identity();
    to_ctr(0, 2) = -cu;
    to_ctr(1, 2) = -cv;
    Mat3 from_ctr = Mat3::identity();
    from_ctr(0, 2) = cu;
    from_ctr(1, 2) = cv;
    return from_ctr * rs * to_ctr * flip;
}

AugmentedImage apply_image_aug(const Tensor& feature, const Intrinsics& k, const ImageAug& aug) {
    if (feature.rank() != 3 || feature.extent(0) != k.height || feature.extent(1) != k.width) {
        throw std::invalid_argument("apply_image_aug: feature does not match intrinsics");
    }
    const Mat3 a = image_aug_matrix(aug, k.width, k.height);
    const Mat3 inv = a.inverse();
    AugmentedImage out;
    out.calib = a * k.matrix();
    out.feature = Tensor(feature.dims(), feature.dtype());
    const std::size_t h = k.height, w = k.width, c = feature.extent(2);
    for (std::size_t v = 0; v < h; ++v) {
        for (std::size_t u = 0; u < w; ++u) {
            const Vec3 src = inv * Vec3{static_cast<double>(u), static_cast<double>(v), 1.0};
            const Sample s = bilinear_sample(feature, src.y, src.x);
            for (std::size_t ch = 0; ch < c; ++ch) {
                out.feature(v, u, ch) = s.value[ch];
            }
        }
    }
    return out;
}

BevAug draw_bev_aug(Rng& rng) {
    BevAug a;
    a.rotation = static_cast<BevRotation>(rng.uniform_int(4));
    a.flip_x = rng.uniform() < 0.5;
    a.flip_y = rng.uniform() < 0.5;
    return a;
}

namespace {

void map_index(const BevAug& aug, std::size_t xc, std::size_t yc, std::size_t x, std::size_t y,
               std::size_t& ox, std::size_t& oy) {
    std::size_t fx = aug.flip_x ? xc - 1 - x : x;
    std::size_t fy = aug.flip_y ? yc - 1 - y : y;
    switch (aug.rotation) {
    case BevRotation::R0:
        ox = fx;
        oy = fy;
        break;
    case BevRotation::R90:
        ox = xc - 1 - fy;
        oy = fx;
        break;
    case BevRotation::R180:
        ox = xc - 1 - fx;
        oy = yc - 1 - fy;
        break;
    case BevRotation::R270:
        ox = fy;
        oy = yc - 1 - fx;
        break;
    }
}

void map_vector(const BevAug& aug, double vx, double vy, double& ox, double& oy) {
    if (aug.flip_x) vx = -vx;
    if (aug.flip_y) vy = -vy;
    switch (aug.rotation) {
    case BevRotation::R0:
        ox = vx;
        oy = vy;
        break;
    case BevRotation::R90:
        ox = -vy;
        oy = vx;
        break;
    case BevRotation::R180:
        ox = -vx;
        oy = -vy;
        break;
    case BevRotation::R270:
        ox = vy;
        oy = -vx;
        break;
    }
}

void check_square(const BevAug& aug, std::size_t xc, std::size_t yc) {
    if ((aug.rotation == BevRotation::R90 || aug.rotation == BevRotation::R270) && xc != yc) {
        throw std::invalid_argument("quarter-turn BEV augmentation needs a square grid");
    }
}

} // namespace

Tensor transform_bev_cells(const Tensor& map, const BevAug& aug) {
    if (map.rank() != 2 && map.rank() != 3) {
        throw std::invalid_argument("transform_bev_cells expects X x Y [x C]");
    }
    const std::size_t xc = map.extent(0), yc = map.extent(1);
    const std::size_t c = map.rank() == 3 ? map.extent(2) : 1;
    check_square(aug, xc, yc);
    Tensor out(map.dims(), map.dtype());
    for (std::size_t x = 0; x < xc; ++x) {
        for (std::size_t y = 0; y < yc; ++y) {
            std::size_t ox, oy;
            map_index(aug, xc, yc, x, y, ox, oy);
            const double* src = map.data() + (x * yc + y) * c;
            double* dst = out.data() + (ox * yc + oy) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                dst[ch] = src[ch];
            }
        }
    }
    return out;
}

Tensor transform_bev_channels(const Tensor& map, const BevAug& aug) {
    if (map.rank() != 3) {
        throw std::invalid_argument("transform_bev_channels expects C x X x Y");
    }
    const std::size_t c = map.extent(0), xc = map.extent(1), yc = map.extent(2);
    check_square(aug, xc, yc);
    Tensor out(map.dims(), map.dtype());
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                std::size_t ox, oy;
                map_index(aug, xc, yc, x, y, ox, oy);
                out(ch, ox, oy) = map(ch, x, y);
            }
        }
    }
    return out;
}

Tensor transform_bev_vectors(const Tensor& field, const BevAug& aug) {
    if (field.rank() != 3 || field.extent(0) != 2) {
        throw std::invalid_argument("transform_bev_vectors expects 2 x X x Y");
    }
    const std::size_t xc = field.extent(1), yc = field.extent(2);
    check_square(aug, xc, yc);
    Tensor out(field.dims(), field.dtype());
    for (std::size_t x = 0; x < xc; ++x) {
        for (std::size_t y = 0; y < yc; ++y) {
            std::size_t ox, oy;
            map_index(aug, xc, yc, x, y, ox, oy);
            double vx, vy;
            map_vector(aug, field(0, x, y), field(1, x, y), vx, vy);
            out(0, ox, oy) = vx;
            out(1, ox, oy) = vy;
        }
    }
    return out;
}

GroundTruthFrame transform_gt(const GroundTruthFrame& gt, const BevAug& aug) {
    GroundTruthFrame out;
    out.seg = transform_bev_channels(gt.seg, aug);
    out.instance_ids = transform_bev_cells(gt.instance_ids, aug);
    out.centers = transform_bev_cells(gt.centers, aug);
    out.offsets = transform_bev_vectors(gt.offsets, aug);
    out.flow = transform_bev_vectors(gt.flow, aug);
    out.hdmap = transform_bev_channels(gt.hdmap, aug);
    return out;
}

} // namespace bevpred
