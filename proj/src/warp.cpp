#include "bevpred/warp.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bevpred {

EgoDelta ego_delta(const Pose& past, const Pose& now) {
    const Pose rel = now.inverse().compose(past);
    EgoDelta d;
    d.theta = rel.planar_yaw();
    d.dx = rel.translation().x;
    d.dy = rel.translation().y;
    return d;
}

WarpResult warp_bev(const Tensor& past, const BevGrid& grid, const EgoDelta& delta,
                    WarpResample mode) {
    if (past.rank() != 3 || past.extent(0) != grid.x_cells || past.extent(1) != grid.y_cells) {
        throw std::invalid_argument("warp_bev: map does not match grid");
    }
    const std::size_t xc = grid.x_cells, yc = grid.y_cells, c = past.extent(2);
    const double ctr_x = static_cast<double>(xc) / 2.0 - 0.5;
    const double ctr_y = static_cast<double>(yc) / 2.0 - 0.5;
    const double dcx = delta.dx / grid.resolution;
    const double dcy = delta.dy / grid.resolution;
    const double cs = std::cos(delta.theta), sn = std::sin(delta.theta);

    WarpResult res;
    res.warped = Tensor({xc, yc, c}, past.dtype());
    res.mask = Tensor({xc, yc}, Dtype::F32);
    for (std::size_t x = 0; x < xc; ++x) {
        for (std::size_t y = 0; y < yc; ++y) {
            // current cell -> past cell through the inverse delta, in cell units
            const double rx = static_cast<double>(x) - ctr_x - dcx;
            const double ry = static_cast<double>(y) - ctr_y - dcy;
            const double px = cs * rx + sn * ry + ctr_x;
            const double py = -sn * rx + cs * ry + ctr_y;
            const bool inside = px >= 0.0 && px <= static_cast<double>(xc - 1) && py >= 0.0 &&
                                py <= static_cast<double>(yc - 1);
            res.mask(x, y) = inside ? 1.0 : 0.0;
            if (mode == WarpResample::Bilinear) {
                const Sample s = bilinear_sample(past, px, py);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    res.warped(x, y, ch) = s.value[ch];
                }
            } else if (inside) {
                const std::size_t nx = static_cast<std::size_t>(std::lround(px));
                const std::size_t ny = static_cast<std::size_t>(std::lround(py));
                for (std::size_t ch = 0; ch < c; ++ch) {
                    res.warped(x, y, ch) = past(nx, ny, ch);
                }
            }
        }
    }
    return res;
}

namespace {

double cosine8(const double* a, const double* b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < 8; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

} // namespace

std::vector<SyncComparisonRow> distortion_report(const Scenario& scn, const BevGrid& grid,
                                                 std::size_t feature_channels) {
    for (const BoxSpec& b : scn.boxes) {
        if (b.vx != 0.0 || b.vy != 0.0 || b.yaw_rate != 0.0) {
            throw std::invalid_argument("distortion_report requires a static scene");
        }
    }
    // Ground-plane comparison grid: single z anchor at 0.
    const BevGrid ground(grid.x_cells, grid.y_cells, grid.resolution, {0.0});
    const std::size_t xc = ground.x_cells, yc = ground.y_cells;
    const Pose& ego_now = scn.ego_pose(0);

    const DeformAttnParams collapsed = DeformAttnParams::collapsed(feature_channels);
    const Tensor zero_queries = Tensor::zeros({xc, yc, feature_channels}, Dtype::F64);

    // Reference world encoding of every current cell.
    Tensor ref({xc, yc, 8}, Dtype::F64);
    for (std::size_t x = 0; x < xc; ++x) {
        for (std::size_t y = 0; y < yc; ++y) {
            const Vec3 w = ego_now.apply(ground.cell_to_metric_xy(static_cast<double>(x),
                                                                  static_cast<double>(y)));
            world_encoding(w.x, w.y, &ref(x, y, 0));
        }
    }

    std::vector<SyncComparisonRow> rows;
    for (int t = 1; t <= scn.past_frames; ++t) {
        const int frame = -t;
        const Pose& ego_past = scn.ego_pose(frame);
        const std::vector<FeatureImage> imgs = render_features(scn, frame, feature_channels);

        std::vector<ProjectionMatrix> proj_sync, proj_self;
        std::vector<Tensor> feats;
        for (std::size_t i = 0; i < scn.rig.cameras.size(); ++i) {
            const CameraConfig& cam = scn.rig.cameras[i];
            proj_sync.push_back(
                make_projection(cam.intrinsics, cam.cam_from_ego(), ego_past, ego_now));
            proj_self.push_back(
                make_projection(cam.intrinsics, cam.cam_from_ego(), ego_past, ego_past));
            feats.push_back(imgs[i].features);
        }

        // ---- pose-synchronized path ----
        const Tensor b_sync =
            cross_view_attention(zero_queries, feats, proj_sync, ground, collapsed);
        SyncComparisonRow sync_row{t, "sync", 0.0, 0.0, 0.0};
        std::size_t visible = 0, measured = 0;
        double cos_sum = 0.0, disp_sum = 0.0;
        std::size_t disp_count = 0;
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                const Vec3 p = ground.cell_to_metric(x, y, 0);
                bool any = false;
                double cell_disp = 0.0;
                std::size_t cell_cams = 0;
                for (std::size_t i = 0; i < feats.size(); ++i) {
                    const PixelPoint px = project(proj_sync[i], p);
                    if (!px.valid) continue;
                    any = true;
                    const Sample prov = bilinear_sample(imgs[i].provenance, px.v, px.u);
                    if (prov.value[3] > 0.999) { // interpolating across sky edges is meaningless
                        const Vec3 w = ego_now.apply(p);
                        cell_disp += std::hypot(prov.value[0] - w.x, prov.value[1] - w.y) /
                                     ground.resolution;
                        ++cell_cams;
                    }
                }
                if (!any) continue;
                ++visible;
                const double cossim =
                    cosine8(b_sync.data() + (x * yc + y) * feature_channels,
                            ref.data() + (x * yc + y) * 8);
                cos_sum += cossim;
                ++measured;
                if (cell_cams > 0) {
                    disp_sum += cell_disp / static_cast<double>(cell_cams);
                    ++disp_count;
                }
            }
        }
        sync_row.oob_fraction = 1.0 - static_cast<double>(visible) / static_cast<double>(xc * yc);
        sync_row.cosine = measured ? cos_sum / static_cast<double>(measured) : 0.0;
        sync_row.displacement = disp_count ? disp_sum / static_cast<double>(disp_count) : 0.0;
        rows.push_back(sync_row);

        // ---- warp baseline: encode in the past frame, then rigid-resample ----
        const Tensor b_past =
            cross_view_attention(zero_queries, feats, proj_self, ground, collapsed);
        const EgoDelta delta = ego_delta(ego_past, ego_now);
        const WarpResult wr = warp_bev(b_past, ground, delta);

        // Coordinate map in the past frame, warped alongside, to measure
        // where each current cell's content actually came from.
        Tensor coord({xc, yc, 2}, Dtype::F64);
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                const Vec3 w = ego_past.apply(ground.cell_to_metric_xy(static_cast<double>(x),
                                                                       static_cast<double>(y)));
                coord(x, y, 0) = w.x;
                coord(x, y, 1) = w.y;
            }
        }
        const WarpResult wc = warp_bev(coord, ground, delta);

        SyncComparisonRow warp_row{t, "warp", 0.0, 0.0, 0.0};
        std::size_t in_range = 0, wmeasured = 0;
        double wcos_sum = 0.0, wdisp_sum = 0.0;
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                if (wr.mask(x, y) == 0.0) continue;
                ++in_range;
                const Vec3 w = ego_now.apply(ground.cell_to_metric_xy(static_cast<double>(x),
                                                                      static_cast<double>(y)));
                wdisp_sum += std::hypot(wc.warped(x, y, 0) - w.x, wc.warped(x, y, 1) - w.y) /
                             ground.resolution;
                const double cossim =
                    cosine8(wr.warped.data() + (x * yc + y) * feature_channels,
                            ref.data() + (x * yc + y) * 8);
                if (cossim != 0.0) {
                    wcos_sum += cossim;
                    ++wmeasured;
                }
            }
        }
        warp_row.oob_fraction = 1.0 - static_cast<double>(in_range) / static_cast<double>(xc * yc);
        warp_row.cosine = wmeasured ? wcos_sum / static_cast<double>(wmeasured) : 0.0;
        warp_row.displacement = in_range ? wdisp_sum / static_cast<double>(in_range) : 0.0;
        rows.push_back(warp_row);
    }
    return rows;
}

std::string sync_comparison_csv(const std::vector<SyncComparisonRow>& rows) {
    std::ostringstream os;
    os << "frame,method,displacement,oob_fraction,cosine\n";
    for (const SyncComparisonRow& r : rows) {
        os << r.frame << "," << r.method << "," << r.displacement << "," << r.oob_fraction << ","
           << r.cosine << "\n";
    }
    return os.str();
}

} // namespace bevpred
