#include "bevpred/scene.hpp"

#include "bevpred/kvfile.hpp"
#include "bevpred/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>

namespace bevpred {

BoxState box_state_at(const BoxSpec& box, double t) {
    BoxState s;
    const double w = box.yaw_rate;
    if (w == 0.0) {
        s.x = box.x + box.vx * t;
        s.y = box.y + box.vy * t;
        s.yaw = box.yaw;
        s.vx = box.vx;
        s.vy = box.vy;
        return s;
    }
    // Constant-speed arc: velocity rotates at yaw_rate, position is the
    // closed-form integral of the rotating velocity.
    const double a = w * t;
    const double sa = std::sin(a), ca = std::cos(a);
    s.x = box.x + (sa * box.vx - (1.0 - ca) * box.vy) / w;
    s.y = box.y + ((1.0 - ca) * box.vx + sa * box.vy) / w;
    s.yaw = box.yaw + a;
    s.vx = ca * box.vx - sa * box.vy;
    s.vy = sa * box.vx + ca * box.vy;
    return s;
}

const Pose& Scenario::ego_pose(int frame) const {
    const int idx = frame + past_frames;
    if (idx < 0 || idx >= static_cast<int>(ego_traj.size())) {
        throw std::out_of_range("ego pose frame out of range");
    }
    return ego_traj[static_cast<std::size_t>(idx)];
}

void Scenario::validate() const {
    if (frame_period <= 0.0) {
        throw std::invalid_argument("scenario frame period must be positive");
    }
    if (past_frames < 0 || future_frames < 0) {
        throw std::invalid_argument("scenario frame counts must be non-negative");
    }
    if (static_cast<int>(ego_traj.size()) != frame_count()) {
        throw std::invalid_argument("ego trajectory length must equal frame count");
    }
    std::map<std::uint32_t, int> seen;
    for (const BoxSpec& b : boxes) {
        if (b.length <= 0.0 || b.width <= 0.0 || b.height <= 0.0) {
            throw std::invalid_argument("box sizes must be positive");
        }
        if (b.id == 0 || ++seen[b.id] > 1) {
            throw std::invalid_argument("box ids must be unique and nonzero");
        }
    }
}

Scenario load_scenario(const std::string& path) {
    const KvFile f = KvFile::load(path);
    Scenario scn;
    const KvSection* top = f.find("scenario");
    if (!top) {
        throw std::runtime_error("scenario file missing [scenario] section: " + path);
    }
    scn.past_frames = static_cast<int>(top->get_int("past"));
    scn.future_frames = static_cast<int>(top->get_int("future"));
    scn.frame_period = top->get_double("period");

    const KvSection* ego = f.find("ego");
    if (!ego) {
        throw std::runtime_error("scenario file missing [ego] section: " + path);
    }
    for (int i = 0; i < scn.frame_count(); ++i) {
        const std::vector<double> p = ego->get_doubles("pose." + std::to_string(i));
        if (p.size() != 3) {
            throw std::runtime_error("ego pose." + std::to_string(i) + " must be 'x y yaw'");
        }
        scn.ego_traj.push_back(Pose::planar(p[0], p[1], p[2]));
    }

    if (const KvSection* map = f.find("map")) {
        scn.map.drivable_halfwidth = map->get_double_or("drivable_halfwidth", 6.0);
        if (map->has("lane_offsets")) scn.map.lane_offsets = map->get_doubles("lane_offsets");
        scn.map.lane_halfwidth = map->get_double_or("lane_halfwidth", 0.3);
    }

    for (const KvSection* sec : f.find_all("box")) {
        BoxSpec b;
        b.x = sec->get_double("x");
        b.y = sec->get_double("y");
        b.length = sec->get_double("length");
        b.width = sec->get_double("width");
        b.yaw = sec->get_double_or("yaw", 0.0);
        b.vx = sec->get_double_or("vx", 0.0);
        b.vy = sec->get_double_or("vy", 0.0);
        b.yaw_rate = sec->get_double_or("yaw_rate", 0.0);
        b.height = sec->get_double_or("height", 1.5);
        b.id = static_cast<std::uint32_t>(sec->get_int("id"));
        b.cls = sec->get_or("class", "vehicle") == "pedestrian" ? BoxClass::Pedestrian
                                                                : BoxClass::Vehicle;
        scn.boxes.push_back(b);
    }
    scn.validate();
    return scn;
}

void save_scenario(const std::string& path, const Scenario& scn) {
    scn.validate();
    KvFile f;
    KvSection& top = f.add("scenario");
    top.set_int("past", scn.past_frames);
    top.set_int("future", scn.future_frames);
    top.set_double("period", scn.frame_period);

    KvSection& ego = f.add("ego");
    for (int i = 0; i < scn.frame_count(); ++i) {
        const Pose& p = scn.ego_traj[static_cast<std::size_t>(i)];
        ego.set("pose." + std::to_string(i), format_double(p.translation().x) + " " +
                                                 format_double(p.translation().y) + " " +
                                                 format_double(p.planar_yaw()));
    }

    KvSection& map = f.add("map");
    map.set_double("drivable_halfwidth", scn.map.drivable_halfwidth);
    std::string lanes;
    for (std::size_t i = 0; i < scn.map.lane_offsets.size(); ++i) {
        lanes += (i ? "," : "") + format_double(scn.map.lane_offsets[i]);
    }
    map.set("lane_offsets", lanes);
    map.set_double("lane_halfwidth", scn.map.lane_halfwidth);

    for (std::size_t i = 0; i < scn.boxes.size(); ++i) {
        const BoxSpec& b = scn.boxes[i];
        KvSection& sec = f.add("box." + std::to_string(i));
        sec.set_double("x", b.x);
        sec.set_double("y", b.y);
        sec.set_double("length", b.length);
        sec.set_double("width", b.width);
        sec.set_double("yaw", b.yaw);
        sec.set_double("vx", b.vx);
        sec.set_double("vy", b.vy);
        sec.set_double("yaw_rate", b.yaw_rate);
        sec.set_double("height", b.height);
        sec.set_int("id", static_cast<long>(b.id));
        sec.set("class", b.cls == BoxClass::Pedestrian ? "pedestrian" : "vehicle");
    }
    f.save(path);
}

Scenario generate_scenario(std::uint64_t seed, const ScenarioGenParams& params) {
    Rng rng(seed);
    Scenario scn;
    scn.past_frames = params.past_frames;
    scn.future_frames = params.future_frames;
    scn.frame_period = params.frame_period;

    const double ego_speed = params.moving_ego ? params.ego_speed * rng.uniform(0.6, 1.0) : 0.0;
    const double ego_wz = params.moving_ego ? params.ego_yaw_rate * rng.uniform(-1.0, 1.0) : 0.0;
    BoxSpec ego_motion; // reuse the unicycle integrator for the ego path
    ego_motion.vx = ego_speed;
    ego_motion.yaw_rate = ego_wz;
    for (int fidx = 0; fidx < scn.frame_count(); ++fidx) {
        const double t = (fidx - scn.past_frames) * scn.frame_period;
        const BoxState s = box_state_at(ego_motion, t);
        scn.ego_traj.push_back(Pose::planar(s.x, s.y, s.yaw));
    }

    const double two_pi = 2.0 * std::numbers::pi;
    for (int i = 0; i < params.box_count; ++i) {
        BoxSpec b;
        const double angle = two_pi * (i + rng.uniform(0.15, 0.85)) / params.box_count;
        const double radius = rng.uniform(3.0, params.placement_radius);
        b.x = radius * std::cos(angle);
        b.y = radius * std::sin(angle);
        b.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
        b.id = static_cast<std::uint32_t>(i + 1);
        const bool pedestrian = params.box_count >= 3 && i == params.box_count - 1;
        if (pedestrian) {
            b.cls = BoxClass::Pedestrian;
            b.length = 0.7;
            b.width = 0.7;
            b.height = 1.7;
            const double sp = rng.uniform(0.0, 0.8);
            b.vx = sp * std::cos(b.yaw);
            b.vy = sp * std::sin(b.yaw);
        } else {
            b.length = rng.uniform(3.2, 4.6);
            b.width = rng.uniform(1.6, 2.2);
            double speed;
            if (i == 0) { // guaranteed turning box
                speed = rng.uniform(0.6, params.max_speed);
                b.yaw_rate = (rng.uniform() < 0.5 ? -1.0 : 1.0) *
                             rng.uniform(0.5 * params.max_yaw_rate, params.max_yaw_rate);
            } else if (i == 1) { // guaranteed straight mover
                speed = rng.uniform(0.6, params.max_speed);
            } else {
                speed = rng.uniform(0.0, params.max_speed);
                if (rng.uniform() < 0.3) {
                    b.yaw_rate = rng.uniform(-params.max_yaw_rate, params.max_yaw_rate);
                }
            }
            b.vx = speed * std::cos(b.yaw);
            b.vy = speed * std::sin(b.yaw);
        }
        scn.boxes.push_back(b);
    }
    scn.validate();
    return scn;
}

std::array<double, 4> axis_encoding(double v) {
    const double two_pi = 2.0 * std::numbers::pi;
    return {std::sin(two_pi * v / 8.0), std::cos(two_pi * v / 8.0), std::sin(two_pi * v / 32.0),
            std::cos(two_pi * v / 32.0)};
}

void world_encoding(double wx, double wy, double* out8) {
    const std::array<double, 4> ex = axis_encoding(wx);
    const std::array<double, 4> ey = axis_encoding(wy);
    for (int i = 0; i < 4; ++i) {
        out8[i] = ex[static_cast<std::size_t>(i)];
        out8[4 + i] = ey[static_cast<std::size_t>(i)];
    }
}

namespace {

constexpr double kRayEps = 1e-9;

/// Ray vs axis-aligned slab [lo, hi] along one coordinate; updates [t0, t1].
bool clip_slab(double origin, double dir, double lo, double hi, double& t0, double& t1) {
    if (std::abs(dir) < 1e-14) {
        return origin >= lo && origin <= hi;
    }
    double ta = (lo - origin) / dir;
    double tb = (hi - origin) / dir;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return t0 <= t1;
}

} // namespace

RayHit cast_ray(const Scenario& scn, double t_seconds, const Vec3& origin, const Vec3& dir_in) {
    const double n = dir_in.norm();
    if (n <= 0.0) {
        throw std::invalid_argument("ray direction must be nonzero");
    }
    const Vec3 dir = dir_in * (1.0 / n);

    RayHit best;
    double best_t = std::numeric_limits<double>::infinity();

    // Ground plane z = 0.
    if (std::abs(dir.z) > 1e-14) {
        const double t = -origin.z / dir.z;
        if (t > kRayEps && t < best_t) {
            best_t = t;
            best.hit = true;
            best.point = origin + dir * t;
            best.depth = t;
            best.box_index = -1;
        }
    }

    for (std::size_t bi = 0; bi < scn.boxes.size(); ++bi) {
        const BoxSpec& box = scn.boxes[bi];
        const BoxState st = box_state_at(box, t_seconds);
        const double c = std::cos(st.yaw), s = std::sin(st.yaw);
        // Transform ray into the box frame (rotation about z).
        const double ox = origin.x - st.x, oy = origin.y - st.y;
        const Vec3 o{c * ox + s * oy, -s * ox + c * oy, origin.z};
        const Vec3 d{c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z};
        double t0 = kRayEps, t1 = best_t;
        if (!clip_slab(o.x, d.x, -box.length / 2.0, box.length / 2.0, t0, t1)) continue;
        if (!clip_slab(o.y, d.y, -box.width / 2.0, box.width / 2.0, t0, t1)) continue;
        if (!clip_slab(o.z, d.z, 0.0, box.height, t0, t1)) continue;
        if (t0 < best_t) {
            best_t = t0;
            best.hit = true;
            best.point = origin + dir * t0;
            best.depth = t0;
            best.box_index = static_cast<int>(bi);
        }
    }
    return best;
}

std::vector<FeatureImage> render_features(const Scenario& scn, int frame, std::size_t channels) {
    if (channels < kBaseFeatureChannels) {
        throw std::invalid_argument("feature channel count too small");
    }
    if (scn.rig.cameras.empty()) {
        throw std::invalid_argument("scenario has no cameras attached");
    }
    const double t_sec = scn.frame_time(frame);
    const Pose& ego = scn.ego_pose(frame);

    std::vector<FeatureImage> out;
    out.reserve(scn.rig.cameras.size());
    for (const CameraConfig& cam : scn.rig.cameras) {
        const Pose cam_to_world = ego.compose(cam.cam_to_ego());
        const Intrinsics& k = cam.intrinsics;
        const std::size_t h = k.height, w = k.width;
        FeatureImage img;
        img.features = Tensor({h, w, channels}, Dtype::F32);
        img.provenance = Tensor({h, w, 4}, Dtype::F64);
        const Vec3 origin = cam_to_world.translation();
        parallel_for(h, [&](std::size_t row_begin, std::size_t row_end) {
            for (std::size_t row = row_begin; row < row_end; ++row) {
                for (std::size_t col = 0; col < w; ++col) {
                    const Vec3 d_opt{(static_cast<double>(col) - k.cx) / k.fx,
                                     (static_cast<double>(row) - k.cy) / k.fy, 1.0};
                    const Vec3 d_world = cam_to_world.rotation() * d_opt;
                    const RayHit hit = cast_ray(scn, t_sec, origin, d_world);
                    if (!hit.hit) continue; // sky: zero features
                    double enc[kWorldEncodingChannels];
                    world_encoding(hit.point.x, hit.point.y, enc);
                    for (std::size_t ch = 0; ch < kWorldEncodingChannels; ++ch) {
                        img.features(row, col, ch) = enc[ch];
                    }
                    img.features(row, col, 8) = hit.box_index >= 0 ? 1.0 : 0.0;
                    img.features(row, col, 9) = hit.box_index < 0 ? 1.0 : 0.0;
                    img.features(row, col, 10) = hit.depth;
                    img.provenance(row, col, 0) = hit.point.x;
                    img.provenance(row, col, 1) = hit.point.y;
                    img.provenance(row, col, 2) = hit.point.z;
                    img.provenance(row, col, 3) = 1.0;
                }
            }
        });
        out.push_back(std::move(img));
    }
    return out;
}

bool point_in_box_footprint(const BoxState& state, double px, double py, const BoxSpec& box) {
    const double c = std::cos(state.yaw), s = std::sin(state.yaw);
    const double dx = px - state.x, dy = py - state.y;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    return std::abs(lx) <= box.length / 2.0 && std::abs(ly) <= box.width / 2.0;
}

namespace {

struct RelBox {
    BoxState state; // in current-ego frame
    const BoxSpec* spec;
    double disp_cx = 0.0, disp_cy = 0.0; // analytic displacement to next frame, cells
};

} // namespace

std::vector<GroundTruthFrame> render_gt(const Scenario& scn, const BevGrid& grid,
                                        double center_sigma) {
    const Pose ego0_inv = scn.ego_pose(0).inverse();
    const double ego0_yaw = scn.ego_pose(0).planar_yaw();
    const std::size_t xc = grid.x_cells, yc = grid.y_cells;

    auto rel_state = [&](const BoxSpec& box, double t) {
        const BoxState ws = box_state_at(box, t);
        const Vec3 p = ego0_inv.apply(Vec3{ws.x, ws.y, 0.0});
        BoxState rs;
        rs.x = p.x;
        rs.y = p.y;
        rs.yaw = ws.yaw - ego0_yaw;
        return rs;
    };

    std::vector<GroundTruthFrame> frames;
    for (int k = 0; k <= scn.future_frames; ++k) {
        const double t = k * scn.frame_period;
        GroundTruthFrame gt;
        gt.seg = Tensor({kClassCount, xc, yc}, Dtype::F32);
        gt.instance_ids = Tensor({xc, yc}, Dtype::F32);
        gt.centers = Tensor({xc, yc}, Dtype::F32);
        gt.offsets = Tensor({2, xc, yc}, Dtype::F32);
        gt.flow = Tensor({2, xc, yc}, Dtype::F32);
        gt.hdmap = Tensor({2, xc, yc}, Dtype::F32);

        std::vector<RelBox> rel;
        rel.reserve(scn.boxes.size());
        for (const BoxSpec& box : scn.boxes) {
            RelBox rb;
            rb.state = rel_state(box, t);
            rb.spec = &box;
            const BoxState next = rel_state(box, t + scn.frame_period);
            rb.disp_cx = (next.x - rb.state.x) / grid.resolution;
            rb.disp_cy = (next.y - rb.state.y) / grid.resolution;
            rel.push_back(rb);
        }

        // Paint footprints in box order (later boxes overwrite overlaps).
        for (const RelBox& rb : rel) {
            const double reach =
                std::hypot(rb.spec->length, rb.spec->width) / 2.0 / grid.resolution + 1.0;
            double ccx, ccy;
            grid.metric_to_cell(rb.state.x, rb.state.y, ccx, ccy);
            const long x_lo = std::max(0L, static_cast<long>(std::floor(ccx - reach)));
            const long x_hi = std::min(static_cast<long>(xc) - 1,
                                       static_cast<long>(std::ceil(ccx + reach)));
            const long y_lo = std::max(0L, static_cast<long>(std::floor(ccy - reach)));
            const long y_hi = std::min(static_cast<long>(yc) - 1,
                                       static_cast<long>(std::ceil(ccy + reach)));
            const std::size_t cls_ch = rb.spec->cls == BoxClass::Pedestrian ? 2u : 1u;
            for (long x = x_lo; x <= x_hi; ++x) {
                for (long y = y_lo; y <= y_hi; ++y) {
                    const Vec3 p = grid.cell_to_metric_xy(static_cast<double>(x),
                                                          static_cast<double>(y));
                    if (!point_in_box_footprint(rb.state, p.x, p.y, *rb.spec)) continue;
                    const std::size_t ux = static_cast<std::size_t>(x);
                    const std::size_t uy = static_cast<std::size_t>(y);
                    gt.seg(cls_ch, ux, uy) = 1.0;
                    if (rb.spec->cls == BoxClass::Vehicle) {
                        gt.instance_ids(ux, uy) = static_cast<double>(rb.spec->id);
                    } else if (gt.instance_ids(ux, uy) != 0.0 &&
                               gt.seg(1, ux, uy) == 1.0) {
                        // pedestrian painted over a vehicle cell: drop both marks
                        gt.instance_ids(ux, uy) = 0.0;
                        gt.seg(1, ux, uy) = 0.0;
                    }
                }
            }
        }
        // A vehicle overwritten by another vehicle keeps seg=1 but swaps id,
        // which is what the id map already encodes. Background channel:
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                gt.seg(0, x, y) = (gt.seg(1, x, y) > 0.0 || gt.seg(2, x, y) > 0.0) ? 0.0 : 1.0;
            }
        }

        // Collect final per-id cells, then centroids / offsets / flow / centers.
        std::map<std::uint32_t, std::vector<std::pair<std::size_t, std::size_t>>> cells;
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                const double id = gt.instance_ids(x, y);
                if (id > 0.0) {
                    cells[static_cast<std::uint32_t>(id)].emplace_back(x, y);
                }
            }
        }
        for (const auto& [id, pts] : cells) {
            double cx = 0.0, cy = 0.0;
            for (const auto& [x, y] : pts) {
                cx += static_cast<double>(x);
                cy += static_cast<double>(y);
            }
            cx /= static_cast<double>(pts.size());
            cy /= static_cast<double>(pts.size());

            const RelBox* rb = nullptr;
            for (const RelBox& r : rel) {
                if (r.spec->id == id) rb = &r;
            }
            for (const auto& [x, y] : pts) {
                gt.offsets(0, x, y) = cx - static_cast<double>(x);
                gt.offsets(1, x, y) = cy - static_cast<double>(y);
                gt.flow(0, x, y) = rb->disp_cx;
                gt.flow(1, x, y) = rb->disp_cy;
            }
            const double two_sigma_sq = 2.0 * center_sigma * center_sigma;
            for (std::size_t x = 0; x < xc; ++x) {
                for (std::size_t y = 0; y < yc; ++y) {
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    const double g = std::exp(-(dx * dx + dy * dy) / two_sigma_sq);
                    gt.centers(x, y) = std::max(gt.centers(x, y), g);
                }
            }
        }

        // HD map rasters are static in world space.
        const Pose& ego0 = scn.ego_pose(0);
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                const Vec3 w = ego0.apply(grid.cell_to_metric_xy(static_cast<double>(x),
                                                                 static_cast<double>(y)));
                if (std::abs(w.y) <= scn.map.drivable_halfwidth) {
                    gt.hdmap(0, x, y) = 1.0;
                }
                for (double off : scn.map.lane_offsets) {
                    if (std::abs(w.y - off) <= scn.map.lane_halfwidth) {
                        gt.hdmap(1, x, y) = 1.0;
                        break;
                    }
                }
            }
        }
        frames.push_back(std::move(gt));
    }
    return frames;
}

} // namespace bevpred
