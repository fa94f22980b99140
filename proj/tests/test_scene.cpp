#include "bevpred/scene.hpp"

#include "bevpred/config.hpp"
#include "bevpred/rng.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>

using namespace bevpred;

namespace {

Scenario static_scene_with_box() {
    Scenario scn;
    scn.past_frames = 2;
    scn.future_frames = 4;
    scn.frame_period = 0.5;
    for (int i = 0; i < scn.frame_count(); ++i) {
        scn.ego_traj.push_back(Pose::planar(0.0, 0.0, 0.0));
    }
    BoxSpec b;
    b.x = 4.0;
    b.y = 1.0;
    b.length = 4.0;
    b.width = 2.0;
    b.yaw = 0.3;
    b.id = 1;
    scn.boxes.push_back(b);
    scn.rig = default_rig();
    return scn;
}

} // namespace

TEST(BoxMotion, StraightLine) {
    BoxSpec b;
    b.x = 1.0;
    b.y = 2.0;
    b.vx = 0.5;
    b.vy = -0.25;
    const BoxState s = box_state_at(b, 4.0);
    EXPECT_DOUBLE_EQ(s.x, 3.0);
    EXPECT_DOUBLE_EQ(s.y, 1.0);
    EXPECT_DOUBLE_EQ(s.yaw, b.yaw);
}

TEST(BoxMotion, TurningArcMatchesNumericIntegration) {
    BoxSpec b;
    b.vx = 1.0;
    b.vy = 0.2;
    b.yaw_rate = 0.4;
    // Euler integration oracle with tiny steps.
    double x = 0.0, y = 0.0;
    const double dt = 1e-5;
    const double t_end = 2.0;
    for (double t = 0.0; t < t_end - dt / 2; t += dt) {
        const double c = std::cos(b.yaw_rate * t), s = std::sin(b.yaw_rate * t);
        x += (c * b.vx - s * b.vy) * dt;
        y += (s * b.vx + c * b.vy) * dt;
    }
    const BoxState s = box_state_at(b, t_end);
    EXPECT_NEAR(s.x, x, 1e-4);
    EXPECT_NEAR(s.y, y, 1e-4);
    EXPECT_DOUBLE_EQ(s.yaw, b.yaw_rate * t_end);
}

TEST(ScenarioIo, SaveLoadRoundTrip) {
    const Scenario scn = generate_scenario(1234);
    const std::string path =
        (std::filesystem::temp_directory_path() / "bevpred_scn_test.txt").string();
    save_scenario(path, scn);
    const Scenario back = load_scenario(path);
    EXPECT_EQ(back.past_frames, scn.past_frames);
    EXPECT_EQ(back.future_frames, scn.future_frames);
    ASSERT_EQ(back.boxes.size(), scn.boxes.size());
    for (std::size_t i = 0; i < scn.boxes.size(); ++i) {
        EXPECT_DOUBLE_EQ(back.boxes[i].x, scn.boxes[i].x);
        EXPECT_DOUBLE_EQ(back.boxes[i].vx, scn.boxes[i].vx);
        EXPECT_DOUBLE_EQ(back.boxes[i].yaw_rate, scn.boxes[i].yaw_rate);
        EXPECT_EQ(back.boxes[i].id, scn.boxes[i].id);
        EXPECT_EQ(back.boxes[i].cls, scn.boxes[i].cls);
    }
    for (int f = -scn.past_frames; f <= scn.future_frames; ++f) {
        EXPECT_NEAR(back.ego_pose(f).translation().x, scn.ego_pose(f).translation().x, 1e-15);
        EXPECT_NEAR(back.ego_pose(f).planar_yaw(), scn.ego_pose(f).planar_yaw(), 1e-15);
    }
    std::filesystem::remove(path);
}

TEST(ScenarioGen, GuaranteesMovingAndTurningBoxes) {
    for (std::uint64_t seed : {1ull, 77ull, 991ull}) {
        const Scenario scn = generate_scenario(seed);
        bool moving = false, turning = false;
        for (const BoxSpec& b : scn.boxes) {
            if (std::hypot(b.vx, b.vy) > 0.1) moving = true;
            if (b.yaw_rate != 0.0) turning = true;
        }
        EXPECT_TRUE(moving) << "seed " << seed;
        EXPECT_TRUE(turning) << "seed " << seed;
        EXPECT_NO_THROW(scn.validate());
    }
}

TEST(RayCast, GroundAndSky) {
    const Scenario scn = static_scene_with_box();
    const RayHit down = cast_ray(scn, 0.0, Vec3{0.0, -3.0, 5.0}, Vec3{0.0, 0.0, -1.0});
    ASSERT_TRUE(down.hit);
    EXPECT_EQ(down.box_index, -1);
    EXPECT_NEAR(down.point.z, 0.0, 1e-12);
    EXPECT_NEAR(down.depth, 5.0, 1e-12);
    const RayHit sky = cast_ray(scn, 0.0, Vec3{0.0, 0.0, 3.0}, Vec3{0.0, 1.0, 0.0});
    EXPECT_FALSE(sky.hit);
}

TEST(RayCast, BoxOccludesGround) {
    const Scenario scn = static_scene_with_box();
    const Vec3 origin{0.0, 1.0, 3.0};
    const Vec3 target{4.0, 1.0, 0.75}; // box side, below the 1.5m top
    const RayHit hit = cast_ray(scn, 0.0, origin, target - origin);
    ASSERT_TRUE(hit.hit);
    EXPECT_EQ(hit.box_index, 0);
}

TEST(RenderFeatures, VerticalRayEncodesGroundPoint) {
    Scenario scn = static_scene_with_box();
    scn.boxes.clear();
    // camera body pitched straight down, the optical axis hits the ground
    // directly under the mount
    CameraConfig cam;
    cam.intrinsics = Intrinsics(40.0, 40.0, 31.5, 31.5, 64, 64);
    cam.ego_from_body =
        Pose::from_yaw_pitch_roll(0.0, std::numbers::pi / 2.0, 0.0, Vec3{2.0, 1.0, 4.0});
    scn.rig.cameras = {cam};
    const std::vector<FeatureImage> imgs = render_features(scn, 0, kBaseFeatureChannels);
    ASSERT_EQ(imgs.size(), 1u);
    const Sample prov = bilinear_sample(imgs[0].provenance, 31.5, 31.5);
    EXPECT_NEAR(prov.value[0], 2.0, 0.05);
    EXPECT_NEAR(prov.value[1], 1.0, 0.05);
    double enc[8];
    world_encoding(prov.value[0], prov.value[1], enc);
    const Sample feat = bilinear_sample(imgs[0].features, 31.5, 31.5);
    for (int i = 0; i < 8; ++i) {
        EXPECT_NEAR(feat.value[i], enc[i], 0.05);
    }
    EXPECT_GT(feat.value[9], 0.9); // ground flag
}

TEST(RenderFeatures, EmptySceneHorizontalRaysAreSky) {
    Scenario scn = static_scene_with_box();
    scn.boxes.clear();
    const std::vector<FeatureImage> imgs = render_features(scn, 0, kBaseFeatureChannels);
    const FeatureImage& img = imgs[0];
    for (std::size_t col = 0; col < 96; col += 7) {
        EXPECT_EQ(img.provenance(0, col, 3), 0.0);
        for (std::size_t c = 0; c < kBaseFeatureChannels; ++c) {
            EXPECT_EQ(img.features(0, col, c), 0.0);
        }
    }
}

TEST(RenderFeatures, HitPointsReprojectToTheirPixels) {
    const Scenario scn = static_scene_with_box();
    const std::vector<FeatureImage> imgs = render_features(scn, -1, kBaseFeatureChannels);
    const Pose& ego = scn.ego_pose(-1);
    Rng rng(515);
    for (std::size_t cam_i = 0; cam_i < scn.rig.cameras.size(); ++cam_i) {
        const CameraConfig& cam = scn.rig.cameras[cam_i];
        const ProjectionMatrix pm = make_projection(cam.intrinsics, cam.cam_from_ego(), ego, ego);
        std::size_t checked = 0;
        for (int trial = 0; trial < 200 && checked < 20; ++trial) {
            const std::size_t row = rng.uniform_int(cam.intrinsics.height);
            const std::size_t col = rng.uniform_int(cam.intrinsics.width);
            if (imgs[cam_i].provenance(row, col, 3) < 1.0) continue;
            const Vec3 world{imgs[cam_i].provenance(row, col, 0),
                             imgs[cam_i].provenance(row, col, 1),
                             imgs[cam_i].provenance(row, col, 2)};
            const Vec3 in_ego = ego.inverse().apply(world);
            const PixelPoint px = project(pm, in_ego);
            ASSERT_GT(px.depth, 0.0);
            EXPECT_NEAR(px.u, static_cast<double>(col), 0.5);
            EXPECT_NEAR(px.v, static_cast<double>(row), 0.5);
            ++checked;
        }
        EXPECT_GE(checked, 10u);
    }
}

TEST(RenderGt, StaticSceneIsConstantWithZeroFlow) {
    Scenario scn = static_scene_with_box();
    const BevGrid grid(32, 32, 0.5, {0.0});
    const auto gt = render_gt(scn, grid);
    ASSERT_EQ(gt.size(), 5u);
    for (std::size_t k = 1; k < gt.size(); ++k) {
        for (std::size_t i = 0; i < gt[0].seg.numel(); ++i) {
            EXPECT_EQ(gt[k].seg[i], gt[0].seg[i]);
        }
        for (std::size_t i = 0; i < gt[0].instance_ids.numel(); ++i) {
            EXPECT_EQ(gt[k].instance_ids[i], gt[0].instance_ids[i]);
        }
    }
    for (const auto& frame : gt) {
        for (std::size_t i = 0; i < frame.flow.numel(); ++i) {
            EXPECT_EQ(frame.flow[i], 0.0);
        }
    }
}

TEST(RenderGt, ConstantVelocityFlowInCells) {
    Scenario scn = static_scene_with_box();
    scn.boxes[0].yaw = 0.0;
    scn.boxes[0].vx = 1.0; // 1 m/s = 1 cell/frame at r=0.5, period 0.5
    const BevGrid grid(32, 32, 0.5, {0.0});
    const auto gt = render_gt(scn, grid);
    std::size_t cells = 0;
    for (std::size_t x = 0; x < 32; ++x) {
        for (std::size_t y = 0; y < 32; ++y) {
            if (gt[0].instance_ids(x, y) > 0.0) {
                EXPECT_NEAR(gt[0].flow(0, x, y), 1.0, 1e-9);
                EXPECT_NEAR(gt[0].flow(1, x, y), 0.0, 1e-9);
                ++cells;
            } else {
                EXPECT_EQ(gt[0].flow(0, x, y), 0.0);
            }
        }
    }
    EXPECT_GT(cells, 10u);
}

TEST(RenderGt, RotatedFootprintAreaWithinPerimeterBound) {
    Scenario scn = static_scene_with_box();
    scn.boxes[0].x = 1.0;
    scn.boxes[0].y = -0.5;
    scn.boxes[0].yaw = 0.7;
    const BevGrid grid(64, 64, 0.25, {0.0});
    const auto gt = render_gt(scn, grid);
    std::size_t cells = 0;
    for (std::size_t i = 0; i < gt[0].instance_ids.numel(); ++i) {
        if (gt[0].instance_ids[i] > 0.0) ++cells;
    }
    const double area = static_cast<double>(cells) * grid.resolution * grid.resolution;
    const double want = scn.boxes[0].length * scn.boxes[0].width;
    const double perimeter = 2.0 * (scn.boxes[0].length + scn.boxes[0].width);
    EXPECT_NEAR(area, want, 2.0 * perimeter * grid.resolution);
}

TEST(RenderGt, CentroidPlusFlowPredictsNextCentroid) {
    Scenario scn = generate_scenario(2024);
    const BevGrid grid(48, 48, 0.5, {0.0});
    const auto gt = render_gt(scn, grid);
    for (std::size_t k = 0; k + 1 < gt.size(); ++k) {
        std::map<std::uint32_t, std::array<double, 5>> stats; // sx, sy, n, fx, fy
        for (std::size_t x = 0; x < 48; ++x) {
            for (std::size_t y = 0; y < 48; ++y) {
                const double id = gt[k].instance_ids(x, y);
                if (id <= 0.0) continue;
                auto& s = stats[static_cast<std::uint32_t>(id)];
                s[0] += static_cast<double>(x);
                s[1] += static_cast<double>(y);
                s[2] += 1.0;
                s[3] = gt[k].flow(0, x, y);
                s[4] = gt[k].flow(1, x, y);
            }
        }
        for (const auto& [id, s] : stats) {
            if (s[2] < 12.0) continue; // partially off-grid footprints jitter
            double nx = 0.0, ny = 0.0, nn = 0.0;
            for (std::size_t x = 0; x < 48; ++x) {
                for (std::size_t y = 0; y < 48; ++y) {
                    if (static_cast<std::uint32_t>(gt[k + 1].instance_ids(x, y)) == id) {
                        nx += static_cast<double>(x);
                        ny += static_cast<double>(y);
                        nn += 1.0;
                    }
                }
            }
            if (nn < 12.0) continue;
            const double pred_x = s[0] / s[2] + s[3];
            const double pred_y = s[1] / s[2] + s[4];
            EXPECT_NEAR(pred_x, nx / nn, 0.5) << "id " << id << " frame " << k;
            EXPECT_NEAR(pred_y, ny / nn, 0.5) << "id " << id << " frame " << k;
        }
    }
}

TEST(RenderGt, InstanceMapMatchesVehicleSeg) {
    const Scenario scn = generate_scenario(555);
    const BevGrid grid(48, 48, 0.5, {0.0});
    const auto gt = render_gt(scn, grid);
    for (const auto& frame : gt) {
        for (std::size_t x = 0; x < 48; ++x) {
            for (std::size_t y = 0; y < 48; ++y) {
                EXPECT_EQ(frame.instance_ids(x, y) > 0.0, frame.seg(1, x, y) == 1.0);
                const bool fg = frame.seg(1, x, y) == 1.0 || frame.seg(2, x, y) == 1.0;
                EXPECT_EQ(frame.seg(0, x, y), fg ? 0.0 : 1.0);
            }
        }
    }
}

TEST(RenderGt, EgoMotionCovariance) {
    // Rotating the whole world and the ego trajectory together leaves the
    // binary labels bitwise identical; float rasters agree to roundoff.
    Scenario scn = generate_scenario(909);
    const BevGrid grid(32, 32, 0.5, {0.0});
    const auto base = render_gt(scn, grid);

    const double alpha = 0.6234;
    Scenario rot = scn;
    rot.ego_traj.clear();
    const double c = std::cos(alpha), s = std::sin(alpha);
    for (int f = -scn.past_frames; f <= scn.future_frames; ++f) {
        const Pose& p = scn.ego_pose(f);
        const double x = p.translation().x, y = p.translation().y;
        rot.ego_traj.push_back(Pose::planar(c * x - s * y, s * x + c * y, p.planar_yaw() + alpha));
    }
    for (BoxSpec& b : rot.boxes) {
        const double x = b.x, y = b.y;
        b.x = c * x - s * y;
        b.y = s * x + c * y;
        b.yaw += alpha;
        const double vx = b.vx, vy = b.vy;
        b.vx = c * vx - s * vy;
        b.vy = s * vx + c * vy;
    }
    const auto rotated = render_gt(rot, grid);
    ASSERT_EQ(rotated.size(), base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
        for (std::size_t i = 0; i < base[k].seg.numel(); ++i) {
            EXPECT_EQ(base[k].seg[i], rotated[k].seg[i]);
        }
        for (std::size_t i = 0; i < base[k].instance_ids.numel(); ++i) {
            EXPECT_EQ(base[k].instance_ids[i], rotated[k].instance_ids[i]);
        }
        for (std::size_t i = 0; i < base[k].offsets.numel(); ++i) {
            EXPECT_NEAR(base[k].offsets[i], rotated[k].offsets[i], 1e-9);
        }
        for (std::size_t i = 0; i < base[k].flow.numel(); ++i) {
            EXPECT_NEAR(base[k].flow[i], rotated[k].flow[i], 1e-9);
        }
    }
}

TEST(WorldEncoding, UnitNormPairs) {
    double enc[8];
    world_encoding(3.7, -12.2, enc);
    EXPECT_NEAR(enc[0] * enc[0] + enc[1] * enc[1], 1.0, 1e-12);
    EXPECT_NEAR(enc[2] * enc[2] + enc[3] * enc[3], 1.0, 1e-12);
    EXPECT_NEAR(enc[4] * enc[4] + enc[5] * enc[5], 1.0, 1e-12);
    EXPECT_NEAR(enc[6] * enc[6] + enc[7] * enc[7], 1.0, 1e-12);
}
