#pragma once

#include "bevpred/geometry.hpp"
#include "bevpred/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace bevpred {

enum class BoxClass : int { Vehicle = 1, Pedestrian = 2 };

/// Upright box prism: rotated rectangular footprint extruded from z = 0 to
/// `height`. Motion follows a constant-speed unicycle: the velocity vector
/// and footprint yaw rotate together at yaw_rate.
struct BoxSpec {
    double x = 0.0, y = 0.0;        // footprint center at t = 0 (world, m)
    double length = 4.0;            // extent along box x
    double width = 2.0;             // extent along box y
    double yaw = 0.0;               // rad at t = 0
    double vx = 0.0, vy = 0.0;      // m/s at t = 0
    double yaw_rate = 0.0;          // rad/s
    double height = 1.5;            // m
    std::uint32_t id = 0;
    BoxClass cls = BoxClass::Vehicle;
};

struct BoxState {
    double x = 0.0, y = 0.0, yaw = 0.0;
    double vx = 0.0, vy = 0.0;
};

BoxState box_state_at(const BoxSpec& box, double t_seconds);

/// Straight-road HD map: drivable band |y_world| <= drivable_halfwidth and
/// lane strips centered on lane_offsets.
struct MapSpec {
    double drivable_halfwidth = 6.0;
    std::vector<double> lane_offsets = {-3.5, 0.0, 3.5};
    double lane_halfwidth = 0.3;
};

struct Scenario {
    int past_frames = 2;   // T
    int future_frames = 4; // T'
    double frame_period = 0.5;
    std::vector<Pose> ego_traj; // one pose per frame, index 0 <-> frame -T
    std::vector<BoxSpec> boxes;
    MapSpec map;
    CameraRig rig;

    int frame_count() const { return past_frames + 1 + future_frames; }
    /// frame in [-T, T']; 0 is the current frame.
    const Pose& ego_pose(int frame) const;
    double frame_time(int frame) const { return frame * frame_period; }
    void validate() const;
};

Scenario load_scenario(const std::string& path);
void save_scenario(const std::string& path, const Scenario& scn);

struct ScenarioGenParams {
    int past_frames = 2;
    int future_frames = 4;
    double frame_period = 0.5;
    int box_count = 3;
    double placement_radius = 6.0;
    double max_speed = 1.5;      // m/s
    double max_yaw_rate = 0.35;  // rad/s
    double ego_speed = 1.0;      // m/s
    double ego_yaw_rate = 0.15;  // rad/s
    bool moving_ego = true;
};

/// Deterministic pseudo-random scenario. Guarantees at least one moving and
/// one turning box when box_count >= 2.
Scenario generate_scenario(std::uint64_t seed, const ScenarioGenParams& params = {});

// ---- feature rendering ----

/// Fixed two-frequency sin/cos positional encoding of a world coordinate,
/// frequencies 1/8 and 1/32 cycles/m.
std::array<double, 4> axis_encoding(double v);
/// phi(wx) ++ phi(wy), 8 values.
void world_encoding(double wx, double wy, double* out8);

inline constexpr std::size_t kWorldEncodingChannels = 8;
/// phi(wx), phi(wy), box flag, ground flag, depth.
inline constexpr std::size_t kBaseFeatureChannels = 11;

struct RayHit {
    bool hit = false;
    Vec3 point;
    double depth = 0.0;
    int box_index = -1; // -1 = ground
};

/// Nearest intersection of a world-space ray with the scene at time
/// `t_seconds` (box prisms and the ground plane z = 0).
RayHit cast_ray(const Scenario& scn, double t_seconds, const Vec3& origin, const Vec3& dir);

struct FeatureImage {
    Tensor features;   // H x W x C
    Tensor provenance; // H x W x 4: world hit x, y, z, hit flag
};

/// Ray-cast feature render for every camera at the given frame. channels
/// must be >= kBaseFeatureChannels; extras are zero.
std::vector<FeatureImage> render_features(const Scenario& scn, int frame, std::size_t channels);

// ---- ground truth ----

inline constexpr std::size_t kClassCount = 3; // background, vehicle, pedestrian

struct GroundTruthFrame {
    Tensor seg;          // kClassCount x X x Y, 0/1
    Tensor instance_ids; // X x Y, 0 = background (vehicle class only)
    Tensor centers;      // X x Y gaussian heatmap
    Tensor offsets;      // 2 x X x Y, cells toward instance centroid
    Tensor flow;         // 2 x X x Y, cells/frame displacement to next frame
    Tensor hdmap;        // 2 x X x Y: drivable, lane
};

/// Labels for output frames 0..T', all rasterized in the current-ego frame.
std::vector<GroundTruthFrame> render_gt(const Scenario& scn, const BevGrid& grid,
                                        double center_sigma = 3.0);

/// Footprint test helper: is the cell-center point (in current-ego metric
/// coords) inside the box footprint at time t?
bool point_in_box_footprint(const BoxState& state, double px, double py, const BoxSpec& box);

} // namespace bevpred
