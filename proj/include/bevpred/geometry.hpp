#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace bevpred {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
};

struct Mat3 {
    // row-major
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }
    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }
    Mat3 transpose() const;
    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const;
    double det() const;
    Mat3 inverse() const;
};

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

/// Pinhole camera. Convention: +z forward, +x right (image u), +y down
/// (image v).
struct Intrinsics {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    std::size_t width = 0, height = 0;

    Intrinsics() = default;
    Intrinsics(double fx_, double fy_, double cx_, double cy_, std::size_t w, std::size_t h);
    Mat3 matrix() const;
};

/// Rigid SE(3) transform mapping local coordinates into the parent frame:
/// p_parent = R * p + t. Construction validates orthonormality and det = +1.
class Pose {
public:
    Pose() = default; // identity
    Pose(const Mat3& rotation, const Vec3& translation);

    static Pose from_yaw_pitch_roll(double yaw, double pitch, double roll, const Vec3& t);
    /// SE(2) pose embedded at z = 0: translation (x, y, 0), rotation about z.
    static Pose planar(double x, double y, double yaw);

    const Mat3& rotation() const { return r_; }
    const Vec3& translation() const { return t_; }

    Vec3 apply(const Vec3& p) const { return r_ * p + t_; }
    Pose inverse() const;
    /// this ∘ other: apply `other` first, then this.
    Pose compose(const Pose& other) const;

    /// Planar components (x, y, yaw) of the pose; valid for poses built from
    /// planar() and compositions thereof.
    double planar_yaw() const;

private:
    Mat3 r_;
    Vec3 t_;
};

/// Top-down grid over the ground plane, ego at the grid center. BEV x points
/// vehicle-forward, y vehicle-left (convention, configurable nowhere).
struct BevGrid {
    std::size_t x_cells = 0, y_cells = 0;
    double resolution = 0.0; // m per cell
    std::vector<double> z_anchors;

    BevGrid() = default;
    BevGrid(std::size_t x, std::size_t y, double r, std::vector<double> z);

    /// Cell-center convention: ((x - X/2 + 0.5)*r, (y - Y/2 + 0.5)*r, z).
    Vec3 cell_to_metric(std::size_t x, std::size_t y, std::size_t z_idx) const;
    Vec3 cell_to_metric_xy(double x, double y) const; // continuous indices, z = 0
    /// Inverse of the planar part of cell_to_metric: metric -> continuous cell.
    void metric_to_cell(double mx, double my, double& cx, double& cy) const;
};

/// Default Z anchors: 4 heights evenly spaced in [-1 m, 2 m].
std::vector<double> default_z_anchors();

/// 3x4 map from homogeneous current-ego points to image coords scaled by
/// depth, with the target image bounds for validity checks.
struct ProjectionMatrix {
    std::array<double, 12> t{}; // row-major 3x4
    double width = 0.0, height = 0.0;
};

/// Composes current-ego -> world (ego_at_now) -> ego-at-capture (inverse of
/// ego_at_capture) -> camera (cam_from_ego), then applies K.
ProjectionMatrix make_projection(const Intrinsics& k, const Pose& cam_from_ego,
                                 const Pose& ego_at_capture, const Pose& ego_at_now);

/// Same, with a general 3x3 calibration (needed for augmented views whose
/// effective calibration is no longer a plain pinhole K).
ProjectionMatrix make_projection(const Mat3& calib, double width, double height,
                                 const Pose& cam_from_ego, const Pose& ego_at_capture,
                                 const Pose& ego_at_now);

struct PixelPoint {
    double u = 0.0, v = 0.0;
    double depth = 0.0;
    bool valid = false;
};

/// Homogeneous multiply then divide by depth. valid ⇔ depth > 1e-6 m and
/// (u, v) within [0, W-1] x [0, H-1].
PixelPoint project(const ProjectionMatrix& pm, const Vec3& p);

inline constexpr double kMinProjectionDepth = 1e-6;

// ---- camera rig ----

/// One camera: intrinsics plus the mount pose of the camera body in the ego
/// frame. The body frame uses vehicle axes (x forward, y left, z up); the
/// optical frame is the fixed permutation x_opt = -y_body, y_opt = -z_body,
/// z_opt = x_body.
struct CameraConfig {
    std::string name;
    Intrinsics intrinsics;
    Pose ego_from_body;

    Pose cam_from_ego() const;
    Pose cam_to_ego() const; // optical -> ego (inverse of cam_from_ego)
};

Mat3 optical_from_body_axes();

struct CameraRig {
    std::vector<CameraConfig> cameras;
};

CameraRig load_rig(const std::string& path);
void save_rig(const std::string& path, const CameraRig& rig);

} // namespace bevpred
