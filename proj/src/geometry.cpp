#include "bevpred/geometry.hpp"

#include "bevpred/kvfile.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bevpred {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Mat3 Mat3::transpose() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            r(i, j) = (*this)(j, i);
        }
    }
    return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                acc += (*this)(i, k) * o(k, j);
            }
            r(i, j) = acc;
        }
    }
    return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
    return {(*this)(0, 0) * v.x + (*this)(0, 1) * v.y + (*this)(0, 2) * v.z,
            (*this)(1, 0) * v.x + (*this)(1, 1) * v.y + (*this)(1, 2) * v.z,
            (*this)(2, 0) * v.x + (*this)(2, 1) * v.y + (*this)(2, 2) * v.z};
}

double Mat3::det() const {
    const Mat3& a = *this;
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Mat3 Mat3::inverse() const {
    const Mat3& a = *this;
    const double d = det();
    if (std::abs(d) < 1e-300) {
        throw std::runtime_error("Mat3: singular matrix");
    }
    Mat3 r;
    r(0, 0) = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) / d;
    r(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) / d;
    r(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) / d;
    r(1, 0) = (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2)) / d;
    r(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) / d;
    r(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) / d;
    r(2, 0) = (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)) / d;
    r(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) / d;
    r(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) / d;
    return r;
}

Mat3 rot_x(double a) {
    Mat3 r;
    const double c = std::cos(a), s = std::sin(a);
    r(0, 0) = 1;
    r(0, 1) = 0;
    r(0, 2) = 0;
    r(1, 0) = 0;
    r(1, 1) = c;
    r(1, 2) = -s;
    r(2, 0) = 0;
    r(2, 1) = s;
    r(2, 2) = c;
    return r;
}

Mat3 rot_y(double a) {
    Mat3 r;
    const double c = std::cos(a), s = std::sin(a);
    r(0, 0) = c;
    r(0, 1) = 0;
    r(0, 2) = s;
    r(1, 0) = 0;
    r(1, 1) = 1;
    r(1, 2) = 0;
    r(2, 0) = -s;
    r(2, 1) = 0;
    r(2, 2) = c;
    return r;
}

Mat3 rot_z(double a) {
    Mat3 r;
    const double c = std::cos(a), s = std::sin(a);
    r(0, 0) = c;
    r(0, 1) = -s;
    r(0, 2) = 0;
    r(1, 0) = s;
    r(1, 1) = c;
    r(1, 2) = 0;
    r(2, 0) = 0;
    r(2, 1) = 0;
    r(2, 2) = 1;
    return r;
}

Intrinsics::Intrinsics(double fx_, double fy_, double cx_, double cy_, std::size_t w,
                       std::size_t h)
    : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {
    if (fx <= 0.0 || fy <= 0.0) {
        throw std::invalid_argument("intrinsics: focal lengths must be positive");
    }
    if (cx < 0.0 || cx >= static_cast<double>(width) || cy < 0.0 ||
        cy >= static_cast<double>(height)) {
        throw std::invalid_argument("intrinsics: principal point outside image");
    }
}

Mat3 Intrinsics::matrix() const {
    Mat3 k;
    k(0, 0) = fx;
    k(0, 1) = 0;
    k(0, 2) = cx;
    k(1, 0) = 0;
    k(1, 1) = fy;
    k(1, 2) = cy;
    k(2, 0) = 0;
    k(2, 1) = 0;
    k(2, 2) = 1;
    return k;
}

namespace {
constexpr double kPoseTol = 1e-9;
}

Pose::Pose(const Mat3& rotation, const Vec3& translation) : r_(rotation), t_(translation) {
    const Mat3 rtr = r_.transpose() * r_;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double want = i == j ? 1.0 : 0.0;
            if (std::abs(rtr(i, j) - want) > kPoseTol) {
                throw std::invalid_argument("pose rotation is not orthonormal");
            }
        }
    }
    if (std::abs(r_.det() - 1.0) > kPoseTol) {
        throw std::invalid_argument("pose rotation must have det +1");
    }
}

Pose Pose::from_yaw_pitch_roll(double yaw, double pitch, double roll, const Vec3& t) {
    return Pose(rot_z(yaw) * rot_y(pitch) * rot_x(roll), t);
}

Pose Pose::planar(double x, double y, double yaw) { return Pose(rot_z(yaw), Vec3{x, y, 0.0}); }

Pose Pose::inverse() const {
    const Mat3 rt = r_.transpose();
    const Vec3 nt = rt * t_;
    return Pose(rt, Vec3{-nt.x, -nt.y, -nt.z});
}

Pose Pose::compose(const Pose& other) const {
    return Pose(r_ * other.r_, r_ * other.t_ + t_);
}

double Pose::planar_yaw() const { return std::atan2(r_(1, 0), r_(0, 0)); }

BevGrid::BevGrid(std::size_t x, std::size_t y, double r, std::vector<double> z)
    : x_cells(x), y_cells(y), resolution(r), z_anchors(std::move(z)) {
    if (x_cells < 2 || y_cells < 2) {
        throw std::invalid_argument("bev grid needs at least 2x2 cells");
    }
    if (resolution <= 0.0) {
        throw std::invalid_argument("bev grid resolution must be positive");
    }
    if (z_anchors.empty()) {
        throw std::invalid_argument("bev grid needs at least one z anchor");
    }
    for (std::size_t i = 1; i < z_anchors.size(); ++i) {
        if (z_anchors[i] <= z_anchors[i - 1]) {
            throw std::invalid_argument("z anchors must be strictly increasing");
        }
    }
}

Vec3 BevGrid::cell_to_metric(std::size_t x, std::size_t y, std::size_t z_idx) const {
    if (x >= x_cells || y >= y_cells || z_idx >= z_anchors.size()) {
        throw std::out_of_range("bev cell index out of range");
    }
    Vec3 p = cell_to_metric_xy(static_cast<double>(x), static_cast<double>(y));
    p.z = z_anchors[z_idx];
    return p;
}

Vec3 BevGrid::cell_to_metric_xy(double x, double y) const {
    return Vec3{(x - static_cast<double>(x_cells) / 2.0 + 0.5) * resolution,
                (y - static_cast<double>(y_cells) / 2.0 + 0.5) * resolution, 0.0};
}

void BevGrid::metric_to_cell(double mx, double my, double& cx, double& cy) const {
    cx = mx / resolution + static_cast<double>(x_cells) / 2.0 - 0.5;
    cy = my / resolution + static_cast<double>(y_cells) / 2.0 - 0.5;
}

std::vector<double> default_z_anchors() { return {-1.0, 0.0, 1.0, 2.0}; }

ProjectionMatrix make_projection(const Mat3& calib, double width, double height,
                                 const Pose& cam_from_ego, const Pose& ego_at_capture,
                                 const Pose& ego_at_now) {
    const Pose chain = cam_from_ego.compose(ego_at_capture.inverse()).compose(ego_at_now);
    const Mat3 kr = calib * chain.rotation();
    const Vec3 kt = calib * chain.translation();
    ProjectionMatrix pm;
    pm.width = width;
    pm.height = height;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            pm.t[static_cast<std::size_t>(i * 4 + j)] = kr(i, j);
        }
    }
    pm.t[3] = kt.x;
    pm.t[7] = kt.y;
    pm.t[11] = kt.z;
    return pm;
}

ProjectionMatrix make_projection(const Intrinsics& k, const Pose& cam_from_ego,
                                 const Pose& ego_at_capture, const Pose& ego_at_now) {
    return make_projection(k.matrix(), static_cast<double>(k.width),
                           static_cast<double>(k.height), cam_from_ego, ego_at_capture,
                           ego_at_now);
}

PixelPoint project(const ProjectionMatrix& pm, const Vec3& p) {
    const double hx = pm.t[0] * p.x + pm.t[1] * p.y + pm.t[2] * p.z + pm.t[3];
    const double hy = pm.t[4] * p.x + pm.t[5] * p.y + pm.t[6] * p.z + pm.t[7];
    const double hz = pm.t[8] * p.x + pm.t[9] * p.y + pm.t[10] * p.z + pm.t[11];
    PixelPoint out;
    out.depth = hz;
    if (hz <= kMinProjectionDepth) {
        out.valid = false;
        return out;
    }
    out.u = hx / hz;
    out.v = hy / hz;
    out.valid = out.u >= 0.0 && out.u <= pm.width - 1.0 && out.v >= 0.0 && out.v <= pm.height - 1.0;
    return out;
}

Mat3 optical_from_body_axes() {
    Mat3 p;
    p(0, 0) = 0;
    p(0, 1) = -1;
    p(0, 2) = 0;
    p(1, 0) = 0;
    p(1, 1) = 0;
    p(1, 2) = -1;
    p(2, 0) = 1;
    p(2, 1) = 0;
    p(2, 2) = 0;
    return p;
}

Pose CameraConfig::cam_from_ego() const {
    const Pose body_from_ego = ego_from_body.inverse();
    return Pose(optical_from_body_axes(), Vec3{}).compose(body_from_ego);
}

Pose CameraConfig::cam_to_ego() const { return cam_from_ego().inverse(); }

CameraRig load_rig(const std::string& path) {
    const KvFile f = KvFile::load(path);
    CameraRig rig;
    for (const KvSection* sec : f.find_all("camera")) {
        CameraConfig cam;
        cam.name = sec->get_or("name", sec->name);
        cam.intrinsics = Intrinsics(
            sec->get_double("fx"), sec->get_double("fy"), sec->get_double("cx"),
            sec->get_double("cy"), static_cast<std::size_t>(sec->get_int("width")),
            static_cast<std::size_t>(sec->get_int("height")));
        cam.ego_from_body = Pose::from_yaw_pitch_roll(
            sec->get_double_or("yaw", 0.0), sec->get_double_or("pitch", 0.0),
            sec->get_double_or("roll", 0.0),
            Vec3{sec->get_double_or("x", 0.0), sec->get_double_or("y", 0.0),
                 sec->get_double_or("z", 0.0)});
        rig.cameras.push_back(cam);
    }
    if (rig.cameras.empty()) {
        throw std::runtime_error("rig file has no [camera.*] sections: " + path);
    }
    return rig;
}

void save_rig(const std::string& path, const CameraRig& rig) {
    KvFile f;
    for (std::size_t i = 0; i < rig.cameras.size(); ++i) {
        const CameraConfig& cam = rig.cameras[i];
        KvSection& sec = f.add("camera." + std::to_string(i));
        if (!cam.name.empty()) sec.set("name", cam.name);
        sec.set_double("fx", cam.intrinsics.fx);
        sec.set_double("fy", cam.intrinsics.fy);
        sec.set_double("cx", cam.intrinsics.cx);
        sec.set_double("cy", cam.intrinsics.cy);
        sec.set_int("width", static_cast<long>(cam.intrinsics.width));
        sec.set_int("height", static_cast<long>(cam.intrinsics.height));
        // Decompose zyx euler angles from the body rotation.
        const Mat3& r = cam.ego_from_body.rotation();
        const double yaw = std::atan2(r(1, 0), r(0, 0));
        const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
        const double roll = std::atan2(r(2, 1), r(2, 2));
        sec.set_double("yaw", yaw);
        sec.set_double("pitch", pitch);
        sec.set_double("roll", roll);
        sec.set_double("x", cam.ego_from_body.translation().x);
        sec.set_double("y", cam.ego_from_body.translation().y);
        sec.set_double("z", cam.ego_from_body.translation().z);
    }
    f.save(path);
}

} // namespace bevpred
