#include "bevpred/config.hpp"

#include "bevpred/kvfile.hpp"

#include <cmath>
#include <numbers>

namespace bevpred {

AugMode parse_aug_mode(const std::string& text) {
    if (text == "none") return AugMode::None;
    if (text == "img") return AugMode::Img;
    if (text == "bev") return AugMode::Bev;
    if (text == "both") return AugMode::Both;
    throw ConfigError("unknown augmentation mode '" + text + "' (none|img|bev|both)");
}

std::string aug_mode_name(AugMode mode) {
    switch (mode) {
    case AugMode::None: return "none";
    case AugMode::Img: return "img";
    case AugMode::Bev: return "bev";
    case AugMode::Both: return "both";
    }
    return "none";
}

void RunConfig::validate() const {
    try {
        model.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (frame_period <= 0.0) {
        throw ConfigError("frame period must be positive");
    }
    if (instances.center_threshold <= 0.0 || instances.center_threshold >= 1.0) {
        throw ConfigError("instance center threshold must lie in (0, 1)");
    }
    if (instances.max_instances == 0) {
        throw ConfigError("max_instances must be >= 1");
    }
    if (instances.match_radius <= 0.0) {
        throw ConfigError("instance match radius must be positive");
    }
    if (image_aug.scale_lo > image_aug.scale_hi || image_aug.scale_lo <= 0.0) {
        throw ConfigError("image augmentation scale range is invalid");
    }
    if (center_sigma <= 0.0) {
        throw ConfigError("center gaussian sigma must be positive");
    }
    if (model.pyramid.past_frames != static_cast<std::size_t>(scenario.past_frames) ||
        model.pyramid.future_frames != static_cast<std::size_t>(scenario.future_frames)) {
        throw ConfigError("pyramid frame counts must match the scenario frame counts");
    }
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.model.grid = BevGrid(32, 32, 0.5, default_z_anchors());
    cfg.scenario.past_frames = static_cast<int>(cfg.model.pyramid.past_frames);
    cfg.scenario.future_frames = static_cast<int>(cfg.model.pyramid.future_frames);
    cfg.scenario.frame_period = cfg.frame_period;
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg = default_run_config();
    KvFile f;
    try {
        f = KvFile::load(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    try {
        if (const KvSection* top = f.find("")) {
            cfg.seed = static_cast<std::uint64_t>(top->get_int_or("seed", 42));
            cfg.rig_file = top->get_or("rig", "");
            cfg.weights_manifest = top->get_or("weights", "");
        }
        if (const KvSection* grid = f.find("grid")) {
            std::vector<double> z = default_z_anchors();
            if (grid->has("z_anchors")) z = grid->get_doubles("z_anchors");
            cfg.model.grid =
                BevGrid(static_cast<std::size_t>(grid->get_int_or("x", 32)),
                        static_cast<std::size_t>(grid->get_int_or("y", 32)),
                        grid->get_double_or("resolution", 0.5), z);
        }
        if (const KvSection* time = f.find("time")) {
            cfg.model.pyramid.past_frames =
                static_cast<std::size_t>(time->get_int_or("past", 2));
            cfg.model.pyramid.future_frames =
                static_cast<std::size_t>(time->get_int_or("future", 4));
            cfg.frame_period = time->get_double_or("period", 0.5);
        }
        if (const KvSection* ps = f.find("posesync")) {
            cfg.model.posesync.channels =
                static_cast<std::size_t>(ps->get_int_or("channels", 16));
            cfg.model.posesync.heads = static_cast<std::size_t>(ps->get_int_or("heads", 4));
            cfg.model.posesync.points = static_cast<std::size_t>(ps->get_int_or("points", 4));
            cfg.model.posesync.layers = static_cast<std::size_t>(ps->get_int_or("layers", 3));
            if (ps->get_or("aggregation", "mean") == "valid-camera-mean") {
                cfg.model.posesync.aggregation = CameraAggregation::MeanOverValid;
            }
        }
        if (const KvSection* py = f.find("pyramid")) {
            cfg.model.pyramid.depth = static_cast<std::size_t>(py->get_int_or("depth", 4));
            if (py->has("window")) {
                const std::vector<double> wv = py->get_doubles("window");
                if (wv.size() != 2) throw ConfigError("pyramid window must be two integers");
                cfg.model.pyramid.win_h = static_cast<std::size_t>(wv[0]);
                cfg.model.pyramid.win_w = static_cast<std::size_t>(wv[1]);
            }
            cfg.model.pyramid.heads = static_cast<std::size_t>(py->get_int_or("heads", 4));
            cfg.model.pyramid.shift = py->get_int_or("shift", 1) != 0;
            cfg.model.pyramid.blocks_per_stage =
                static_cast<std::size_t>(py->get_int_or("blocks", 2));
        }
        if (const KvSection* hd = f.find("heads")) {
            cfg.model.heads.classes = static_cast<std::size_t>(hd->get_int_or("classes", 3));
        }
        if (const KvSection* in = f.find("instances")) {
            cfg.instances.center_threshold = in->get_double_or("center_threshold", 0.1);
            cfg.instances.max_instances =
                static_cast<std::size_t>(in->get_int_or("max_instances", 100));
            cfg.instances.match_radius = in->get_double_or("match_radius", 3.0);
            cfg.center_sigma = in->get_double_or("center_sigma", 3.0);
        }
        if (const KvSection* aug = f.find("aug")) {
            cfg.aug = parse_aug_mode(aug->get_or("mode", "none"));
            cfg.image_aug.scale_lo = aug->get_double_or("scale_lo", 0.9);
            cfg.image_aug.scale_hi = aug->get_double_or("scale_hi", 1.1);
            cfg.image_aug.max_rotation = aug->get_double_or("max_rotation", 0.1);
            cfg.image_aug.allow_hflip = aug->get_int_or("hflip", 1) != 0;
        }
        if (const KvSection* scn = f.find("scenario")) {
            cfg.scenario.box_count = static_cast<int>(scn->get_int_or("boxes", 3));
            cfg.scenario.placement_radius = scn->get_double_or("placement_radius", 6.0);
            cfg.scenario.max_speed = scn->get_double_or("max_speed", 1.5);
            cfg.scenario.max_yaw_rate = scn->get_double_or("max_yaw_rate", 0.35);
            cfg.scenario.ego_speed = scn->get_double_or("ego_speed", 1.0);
            cfg.scenario.ego_yaw_rate = scn->get_double_or("ego_yaw_rate", 0.15);
            cfg.scenario.moving_ego = scn->get_int_or("moving_ego", 1) != 0;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    // keep the synthesized scenario in lockstep with the model frame counts
    cfg.scenario.past_frames = static_cast<int>(cfg.model.pyramid.past_frames);
    cfg.scenario.future_frames = static_cast<int>(cfg.model.pyramid.future_frames);
    cfg.scenario.frame_period = cfg.frame_period;
    cfg.validate();
    return cfg;
}

CameraRig default_rig(std::size_t cameras, std::size_t image_size, double focal,
                      double mount_height) {
    CameraRig rig;
    const double ctr = (static_cast<double>(image_size) - 1.0) / 2.0;
    for (std::size_t i = 0; i < cameras; ++i) {
        CameraConfig cam;
        cam.name = "cam" + std::to_string(i);
        cam.intrinsics = Intrinsics(focal, focal, ctr, ctr, image_size, image_size);
        const double yaw =
            2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(cameras);
        cam.ego_from_body = Pose::from_yaw_pitch_roll(yaw, 0.0, 0.0, Vec3{0.0, 0.0, mount_height});
        rig.cameras.push_back(cam);
    }
    return rig;
}

} // namespace bevpred
