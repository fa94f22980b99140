#pragma once

#include "bevpred/augment.hpp"
#include "bevpred/instances.hpp"
#include "bevpred/scene.hpp"
#include "bevpred/weights.hpp"

#include <stdexcept>
#include <string>

namespace bevpred {

/// Configuration problems exit the CLI with code 2; stage failures with 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AugMode { None, Img, Bev, Both };

AugMode parse_aug_mode(const std::string& text);
std::string aug_mode_name(AugMode mode);

struct RunConfig {
    std::uint64_t seed = 42;
    ModelConfig model;
    double frame_period = 0.5;
    std::string rig_file;          // optional; a default rig is generated when empty
    std::string weights_manifest;  // optional; seeded init when empty
    InstanceParams instances;
    AugMode aug = AugMode::None;
    ImageAugConfig image_aug;
    ScenarioGenParams scenario;
    double center_sigma = 3.0;

    int past_frames() const { return static_cast<int>(model.pyramid.past_frames); }
    int future_frames() const { return static_cast<int>(model.pyramid.future_frames); }

    /// Checks every cross-module constraint; throws ConfigError naming the
    /// violated constraint.
    void validate() const;
};

RunConfig default_run_config();
RunConfig load_run_config(const std::string& path);

/// A rig that surrounds the ego with `cameras` evenly-spaced views.
CameraRig default_rig(std::size_t cameras = 4, std::size_t image_size = 96, double focal = 48.0,
                      double mount_height = 2.2);

} // namespace bevpred
