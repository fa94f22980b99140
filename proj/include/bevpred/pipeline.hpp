#pragma once

#include "bevpred/config.hpp"
#include "bevpred/heads.hpp"
#include "bevpred/instances.hpp"
#include "bevpred/scene.hpp"
#include "bevpred/weights.hpp"

#include <map>
#include <stdexcept>
#include <string>

namespace bevpred {

/// Stage failures carry the stage name so the CLI can report it and exit 3.
struct StageError : std::runtime_error {
    explicit StageError(const std::string& stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_name(stage) {}
    std::string stage_name;
};

// ---- artifact serialization ----

void save_bundle(const std::string& dir, const PredictionBundle& bundle);
PredictionBundle load_bundle(const std::string& dir);

void save_gt(const std::string& dir, const std::vector<GroundTruthFrame>& frames);
std::vector<GroundTruthFrame> load_gt(const std::string& dir);

/// Ground-truth rasters reinterpreted as an instance video (ids are stable by
/// construction).
InstanceVideo gt_instance_video(const std::vector<GroundTruthFrame>& frames);

// ---- pipeline stages (each resumable from the artifacts of the previous) ----

void stage_synth(const RunConfig& cfg, const std::string& out_dir);
void stage_encode(const RunConfig& cfg, const std::string& out_dir);
void stage_predict(const RunConfig& cfg, const std::string& out_dir, bool cache_attention = false,
                   std::size_t pyramid_depth_override = 0);
void stage_eval(const RunConfig& cfg, const std::string& out_dir);

void run_pipeline(const RunConfig& cfg, const std::string& out_dir,
                  bool cache_attention = false);

// ---- appendices ----

/// Median-of-repeats per-stage timings plus the parameter accounting, as a
/// JSON document. Includes the published full-scale reference values labeled
/// non-reproducible.
std::string bench(const RunConfig& cfg, int repeats);

struct VizAttnResult {
    std::string pgm_path;
    std::string ppm_path;
};

/// Writes (a) the requested window's attention matrix as a min-max normalized
/// PGM and (b) a BEV overlay PPM marking, for the query cell, the top-k
/// attended cells of every historical frame. Requires a predict run with
/// attention caching.
VizAttnResult viz_attn(const std::string& out_dir, std::size_t layer, std::size_t window,
                       std::size_t query_x, std::size_t query_y, std::size_t top_k = 3);

/// Static-scene warp-vs-sync comparison CSV (see warp::distortion_report).
std::string compare_sync(const RunConfig& cfg, const std::string& out_dir);

} // namespace bevpred
