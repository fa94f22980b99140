#pragma once

#include "bevpred/geometry.hpp"
#include "bevpred/posesync.hpp"
#include "bevpred/scene.hpp"
#include "bevpred/tensor.hpp"

#include <string>
#include <vector>

namespace bevpred {

/// Planar ego motion from the past-ego frame to the current-ego frame:
/// p_current = R(theta) * p_past + (dx, dy).
struct EgoDelta {
    double theta = 0.0;
    double dx = 0.0, dy = 0.0;
};

/// Extracts the planar delta taking past-ego coordinates to now-ego
/// coordinates (now^-1 ∘ past).
EgoDelta ego_delta(const Pose& past, const Pose& now);

enum class WarpResample { Bilinear, Nearest };

struct WarpResult {
    Tensor warped; // X x Y x C
    Tensor mask;   // X x Y, 1 = source inside the past grid
};

/// Rigid temporal-alignment baseline: resamples a past BEV map onto the
/// current grid through the inverse ego delta. Out-of-range samples are
/// zero-filled and masked out.
WarpResult warp_bev(const Tensor& past, const BevGrid& grid, const EgoDelta& delta,
                    WarpResample mode = WarpResample::Bilinear);

struct SyncComparisonRow {
    int frame = 0; // historical offset t >= 1 (frame -t)
    std::string method;
    double displacement = 0.0; // cells
    double oob_fraction = 0.0;
    double cosine = 0.0;
};

/// Runs the pose-synchronized encoder and the warp baseline on a static
/// scenario and scores both against the analytic world encoding. Throws if
/// the scenario contains moving boxes.
std::vector<SyncComparisonRow> distortion_report(const Scenario& scn, const BevGrid& grid,
                                                 std::size_t feature_channels);

std::string sync_comparison_csv(const std::vector<SyncComparisonRow>& rows);

} // namespace bevpred
