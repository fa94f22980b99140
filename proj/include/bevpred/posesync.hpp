#pragma once

#include "bevpred/geometry.hpp"
#include "bevpred/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace bevpred {

/// Deformable-attention projection weights. Offsets are predicted in pixels;
/// sampling weights are normalized with a softmax over the K points of each
/// head. No bias terms.
struct DeformAttnParams {
    std::size_t heads = 4;  // M
    std::size_t points = 4; // K
    Tensor w_offset;        // (M*K*2) x C, offset order per point: (du, dv)
    Tensor w_weight;        // (M*K) x C
    Tensor w_value;         // C x C
    Tensor w_out;           // C x C

    std::size_t channels() const { return w_value.empty() ? 0 : w_value.extent(0); }
    void validate() const;

    /// Zero offsets, uniform weights, identity value/output projections:
    /// attention collapses to plain bilinear sampling at the reference point.
    static DeformAttnParams collapsed(std::size_t channels, std::size_t heads = 1,
                                      std::size_t points = 1);
    static DeformAttnParams random(std::size_t channels, std::size_t heads, std::size_t points,
                                   std::uint64_t seed, double scale = 0.25);
};

/// One deformable-attention lookup. `p` is the normalized reference point:
/// u_px = u_norm * (W'-1), v_px = v_norm * (H'-1). Out-of-support samples
/// contribute zeros.
std::vector<double> deform_attn(std::span<const double> q, double u_norm, double v_norm,
                                const Tensor& feat, const DeformAttnParams& params);

struct DeformAttnGrads {
    std::vector<double> dq;
    Tensor dfeat;
    Tensor dw_offset;
    Tensor dw_weight;
    Tensor dw_value;
    Tensor dw_out;
    /// Set when a sample point lies exactly on a pixel-grid line, where the
    /// bilinear kernel is non-differentiable.
    bool on_grid_kink = false;
};

/// Analytic VJP of deform_attn for the scalar loss <cotangent, output>.
DeformAttnGrads deform_attn_grad(std::span<const double> q, double u_norm, double v_norm,
                                 const Tensor& feat, const DeformAttnParams& params,
                                 std::span<const double> cotangent);

enum class CameraAggregation {
    MeanOverAll,  // divide by N regardless of visibility
    MeanOverValid // divide by the number of cameras with >= 1 valid anchor
};

/// Eq-style cross-view lookup: for every BEV cell, project each z anchor into
/// each camera, sum deformable attention over the valid anchors, then average
/// across cameras. Cells invisible to a camera contribute zero for it.
Tensor cross_view_attention(const Tensor& queries, const std::vector<Tensor>& features,
                            const std::vector<ProjectionMatrix>& projections, const BevGrid& grid,
                            const DeformAttnParams& params,
                            CameraAggregation agg = CameraAggregation::MeanOverAll);

struct EncoderLayerWeights {
    DeformAttnParams attn;
    Tensor ln1_gamma, ln1_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_gamma, ln2_beta;
};

struct PosesyncConfig {
    std::size_t channels = 16;
    std::size_t heads = 4;
    std::size_t points = 4;
    std::size_t layers = 3;
    std::size_t ffn_hidden = 0; // 0 -> 2*channels
    bool normalize = true;      // false bypasses the add&norm normalization
    CameraAggregation aggregation = CameraAggregation::MeanOverAll;

    std::size_t hidden() const { return ffn_hidden ? ffn_hidden : 2 * channels; }
};

struct PosesyncWeights {
    Tensor query;   // X x Y x C, learnable
    Tensor pos_emb; // X x Y x C
    std::vector<EncoderLayerWeights> layers;
};

/// Full per-frame encoder: L layers of cross-view attention -> add&norm ->
/// FFN (GELU) -> add&norm. The positional embedding is added to the query
/// input of every layer.
Tensor encode_frame(const PosesyncWeights& weights, const PosesyncConfig& cfg,
                    const std::vector<Tensor>& features,
                    const std::vector<ProjectionMatrix>& projections, const BevGrid& grid);

/// Stacks per-frame maps in order [B^(0), B^(-1), ..., B^(-T)].
Tensor build_temporal_map(const std::vector<Tensor>& frames);

} // namespace bevpred
