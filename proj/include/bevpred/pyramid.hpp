#pragma once

#include "bevpred/heads.hpp"
#include "bevpred/tensor.hpp"

#include <cstddef>
#include <vector>

namespace bevpred {

/// Spatial-temporal pyramid settings. The plane at scale s is
/// (X/2^s) x (Y/2^s); depth scales 0..depth-1 must stay divisible by the
/// window.
struct PyramidConfig {
    std::size_t depth = 4; // 1..4
    std::size_t win_h = 4, win_w = 4;
    std::size_t heads = 4;
    std::size_t channels = 16;
    std::size_t past_frames = 2;   // T
    std::size_t future_frames = 4; // T'
    bool shift = true;             // pair each block with a shifted-window one
    std::size_t blocks_per_stage = 2;

    void validate(std::size_t x_cells, std::size_t y_cells) const;
    std::size_t scale_x(std::size_t x_cells, std::size_t s) const { return x_cells >> s; }
    std::size_t finest_x(std::size_t x_cells) const { return x_cells >> (depth - 1); }
    std::size_t finest_y(std::size_t y_cells) const { return y_cells >> (depth - 1); }
};

/// Windowed space-time attention block. Tokens of one window position are
/// gathered across all frames; learned positional embeddings replace Swin's
/// relative bias tables.
struct SwinBlockWeights {
    Tensor wq, wk, wv, wo; // C x C
    Tensor bq, bk, bv, bo; // C
    Tensor ln1_gamma, ln1_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_gamma, ln2_beta;
    Tensor pos_q;  // (Fq * win_h * win_w) x C
    Tensor pos_kv; // (Fkv * win_h * win_w) x C; empty => self-attention embedding reused
};

/// Post-softmax attention of each window (head-averaged), recorded for the
/// first block of encoder scale 0 when enabled.
struct AttentionCache {
    bool enabled = false;
    std::size_t windows_x = 0, windows_y = 0;
    std::size_t frames = 0, win_h = 0, win_w = 0;
    std::vector<Tensor> windows; // tokens x tokens each

    /// Pack into one (num_windows, tokens, tokens) tensor for serialization.
    Tensor packed() const;
    static AttentionCache unpack(const Tensor& t, std::size_t windows_x, std::size_t windows_y,
                                 std::size_t frames, std::size_t win_h, std::size_t win_w);
};

/// x: F x h x w x C queries; kv: optional same-plane source (any frame
/// count). Returns the same shape as x.
Tensor swin_block(const Tensor& x, const Tensor* kv, const SwinBlockWeights& w,
                  std::size_t heads, std::size_t win_h, std::size_t win_w, bool shifted,
                  AttentionCache* cache = nullptr);

struct PyramidStageWeights {
    Tensor conv_w, conv_b; // encoder: stride-2 conv; decoder: stride-2 deconv
    std::vector<SwinBlockWeights> blocks;
};

struct PyramidWeights {
    std::vector<PyramidStageWeights> encoder; // [depth]; encoder[0] has no conv
    std::vector<Tensor> future_emb;           // T'+1 of finest_x x finest_y x C
    std::vector<PyramidStageWeights> decoder; // [depth]; decoder[s<depth-1] carries the deconv
};

struct PyramidFeatures {
    std::vector<Tensor> scales; // B_s: (T+1) x X/2^s x Y/2^s x C
};

PyramidFeatures encode_pyramid(const Tensor& temporal_map, const PyramidWeights& weights,
                               const PyramidConfig& cfg, AttentionCache* cache = nullptr);

/// HD-map head trunk on the current-frame BEV feature, average-pooled down to
/// the finest pyramid scale.
Tensor map_feature_prior(const Tensor& bev_current, const HeadWeights& hdmap_head,
                         std::size_t pool_steps);

/// Q^(t) = E_t + prior for t = 0..T'.
std::vector<Tensor> make_future_queries(const PyramidWeights& weights, const PyramidConfig& cfg,
                                        const Tensor& map_prior);

/// Coarse-to-fine cross-attention decode; returns D_0 of shape
/// (T'+1) x X x Y x C.
Tensor decode_pyramid(const PyramidFeatures& features, const std::vector<Tensor>& future_queries,
                      const PyramidWeights& weights, const PyramidConfig& cfg);

/// The requested window's post-softmax attention matrix (rows sum to 1).
Tensor attention_matrix(const AttentionCache& cache, std::size_t window_index);

/// Per-frame stride-2 average pooling of a (F) x h x w x C or h x w x C map.
Tensor avg_pool2(const Tensor& x);

} // namespace bevpred
