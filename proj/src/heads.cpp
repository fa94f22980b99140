#include "bevpred/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace bevpred {

namespace {

/// X x Y x C -> C x X x Y
Tensor to_chw(const Tensor& x) {
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Tensor out({c, h, w}, x.dtype());
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t k = 0; k < c; ++k) {
                out(k, i, j) = x(i, j, k);
            }
        }
    }
    return out;
}

/// C x X x Y -> X x Y x C
Tensor to_hwc(const Tensor& x) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor out({h, w, c}, x.dtype());
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                out(i, j, k) = x(k, i, j);
            }
        }
    }
    return out;
}

} // namespace

Tensor head_trunk(const HeadWeights& w, const Tensor& x) {
    if (x.rank() != 3) {
        throw std::invalid_argument("head_trunk expects X x Y x C");
    }
    const Tensor conv = to_hwc(conv2d(to_chw(x), w.conv3_w, w.conv3_b, 1, 1));
    return gelu(layernorm(conv, w.ln_gamma, w.ln_beta));
}

Tensor run_head(const HeadWeights& w, const Tensor& x) {
    return to_chw(linear(head_trunk(w, x), w.conv1_w, w.conv1_b));
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.dims(), x.dtype());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    }
    return out;
}

PredictionBundle run_heads(const Tensor& d0, const HeadsWeights& weights, const HeadsConfig& cfg) {
    if (d0.rank() != 4) {
        throw std::invalid_argument("run_heads expects (T'+1) x X x Y x C");
    }
    if (d0.extent(3) != cfg.channels) {
        throw std::invalid_argument("run_heads channel mismatch");
    }
    const std::size_t frames = d0.extent(0), xc = d0.extent(1), yc = d0.extent(2),
                      c = d0.extent(3);
    PredictionBundle out;
    for (std::size_t f = 0; f < frames; ++f) {
        Tensor bev({xc, yc, c}, d0.dtype());
        std::copy(d0.data() + f * xc * yc * c, d0.data() + (f + 1) * xc * yc * c, bev.data());
        PredictionFrame pf;
        pf.seg = run_head(weights.seg, bev);
        pf.center = sigmoid(run_head(weights.center, bev));
        pf.offset = run_head(weights.offset, bev);
        pf.flow = run_head(weights.flow, bev);
        if (f == 0) {
            out.hdmap = run_head(weights.hdmap, bev);
        }
        out.frames.push_back(std::move(pf));
    }
    return out;
}

} // namespace bevpred
