#include "bevpred/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bevpred {

void PyramidConfig::validate(std::size_t x_cells, std::size_t y_cells) const {
    if (depth < 1 || depth > 4) {
        throw std::invalid_argument("pyramid depth must be in 1..4");
    }
    if (channels % heads != 0) {
        throw std::invalid_argument("pyramid channels must be divisible by heads");
    }
    const std::size_t div_x = (1u << (depth - 1)) * win_h;
    const std::size_t div_y = (1u << (depth - 1)) * win_w;
    if (x_cells % div_x != 0) {
        throw std::invalid_argument("grid X must be divisible by 2^(depth-1) * win_h");
    }
    if (y_cells % div_y != 0) {
        throw std::invalid_argument("grid Y must be divisible by 2^(depth-1) * win_w");
    }
    if (blocks_per_stage == 0) {
        throw std::invalid_argument("pyramid needs at least one block per stage");
    }
}

namespace {

/// Cyclic roll of the h/w plane of an F x h x w x C tensor.
Tensor roll_plane(const Tensor& x, long dr, long dc) {
    if (dr == 0 && dc == 0) return x;
    const std::size_t f = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor out(x.dims(), x.dtype());
    const long lh = static_cast<long>(h), lw = static_cast<long>(w);
    for (std::size_t fi = 0; fi < f; ++fi) {
        for (std::size_t r = 0; r < h; ++r) {
            const std::size_t sr =
                static_cast<std::size_t>(((static_cast<long>(r) - dr) % lh + lh) % lh);
            for (std::size_t cc = 0; cc < w; ++cc) {
                const std::size_t sc =
                    static_cast<std::size_t>(((static_cast<long>(cc) - dc) % lw + lw) % lw);
                const double* src = x.data() + ((fi * h + sr) * w + sc) * c;
                double* dst = out.data() + ((fi * h + r) * w + cc) * c;
                std::copy(src, src + c, dst);
            }
        }
    }
    return out;
}

void gather_window(const Tensor& x, std::size_t wi, std::size_t wj, std::size_t win_h,
                   std::size_t win_w, std::vector<double>& out) {
    const std::size_t f = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    (void)h;
    out.resize(f * win_h * win_w * c);
    std::size_t t = 0;
    for (std::size_t fi = 0; fi < f; ++fi) {
        for (std::size_t r = 0; r < win_h; ++r) {
            const std::size_t gr = wi * win_h + r;
            for (std::size_t cc = 0; cc < win_w; ++cc) {
                const std::size_t gc = wj * win_w + cc;
                const double* src = x.data() + ((fi * x.extent(1) + gr) * w + gc) * c;
                std::copy(src, src + c, out.begin() + static_cast<long>(t * c));
                ++t;
            }
        }
    }
}

void scatter_window(Tensor& x, std::size_t wi, std::size_t wj, std::size_t win_h,
                    std::size_t win_w, const std::vector<double>& in) {
    const std::size_t f = x.extent(0), w = x.extent(2), c = x.extent(3);
    std::size_t t = 0;
    for (std::size_t fi = 0; fi < f; ++fi) {
        for (std::size_t r = 0; r < win_h; ++r) {
            const std::size_t gr = wi * win_h + r;
            for (std::size_t cc = 0; cc < win_w; ++cc) {
                const std::size_t gc = wj * win_w + cc;
                double* dst = x.data() + ((fi * x.extent(1) + gr) * w + gc) * c;
                std::copy(in.begin() + static_cast<long>(t * c),
                          in.begin() + static_cast<long>((t + 1) * c), dst);
                ++t;
            }
        }
    }
}

/// rows x C buffer = tokens * W^T + b
void project_tokens(const std::vector<double>& tok, std::size_t rows, const Tensor& w,
                    const Tensor& b, std::vector<double>& out) {
    const std::size_t c = w.extent(1), co = w.extent(0);
    out.assign(rows * co, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* px = tok.data() + r * c;
        double* po = out.data() + r * co;
        for (std::size_t o = 0; o < co; ++o) {
            double acc = b.empty() ? 0.0 : b[o];
            const double* pw = w.data() + o * c;
            for (std::size_t i = 0; i < c; ++i) {
                acc += pw[i] * px[i];
            }
            po[o] = acc;
        }
    }
}

} // namespace

Tensor swin_block(const Tensor& x, const Tensor* kv, const SwinBlockWeights& w,
                  std::size_t heads, std::size_t win_h, std::size_t win_w, bool shifted,
                  AttentionCache* cache) {
    if (x.rank() != 4) {
        throw std::invalid_argument("swin_block expects F x h x w x C");
    }
    const std::size_t fq = x.extent(0), h = x.extent(1), wd = x.extent(2), c = x.extent(3);
    if (h % win_h != 0 || wd % win_w != 0) {
        throw std::invalid_argument("swin_block: plane not divisible by window");
    }
    if (c % heads != 0) {
        throw std::invalid_argument("swin_block: channels not divisible by heads");
    }
    const Tensor* kv_src = kv ? kv : &x;
    if (kv_src->extent(1) != h || kv_src->extent(2) != wd || kv_src->extent(3) != c) {
        throw std::invalid_argument("swin_block: kv plane mismatch");
    }
    const std::size_t fkv = kv_src->extent(0);
    const std::size_t nq = fq * win_h * win_w;
    const std::size_t nkv = fkv * win_h * win_w;
    const Tensor& pos_kv = w.pos_kv.empty() ? w.pos_q : w.pos_kv;
    if (w.pos_q.extent(0) != nq || pos_kv.extent(0) != nkv) {
        throw std::invalid_argument("swin_block: positional embedding size mismatch");
    }

    const long sh = shifted ? static_cast<long>(win_h / 2) : 0;
    const long sw = shifted ? static_cast<long>(win_w / 2) : 0;
    const Tensor xs = roll_plane(x, -sh, -sw);
    const Tensor kvs = kv ? roll_plane(*kv, -sh, -sw) : Tensor();
    const Tensor& kv_use = kv ? kvs : xs;

    const std::size_t d = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t wx = h / win_h, wy = wd / win_w;

    Tensor attn_out(xs.dims(), xs.dtype());
    if (cache && cache->enabled) {
        cache->windows.assign(wx * wy, Tensor());
        cache->windows_x = wx;
        cache->windows_y = wy;
        cache->frames = fq;
        cache->win_h = win_h;
        cache->win_w = win_w;
    }

    parallel_for(wx * wy, [&](std::size_t begin, std::size_t end) {
        std::vector<double> xtok, kvtok, q, k, v, o;
        std::vector<double> scores(nkv);
        for (std::size_t widx = begin; widx < end; ++widx) {
            const std::size_t wi = widx / wy, wj = widx % wy;
            gather_window(xs, wi, wj, win_h, win_w, xtok);
            gather_window(kv_use, wi, wj, win_h, win_w, kvtok);
            // learned positional embeddings on both streams
            std::vector<double> xe = xtok, ke = kvtok;
            for (std::size_t t = 0; t < nq; ++t) {
                for (std::size_t i = 0; i < c; ++i) {
                    xe[t * c + i] += w.pos_q(t, i);
                }
            }
            for (std::size_t t = 0; t < nkv; ++t) {
                for (std::size_t i = 0; i < c; ++i) {
                    ke[t * c + i] += pos_kv(t, i);
                }
            }
            project_tokens(xe, nq, w.wq, w.bq, q);
            project_tokens(ke, nkv, w.wk, w.bk, k);
            project_tokens(ke, nkv, w.wv, w.bv, v);

            Tensor win_attn;
            if (cache && cache->enabled) {
                win_attn = Tensor({nq, nkv}, Dtype::F64);
            }
            std::vector<double> mix(nq * c, 0.0);
            for (std::size_t hd = 0; hd < heads; ++hd) {
                const std::size_t off = hd * d;
                for (std::size_t i = 0; i < nq; ++i) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t j = 0; j < nkv; ++j) {
                        double s = 0.0;
                        for (std::size_t e = 0; e < d; ++e) {
                            s += q[i * c + off + e] * k[j * c + off + e];
                        }
                        scores[j] = s * scale;
                        mx = std::max(mx, scores[j]);
                    }
                    double sum = 0.0;
                    for (std::size_t j = 0; j < nkv; ++j) {
                        scores[j] = std::exp(scores[j] - mx);
                        sum += scores[j];
                    }
                    for (std::size_t j = 0; j < nkv; ++j) {
                        const double a = scores[j] / sum;
                        if (!win_attn.empty()) {
                            win_attn(i, j) += a / static_cast<double>(heads);
                        }
                        for (std::size_t e = 0; e < d; ++e) {
                            mix[i * c + off + e] += a * v[j * c + off + e];
                        }
                    }
                }
            }
            project_tokens(mix, nq, w.wo, w.bo, o);
            scatter_window(attn_out, wi, wj, win_h, win_w, o);
            if (!win_attn.empty()) {
                cache->windows[widx] = std::move(win_attn);
            }
        }
    });

    // add&norm -> FFN -> add&norm, per token
    Tensor h1(xs.dims(), xs.dtype());
    for (std::size_t i = 0; i < xs.numel(); ++i) {
        h1[i] = xs[i] + attn_out[i];
    }
    h1 = layernorm(h1, w.ln1_gamma, w.ln1_beta);
    const Tensor f = linear(gelu(linear(h1, w.ffn_w1, w.ffn_b1)), w.ffn_w2, w.ffn_b2);
    Tensor out(h1.dims(), h1.dtype());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = h1[i] + f[i];
    }
    out = layernorm(out, w.ln2_gamma, w.ln2_beta);
    return roll_plane(out, sh, sw);
}

namespace {

/// Per-frame conv / deconv over an F x h x w x C map.
Tensor frame_conv(const Tensor& x, const Tensor& w, const Tensor& b, bool transposed,
                  std::size_t stride, std::size_t pad) {
    const std::size_t f = x.extent(0), h = x.extent(1), wd = x.extent(2), c = x.extent(3);
    Tensor out;
    for (std::size_t fi = 0; fi < f; ++fi) {
        Tensor chw({c, h, wd}, x.dtype());
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t cc = 0; cc < wd; ++cc) {
                for (std::size_t k = 0; k < c; ++k) {
                    chw(k, r, cc) = x(fi, r, cc, k);
                }
            }
        }
        const Tensor res = transposed ? deconv2d(chw, w, b, stride, pad)
                                      : conv2d(chw, w, b, stride, pad);
        const std::size_t oh = res.extent(1), ow = res.extent(2), oc = res.extent(0);
        if (out.empty()) {
            out = Tensor({f, oh, ow, oc}, x.dtype());
        }
        for (std::size_t r = 0; r < oh; ++r) {
            for (std::size_t cc = 0; cc < ow; ++cc) {
                for (std::size_t k = 0; k < oc; ++k) {
                    out(fi, r, cc, k) = res(k, r, cc);
                }
            }
        }
    }
    return out;
}

Tensor run_stage_blocks(const Tensor& x, const Tensor* kv, const PyramidStageWeights& stage,
                        const PyramidConfig& cfg, AttentionCache* cache) {
    Tensor cur = x;
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        const bool shifted = cfg.shift && (b % 2 == 1);
        AttentionCache* c = (b == 0) ? cache : nullptr;
        cur = swin_block(cur, kv, stage.blocks[b], cfg.heads, cfg.win_h, cfg.win_w, shifted, c);
    }
    return cur;
}

} // namespace

Tensor AttentionCache::packed() const {
    if (windows.empty()) {
        throw std::runtime_error("attention cache is empty");
    }
    const std::size_t n = windows.size();
    const std::size_t rows = windows.front().extent(0), cols = windows.front().extent(1);
    Tensor out({n, rows, cols}, Dtype::F64);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(windows[i].data(), windows[i].data() + rows * cols,
                  out.data() + i * rows * cols);
    }
    return out;
}

AttentionCache AttentionCache::unpack(const Tensor& t, std::size_t windows_x,
                                      std::size_t windows_y, std::size_t frames,
                                      std::size_t win_h, std::size_t win_w) {
    if (t.rank() != 3) {
        throw std::invalid_argument("packed attention cache must be rank 3");
    }
    AttentionCache c;
    c.enabled = true;
    c.windows_x = windows_x;
    c.windows_y = windows_y;
    c.frames = frames;
    c.win_h = win_h;
    c.win_w = win_w;
    for (std::size_t i = 0; i < t.extent(0); ++i) {
        Tensor m({t.extent(1), t.extent(2)}, Dtype::F64);
        std::copy(t.data() + i * m.numel(), t.data() + (i + 1) * m.numel(), m.data());
        c.windows.push_back(std::move(m));
    }
    return c;
}

PyramidFeatures encode_pyramid(const Tensor& temporal_map, const PyramidWeights& weights,
                               const PyramidConfig& cfg, AttentionCache* cache) {
    if (temporal_map.rank() != 4) {
        throw std::invalid_argument("encode_pyramid expects (T+1) x X x Y x C");
    }
    cfg.validate(temporal_map.extent(1), temporal_map.extent(2));
    if (weights.encoder.size() != cfg.depth) {
        throw std::invalid_argument("encode_pyramid: stage count mismatch");
    }
    PyramidFeatures out;
    Tensor cur = temporal_map;
    for (std::size_t s = 0; s < cfg.depth; ++s) {
        if (s > 0) {
            cur = frame_conv(cur, weights.encoder[s].conv_w, weights.encoder[s].conv_b, false, 2,
                             1);
        }
        cur = run_stage_blocks(cur, nullptr, weights.encoder[s], cfg, s == 0 ? cache : nullptr);
        out.scales.push_back(cur);
    }
    return out;
}

Tensor avg_pool2(const Tensor& x) {
    const bool framed = x.rank() == 4;
    const std::size_t f = framed ? x.extent(0) : 1;
    const std::size_t h = x.extent(framed ? 1 : 0), w = x.extent(framed ? 2 : 1),
                      c = x.extent(framed ? 3 : 2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("avg_pool2: extents must be even");
    }
    std::vector<std::size_t> od = framed ? std::vector<std::size_t>{f, h / 2, w / 2, c}
                                         : std::vector<std::size_t>{h / 2, w / 2, c};
    Tensor out(od, x.dtype());
    for (std::size_t fi = 0; fi < f; ++fi) {
        for (std::size_t r = 0; r < h / 2; ++r) {
            for (std::size_t cc = 0; cc < w / 2; ++cc) {
                for (std::size_t k = 0; k < c; ++k) {
                    auto at = [&](std::size_t rr, std::size_t ccc) {
                        return framed ? x(fi, rr, ccc, k) : x(rr, ccc, k);
                    };
                    const double v = 0.25 * (at(2 * r, 2 * cc) + at(2 * r, 2 * cc + 1) +
                                             at(2 * r + 1, 2 * cc) + at(2 * r + 1, 2 * cc + 1));
                    if (framed) {
                        out(fi, r, cc, k) = v;
                    } else {
                        out(r, cc, k) = v;
                    }
                }
            }
        }
    }
    return out;
}

Tensor map_feature_prior(const Tensor& bev_current, const HeadWeights& hdmap_head,
                         std::size_t pool_steps) {
    Tensor prior = head_trunk(hdmap_head, bev_current);
    for (std::size_t i = 0; i < pool_steps; ++i) {
        prior = avg_pool2(prior);
    }
    return prior;
}

std::vector<Tensor> make_future_queries(const PyramidWeights& weights, const PyramidConfig& cfg,
                                        const Tensor& map_prior) {
    if (weights.future_emb.size() != cfg.future_frames + 1) {
        throw std::invalid_argument("make_future_queries: embedding count mismatch");
    }
    std::vector<Tensor> out;
    for (const Tensor& emb : weights.future_emb) {
        if (!emb.same_shape(map_prior)) {
            throw std::invalid_argument("make_future_queries: prior shape mismatch");
        }
        Tensor q(emb.dims(), emb.dtype());
        for (std::size_t i = 0; i < emb.numel(); ++i) {
            q[i] = emb[i] + map_prior[i];
        }
        out.push_back(std::move(q));
    }
    return out;
}

Tensor decode_pyramid(const PyramidFeatures& features, const std::vector<Tensor>& future_queries,
                      const PyramidWeights& weights, const PyramidConfig& cfg) {
    if (features.scales.size() != cfg.depth || weights.decoder.size() != cfg.depth) {
        throw std::invalid_argument("decode_pyramid: scale count mismatch");
    }
    if (future_queries.size() != cfg.future_frames + 1) {
        throw std::invalid_argument("decode_pyramid: future query count mismatch");
    }
    // Stack the future queries into the (T'+1)-frame query map.
    const Tensor& q0 = future_queries.front();
    Tensor d({future_queries.size(), q0.extent(0), q0.extent(1), q0.extent(2)}, q0.dtype());
    for (std::size_t f = 0; f < future_queries.size(); ++f) {
        std::copy(future_queries[f].data(), future_queries[f].data() + q0.numel(),
                  d.data() + f * q0.numel());
    }
    for (std::size_t si = cfg.depth; si-- > 0;) {
        if (si + 1 < cfg.depth) {
            d = frame_conv(d, weights.decoder[si].conv_w, weights.decoder[si].conv_b, true, 2, 0);
        }
        d = run_stage_blocks(d, &features.scales[si], weights.decoder[si], cfg, nullptr);
    }
    return d;
}

Tensor attention_matrix(const AttentionCache& cache, std::size_t window_index) {
    if (!cache.enabled || cache.windows.empty()) {
        throw std::runtime_error("attention caching was not enabled for this pass");
    }
    if (window_index >= cache.windows.size()) {
        throw std::out_of_range("attention window index out of range");
    }
    return cache.windows[window_index];
}

} // namespace bevpred
