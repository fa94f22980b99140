#include "bevpred/posesync.hpp"

#include "bevpred/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bevpred {

void DeformAttnParams::validate() const {
    const std::size_t c = channels();
    if (c == 0 || heads == 0 || points == 0) {
        throw std::invalid_argument("deform attn: empty configuration");
    }
    if (c % heads != 0) {
        throw std::invalid_argument("deform attn: channels must be divisible by heads");
    }
    const std::size_t mk = heads * points;
    if (w_offset.rank() != 2 || w_offset.extent(0) != mk * 2 || w_offset.extent(1) != c ||
        w_weight.rank() != 2 || w_weight.extent(0) != mk || w_weight.extent(1) != c ||
        w_value.rank() != 2 || w_value.extent(1) != c || w_out.rank() != 2 ||
        w_out.extent(0) != c || w_out.extent(1) != c) {
        throw std::invalid_argument("deform attn: weight shape mismatch");
    }
}

DeformAttnParams DeformAttnParams::collapsed(std::size_t channels, std::size_t heads,
                                             std::size_t points) {
    DeformAttnParams p;
    p.heads = heads;
    p.points = points;
    p.w_offset = Tensor::zeros({heads * points * 2, channels}, Dtype::F64);
    p.w_weight = Tensor::zeros({heads * points, channels}, Dtype::F64);
    p.w_value = Tensor::identity(channels);
    p.w_out = Tensor::identity(channels);
    p.validate();
    return p;
}

DeformAttnParams DeformAttnParams::random(std::size_t channels, std::size_t heads,
                                          std::size_t points, std::uint64_t seed, double scale) {
    Rng rng(seed);
    auto fill = [&](Tensor& t) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            t[i] = rng.uniform(-scale, scale);
        }
    };
    DeformAttnParams p;
    p.heads = heads;
    p.points = points;
    p.w_offset = Tensor({heads * points * 2, channels}, Dtype::F64);
    p.w_weight = Tensor({heads * points, channels}, Dtype::F64);
    p.w_value = Tensor({channels, channels}, Dtype::F64);
    p.w_out = Tensor({channels, channels}, Dtype::F64);
    fill(p.w_offset);
    fill(p.w_weight);
    fill(p.w_value);
    fill(p.w_out);
    p.validate();
    return p;
}

namespace {

struct SamplePoint {
    double row, col;
};

void matvec(const Tensor& w, std::span<const double> x, double* out) {
    const std::size_t rows = w.extent(0), cols = w.extent(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* pw = w.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            acc += pw[c] * x[c];
        }
        out[r] = acc;
    }
}

void softmax_rows(std::vector<double>& logits, std::size_t heads, std::size_t points) {
    for (std::size_t m = 0; m < heads; ++m) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < points; ++k) {
            mx = std::max(mx, logits[m * points + k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < points; ++k) {
            double& v = logits[m * points + k];
            v = std::exp(v - mx);
            sum += v;
        }
        for (std::size_t k = 0; k < points; ++k) {
            logits[m * points + k] /= sum;
        }
    }
}

} // namespace

std::vector<double> deform_attn(std::span<const double> q, double u_norm, double v_norm,
                                const Tensor& feat, const DeformAttnParams& params) {
    params.validate();
    const std::size_t c = params.channels();
    if (q.size() != c || feat.rank() != 3 || feat.extent(2) != c) {
        throw std::invalid_argument("deform_attn: query/feature channel mismatch");
    }
    const std::size_t m = params.heads, k = params.points, d = c / m;
    const double u_px = u_norm * (static_cast<double>(feat.extent(1)) - 1.0);
    const double v_px = v_norm * (static_cast<double>(feat.extent(0)) - 1.0);

    std::vector<double> off(m * k * 2);
    matvec(params.w_offset, q, off.data());
    std::vector<double> attn(m * k);
    matvec(params.w_weight, q, attn.data());
    softmax_rows(attn, m, k);

    std::vector<double> head_mix(c, 0.0);
    for (std::size_t mi = 0; mi < m; ++mi) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            const double du = off[(mi * k + ki) * 2 + 0];
            const double dv = off[(mi * k + ki) * 2 + 1];
            const Sample s = bilinear_sample(feat, v_px + dv, u_px + du);
            const double a = attn[mi * k + ki];
            // value projection restricted to this head's output slice
            for (std::size_t r = 0; r < d; ++r) {
                const double* pw = params.w_value.data() + (mi * d + r) * c;
                double acc = 0.0;
                for (std::size_t i = 0; i < c; ++i) {
                    acc += pw[i] * s.value[i];
                }
                head_mix[mi * d + r] += a * acc;
            }
        }
    }
    std::vector<double> out(c);
    matvec(params.w_out, head_mix, out.data());
    return out;
}

DeformAttnGrads deform_attn_grad(std::span<const double> q, double u_norm, double v_norm,
                                 const Tensor& feat, const DeformAttnParams& params,
                                 std::span<const double> cotangent) {
    params.validate();
    const std::size_t c = params.channels();
    if (q.size() != c || cotangent.size() != c || feat.rank() != 3 || feat.extent(2) != c) {
        throw std::invalid_argument("deform_attn_grad: shape mismatch");
    }
    const std::size_t m = params.heads, k = params.points, d = c / m;
    const std::size_t h = feat.extent(0), w = feat.extent(1);
    const double u_px = u_norm * (static_cast<double>(w) - 1.0);
    const double v_px = v_norm * (static_cast<double>(h) - 1.0);

    // ---- forward pass, retaining intermediates ----
    std::vector<double> off(m * k * 2);
    matvec(params.w_offset, q, off.data());
    std::vector<double> attn(m * k);
    matvec(params.w_weight, q, attn.data());
    softmax_rows(attn, m, k);

    DeformAttnGrads g;
    g.dq.assign(c, 0.0);
    g.dfeat = Tensor(feat.dims(), Dtype::F64);
    g.dw_offset = Tensor(params.w_offset.dims(), Dtype::F64);
    g.dw_weight = Tensor(params.w_weight.dims(), Dtype::F64);
    g.dw_value = Tensor(params.w_value.dims(), Dtype::F64);
    g.dw_out = Tensor(params.w_out.dims(), Dtype::F64);

    std::vector<std::vector<double>> samples(m * k);
    std::vector<SamplePoint> pts(m * k);
    std::vector<double> head_mix(c, 0.0);
    for (std::size_t mi = 0; mi < m; ++mi) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            const std::size_t idx = mi * k + ki;
            const double row = v_px + off[idx * 2 + 1];
            const double col = u_px + off[idx * 2 + 0];
            pts[idx] = {row, col};
            if (row == std::floor(row) || col == std::floor(col)) {
                g.on_grid_kink = true;
            }
            Sample s = bilinear_sample(feat, row, col);
            const double a = attn[idx];
            for (std::size_t r = 0; r < d; ++r) {
                const double* pw = params.w_value.data() + (mi * d + r) * c;
                double acc = 0.0;
                for (std::size_t i = 0; i < c; ++i) {
                    acc += pw[i] * s.value[i];
                }
                head_mix[mi * d + r] += a * acc;
            }
            samples[idx] = std::move(s.value);
        }
    }

    // ---- backward ----
    // out = w_out . head_mix
    std::vector<double> dhead(c, 0.0);
    for (std::size_t r = 0; r < c; ++r) {
        const double gr = cotangent[r];
        for (std::size_t i = 0; i < c; ++i) {
            g.dw_out(r, i) += gr * head_mix[i];
            dhead[i] += params.w_out(r, i) * gr;
        }
    }

    std::vector<double> dattn(m * k, 0.0);
    std::vector<double> doff(m * k * 2, 0.0);
    for (std::size_t mi = 0; mi < m; ++mi) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            const std::size_t idx = mi * k + ki;
            const double a = attn[idx];
            const std::vector<double>& s = samples[idx];
            // value slice v_r = sum_i w_value[(mi*d+r), i] * s_i
            std::vector<double> ds(c, 0.0);
            for (std::size_t r = 0; r < d; ++r) {
                const std::size_t row_idx = mi * d + r;
                const double* pw = params.w_value.data() + row_idx * c;
                double v_r = 0.0;
                for (std::size_t i = 0; i < c; ++i) {
                    v_r += pw[i] * s[i];
                }
                const double dh = dhead[row_idx];
                dattn[idx] += dh * v_r;
                const double coeff = dh * a;
                for (std::size_t i = 0; i < c; ++i) {
                    g.dw_value(row_idx, i) += coeff * s[i];
                    ds[i] += coeff * pw[i];
                }
            }
            // bilinear backward: ds -> dfeat and d(row, col)
            const double row = pts[idx].row, col = pts[idx].col;
            const double r0d = std::floor(row), c0d = std::floor(col);
            const long r0 = static_cast<long>(r0d), c0 = static_cast<long>(c0d);
            const double fr = row - r0d, fc = col - c0d;
            double drow = 0.0, dcol = 0.0;
            if (r0 >= -1 && r0 < static_cast<long>(h) && c0 >= -1 && c0 < static_cast<long>(w)) {
                const double wts[4] = {(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc),
                                       fr * fc};
                const double dw_drow[4] = {-(1.0 - fc), -fc, (1.0 - fc), fc};
                const double dw_dcol[4] = {-(1.0 - fr), (1.0 - fr), -fr, fr};
                const long rows[4] = {r0, r0, r0 + 1, r0 + 1};
                const long cols[4] = {c0, c0 + 1, c0, c0 + 1};
                for (int t = 0; t < 4; ++t) {
                    const long rr = rows[t], cc = cols[t];
                    if (rr < 0 || rr >= static_cast<long>(h) || cc < 0 ||
                        cc >= static_cast<long>(w)) {
                        continue;
                    }
                    const std::size_t base =
                        (static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)) * c;
                    for (std::size_t i = 0; i < c; ++i) {
                        g.dfeat[base + i] += wts[t] * ds[i];
                        const double pix = feat[base + i];
                        drow += dw_drow[t] * pix * ds[i];
                        dcol += dw_dcol[t] * pix * ds[i];
                    }
                }
            }
            doff[idx * 2 + 0] = dcol; // du moves the sample column
            doff[idx * 2 + 1] = drow; // dv moves the sample row
        }
    }

    // softmax backward per head
    std::vector<double> dlogits(m * k, 0.0);
    for (std::size_t mi = 0; mi < m; ++mi) {
        double dot = 0.0;
        for (std::size_t ki = 0; ki < k; ++ki) {
            dot += dattn[mi * k + ki] * attn[mi * k + ki];
        }
        for (std::size_t ki = 0; ki < k; ++ki) {
            const std::size_t idx = mi * k + ki;
            dlogits[idx] = attn[idx] * (dattn[idx] - dot);
        }
    }

    // linear layers on q
    for (std::size_t r = 0; r < m * k; ++r) {
        const double dr = dlogits[r];
        for (std::size_t i = 0; i < c; ++i) {
            g.dw_weight(r, i) += dr * q[i];
            g.dq[i] += params.w_weight(r, i) * dr;
        }
    }
    for (std::size_t r = 0; r < m * k * 2; ++r) {
        const double dr = doff[r];
        for (std::size_t i = 0; i < c; ++i) {
            g.dw_offset(r, i) += dr * q[i];
            g.dq[i] += params.w_offset(r, i) * dr;
        }
    }
    return g;
}

Tensor cross_view_attention(const Tensor& queries, const std::vector<Tensor>& features,
                            const std::vector<ProjectionMatrix>& projections, const BevGrid& grid,
                            const DeformAttnParams& params, CameraAggregation agg) {
    params.validate();
    if (queries.rank() != 3 || queries.extent(0) != grid.x_cells ||
        queries.extent(1) != grid.y_cells) {
        throw std::invalid_argument("cross_view_attention: query grid shape mismatch");
    }
    if (features.empty() || features.size() != projections.size()) {
        throw std::invalid_argument("cross_view_attention: need one projection per camera");
    }
    const std::size_t c = params.channels();
    if (queries.extent(2) != c) {
        throw std::invalid_argument("cross_view_attention: channel mismatch");
    }
    const std::size_t n_cams = features.size();
    const std::size_t zs = grid.z_anchors.size();

    Tensor out({grid.x_cells, grid.y_cells, c}, queries.dtype());
    parallel_for(grid.x_cells, [&](std::size_t x_begin, std::size_t x_end) {
        std::vector<double> cell_acc(c);
        std::vector<double> cam_acc(c);
        for (std::size_t x = x_begin; x < x_end; ++x) {
            for (std::size_t y = 0; y < grid.y_cells; ++y) {
                const double* q = queries.data() + (x * grid.y_cells + y) * c;
                std::fill(cell_acc.begin(), cell_acc.end(), 0.0);
                std::size_t valid_cams = 0;
                for (std::size_t i = 0; i < n_cams; ++i) {
                    const Tensor& feat = features[i];
                    std::fill(cam_acc.begin(), cam_acc.end(), 0.0);
                    bool any = false;
                    for (std::size_t z = 0; z < zs; ++z) {
                        const Vec3 p = grid.cell_to_metric(x, y, z);
                        const PixelPoint px = project(projections[i], p);
                        if (!px.valid) continue;
                        any = true;
                        const double un = px.u / (static_cast<double>(feat.extent(1)) - 1.0);
                        const double vn = px.v / (static_cast<double>(feat.extent(0)) - 1.0);
                        const std::vector<double> v =
                            deform_attn(std::span<const double>(q, c), un, vn, feat, params);
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            cam_acc[ch] += v[ch];
                        }
                    }
                    if (any) ++valid_cams;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        cell_acc[ch] += cam_acc[ch];
                    }
                }
                const double denom = agg == CameraAggregation::MeanOverAll
                                         ? static_cast<double>(n_cams)
                                         : static_cast<double>(std::max<std::size_t>(valid_cams, 1));
                double* po = out.data() + (x * grid.y_cells + y) * c;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    po[ch] = cell_acc[ch] / denom;
                }
            }
        }
    });
    return out;
}

namespace {

/// y = LN(a + b) with optional bypass of the normalization.
Tensor add_norm(const Tensor& a, const Tensor& b, const Tensor& gamma, const Tensor& beta,
                bool normalize) {
    Tensor sum(a.dims(), a.dtype());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        sum[i] = a[i] + b[i];
    }
    if (!normalize) {
        return sum;
    }
    return layernorm(sum, gamma, beta);
}

} // namespace

Tensor encode_frame(const PosesyncWeights& weights, const PosesyncConfig& cfg,
                    const std::vector<Tensor>& features,
                    const std::vector<ProjectionMatrix>& projections, const BevGrid& grid) {
    if (cfg.layers == 0 || weights.layers.size() != cfg.layers) {
        throw std::invalid_argument("encode_frame: layer count mismatch");
    }
    Tensor x = weights.query;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const EncoderLayerWeights& lw = weights.layers[l];
        Tensor q_in(x.dims(), x.dtype());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            q_in[i] = x[i] + weights.pos_emb[i];
        }
        const Tensor attn =
            cross_view_attention(q_in, features, projections, grid, lw.attn, cfg.aggregation);
        const Tensor h = add_norm(q_in, attn, lw.ln1_gamma, lw.ln1_beta, cfg.normalize);
        const Tensor f = linear(gelu(linear(h, lw.ffn_w1, lw.ffn_b1)), lw.ffn_w2, lw.ffn_b2);
        x = add_norm(h, f, lw.ln2_gamma, lw.ln2_beta, cfg.normalize);
    }
    return x;
}

Tensor build_temporal_map(const std::vector<Tensor>& frames) {
    if (frames.empty()) {
        throw std::invalid_argument("build_temporal_map: no frames");
    }
    const std::vector<std::size_t>& d = frames.front().dims();
    if (d.size() != 3) {
        throw std::invalid_argument("build_temporal_map: frames must be X x Y x C");
    }
    for (const Tensor& f : frames) {
        if (f.dims() != d) {
            throw std::invalid_argument("build_temporal_map: frame shape mismatch");
        }
    }
    Tensor out({frames.size(), d[0], d[1], d[2]}, frames.front().dtype());
    const std::size_t stride = d[0] * d[1] * d[2];
    for (std::size_t f = 0; f < frames.size(); ++f) {
        std::copy(frames[f].data(), frames[f].data() + stride, out.data() + f * stride);
    }
    return out;
}

} // namespace bevpred
