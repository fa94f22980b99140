#include "bevpred/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace bevpred {

double seg_iou(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw std::invalid_argument("seg_iou: frame count mismatch");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (!pred[t].same_shape(gt[t])) {
            throw std::invalid_argument("seg_iou: frame shape mismatch");
        }
        for (std::size_t i = 0; i < pred[t].numel(); ++i) {
            const bool p = pred[t][i] > 0.5;
            const bool g = gt[t][i] > 0.5;
            inter += (p && g) ? 1 : 0;
            uni += (p || g) ? 1 : 0;
        }
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

VpqResult vpq(const InstanceVideo& pred, const InstanceVideo& gt) {
    if (pred.id_maps.size() != gt.id_maps.size() || pred.id_maps.empty()) {
        throw std::invalid_argument("vpq: horizon mismatch");
    }
    const std::size_t frames = pred.id_maps.size();

    VpqResult res;
    std::map<std::uint32_t, std::uint32_t> binding; // pred track -> gt track
    for (std::size_t t = 0; t < frames; ++t) {
        const Tensor& pm = pred.id_maps[t];
        const Tensor& gm = gt.id_maps[t];
        if (!pm.same_shape(gm)) {
            throw std::invalid_argument("vpq: grid mismatch at frame " + std::to_string(t));
        }
        std::map<std::uint32_t, std::size_t> pred_area, gt_area;
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;
        for (std::size_t i = 0; i < pm.numel(); ++i) {
            const std::uint32_t p = static_cast<std::uint32_t>(pm[i]);
            const std::uint32_t g = static_cast<std::uint32_t>(gm[i]);
            if (p) ++pred_area[p];
            if (g) ++gt_area[g];
            if (p && g) ++inter[{p, g}];
        }

        VpqFrameTerm term;
        std::set<std::uint32_t> tp_pred, tp_gt;
        std::vector<double> tp_ious;
        for (const auto& [pg, both] : inter) {
            const auto [p, g] = pg;
            const std::size_t uni = pred_area[p] + gt_area[g] - both;
            const double iou = static_cast<double>(both) / static_cast<double>(uni);
            if (iou <= 0.5) continue;
            auto bound = binding.find(p);
            if (bound == binding.end()) {
                bound = binding.emplace(p, g).first; // first TP-match binds the track
            }
            if (bound->second != g) continue; // id switch: counted as FP/FN below
            tp_pred.insert(p);
            tp_gt.insert(g);
            tp_ious.push_back(iou);
        }
        // Canonical summation order, so relabeling ids cannot change the sum.
        std::sort(tp_ious.begin(), tp_ious.end());
        for (double v : tp_ious) term.iou_sum += v;
        term.tp = tp_ious.size();
        term.fp = pred_area.size() - tp_pred.size();
        term.fn = gt_area.size() - tp_gt.size();

        const double denom = static_cast<double>(term.tp) +
                             0.5 * static_cast<double>(term.fp) +
                             0.5 * static_cast<double>(term.fn);
        term.vpq = denom > 0.0 ? term.iou_sum / denom : 0.0;
        term.vrq = denom > 0.0 ? static_cast<double>(term.tp) / denom : 0.0;
        term.vsq = term.tp > 0 ? term.iou_sum / static_cast<double>(term.tp) : 0.0;
        res.per_frame.push_back(term);
    }

    for (const VpqFrameTerm& term : res.per_frame) {
        res.vpq += term.vpq;
        res.vrq += term.vrq;
        res.vsq += term.vsq;
    }
    const double n = static_cast<double>(frames);
    res.vpq /= n;
    res.vrq /= n;
    res.vsq /= n;
    return res;
}

Tensor center_crop(const Tensor& map, std::size_t new_x, std::size_t new_y) {
    if (map.rank() != 2) {
        throw std::invalid_argument("center_crop expects an X x Y map");
    }
    const std::size_t xc = map.extent(0), yc = map.extent(1);
    if (new_x > xc || new_y > yc || new_x == 0 || new_y == 0) {
        throw std::invalid_argument("center_crop size out of range");
    }
    const std::size_t x0 = (xc - new_x) / 2;
    const std::size_t y0 = (yc - new_y) / 2;
    Tensor out({new_x, new_y}, map.dtype());
    for (std::size_t x = 0; x < new_x; ++x) {
        for (std::size_t y = 0; y < new_y; ++y) {
            out(x, y) = map(x0 + x, y0 + y);
        }
    }
    return out;
}

} // namespace bevpred
