#include "bevpred/instances.hpp"

#include "bevpred/btf.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace bevpred {

std::vector<InstanceCenter> find_centers(const Tensor& heat, double threshold,
                                         std::size_t max_k) {
    if (heat.rank() != 2) {
        throw std::invalid_argument("find_centers expects an X x Y heatmap");
    }
    const long xc = static_cast<long>(heat.extent(0)), yc = static_cast<long>(heat.extent(1));
    std::vector<InstanceCenter> out;
    for (long x = 0; x < xc; ++x) {
        for (long y = 0; y < yc; ++y) {
            const double v = heat(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
            if (v < threshold) continue;
            bool is_max = true;
            for (long dx = -1; dx <= 1 && is_max; ++dx) {
                for (long dy = -1; dy <= 1; ++dy) {
                    const long nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= xc || ny < 0 || ny >= yc) continue;
                    if (heat(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny)) > v) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) {
                out.push_back({static_cast<std::size_t>(x), static_cast<std::size_t>(y), v});
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const InstanceCenter& a, const InstanceCenter& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.x != b.x) return a.x < b.x;
        return a.y < b.y;
    });
    if (out.size() > max_k) out.resize(max_k);
    return out;
}

Tensor assign_pixels(const Tensor& seg_prob, const Tensor& offset,
                     const std::vector<InstanceCenter>& centers) {
    if (seg_prob.rank() != 2 || offset.rank() != 3 || offset.extent(0) != 2 ||
        offset.extent(1) != seg_prob.extent(0) || offset.extent(2) != seg_prob.extent(1)) {
        throw std::invalid_argument("assign_pixels shape mismatch");
    }
    const std::size_t xc = seg_prob.extent(0), yc = seg_prob.extent(1);
    Tensor ids({xc, yc}, Dtype::F32);
    if (centers.empty()) return ids;
    for (std::size_t x = 0; x < xc; ++x) {
        for (std::size_t y = 0; y < yc; ++y) {
            if (seg_prob(x, y) <= 0.5) continue;
            const double vote_x = static_cast<double>(x) + offset(0, x, y);
            const double vote_y = static_cast<double>(y) + offset(1, x, y);
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < centers.size(); ++c) {
                const double dx = vote_x - static_cast<double>(centers[c].x);
                const double dy = vote_y - static_cast<double>(centers[c].y);
                const double d = dx * dx + dy * dy;
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            ids(x, y) = static_cast<double>(best + 1);
        }
    }
    return ids;
}

namespace {

struct FrameInstance {
    std::size_t center_idx = 0;
    double centroid_x = 0.0, centroid_y = 0.0;
    double flow_x = 0.0, flow_y = 0.0;
    double score = 0.0;
    std::size_t area = 0;
};

std::vector<FrameInstance> frame_instances(const DecodedFrame& f) {
    std::vector<FrameInstance> inst(f.centers.size());
    for (std::size_t c = 0; c < f.centers.size(); ++c) {
        inst[c].center_idx = c;
        inst[c].score = f.centers[c].score;
        inst[c].centroid_x = static_cast<double>(f.centers[c].x);
        inst[c].centroid_y = static_cast<double>(f.centers[c].y);
    }
    const std::size_t xc = f.id_map.extent(0), yc = f.id_map.extent(1);
    std::vector<double> sx(f.centers.size(), 0.0), sy(f.centers.size(), 0.0),
        fx(f.centers.size(), 0.0), fy(f.centers.size(), 0.0);
    for (std::size_t x = 0; x < xc; ++x) {
        for (std::size_t y = 0; y < yc; ++y) {
            const double idv = f.id_map(x, y);
            if (idv <= 0.0) continue;
            const std::size_t c = static_cast<std::size_t>(idv) - 1;
            if (c >= inst.size()) continue;
            ++inst[c].area;
            sx[c] += static_cast<double>(x);
            sy[c] += static_cast<double>(y);
            if (!f.flow.empty()) {
                fx[c] += f.flow(0, x, y);
                fy[c] += f.flow(1, x, y);
            }
        }
    }
    for (std::size_t c = 0; c < inst.size(); ++c) {
        if (inst[c].area > 0) {
            const double n = static_cast<double>(inst[c].area);
            inst[c].centroid_x = sx[c] / n;
            inst[c].centroid_y = sy[c] / n;
            inst[c].flow_x = fx[c] / n;
            inst[c].flow_y = fy[c] / n;
        }
    }
    return inst;
}

} // namespace

InstanceVideo associate_tracks(const std::vector<DecodedFrame>& frames, double match_radius) {
    if (frames.empty()) {
        throw std::invalid_argument("associate_tracks needs at least one frame");
    }
    InstanceVideo video;
    std::uint32_t next_id = 1;
    // track id assigned to each center of the current frame
    std::vector<std::uint32_t> cur_ids;
    std::vector<FrameInstance> cur_inst = frame_instances(frames[0]);
    for (std::size_t c = 0; c < cur_inst.size(); ++c) {
        cur_ids.push_back(next_id++);
    }

    for (std::size_t t = 0; t < frames.size(); ++t) {
        // relabel this frame's id map with track ids
        const Tensor& raw = frames[t].id_map;
        Tensor relab(raw.dims(), Dtype::F32);
        for (std::size_t i = 0; i < raw.numel(); ++i) {
            const double v = raw[i];
            relab[i] = v > 0.0 ? static_cast<double>(cur_ids[static_cast<std::size_t>(v) - 1])
                               : 0.0;
        }
        video.id_maps.push_back(std::move(relab));
        for (std::size_t c = 0; c < cur_inst.size(); ++c) {
            if (cur_inst[c].area == 0) continue;
            video.tracks.push_back({cur_ids[c], static_cast<int>(t), cur_inst[c].centroid_x,
                                    cur_inst[c].centroid_y});
        }
        if (t + 1 == frames.size()) break;

        // propagate by mean flow and greedily claim next-frame centers
        std::vector<FrameInstance> next_inst = frame_instances(frames[t + 1]);
        std::vector<std::uint32_t> next_ids(next_inst.size(), 0);
        std::vector<bool> claimed(next_inst.size(), false);
        std::vector<std::size_t> order(cur_inst.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return cur_inst[a].score > cur_inst[b].score;
        });
        for (std::size_t oi : order) {
            const FrameInstance& fi = cur_inst[oi];
            const double px = fi.centroid_x + fi.flow_x;
            const double py = fi.centroid_y + fi.flow_y;
            std::size_t best = next_inst.size();
            double best_d = match_radius * match_radius;
            for (std::size_t c = 0; c < next_inst.size(); ++c) {
                if (claimed[c]) continue;
                const double dx = px - static_cast<double>(frames[t + 1].centers[c].x);
                const double dy = py - static_cast<double>(frames[t + 1].centers[c].y);
                const double d = dx * dx + dy * dy;
                if (d <= best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (best < next_inst.size()) {
                claimed[best] = true;
                next_ids[best] = cur_ids[oi];
            }
        }
        for (std::size_t c = 0; c < next_inst.size(); ++c) {
            if (next_ids[c] == 0) next_ids[c] = next_id++;
        }
        cur_inst = std::move(next_inst);
        cur_ids = std::move(next_ids);
    }
    return video;
}

InstanceVideo decode_instances(const PredictionBundle& bundle, const InstanceParams& params) {
    if (bundle.frames.empty()) {
        throw std::invalid_argument("decode_instances: empty bundle");
    }
    std::vector<DecodedFrame> decoded;
    for (const PredictionFrame& pf : bundle.frames) {
        const Tensor probs = softmax(pf.seg, 0);
        const std::size_t xc = probs.extent(1), yc = probs.extent(2);
        Tensor vehicle({xc, yc}, Dtype::F32);
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                vehicle(x, y) = probs(1, x, y);
            }
        }
        Tensor heat({xc, yc}, Dtype::F32);
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                heat(x, y) = pf.center(0, x, y);
            }
        }
        DecodedFrame df;
        df.centers = find_centers(heat, params.center_threshold, params.max_instances);
        df.id_map = assign_pixels(vehicle, pf.offset, df.centers);
        df.flow = pf.flow;
        decoded.push_back(std::move(df));
    }
    return associate_tracks(decoded, params.match_radius);
}

void save_instance_video(const std::string& dir, const InstanceVideo& video) {
    std::filesystem::create_directories(dir);
    for (std::size_t t = 0; t < video.id_maps.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "ids_%03zu.btf", t);
        write_btf(dir + "/" + name, video.id_maps[t]);
    }
    std::ofstream os(dir + "/tracks.jsonl", std::ios::trunc);
    for (const TrackPoint& tp : video.tracks) {
        nlohmann::json j;
        j["id"] = tp.id;
        j["frame"] = tp.frame;
        j["x"] = tp.x;
        j["y"] = tp.y;
        os << j.dump() << "\n";
    }
}

InstanceVideo load_instance_video(const std::string& dir) {
    InstanceVideo video;
    for (std::size_t t = 0;; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "ids_%03zu.btf", t);
        const std::string path = dir + "/" + name;
        if (!std::filesystem::exists(path)) break;
        video.id_maps.push_back(read_btf(path));
    }
    if (video.id_maps.empty()) {
        throw std::runtime_error("no instance id maps under " + dir);
    }
    std::ifstream is(dir + "/tracks.jsonl");
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        video.tracks.push_back(
            {j.at("id").get<std::uint32_t>(), j.at("frame").get<int>(), j.at("x").get<double>(),
             j.at("y").get<double>()});
    }
    return video;
}

} // namespace bevpred
