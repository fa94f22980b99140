#include "bevpred/pipeline.hpp"

#include "bevpred/btf.hpp"
#include "bevpred/image_io.hpp"
#include "bevpred/kvfile.hpp"
#include "bevpred/metrics.hpp"
#include "bevpred/posesync.hpp"
#include "bevpred/pyramid.hpp"
#include "bevpred/warp.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace bevpred {

namespace fs = std::filesystem;

namespace {

std::string frame_name(const char* stem, std::size_t k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu.btf", stem, k);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    os << text;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

ModelWeights model_weights(const RunConfig& cfg) {
    if (!cfg.weights_manifest.empty()) {
        return load_weights(cfg.weights_manifest, cfg.model);
    }
    ModelWeights w = make_model(cfg.model);
    init_weights(w, cfg.model, cfg.seed);
    return w;
}

Scenario load_scene_with_rig(const RunConfig& cfg, const std::string& out_dir) {
    Scenario scn = load_scenario(out_dir + "/scenario.txt");
    scn.rig = load_rig(out_dir + "/rig.txt");
    scn.frame_period = cfg.frame_period;
    return scn;
}

constexpr std::uint64_t kImageAugStream = 0x1a6e5eedull;
constexpr std::uint64_t kBevAugStream = 0xbe5aa11dull;

BevAug drawn_bev_aug(const RunConfig& cfg) {
    Rng rng(cfg.seed ^ kBevAugStream);
    return draw_bev_aug(rng);
}

void save_aug_descriptor(const RunConfig& cfg, const std::string& out_dir) {
    KvFile f;
    KvSection& sec = f.add("aug");
    sec.set("mode", aug_mode_name(cfg.aug));
    if (cfg.aug == AugMode::Bev || cfg.aug == AugMode::Both) {
        const BevAug aug = drawn_bev_aug(cfg);
        sec.set_int("bev_rotation", static_cast<long>(aug.rotation));
        sec.set_int("bev_flip_x", aug.flip_x ? 1 : 0);
        sec.set_int("bev_flip_y", aug.flip_y ? 1 : 0);
    }
    f.save(out_dir + "/aug.txt");
}

bool load_bev_aug(const std::string& out_dir, BevAug& aug) {
    const std::string path = out_dir + "/aug.txt";
    if (!fs::exists(path)) return false;
    const KvFile f = KvFile::load(path);
    const KvSection* sec = f.find("aug");
    if (!sec) return false;
    const std::string mode = sec->get_or("mode", "none");
    if (mode != "bev" && mode != "both") return false;
    aug.rotation = static_cast<BevRotation>(sec->get_int("bev_rotation"));
    aug.flip_x = sec->get_int("bev_flip_x") != 0;
    aug.flip_y = sec->get_int("bev_flip_y") != 0;
    return true;
}

} // namespace

void save_bundle(const std::string& dir, const PredictionBundle& bundle) {
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt", std::ios::trunc);
    auto emit = [&](const std::string& name, const Tensor& t) {
        write_btf(dir + "/" + name, t);
        manifest << name << "\n";
    };
    for (std::size_t f = 0; f < bundle.frames.size(); ++f) {
        emit(frame_name("seg", f), bundle.frames[f].seg);
        emit(frame_name("center", f), bundle.frames[f].center);
        emit(frame_name("offset", f), bundle.frames[f].offset);
        emit(frame_name("flow", f), bundle.frames[f].flow);
    }
    emit("hdmap.btf", bundle.hdmap);
}

PredictionBundle load_bundle(const std::string& dir) {
    PredictionBundle bundle;
    for (std::size_t f = 0;; ++f) {
        const std::string seg = dir + "/" + frame_name("seg", f);
        if (!fs::exists(seg)) break;
        PredictionFrame pf;
        pf.seg = read_btf(seg);
        pf.center = read_btf(dir + "/" + frame_name("center", f));
        pf.offset = read_btf(dir + "/" + frame_name("offset", f));
        pf.flow = read_btf(dir + "/" + frame_name("flow", f));
        bundle.frames.push_back(std::move(pf));
    }
    if (bundle.frames.empty()) {
        throw std::runtime_error("no prediction frames under " + dir);
    }
    bundle.hdmap = read_btf(dir + "/hdmap.btf");
    return bundle;
}

void save_gt(const std::string& dir, const std::vector<GroundTruthFrame>& frames) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        write_btf(dir + "/" + frame_name("seg", k), frames[k].seg);
        write_btf(dir + "/" + frame_name("ids", k), frames[k].instance_ids);
        write_btf(dir + "/" + frame_name("centers", k), frames[k].centers);
        write_btf(dir + "/" + frame_name("offsets", k), frames[k].offsets);
        write_btf(dir + "/" + frame_name("flow", k), frames[k].flow);
        write_btf(dir + "/" + frame_name("hdmap", k), frames[k].hdmap);
    }
}

std::vector<GroundTruthFrame> load_gt(const std::string& dir) {
    std::vector<GroundTruthFrame> frames;
    for (std::size_t k = 0;; ++k) {
        const std::string seg = dir + "/" + frame_name("seg", k);
        if (!fs::exists(seg)) break;
        GroundTruthFrame gt;
        gt.seg = read_btf(seg);
        gt.instance_ids = read_btf(dir + "/" + frame_name("ids", k));
        gt.centers = read_btf(dir + "/" + frame_name("centers", k));
        gt.offsets = read_btf(dir + "/" + frame_name("offsets", k));
        gt.flow = read_btf(dir + "/" + frame_name("flow", k));
        gt.hdmap = read_btf(dir + "/" + frame_name("hdmap", k));
        frames.push_back(std::move(gt));
    }
    if (frames.empty()) {
        throw std::runtime_error("no ground-truth frames under " + dir);
    }
    return frames;
}

InstanceVideo gt_instance_video(const std::vector<GroundTruthFrame>& frames) {
    InstanceVideo video;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const Tensor& ids = frames[t].instance_ids;
        video.id_maps.push_back(ids);
        std::map<std::uint32_t, std::array<double, 3>> acc; // id -> sx, sy, n
        const std::size_t xc = ids.extent(0), yc = ids.extent(1);
        for (std::size_t x = 0; x < xc; ++x) {
            for (std::size_t y = 0; y < yc; ++y) {
                const double v = ids(x, y);
                if (v <= 0.0) continue;
                auto& a = acc[static_cast<std::uint32_t>(v)];
                a[0] += static_cast<double>(x);
                a[1] += static_cast<double>(y);
                a[2] += 1.0;
            }
        }
        for (const auto& [id, a] : acc) {
            video.tracks.push_back({id, static_cast<int>(t), a[0] / a[2], a[1] / a[2]});
        }
    }
    return video;
}

void stage_synth(const RunConfig& cfg, const std::string& out_dir) {
    try {
        cfg.validate();
        fs::create_directories(out_dir);
        const Scenario scn = generate_scenario(cfg.seed, cfg.scenario);
        save_scenario(out_dir + "/scenario.txt", scn);
        const CameraRig rig =
            cfg.rig_file.empty() ? default_rig() : load_rig(cfg.rig_file);
        save_rig(out_dir + "/rig.txt", rig);
        const std::vector<GroundTruthFrame> gt =
            render_gt(scn, cfg.model.grid, cfg.center_sigma);
        save_gt(out_dir + "/gt", gt);
        save_aug_descriptor(cfg, out_dir);
    } catch (const std::exception& e) {
        throw StageError("synth", e.what());
    }
}

void stage_encode(const RunConfig& cfg, const std::string& out_dir) {
    try {
        cfg.validate();
        Scenario scn = load_scene_with_rig(cfg, out_dir);
        const ModelWeights weights = model_weights(cfg);
        const std::size_t channels = cfg.model.channels();
        const Pose& ego_now = scn.ego_pose(0);
        const bool img_aug = cfg.aug == AugMode::Img || cfg.aug == AugMode::Both;
        Rng aug_rng(cfg.seed ^ kImageAugStream);

        std::vector<Tensor> frames;
        for (int t = 0; t <= scn.past_frames; ++t) {
            const int frame = -t;
            const std::vector<FeatureImage> imgs = render_features(scn, frame, channels);
            std::vector<Tensor> feats;
            std::vector<ProjectionMatrix> projections;
            for (std::size_t i = 0; i < scn.rig.cameras.size(); ++i) {
                const CameraConfig& cam = scn.rig.cameras[i];
                if (img_aug) {
                    const ImageAug aug = draw_image_aug(cfg.image_aug, aug_rng);
                    AugmentedImage a = apply_image_aug(imgs[i].features, cam.intrinsics, aug);
                    projections.push_back(make_projection(
                        a.calib, static_cast<double>(cam.intrinsics.width),
                        static_cast<double>(cam.intrinsics.height), cam.cam_from_ego(),
                        scn.ego_pose(frame), ego_now));
                    feats.push_back(std::move(a.feature));
                } else {
                    projections.push_back(make_projection(cam.intrinsics, cam.cam_from_ego(),
                                                          scn.ego_pose(frame), ego_now));
                    feats.push_back(imgs[i].features);
                }
            }
            frames.push_back(encode_frame(weights.posesync, cfg.model.posesync, feats,
                                          projections, cfg.model.grid));
        }
        Tensor temporal = build_temporal_map(frames);
        if (cfg.aug == AugMode::Bev || cfg.aug == AugMode::Both) {
            const BevAug aug = drawn_bev_aug(cfg);
            const std::size_t fsz = temporal.numel() / temporal.extent(0);
            for (std::size_t f = 0; f < temporal.extent(0); ++f) {
                Tensor one({temporal.extent(1), temporal.extent(2), temporal.extent(3)},
                           temporal.dtype());
                std::copy(temporal.data() + f * fsz, temporal.data() + (f + 1) * fsz, one.data());
                one = transform_bev_cells(one, aug);
                std::copy(one.data(), one.data() + fsz, temporal.data() + f * fsz);
            }
        }
        fs::create_directories(out_dir + "/bev");
        write_btf(out_dir + "/bev/temporal_map.btf", temporal);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("encode", e.what());
    }
}

void stage_predict(const RunConfig& cfg, const std::string& out_dir, bool cache_attention,
                   std::size_t pyramid_depth_override) {
    try {
        RunConfig local = cfg;
        if (pyramid_depth_override > 0) {
            local.model.pyramid.depth = pyramid_depth_override;
        }
        local.validate();
        const Tensor temporal = read_btf(out_dir + "/bev/temporal_map.btf");
        const ModelWeights weights = model_weights(local);
        const PyramidConfig& pcfg = local.model.pyramid;

        Tensor current({temporal.extent(1), temporal.extent(2), temporal.extent(3)},
                       temporal.dtype());
        std::copy(temporal.data(), temporal.data() + current.numel(), current.data());
        const Tensor prior =
            map_feature_prior(current, weights.heads.hdmap, pcfg.depth - 1);
        const std::vector<Tensor> queries =
            make_future_queries(weights.pyramid, pcfg, prior);

        AttentionCache cache;
        cache.enabled = cache_attention;
        const PyramidFeatures feats = encode_pyramid(temporal, weights.pyramid, pcfg,
                                                     cache_attention ? &cache : nullptr);
        const Tensor d0 = decode_pyramid(feats, queries, weights.pyramid, pcfg);

        fs::create_directories(out_dir + "/pred");
        write_btf(out_dir + "/pred/d0.btf", d0);
        if (cache_attention) {
            write_btf(out_dir + "/pred/attn_cache.btf", cache.packed());
            KvFile meta;
            KvSection& sec = meta.add("attention");
            sec.set_int("windows_x", static_cast<long>(cache.windows_x));
            sec.set_int("windows_y", static_cast<long>(cache.windows_y));
            sec.set_int("frames", static_cast<long>(cache.frames));
            sec.set_int("win_h", static_cast<long>(cache.win_h));
            sec.set_int("win_w", static_cast<long>(cache.win_w));
            meta.save(out_dir + "/pred/attn_meta.txt");
        }

        const PredictionBundle bundle = run_heads(d0, weights.heads, local.model.heads);
        save_bundle(out_dir + "/bundle", bundle);
        const InstanceVideo video = decode_instances(bundle, local.instances);
        save_instance_video(out_dir + "/instances", video);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("predict", e.what());
    }
}

void stage_eval(const RunConfig& cfg, const std::string& out_dir) {
    try {
        std::vector<GroundTruthFrame> gt = load_gt(out_dir + "/gt");
        BevAug aug;
        if (load_bev_aug(out_dir, aug)) {
            for (GroundTruthFrame& f : gt) {
                f = transform_gt(f, aug);
            }
        }
        const PredictionBundle bundle = load_bundle(out_dir + "/bundle");
        if (bundle.frames.size() != gt.size()) {
            throw std::runtime_error("prediction and ground-truth horizons differ");
        }
        const InstanceVideo pred_video = load_instance_video(out_dir + "/instances");
        const InstanceVideo gt_video = gt_instance_video(gt);

        // binary vehicle masks for IoU
        std::vector<Tensor> pred_mask, gt_mask;
        for (std::size_t t = 0; t < gt.size(); ++t) {
            const Tensor probs = softmax(bundle.frames[t].seg, 0);
            const std::size_t xc = probs.extent(1), yc = probs.extent(2);
            Tensor pm({xc, yc}, Dtype::F32), gm({xc, yc}, Dtype::F32);
            for (std::size_t x = 0; x < xc; ++x) {
                for (std::size_t y = 0; y < yc; ++y) {
                    pm(x, y) = probs(1, x, y) > 0.5 ? 1.0 : 0.0;
                    gm(x, y) = gt[t].seg(1, x, y);
                }
            }
            pred_mask.push_back(std::move(pm));
            gt_mask.push_back(std::move(gm));
        }
        const BevGrid& grid = cfg.model.grid;
        auto crop_iou = [&](double extent_m) {
            const std::size_t want = static_cast<std::size_t>(
                std::llround(extent_m / grid.resolution));
            const std::size_t nx = std::min(want, grid.x_cells);
            const std::size_t ny = std::min(want, grid.y_cells);
            std::vector<Tensor> p, g;
            for (std::size_t t = 0; t < pred_mask.size(); ++t) {
                p.push_back(center_crop(pred_mask[t], nx, ny));
                g.push_back(center_crop(gt_mask[t], nx, ny));
            }
            return seg_iou(p, g);
        };
        const double iou_short = crop_iou(30.0);
        const double iou_long = crop_iou(100.0);
        const VpqResult v = vpq(pred_video, gt_video);

        nlohmann::json report;
        report["IoU_short"] = iou_short;
        report["IoU_long"] = iou_long;
        report["VPQ"] = v.vpq;
        report["VRQ"] = v.vrq;
        report["VSQ"] = v.vsq;
        write_text(out_dir + "/report.json", report.dump(2) + "\n");
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("eval", e.what());
    }
}

void run_pipeline(const RunConfig& cfg, const std::string& out_dir, bool cache_attention) {
    stage_synth(cfg, out_dir);
    stage_encode(cfg, out_dir);
    stage_predict(cfg, out_dir, cache_attention);
    stage_eval(cfg, out_dir);
}

std::string bench(const RunConfig& cfg, int repeats) {
    cfg.validate();
    repeats = std::max(repeats, 1);
    const std::string tmp =
        (fs::temp_directory_path() / ("bevpred_bench_" + std::to_string(cfg.seed))).string();
    std::vector<double> synth_ms, encode_ms, predict_ms, eval_ms, total_ms;
    // warmup
    fs::remove_all(tmp);
    run_pipeline(cfg, tmp);
    for (int r = 0; r < repeats; ++r) {
        fs::remove_all(tmp);
        const auto t0 = std::chrono::steady_clock::now();
        stage_synth(cfg, tmp);
        const auto t1 = std::chrono::steady_clock::now();
        stage_encode(cfg, tmp);
        const auto t2 = std::chrono::steady_clock::now();
        stage_predict(cfg, tmp);
        const auto t3 = std::chrono::steady_clock::now();
        stage_eval(cfg, tmp);
        synth_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        encode_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        predict_ms.push_back(std::chrono::duration<double, std::milli>(t3 - t2).count());
        eval_ms.push_back(ms_since(t3));
        total_ms.push_back(ms_since(t0));
    }
    fs::remove_all(tmp);
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const ModelWeights weights = model_weights(cfg);
    nlohmann::json j;
    j["param_count"] = count_params(weights);
    j["param_count_closed_form"] = count_params(cfg.model);
    j["stage_ms"]["synth"] = median(synth_ms);
    j["stage_ms"]["encode"] = median(encode_ms);
    j["stage_ms"]["predict"] = median(predict_ms);
    j["stage_ms"]["eval"] = median(eval_ms);
    j["end_to_end_ms"] = median(total_ms);
    j["repeats"] = repeats;
    j["reference"]["published_param_count"] = "9.42M";
    j["reference"]["published_inference_ms"] = 165;
    j["reference"]["note"] =
        "published figures for the full-scale temporal model on nuScenes hardware; "
        "not reproducible in this synthetic desk-scale setup";
    return j.dump(2) + "\n";
}

VizAttnResult viz_attn(const std::string& out_dir, std::size_t layer, std::size_t window,
                       std::size_t query_x, std::size_t query_y, std::size_t top_k) {
    if (layer != 0) {
        throw std::runtime_error("attention is cached for encoder layer 0 only");
    }
    const std::string cache_path = out_dir + "/pred/attn_cache.btf";
    if (!fs::exists(cache_path)) {
        throw std::runtime_error("attention cache missing; rerun predict with caching enabled");
    }
    const KvFile meta = KvFile::load(out_dir + "/pred/attn_meta.txt");
    const KvSection* sec = meta.find("attention");
    if (!sec) {
        throw std::runtime_error("attention metadata missing");
    }
    const std::size_t wx = static_cast<std::size_t>(sec->get_int("windows_x"));
    const std::size_t wy = static_cast<std::size_t>(sec->get_int("windows_y"));
    const std::size_t frames = static_cast<std::size_t>(sec->get_int("frames"));
    const std::size_t win_h = static_cast<std::size_t>(sec->get_int("win_h"));
    const std::size_t win_w = static_cast<std::size_t>(sec->get_int("win_w"));
    const AttentionCache cache =
        AttentionCache::unpack(read_btf(cache_path), wx, wy, frames, win_h, win_w);
    if (window >= cache.windows.size()) {
        throw std::runtime_error("window index out of range");
    }
    const Tensor& m = cache.windows[window];

    // (a) raw matrix as grayscale PGM, min-max normalized
    double lo = m[0], hi = m[0];
    for (std::size_t i = 0; i < m.numel(); ++i) {
        lo = std::min(lo, m[i]);
        hi = std::max(hi, m[i]);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    GrayImage gray;
    gray.width = m.extent(1);
    gray.height = m.extent(0);
    gray.pixels.resize(m.numel());
    for (std::size_t i = 0; i < m.numel(); ++i) {
        gray.pixels[i] = static_cast<std::uint8_t>(std::lround((m[i] - lo) / span * 255.0));
    }
    VizAttnResult result;
    result.pgm_path = out_dir + "/pred/attn_window_" + std::to_string(window) + ".pgm";
    write_pgm(result.pgm_path, gray);

    // (b) BEV overlay: query cell in white, per-frame top-k attended cells
    const std::size_t xc = wx * win_h, yc = wy * win_w;
    const std::size_t wi = window / wy, wj = window % wy;
    if (query_x / win_h != wi || query_y / win_w != wj) {
        throw std::runtime_error("query cell lies outside the requested window");
    }
    RgbImage rgb;
    rgb.width = yc;
    rgb.height = xc;
    rgb.pixels.assign(xc * yc * 3, 40);
    // shade the window extent
    for (std::size_t x = wi * win_h; x < (wi + 1) * win_h; ++x) {
        for (std::size_t y = wj * win_w; y < (wj + 1) * win_w; ++y) {
            rgb.set(x, y, 70, 70, 70);
        }
    }
    const std::size_t q_row = (query_x % win_h) * win_w + (query_y % win_w); // frame 0 token
    const std::uint8_t palette[3][3] = {{255, 80, 80}, {80, 255, 80}, {80, 160, 255}};
    for (std::size_t f = 1; f < frames; ++f) {
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t t = 0; t < win_h * win_w; ++t) {
            scored.emplace_back(m(q_row, f * win_h * win_w + t), t);
        }
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        const auto& color = palette[(f - 1) % 3];
        for (std::size_t k = 0; k < std::min(top_k, scored.size()); ++k) {
            const std::size_t t = scored[k].second;
            const std::size_t cx = wi * win_h + t / win_w;
            const std::size_t cy = wj * win_w + t % win_w;
            rgb.set(cx, cy, color[0], color[1], color[2]);
        }
    }
    rgb.set(query_x, query_y, 255, 255, 255);
    result.ppm_path = out_dir + "/pred/attn_overlay_w" + std::to_string(window) + "_q" +
                      std::to_string(query_x) + "_" + std::to_string(query_y) + ".ppm";
    write_ppm(result.ppm_path, rgb);
    return result;
}

std::string compare_sync(const RunConfig& cfg, const std::string& out_dir) {
    try {
        cfg.validate();
        ScenarioGenParams params = cfg.scenario;
        params.moving_ego = true;
        Scenario scn = generate_scenario(cfg.seed, params);
        for (BoxSpec& b : scn.boxes) { // the report is defined on static scenes
            b.vx = 0.0;
            b.vy = 0.0;
            b.yaw_rate = 0.0;
        }
        scn.rig = cfg.rig_file.empty() ? default_rig() : load_rig(cfg.rig_file);
        const std::vector<SyncComparisonRow> rows =
            distortion_report(scn, cfg.model.grid, cfg.model.channels());
        const std::string csv = sync_comparison_csv(rows);
        fs::create_directories(out_dir);
        write_text(out_dir + "/compare_sync.csv", csv);
        return csv;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("compare-sync", e.what());
    }
}

} // namespace bevpred
