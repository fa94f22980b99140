// Command-line front end: synth, encode, predict, eval, bench, viz-attn,
// compare-sync, plus `run` for the whole chain. Exit codes: 0 success,
// 2 configuration error, 3 stage failure.

#include "bevpred/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

struct CommonOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t pyramid_depth = 0;
    std::string aug_mode;
};

bevpred::RunConfig resolve_config(const CommonOptions& opts) {
    bevpred::RunConfig cfg = opts.config_path.empty()
                                 ? bevpred::default_run_config()
                                 : bevpred::load_run_config(opts.config_path);
    if (opts.seed_set) {
        cfg.seed = opts.seed;
    }
    if (opts.pyramid_depth > 0) {
        cfg.model.pyramid.depth = opts.pyramid_depth;
    }
    if (!opts.aug_mode.empty()) {
        cfg.aug = bevpred::parse_aug_mode(opts.aug_mode);
    }
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "run configuration file (key=value sections)");
    cmd->add_option("--out", opts.out_dir, "artifact directory");
    cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
        opts.seed_set = true;
    });
    cmd->add_option("--pyramid-depth", opts.pyramid_depth, "pyramid depth override (1..4)");
    cmd->add_option("--aug", opts.aug_mode, "augmentation mode: none|img|bev|both");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic multi-camera BEV prediction pipeline"};
    app.require_subcommand(1);

    CommonOptions opts;

    CLI::App* synth = app.add_subcommand("synth", "generate scenario, rig and ground truth");
    add_common(synth, opts);

    CLI::App* encode = app.add_subcommand("encode", "render features and build the temporal BEV map");
    add_common(encode, opts);

    CLI::App* predict = app.add_subcommand("predict", "predict future BEV states and decode outputs");
    add_common(predict, opts);
    bool cache_attention = false;
    predict->add_flag("--cache-attn", cache_attention, "record encoder layer-0 attention");

    CLI::App* eval = app.add_subcommand("eval", "score predictions against ground truth");
    add_common(eval, opts);

    CLI::App* run = app.add_subcommand("run", "run the full pipeline");
    add_common(run, opts);
    run->add_flag("--cache-attn", cache_attention, "record encoder layer-0 attention");

    CLI::App* bench_cmd = app.add_subcommand("bench", "parameter count and stage timings");
    add_common(bench_cmd, opts);
    int repeats = 3;
    bench_cmd->add_option("--repeats", repeats, "timing repeats (median reported)");

    CLI::App* viz = app.add_subcommand("viz-attn", "write attention matrix and BEV overlay images");
    add_common(viz, opts);
    std::size_t layer = 0, window = 0, query_x = 0, query_y = 0, top_k = 3;
    viz->add_option("--layer", layer, "encoder layer (cached: 0)");
    viz->add_option("--window", window, "window index");
    viz->add_option("--query-x", query_x, "query cell x");
    viz->add_option("--query-y", query_y, "query cell y");
    viz->add_option("--topk", top_k, "marked cells per historical frame");

    CLI::App* cmp = app.add_subcommand("compare-sync", "warp-vs-sync distortion report (CSV)");
    add_common(cmp, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            bevpred::stage_synth(resolve_config(opts), opts.out_dir);
        } else if (encode->parsed()) {
            bevpred::stage_encode(resolve_config(opts), opts.out_dir);
        } else if (predict->parsed()) {
            bevpred::stage_predict(resolve_config(opts), opts.out_dir, cache_attention,
                                   opts.pyramid_depth);
        } else if (eval->parsed()) {
            bevpred::stage_eval(resolve_config(opts), opts.out_dir);
        } else if (run->parsed()) {
            bevpred::run_pipeline(resolve_config(opts), opts.out_dir, cache_attention);
        } else if (bench_cmd->parsed()) {
            std::cout << bevpred::bench(resolve_config(opts), repeats);
        } else if (viz->parsed()) {
            const bevpred::VizAttnResult r =
                bevpred::viz_attn(opts.out_dir, layer, window, query_x, query_y, top_k);
            std::cout << r.pgm_path << "\n" << r.ppm_path << "\n";
        } else if (cmp->parsed()) {
            std::cout << bevpred::compare_sync(resolve_config(opts), opts.out_dir);
        }
    } catch (const bevpred::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const bevpred::StageError& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
