#include "bevpred/weights.hpp"

#include "bevpred/btf.hpp"
#include "bevpred/kvfile.hpp"
#include "bevpred/rng.hpp"
#include "bevpred/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace bevpred {

void ModelConfig::validate() const {
    if (posesync.channels != pyramid.channels || posesync.channels != heads.channels) {
        throw std::invalid_argument("channel width must match across posesync/pyramid/heads");
    }
    if (posesync.channels % posesync.heads != 0) {
        throw std::invalid_argument("channels must be divisible by posesync heads");
    }
    if (posesync.channels < kBaseFeatureChannels) {
        throw std::invalid_argument("channels must be >= the synthetic feature channel count");
    }
    pyramid.validate(grid.x_cells, grid.y_cells);
}

namespace {

SwinBlockWeights make_swin_block(std::size_t c, std::size_t win, std::size_t fq, std::size_t fkv,
                                 bool cross) {
    SwinBlockWeights b;
    b.wq = Tensor({c, c});
    b.wk = Tensor({c, c});
    b.wv = Tensor({c, c});
    b.wo = Tensor({c, c});
    b.bq = Tensor({c});
    b.bk = Tensor({c});
    b.bv = Tensor({c});
    b.bo = Tensor({c});
    b.ln1_gamma = Tensor({c});
    b.ln1_beta = Tensor({c});
    b.ffn_w1 = Tensor({2 * c, c});
    b.ffn_b1 = Tensor({2 * c});
    b.ffn_w2 = Tensor({c, 2 * c});
    b.ffn_b2 = Tensor({c});
    b.ln2_gamma = Tensor({c});
    b.ln2_beta = Tensor({c});
    b.pos_q = Tensor({fq * win, c});
    if (cross) {
        b.pos_kv = Tensor({fkv * win, c});
    }
    return b;
}

HeadWeights make_head(std::size_t c, std::size_t out) {
    HeadWeights h;
    h.conv3_w = Tensor({c, c, 3, 3});
    h.conv3_b = Tensor({c});
    h.ln_gamma = Tensor({c});
    h.ln_beta = Tensor({c});
    h.conv1_w = Tensor({out, c});
    h.conv1_b = Tensor({out});
    return h;
}

} // namespace

ModelWeights make_model(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.channels();
    ModelWeights w;

    w.posesync.query = Tensor({cfg.grid.x_cells, cfg.grid.y_cells, c});
    w.posesync.pos_emb = Tensor({cfg.grid.x_cells, cfg.grid.y_cells, c});
    for (std::size_t l = 0; l < cfg.posesync.layers; ++l) {
        EncoderLayerWeights lw;
        lw.attn.heads = cfg.posesync.heads;
        lw.attn.points = cfg.posesync.points;
        lw.attn.w_offset = Tensor({cfg.posesync.heads * cfg.posesync.points * 2, c});
        lw.attn.w_weight = Tensor({cfg.posesync.heads * cfg.posesync.points, c});
        lw.attn.w_value = Tensor({c, c});
        lw.attn.w_out = Tensor({c, c});
        lw.ln1_gamma = Tensor({c});
        lw.ln1_beta = Tensor({c});
        const std::size_t hid = cfg.posesync.hidden();
        lw.ffn_w1 = Tensor({hid, c});
        lw.ffn_b1 = Tensor({hid});
        lw.ffn_w2 = Tensor({c, hid});
        lw.ffn_b2 = Tensor({c});
        lw.ln2_gamma = Tensor({c});
        lw.ln2_beta = Tensor({c});
        w.posesync.layers.push_back(std::move(lw));
    }

    const std::size_t win = cfg.pyramid.win_h * cfg.pyramid.win_w;
    const std::size_t fe = cfg.pyramid.past_frames + 1;
    const std::size_t fd = cfg.pyramid.future_frames + 1;
    for (std::size_t s = 0; s < cfg.pyramid.depth; ++s) {
        PyramidStageWeights st;
        if (s > 0) {
            st.conv_w = Tensor({c, c, 3, 3});
            st.conv_b = Tensor({c});
        }
        for (std::size_t b = 0; b < cfg.pyramid.blocks_per_stage; ++b) {
            st.blocks.push_back(make_swin_block(c, win, fe, fe, false));
        }
        w.pyramid.encoder.push_back(std::move(st));
    }
    const std::size_t fx = cfg.pyramid.finest_x(cfg.grid.x_cells);
    const std::size_t fy = cfg.pyramid.finest_y(cfg.grid.y_cells);
    for (std::size_t t = 0; t < fd; ++t) {
        w.pyramid.future_emb.push_back(Tensor({fx, fy, c}));
    }
    for (std::size_t s = 0; s < cfg.pyramid.depth; ++s) {
        PyramidStageWeights st;
        if (s + 1 < cfg.pyramid.depth) {
            st.conv_w = Tensor({c, c, 2, 2}); // deconv from scale s+1 up to s
            st.conv_b = Tensor({c});
        }
        for (std::size_t b = 0; b < cfg.pyramid.blocks_per_stage; ++b) {
            st.blocks.push_back(make_swin_block(c, win, fd, fe, true));
        }
        w.pyramid.decoder.push_back(std::move(st));
    }

    w.heads.seg = make_head(c, cfg.heads.classes);
    w.heads.center = make_head(c, 1);
    w.heads.offset = make_head(c, 2);
    w.heads.flow = make_head(c, 2);
    w.heads.hdmap = make_head(c, 2);
    return w;
}

namespace {

void collect_block(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                   SwinBlockWeights& b) {
    out.emplace_back(prefix + ".wq", &b.wq);
    out.emplace_back(prefix + ".wk", &b.wk);
    out.emplace_back(prefix + ".wv", &b.wv);
    out.emplace_back(prefix + ".wo", &b.wo);
    out.emplace_back(prefix + ".bq", &b.bq);
    out.emplace_back(prefix + ".bk", &b.bk);
    out.emplace_back(prefix + ".bv", &b.bv);
    out.emplace_back(prefix + ".bo", &b.bo);
    out.emplace_back(prefix + ".ln1_gamma", &b.ln1_gamma);
    out.emplace_back(prefix + ".ln1_beta", &b.ln1_beta);
    out.emplace_back(prefix + ".ffn_w1", &b.ffn_w1);
    out.emplace_back(prefix + ".ffn_b1", &b.ffn_b1);
    out.emplace_back(prefix + ".ffn_w2", &b.ffn_w2);
    out.emplace_back(prefix + ".ffn_b2", &b.ffn_b2);
    out.emplace_back(prefix + ".ln2_gamma", &b.ln2_gamma);
    out.emplace_back(prefix + ".ln2_beta", &b.ln2_beta);
    out.emplace_back(prefix + ".pos_q", &b.pos_q);
    if (!b.pos_kv.empty()) {
        out.emplace_back(prefix + ".pos_kv", &b.pos_kv);
    }
}

void collect_head(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                  HeadWeights& h) {
    out.emplace_back(prefix + ".conv3_w", &h.conv3_w);
    out.emplace_back(prefix + ".conv3_b", &h.conv3_b);
    out.emplace_back(prefix + ".ln_gamma", &h.ln_gamma);
    out.emplace_back(prefix + ".ln_beta", &h.ln_beta);
    out.emplace_back(prefix + ".conv1_w", &h.conv1_w);
    out.emplace_back(prefix + ".conv1_b", &h.conv1_b);
}

} // namespace

std::vector<std::pair<std::string, Tensor*>> named_tensors(ModelWeights& w) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("posesync.query", &w.posesync.query);
    out.emplace_back("posesync.pos_emb", &w.posesync.pos_emb);
    for (std::size_t l = 0; l < w.posesync.layers.size(); ++l) {
        EncoderLayerWeights& lw = w.posesync.layers[l];
        const std::string p = "posesync.layer" + std::to_string(l);
        out.emplace_back(p + ".attn.w_offset", &lw.attn.w_offset);
        out.emplace_back(p + ".attn.w_weight", &lw.attn.w_weight);
        out.emplace_back(p + ".attn.w_value", &lw.attn.w_value);
        out.emplace_back(p + ".attn.w_out", &lw.attn.w_out);
        out.emplace_back(p + ".ln1_gamma", &lw.ln1_gamma);
        out.emplace_back(p + ".ln1_beta", &lw.ln1_beta);
        out.emplace_back(p + ".ffn_w1", &lw.ffn_w1);
        out.emplace_back(p + ".ffn_b1", &lw.ffn_b1);
        out.emplace_back(p + ".ffn_w2", &lw.ffn_w2);
        out.emplace_back(p + ".ffn_b2", &lw.ffn_b2);
        out.emplace_back(p + ".ln2_gamma", &lw.ln2_gamma);
        out.emplace_back(p + ".ln2_beta", &lw.ln2_beta);
    }
    for (std::size_t s = 0; s < w.pyramid.encoder.size(); ++s) {
        PyramidStageWeights& st = w.pyramid.encoder[s];
        const std::string p = "pyramid.encoder" + std::to_string(s);
        if (!st.conv_w.empty()) {
            out.emplace_back(p + ".conv_w", &st.conv_w);
            out.emplace_back(p + ".conv_b", &st.conv_b);
        }
        for (std::size_t b = 0; b < st.blocks.size(); ++b) {
            collect_block(out, p + ".block" + std::to_string(b), st.blocks[b]);
        }
    }
    for (std::size_t t = 0; t < w.pyramid.future_emb.size(); ++t) {
        out.emplace_back("pyramid.future_emb" + std::to_string(t), &w.pyramid.future_emb[t]);
    }
    for (std::size_t s = 0; s < w.pyramid.decoder.size(); ++s) {
        PyramidStageWeights& st = w.pyramid.decoder[s];
        const std::string p = "pyramid.decoder" + std::to_string(s);
        if (!st.conv_w.empty()) {
            out.emplace_back(p + ".deconv_w", &st.conv_w);
            out.emplace_back(p + ".deconv_b", &st.conv_b);
        }
        for (std::size_t b = 0; b < st.blocks.size(); ++b) {
            collect_block(out, p + ".block" + std::to_string(b), st.blocks[b]);
        }
    }
    collect_head(out, "heads.seg", w.heads.seg);
    collect_head(out, "heads.center", w.heads.center);
    collect_head(out, "heads.offset", w.heads.offset);
    collect_head(out, "heads.flow", w.heads.flow);
    collect_head(out, "heads.hdmap", w.heads.hdmap);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelWeights& w) {
    auto mut = named_tensors(const_cast<ModelWeights&>(w));
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) {
        out.emplace_back(name, t);
    }
    return out;
}

void init_weights(ModelWeights& w, const ModelConfig& cfg, std::uint64_t seed) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels()));
    Rng root(seed);
    for (auto& [name, t] : named_tensors(w)) {
        Rng stream = root.fork();
        for (std::size_t i = 0; i < t->numel(); ++i) {
            (*t)[i] = stream.uniform(-bound, bound);
        }
    }
}

std::uint64_t count_params(const ModelWeights& w) {
    std::uint64_t total = 0;
    for (const auto& [name, t] : named_tensors(w)) {
        total += t->numel();
    }
    return total;
}

namespace {

std::uint64_t swin_block_param_count(std::uint64_t c, std::uint64_t win, std::uint64_t fq,
                                     std::uint64_t fkv, bool cross) {
    const std::uint64_t attn = 4 * c * c + 4 * c;
    const std::uint64_t norms = 4 * c;
    const std::uint64_t ffn = (2 * c) * c + 2 * c + c * (2 * c) + c;
    const std::uint64_t pos = fq * win * c + (cross ? fkv * win * c : 0);
    return attn + norms + ffn + pos;
}

} // namespace

std::uint64_t posesync_param_count(const ModelConfig& cfg) {
    const std::uint64_t c = cfg.channels();
    const std::uint64_t x = cfg.grid.x_cells, y = cfg.grid.y_cells;
    const std::uint64_t mk = cfg.posesync.heads * cfg.posesync.points;
    const std::uint64_t hid = cfg.posesync.hidden();
    const std::uint64_t embeddings = 2 * x * y * c;
    const std::uint64_t attn = (mk * 2) * c + mk * c + c * c + c * c;
    const std::uint64_t ffn = hid * c + hid + c * hid + c;
    const std::uint64_t norms = 4 * c;
    return embeddings + static_cast<std::uint64_t>(cfg.posesync.layers) * (attn + ffn + norms);
}

std::uint64_t pyramid_param_count(const ModelConfig& cfg) {
    const std::uint64_t c = cfg.channels();
    const std::uint64_t win = cfg.pyramid.win_h * cfg.pyramid.win_w;
    const std::uint64_t fe = cfg.pyramid.past_frames + 1;
    const std::uint64_t fd = cfg.pyramid.future_frames + 1;
    const std::uint64_t nb = cfg.pyramid.blocks_per_stage;
    std::uint64_t total = 0;
    for (std::size_t s = 0; s < cfg.pyramid.depth; ++s) {
        if (s > 0) total += c * c * 9 + c;                        // stride-2 conv
        total += nb * swin_block_param_count(c, win, fe, fe, false);
    }
    total += fd * (cfg.pyramid.finest_x(cfg.grid.x_cells) *
                   cfg.pyramid.finest_y(cfg.grid.y_cells) * c); // future embeddings
    for (std::size_t s = 0; s < cfg.pyramid.depth; ++s) {
        if (s + 1 < cfg.pyramid.depth) total += c * c * 4 + c;    // stride-2 deconv
        total += nb * swin_block_param_count(c, win, fd, fe, true);
    }
    return total;
}

std::uint64_t heads_param_count(const ModelConfig& cfg) {
    const std::uint64_t c = cfg.channels();
    auto head = [&](std::uint64_t out) { return 9 * c * c + c + 2 * c + out * c + out; };
    return head(cfg.heads.classes) + head(1) + head(2) + head(2) + head(2);
}

std::uint64_t count_params(const ModelConfig& cfg) {
    return posesync_param_count(cfg) + pyramid_param_count(cfg) + heads_param_count(cfg);
}

void save_weights(const std::string& dir, const ModelWeights& w) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt", std::ios::trunc);
    if (!manifest) {
        throw std::runtime_error("cannot write weights manifest under " + dir);
    }
    for (const auto& [name, t] : named_tensors(w)) {
        const std::string file = name + ".btf";
        write_btf(dir + "/" + file, *t);
        manifest << name << "=" << file << "\n";
    }
}

ModelWeights load_weights(const std::string& manifest_path, const ModelConfig& cfg) {
    std::ifstream is(manifest_path);
    if (!is) {
        throw std::runtime_error("cannot open weights manifest: " + manifest_path);
    }
    const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
    ModelWeights w = make_model(cfg);
    std::map<std::string, Tensor*> slots;
    for (auto& [name, t] : named_tensors(w)) {
        slots[name] = t;
    }
    std::string line;
    std::size_t loaded = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("bad manifest line: " + line);
        }
        const std::string name = line.substr(0, eq);
        const std::string file = line.substr(eq + 1);
        auto it = slots.find(name);
        if (it == slots.end()) {
            throw std::runtime_error("manifest names unknown tensor: " + name);
        }
        Tensor t = read_btf(dir.empty() ? file : dir + "/" + file);
        if (t.dims() != it->second->dims()) {
            throw std::runtime_error("manifest tensor shape mismatch for " + name);
        }
        *it->second = std::move(t);
        ++loaded;
    }
    if (loaded != slots.size()) {
        throw std::runtime_error("weights manifest is incomplete");
    }
    return w;
}

} // namespace bevpred
