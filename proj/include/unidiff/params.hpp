#pragma once

// Model configuration, the named parameter store, seeded initialization, and
// checkpoint serialization (config + vocabulary + manifest + float32 blobs).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "unidiff/autograd.hpp"
#include "unidiff/codec.hpp"
#include "unidiff/core.hpp"
#include "unidiff/vocab.hpp"

namespace unidiff::mmdit {

enum class ConcatMode : int { Channel = 0, Sequence = 1 };

inline const char* concat_mode_name(ConcatMode m) { return m == ConcatMode::Channel ? "channel" : "sequence"; }

struct ModelConfig {
    int n_layers = 12;
    int d_model = 384;
    int n_heads = 12;
    int patch = 2;  // latent cells per token side
    int l_max = text::kMaxPromptLen;
    int latent_h = 32;
    int latent_w = 32;
    int c_lat = codec::kLatentChannels;
    int mlp_ratio = 4;
    int time_freq_dim = 256;
    int id_hidden = 256;      // external encoder hidden width
    int n_placeholder = 4;    // n_f
    int id_crop_dim = 16 * 16 * 3;
    std::string size_tag = "micro-XL";
    ConcatMode mode = ConcatMode::Channel;

    int c_in() const { return 2 * c_lat + 1; }
    int tokens_y() const { return latent_h / patch; }
    int tokens_x() const { return latent_w / patch; }
    int n_latent_tokens() const { return tokens_y() * tokens_x(); }
    int patch_in_dim() const { return patch * patch * c_in(); }
    int patch_out_dim() const { return patch * patch * c_lat; }
    int field_size() const { return latent_h * latent_w * c_lat; }

    void validate() const {
        if (d_model % n_heads != 0) throw ConfigError("config: d_model must be divisible by n_heads");
        if (latent_h % patch != 0 || latent_w % patch != 0)
            throw ConfigError("config: latent grid must be divisible by patch");
        if (n_layers <= 0 || d_model <= 0 || l_max <= 0) throw ConfigError("config: sizes must be positive");
        if (time_freq_dim % 2 != 0) throw ConfigError("config: time_freq_dim must be even");
    }
};

// the micro ladder (shape-mirror of the reference B/L/XL ladder)
inline ModelConfig ladder_config(const std::string& size_tag) {
    ModelConfig c;
    c.size_tag = size_tag;
    if (size_tag == "micro-B") {
        c.n_layers = 6;
        c.d_model = 192;
        c.n_heads = 6;
    } else if (size_tag == "micro-L") {
        c.n_layers = 9;
        c.d_model = 288;
        c.n_heads = 9;
    } else if (size_tag == "micro-XL") {
        c.n_layers = 12;
        c.d_model = 384;
        c.n_heads = 12;
    } else {
        throw ConfigError("unknown size tag: " + size_tag);
    }
    return c;
}

inline void config_to_kv(const ModelConfig& c, KvConfig& kv) {
    kv.set("model.n_layers", std::to_string(c.n_layers));
    kv.set("model.d_model", std::to_string(c.d_model));
    kv.set("model.n_heads", std::to_string(c.n_heads));
    kv.set("model.patch", std::to_string(c.patch));
    kv.set("model.l_max", std::to_string(c.l_max));
    kv.set("model.latent_h", std::to_string(c.latent_h));
    kv.set("model.latent_w", std::to_string(c.latent_w));
    kv.set("model.c_lat", std::to_string(c.c_lat));
    kv.set("model.mlp_ratio", std::to_string(c.mlp_ratio));
    kv.set("model.time_freq_dim", std::to_string(c.time_freq_dim));
    kv.set("model.id_hidden", std::to_string(c.id_hidden));
    kv.set("model.n_placeholder", std::to_string(c.n_placeholder));
    kv.set("model.id_crop_dim", std::to_string(c.id_crop_dim));
    kv.set("model.size_tag", c.size_tag);
    kv.set("model.mode", concat_mode_name(c.mode));
}

inline ModelConfig config_from_kv(const KvConfig& kv) {
    ModelConfig c;
    c.n_layers = static_cast<int>(kv.get_int_or("model.n_layers", c.n_layers));
    c.d_model = static_cast<int>(kv.get_int_or("model.d_model", c.d_model));
    c.n_heads = static_cast<int>(kv.get_int_or("model.n_heads", c.n_heads));
    c.patch = static_cast<int>(kv.get_int_or("model.patch", c.patch));
    c.l_max = static_cast<int>(kv.get_int_or("model.l_max", c.l_max));
    c.latent_h = static_cast<int>(kv.get_int_or("model.latent_h", c.latent_h));
    c.latent_w = static_cast<int>(kv.get_int_or("model.latent_w", c.latent_w));
    c.c_lat = static_cast<int>(kv.get_int_or("model.c_lat", c.c_lat));
    c.mlp_ratio = static_cast<int>(kv.get_int_or("model.mlp_ratio", c.mlp_ratio));
    c.time_freq_dim = static_cast<int>(kv.get_int_or("model.time_freq_dim", c.time_freq_dim));
    c.id_hidden = static_cast<int>(kv.get_int_or("model.id_hidden", c.id_hidden));
    c.n_placeholder = static_cast<int>(kv.get_int_or("model.n_placeholder", c.n_placeholder));
    c.id_crop_dim = static_cast<int>(kv.get_int_or("model.id_crop_dim", c.id_crop_dim));
    c.size_tag = kv.get_or("model.size_tag", c.size_tag);
    c.mode = kv.get_or("model.mode", "channel") == "sequence" ? ConcatMode::Sequence : ConcatMode::Channel;
    c.validate();
    return c;
}

// ---- named parameter store ---------------------------------------------------

template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        int r = 0, c = 0;
        size_t offset = 0;
        bool zero_init = false;
    };

    std::vector<Entry> entries;
    std::unordered_map<std::string, int> index;
    AVec<T> w;

    size_t size() const { return w.size(); }

    const Entry& entry(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ConfigError("unknown parameter: " + name);
        return entries[static_cast<size_t>(it->second)];
    }
    const T* ptr(const Entry& e) const { return w.data() + e.offset; }
    T* ptr(const Entry& e) { return w.data() + e.offset; }

private:
    size_t cursor_ = 0;

public:
    void add(const std::string& name, int r, int c, bool zero_init = false) {
        Entry e;
        e.name = name;
        e.r = r;
        e.c = c;
        e.offset = cursor_;
        e.zero_init = zero_init;
        cursor_ += static_cast<size_t>(r) * c;
        index[name] = static_cast<int>(entries.size());
        entries.push_back(std::move(e));
    }
    void allocate() { w.assign(cursor_, T(0)); }
};

// fixed, documented layout; checkpoint manifests follow entry order
template <typename T>
ParamStore<T> build_param_store(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.d_model;
    ParamStore<T> ps;
    ps.add("tok_emb", text::vocabulary().size(), d);
    ps.add("pos_text", cfg.l_max, d);
    ps.add("pos_latent", cfg.n_latent_tokens(), d);
    if (cfg.mode == ConcatMode::Channel) {
        ps.add("patch_proj.w", cfg.patch_in_dim(), d);
        ps.add("patch_proj.b", 1, d, true);
    } else {
        ps.add("patch_noise.w", cfg.patch * cfg.patch * cfg.c_lat, d);
        ps.add("patch_noise.b", 1, d, true);
        ps.add("patch_cond.w", cfg.patch * cfg.patch * (cfg.c_lat + 1), d);
        ps.add("patch_cond.b", 1, d, true);
        ps.add("pos_cond", cfg.n_latent_tokens(), d);
    }
    ps.add("time.fc1.w", cfg.time_freq_dim, d);
    ps.add("time.fc1.b", 1, d, true);
    ps.add("time.fc2.w", d, d);
    ps.add("time.fc2.b", 1, d, true);
    for (int i = 0; i < cfg.n_layers; ++i) {
        for (const char* s : {"txt", "lat"}) {
            const std::string p = "L" + std::to_string(i) + "." + s + ".";
            ps.add(p + "mod.w", d, 6 * d, true);  // adaptive-norm modulation, zero-init
            ps.add(p + "mod.b", 1, 6 * d, true);
            ps.add(p + "qkv.w", d, 3 * d);
            ps.add(p + "qkv.b", 1, 3 * d, true);
            ps.add(p + "attn_out.w", d, d);
            ps.add(p + "attn_out.b", 1, d, true);
            ps.add(p + "mlp1.w", d, cfg.mlp_ratio * d);
            ps.add(p + "mlp1.b", 1, cfg.mlp_ratio * d, true);
            ps.add(p + "mlp2.w", cfg.mlp_ratio * d, d);
            ps.add(p + "mlp2.b", 1, d, true);
        }
    }
    ps.add("final.mod.w", d, 2 * d, true);
    ps.add("final.mod.b", 1, 2 * d, true);
    ps.add("head.w", d, cfg.patch_out_dim(), true);  // zero-init output projection
    ps.add("head.b", 1, cfg.patch_out_dim(), true);
    ps.add("ext.fc1.w", cfg.id_crop_dim, cfg.id_hidden);
    ps.add("ext.fc1.b", 1, cfg.id_hidden, true);
    ps.add("ext.fc2.w", cfg.id_hidden, cfg.n_placeholder * d);
    ps.add("ext.fc2.b", 1, cfg.n_placeholder * d, true);
    ps.allocate();
    return ps;
}

template <typename T>
void init_params(ParamStore<T>& ps, uint64_t seed) {
    Rng rng(seed);
    for (const auto& e : ps.entries) {
        T* p = ps.ptr(e);
        const size_t n = static_cast<size_t>(e.r) * e.c;
        if (e.zero_init) {
            std::fill(p, p + n, T(0));
            continue;
        }
        if (e.name == "tok_emb" || e.name.rfind("pos_", 0) == 0) {
            for (size_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.gaussian() * 0.02);
        } else {
            // xavier-style scaled normal for linear weights
            const double std_ = std::sqrt(2.0 / static_cast<double>(e.r + e.c));
            for (size_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.gaussian() * std_);
        }
    }
}

// tape-side accessor: leafs a named parameter into the tape (with gradient
// routing into an external buffer laid out like the store)
template <typename T>
class ParamCtx {
public:
    ParamCtx(nn::Tape<T>& tape, const ParamStore<T>& store, T* grad_base)
        : tape_(tape), store_(store), grad_(grad_base) {}

    nn::Var operator()(const std::string& name) {
        const auto& e = store_.entry(name);
        auto it = cache_.find(e.offset);
        if (it != cache_.end()) return it->second;
        const nn::Var v = grad_ ? tape_.param(store_.ptr(e), grad_ + e.offset, e.r, e.c)
                                : tape_.input(store_.ptr(e), e.r, e.c);
        cache_[e.offset] = v;
        return v;
    }

    const ParamStore<T>& store() const { return store_; }

private:
    nn::Tape<T>& tape_;
    const ParamStore<T>& store_;
    T* grad_;
    std::unordered_map<size_t, nn::Var> cache_;
};

// ---- checkpoints ---------------------------------------------------------------
// Directory layout: config.txt (key=value), vocab.txt, weights.manifest
// ("name rows cols offset" per line, offsets in floats), weights.bin
// (little-endian float32 in manifest order).

inline void save_weights(const std::filesystem::path& dir, const ParamStore<float>& ps) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream man(dir / "weights.manifest");
    if (!man) throw ConfigError("cannot write manifest in " + dir.string());
    for (const auto& e : ps.entries) man << e.name << " " << e.r << " " << e.c << " " << e.offset << "\n";
    std::ofstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw ConfigError("cannot write weights in " + dir.string());
    bin.write(reinterpret_cast<const char*>(ps.w.data()), static_cast<std::streamsize>(ps.w.size() * 4));
}

inline void load_weights(const std::filesystem::path& dir, ParamStore<float>& ps) {
    std::ifstream man(dir / "weights.manifest");
    if (!man) throw ConfigError("missing weights.manifest in " + dir.string());
    std::string name;
    int r = 0, c = 0;
    size_t off = 0, count = 0;
    while (man >> name >> r >> c >> off) {
        const auto& e = ps.entry(name);
        if (e.r != r || e.c != c || e.offset != off)
            throw ConfigError("checkpoint tensor '" + name + "' does not match the configured shape");
        ++count;
    }
    if (count != ps.entries.size()) throw ConfigError("checkpoint manifest is incomplete");
    std::ifstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw ConfigError("missing weights.bin in " + dir.string());
    bin.read(reinterpret_cast<char*>(ps.w.data()), static_cast<std::streamsize>(ps.w.size() * 4));
    if (!bin || bin.gcount() != static_cast<std::streamsize>(ps.w.size() * 4))
        throw ConfigError("weights.bin truncated in " + dir.string());
}

inline void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg,
                            const ParamStore<float>& ps, const KvConfig& extra = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    KvConfig kv = extra;
    config_to_kv(cfg, kv);
    std::ofstream cf(dir / "config.txt");
    cf << kv.dump();
    text::vocabulary().dump((dir / "vocab.txt").string());
    save_weights(dir, ps);
}

struct LoadedModel {
    ModelConfig cfg;
    ParamStore<float> params;
    KvConfig kv;
};

inline LoadedModel load_checkpoint(const std::filesystem::path& dir) {
    LoadedModel m;
    m.kv = KvConfig::from_file((dir / "config.txt").string());
    m.cfg = config_from_kv(m.kv);
    text::vocabulary().check_file((dir / "vocab.txt").string());
    m.params = build_param_store<float>(m.cfg);
    load_weights(dir, m.params);
    return m;
}

}  // namespace unidiff::mmdit
