#pragma once

// Dual-stream diffusion transformer with joint attention.
//
// Pipeline: patchify the channel-concatenated conditioned latent, project to
// d_model, then per layer run [prompt stream ‖ latent stream] with separate
// per-stream projections, joint attention, and adaptive layer-norm modulation
// driven by the sinusoidally embedded timestep. Modulation and the output
// projection start at zero, so a freshly initialized model is exactly the
// zero velocity field.
//
// Channel mode keeps one latent token per patch regardless of conditioning
// (the fixed-sequence-length property). Sequence mode is the baseline for
// efficiency comparisons: input image + mask become their own token block
// appended to the noise tokens, sharing the latent-stream weights.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unidiff/autograd.hpp"
#include "unidiff/codec.hpp"
#include "unidiff/conditioner.hpp"
#include "unidiff/core.hpp"
#include "unidiff/params.hpp"
#include "unidiff/tasks.hpp"

namespace unidiff::mmdit {

using VelocityField = codec::Latent;  // latent_h x latent_w x c_lat

struct ForwardStats {
    double max_abs = 0.0;  // divergence tripwire over all stream activations
};

// ---- input assembly -------------------------------------------------------------

// channel concatenation [z_t ⊕ v ⊕ m]; layout: [0,c_lat) = z_t, [c_lat,2c_lat) = v,
// last channel = mask
inline codec::Latent assemble_input(const codec::Latent& z_t, const codec::Latent& v,
                                    const codec::LatentMask& m) {
    if (z_t.h != v.h || z_t.w != v.w || z_t.c != v.c || z_t.h != m.h || z_t.w != m.w)
        throw ConfigError("assemble_input: shape mismatch");
    codec::Latent d(z_t.h, z_t.w, 2 * z_t.c + 1);
    for (int y = 0; y < z_t.h; ++y)
        for (int x = 0; x < z_t.w; ++x) {
            for (int c = 0; c < z_t.c; ++c) {
                d.at(y, x, c) = z_t.at(y, x, c);
                d.at(y, x, z_t.c + c) = v.at(y, x, c);
            }
            d.at(y, x, 2 * z_t.c) = m.at(y, x);
        }
    return d;
}

// ---- token accounting -------------------------------------------------------------

inline bool task_has_visual_input(world::TaskKind k) {
    return k != world::TaskKind::T2I && k != world::TaskKind::Id;
}

// exact attention sequence length (prompt + latent tokens) per task and mode
inline int count_tokens(world::TaskKind kind, const ModelConfig& cfg, ConcatMode mode) {
    int n = cfg.l_max + cfg.n_latent_tokens();
    if (mode == ConcatMode::Sequence && task_has_visual_input(kind)) n += cfg.n_latent_tokens();
    return n;
}

// analytic attention FLOPs (the quadratic terms: QK^T and PV per layer)
inline double attention_flops(const ModelConfig& cfg, int total_tokens) {
    const double l2 = static_cast<double>(total_tokens) * total_tokens;
    return 4.0 * l2 * cfg.d_model * cfg.n_layers;
}

// ---- helpers -------------------------------------------------------------------

template <typename T>
std::vector<T> time_embedding(T t, int dim) {
    const int half = dim / 2;
    std::vector<T> e(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        const double arg = static_cast<double>(t) * 1000.0 * freq;
        e[static_cast<size_t>(i)] = static_cast<T>(std::cos(arg));
        e[static_cast<size_t>(half + i)] = static_cast<T>(std::sin(arg));
    }
    return e;
}

inline std::shared_ptr<std::vector<int>> patchify_index(int h, int w, int channels, int p) {
    const int ty = h / p, tx = w / p, k = p * p * channels;
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(ty) * tx * k);
    size_t a = 0;
    for (int y = 0; y < ty; ++y)
        for (int x = 0; x < tx; ++x)
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int c = 0; c < channels; ++c)
                        (*idx)[a++] = ((y * p + py) * w + (x * p + px)) * channels + c;
    return idx;
}

inline std::shared_ptr<std::vector<int>> unpatchify_index(int h, int w, int channels, int p) {
    const int tx = w / p, k = p * p * channels;
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(h) * w * channels);
    size_t a = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const int n = (y / p) * tx + (x / p);
                const int kk = ((y % p) * p + (x % p)) * channels + c;
                (*idx)[a++] = n * k + kk;
            }
    return idx;
}

namespace detail {

template <typename T>
void check_finite_input(const std::vector<T>& v, const char* what) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x))) throw NumericError(std::string("non-finite input: ") + what);
}

template <typename T>
void scan_activations(const nn::Tape<T>& tp, nn::Var a, nn::Var b, int layer, ForwardStats* stats) {
    const double ma = static_cast<double>(tp.map(a).array().abs().maxCoeff());
    const double mb = static_cast<double>(tp.map(b).array().abs().maxCoeff());
    const double m = std::max(ma, mb);
    if (!std::isfinite(m)) throw NumericError("non-finite activation at layer " + std::to_string(layer));
    if (stats) stats->max_abs = std::max(stats->max_abs, m);
}

// one dual-stream block; returns updated (txt, lat)
template <typename T>
std::pair<nn::Var, nn::Var> block(nn::Tape<T>& tp, ParamCtx<T>& P, const ModelConfig& cfg, int layer,
                                  nn::Var x_txt, nn::Var x_lat, nn::Var c_mod,
                                  const std::vector<uint8_t>& joint_mask) {
    const int d = cfg.d_model;
    const T eps = T(1e-6);
    struct StreamMods {
        nn::Var sc1, sh1, g1, sc2, sh2, g2;
    };
    const auto mods_for = [&](const char* s) {
        const std::string p = "L" + std::to_string(layer) + "." + s + ".";
        const nn::Var m = tp.linear(c_mod, P(p + "mod.w"), P(p + "mod.b"));
        return StreamMods{tp.slice_cols(m, 0, d),     tp.slice_cols(m, d, d),
                          tp.slice_cols(m, 2 * d, d), tp.slice_cols(m, 3 * d, d),
                          tp.slice_cols(m, 4 * d, d), tp.slice_cols(m, 5 * d, d)};
    };
    const StreamMods mt = mods_for("txt");
    const StreamMods ml = mods_for("lat");
    const std::string pt = "L" + std::to_string(layer) + ".txt.";
    const std::string pl = "L" + std::to_string(layer) + ".lat.";

    // joint attention over [txt ‖ lat] with per-stream projections
    const nn::Var at = tp.modulate(tp.layernorm(x_txt, eps), mt.sc1, mt.sh1);
    const nn::Var al = tp.modulate(tp.layernorm(x_lat, eps), ml.sc1, ml.sh1);
    const nn::Var qkv_t = tp.linear(at, P(pt + "qkv.w"), P(pt + "qkv.b"));
    const nn::Var qkv_l = tp.linear(al, P(pl + "qkv.w"), P(pl + "qkv.b"));
    const nn::Var q = tp.concat_rows(tp.slice_cols(qkv_t, 0, d), tp.slice_cols(qkv_l, 0, d));
    const nn::Var k = tp.concat_rows(tp.slice_cols(qkv_t, d, d), tp.slice_cols(qkv_l, d, d));
    const nn::Var v = tp.concat_rows(tp.slice_cols(qkv_t, 2 * d, d), tp.slice_cols(qkv_l, 2 * d, d));
    const nn::Var attn = tp.attention(q, k, v, cfg.n_heads, joint_mask);
    const int n_txt = tp.rows(x_txt);
    const nn::Var attn_t = tp.slice_rows(attn, 0, n_txt);
    const nn::Var attn_l = tp.slice_rows(attn, n_txt, tp.rows(x_lat));
    x_txt = tp.gate_residual(x_txt, tp.linear(attn_t, P(pt + "attn_out.w"), P(pt + "attn_out.b")), mt.g1);
    x_lat = tp.gate_residual(x_lat, tp.linear(attn_l, P(pl + "attn_out.w"), P(pl + "attn_out.b")), ml.g1);

    // per-stream MLP
    const nn::Var ht = tp.modulate(tp.layernorm(x_txt, eps), mt.sc2, mt.sh2);
    const nn::Var hl = tp.modulate(tp.layernorm(x_lat, eps), ml.sc2, ml.sh2);
    const nn::Var ut = tp.linear(tp.gelu(tp.linear(ht, P(pt + "mlp1.w"), P(pt + "mlp1.b"))),
                                 P(pt + "mlp2.w"), P(pt + "mlp2.b"));
    const nn::Var ul = tp.linear(tp.gelu(tp.linear(hl, P(pl + "mlp1.w"), P(pl + "mlp1.b"))),
                                 P(pl + "mlp2.w"), P(pl + "mlp2.b"));
    x_txt = tp.gate_residual(x_txt, ut, mt.g2);
    x_lat = tp.gate_residual(x_lat, ul, ml.g2);
    return {x_txt, x_lat};
}

// trunk shared by both concat modes; n_noise = latent rows that carry z_t
template <typename T>
nn::Var run_trunk(nn::Tape<T>& tp, ParamCtx<T>& P, const ModelConfig& cfg,
                  const text::PromptBuild<T>& prompt, T t, nn::Var x_lat, int n_noise,
                  ForwardStats* stats) {
    if (!(t >= T(0) && t <= T(1))) throw ConfigError("forward: t must lie in [0,1]");
    nn::Var x_txt = prompt.embs;
    if (tp.rows(x_txt) != cfg.l_max || tp.cols(x_txt) != cfg.d_model)
        throw ConfigError("forward: prompt embedding shape mismatch");

    // timestep conditioning
    const nn::Var tsin = tp.constant(time_embedding(t, cfg.time_freq_dim), 1, cfg.time_freq_dim);
    const nn::Var th = tp.silu(tp.linear(tsin, P("time.fc1.w"), P("time.fc1.b")));
    const nn::Var temb = tp.linear(th, P("time.fc2.w"), P("time.fc2.b"));
    const nn::Var c_mod = tp.silu(temb);

    // padding mask over prompt keys; latent keys always visible
    std::vector<uint8_t> joint_mask = prompt.key_mask;
    joint_mask.resize(static_cast<size_t>(cfg.l_max + tp.rows(x_lat)), 0);

    for (int i = 0; i < cfg.n_layers; ++i) {
        auto [nt, nl] = block(tp, P, cfg, i, x_txt, x_lat, c_mod, joint_mask);
        x_txt = nt;
        x_lat = nl;
        scan_activations(tp, x_txt, x_lat, i, stats);
    }

    const nn::Var head_in = n_noise == tp.rows(x_lat) ? x_lat : tp.slice_rows(x_lat, 0, n_noise);
    const nn::Var fmod = tp.linear(c_mod, P("final.mod.w"), P("final.mod.b"));
    const nn::Var y = tp.modulate(tp.layernorm(head_in, T(1e-6)), tp.slice_cols(fmod, 0, cfg.d_model),
                                  tp.slice_cols(fmod, cfg.d_model, cfg.d_model));
    const nn::Var out = tp.linear(y, P("head.w"), P("head.b"));
    const nn::Var field =
        tp.gather_index(out, unpatchify_index(cfg.latent_h, cfg.latent_w, cfg.c_lat, cfg.patch),
                        cfg.latent_h * cfg.latent_w, cfg.c_lat);
    if (!tp.map(field).array().isFinite().all()) throw NumericError("non-finite output at the head");
    return field;
}

}  // namespace detail

// ---- forward passes -------------------------------------------------------------

// channel mode: cond_flat is the assembled [z_t ⊕ v ⊕ m], h*w*c_in floats
template <typename T>
nn::Var forward_field(nn::Tape<T>& tp, ParamCtx<T>& P, const ModelConfig& cfg,
                      const text::PromptBuild<T>& prompt, T t, const std::vector<T>& cond_flat,
                      ForwardStats* stats = nullptr) {
    if (cfg.mode != ConcatMode::Channel) throw ConfigError("forward_field: config is not in channel mode");
    if (static_cast<int>(cond_flat.size()) != cfg.latent_h * cfg.latent_w * cfg.c_in())
        throw ConfigError("forward_field: conditioned latent has the wrong size");
    detail::check_finite_input(cond_flat, "conditioned latent");
    const nn::Var d_in = tp.constant(cond_flat, 1, static_cast<int>(cond_flat.size()));
    const nn::Var tokens =
        tp.gather_index(d_in, patchify_index(cfg.latent_h, cfg.latent_w, cfg.c_in(), cfg.patch),
                        cfg.n_latent_tokens(), cfg.patch_in_dim());
    const nn::Var x_lat =
        tp.add(tp.linear(tokens, P("patch_proj.w"), P("patch_proj.b")), P("pos_latent"));
    return detail::run_trunk(tp, P, cfg, prompt, t, x_lat, cfg.n_latent_tokens(), stats);
}

// sequence mode baseline: z_t tokens, with v+m appended as their own block
// when the task carries a visual input
template <typename T>
nn::Var forward_field_seq(nn::Tape<T>& tp, ParamCtx<T>& P, const ModelConfig& cfg,
                          const text::PromptBuild<T>& prompt, T t, const std::vector<T>& zt_flat,
                          const std::vector<T>* vm_flat, ForwardStats* stats = nullptr) {
    if (cfg.mode != ConcatMode::Sequence) throw ConfigError("forward_field_seq: config is not in sequence mode");
    if (static_cast<int>(zt_flat.size()) != cfg.latent_h * cfg.latent_w * cfg.c_lat)
        throw ConfigError("forward_field_seq: z_t has the wrong size");
    detail::check_finite_input(zt_flat, "noisy latent");
    const nn::Var z_in = tp.constant(zt_flat, 1, static_cast<int>(zt_flat.size()));
    const nn::Var z_tok =
        tp.gather_index(z_in, patchify_index(cfg.latent_h, cfg.latent_w, cfg.c_lat, cfg.patch),
                        cfg.n_latent_tokens(), cfg.patch * cfg.patch * cfg.c_lat);
    nn::Var x_lat = tp.add(tp.linear(z_tok, P("patch_noise.w"), P("patch_noise.b")), P("pos_latent"));
    if (vm_flat) {
        if (static_cast<int>(vm_flat->size()) != cfg.latent_h * cfg.latent_w * (cfg.c_lat + 1))
            throw ConfigError("forward_field_seq: condition block has the wrong size");
        detail::check_finite_input(*vm_flat, "condition block");
        const nn::Var vm_in = tp.constant(*vm_flat, 1, static_cast<int>(vm_flat->size()));
        const nn::Var vm_tok =
            tp.gather_index(vm_in, patchify_index(cfg.latent_h, cfg.latent_w, cfg.c_lat + 1, cfg.patch),
                            cfg.n_latent_tokens(), cfg.patch * cfg.patch * (cfg.c_lat + 1));
        const nn::Var c_tok = tp.add(tp.linear(vm_tok, P("patch_cond.w"), P("patch_cond.b")),
                                     P("pos_cond"));
        x_lat = tp.concat_rows(x_lat, c_tok);
    }
    return detail::run_trunk(tp, P, cfg, prompt, t, x_lat, cfg.n_latent_tokens(), stats);
}

// ---- plain-type inference wrapper --------------------------------------------------

struct ConditionSet {
    const text::TokenSequence* prompt = nullptr;  // nullptr = null prompt
    const ImageTensor* external_crop = nullptr;   // identity glyph, optional
    const codec::Latent* z_t = nullptr;
    const codec::Latent* v = nullptr;        // nullptr = null visual condition
    const codec::LatentMask* mask = nullptr;  // nullptr = null mask
};

// one inference forward in float; no gradients, fresh tape
inline VelocityField predict_velocity(const ParamStore<float>& store, const ModelConfig& cfg,
                                      const ConditionSet& cond, float t, ForwardStats* stats = nullptr) {
    nn::Tape<float> tp(false);
    ParamCtx<float> P(tp, store, nullptr);
    text::PromptBuild<float> prompt;
    if (cond.prompt) {
        prompt = text::embed(tp, P, *cond.prompt);
        if (cond.external_crop) {
            std::vector<float> crop = cond.external_crop->v;
            const nn::Var feats = text::encode_identity(tp, P, crop, cfg.n_placeholder, cfg.d_model);
            prompt = text::inject_external(tp, prompt, feats);
        }
    } else {
        prompt = text::null_prompt(tp, P, cfg.l_max);
    }
    const codec::Latent zero_lat(cfg.latent_h, cfg.latent_w, cfg.c_lat, 0.0f);
    const codec::LatentMask zero_mask(cfg.latent_h, cfg.latent_w, 0.0f);
    const codec::Latent& v = cond.v ? *cond.v : zero_lat;
    const codec::LatentMask& m = cond.mask ? *cond.mask : zero_mask;
    if (!cond.z_t) throw ConfigError("predict_velocity: missing z_t");

    nn::Var field;
    if (cfg.mode == ConcatMode::Channel) {
        const codec::Latent d = assemble_input(*cond.z_t, v, m);
        field = forward_field(tp, P, cfg, prompt, t, d.v, stats);
    } else {
        const bool has_cond = cond.v != nullptr || cond.mask != nullptr;
        std::vector<float> vm;
        if (has_cond) {
            vm.resize(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * (cfg.c_lat + 1));
            size_t a = 0;
            for (int y = 0; y < cfg.latent_h; ++y)
                for (int x = 0; x < cfg.latent_w; ++x) {
                    for (int c = 0; c < cfg.c_lat; ++c) vm[a++] = v.at(y, x, c);
                    vm[a++] = m.at(y, x);
                }
        }
        field = forward_field_seq(tp, P, cfg, prompt, t, cond.z_t->v, has_cond ? &vm : nullptr, stats);
    }
    VelocityField out(cfg.latent_h, cfg.latent_w, cfg.c_lat);
    const float* src = tp.data(field);
    std::copy(src, src + out.v.size(), out.v.begin());
    return out;
}

}  // namespace unidiff::mmdit
