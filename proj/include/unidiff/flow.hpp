#pragma once

// Linear-interpolation flow: z_t = t*z + (1-t)*eps with constant target
// velocity u = z - eps. Integration runs from noise at t=0 to data at t=1 on
// a uniform Euler grid. Sampling composes three guidance branches:
//   u = u_uncond + alpha_v*(u_img - u_uncond) + alpha_x*(u_full - u_img)
// where the null visual condition is the all-zeros latent and all-zeros mask
// and the null prompt is the learned <null> embedding.

#include <cmath>
#include <string>
#include <vector>

#include "unidiff/codec.hpp"
#include "unidiff/core.hpp"
#include "unidiff/mmdit.hpp"

namespace unidiff::flow {

using codec::Latent;
using codec::LatentMask;
using mmdit::VelocityField;

struct GuidanceScales {
    float alpha_x = 4.0f;  // text scale
    float alpha_v = 1.5f;  // image scale
};

namespace detail {
inline void check_same_shape(const Latent& a, const Latent& b, const char* who) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) throw ConfigError(std::string(who) + ": shape mismatch");
}
template <typename T>
void check_same_size(const std::vector<T>& a, const std::vector<T>& b, const char* who) {
    if (a.size() != b.size()) throw ConfigError(std::string(who) + ": shape mismatch");
}
}  // namespace detail

// The formula kernels are templated so the float tensor path and the float64
// verification path share one implementation.

template <typename T>
std::vector<T> interpolate_vec(const std::vector<T>& z, const std::vector<T>& eps, T t) {
    detail::check_same_size(z, eps, "interpolate");
    std::vector<T> out(z.size());
    for (size_t i = 0; i < z.size(); ++i) out[i] = t * z[i] + (T(1) - t) * eps[i];
    return out;
}

template <typename T>
std::vector<T> target_velocity_vec(const std::vector<T>& z, const std::vector<T>& eps) {
    detail::check_same_size(z, eps, "target_velocity");
    std::vector<T> u(z.size());
    for (size_t i = 0; i < z.size(); ++i) u[i] = z[i] - eps[i];
    return u;
}

template <typename T>
double cfm_loss_vec(const std::vector<T>& pred, const std::vector<T>& target) {
    detail::check_same_size(pred, target, "cfm_loss");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        if (!std::isfinite(d)) throw NumericError("cfm_loss: non-finite value");
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

// u_uncond + a_v*(u_img - u_uncond) + a_x*(u_full - u_img), evaluated in the
// gathered-coefficient form so the telescoping cases (a_v = a_x = 1 -> u_full,
// a_v = a_x = 0 -> u_uncond) hold exactly in floating point
template <typename T>
std::vector<T> cfg_combine_vec(const std::vector<T>& u_uncond, const std::vector<T>& u_img,
                               const std::vector<T>& u_full, T alpha_x, T alpha_v) {
    detail::check_same_size(u_uncond, u_img, "cfg_combine");
    detail::check_same_size(u_uncond, u_full, "cfg_combine");
    const T c0 = T(1) - alpha_v;
    const T c1 = alpha_v - alpha_x;
    std::vector<T> out(u_uncond.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = c0 * u_uncond[i] + c1 * u_img[i] + alpha_x * u_full[i];
    return out;
}

inline Latent interpolate(const Latent& z, const Latent& eps, float t) {
    detail::check_same_shape(z, eps, "interpolate");
    Latent out(z.h, z.w, z.c);
    out.v = interpolate_vec(z.v, eps.v, t);
    return out;
}

inline VelocityField target_velocity(const Latent& z, const Latent& eps) {
    detail::check_same_shape(z, eps, "target_velocity");
    VelocityField u(z.h, z.w, z.c);
    u.v = target_velocity_vec(z.v, eps.v);
    return u;
}

// mean squared error over the full field (all cells and channels)
inline double cfm_loss(const VelocityField& pred, const VelocityField& target) {
    detail::check_same_shape(pred, target, "cfm_loss");
    return cfm_loss_vec(pred.v, target.v);
}

inline VelocityField cfg_combine(const VelocityField& u_uncond, const VelocityField& u_img,
                                 const VelocityField& u_full, const GuidanceScales& s) {
    detail::check_same_shape(u_uncond, u_img, "cfg_combine");
    detail::check_same_shape(u_uncond, u_full, "cfg_combine");
    VelocityField out(u_uncond.h, u_uncond.w, u_uncond.c);
    out.v = cfg_combine_vec(u_uncond.v, u_img.v, u_full.v, s.alpha_x, s.alpha_v);
    return out;
}

// ---- Euler integration --------------------------------------------------------

inline Latent gaussian_latent(int h, int w, int c, Rng& rng) {
    Latent z(h, w, c);
    for (auto& v : z.v) v = static_cast<float>(rng.gaussian());
    return z;
}

// generic ODE loop: velocity(state, t) on the uniform grid t_k = k/steps
template <typename T, typename VelocityFn>
std::vector<T> integrate_vec(VelocityFn&& velocity, std::vector<T> state, int steps) {
    if (steps <= 0) throw ConfigError("integrate: steps must be positive");
    const T dt = T(1) / static_cast<T>(steps);
    for (int k = 0; k < steps; ++k) {
        const T t = static_cast<T>(k) / static_cast<T>(steps);
        const std::vector<T> u = velocity(state, t);
        detail::check_same_size(state, u, "integrate");
        for (size_t i = 0; i < state.size(); ++i) {
            state[i] += dt * u[i];
            if (!std::isfinite(static_cast<double>(state[i])))
                throw NumericError("integrate: non-finite state at step " + std::to_string(k));
        }
    }
    return state;
}

template <typename VelocityFn>
Latent integrate(VelocityFn&& velocity, Latent z0, int steps) {
    const int h = z0.h, w = z0.w, c = z0.c;
    auto vec_fn = [&](const std::vector<float>& s, float t) {
        Latent z(h, w, c);
        z.v = s;
        const VelocityField u = velocity(z, t);
        detail::check_same_shape(z, u, "integrate");
        return u.v;
    };
    Latent out(h, w, c);
    out.v = integrate_vec(vec_fn, std::move(z0.v), steps);
    return out;
}

// ---- full sampler ---------------------------------------------------------------

struct SampleSpec {
    const text::TokenSequence* prompt = nullptr;  // conditioned prompt; nullptr behaves as null
    const ImageTensor* external_crop = nullptr;   // identity condition, optional
    Latent v;        // conditioning image latent (zeros = empty input)
    LatentMask mask; // resized input mask
    int steps = 50;
    uint64_t seed = 0;
    GuidanceScales scales;
};

// returns the final clean latent (t=1)
inline Latent sample_latent(const mmdit::ParamStore<float>& store, const mmdit::ModelConfig& cfg,
                            const SampleSpec& spec, mmdit::ForwardStats* stats = nullptr) {
    if (spec.v.h != cfg.latent_h || spec.v.w != cfg.latent_w || spec.v.c != cfg.c_lat)
        throw ConfigError("sample: conditioning latent does not match the model grid");
    Rng rng(spec.seed);
    Latent z0 = gaussian_latent(cfg.latent_h, cfg.latent_w, cfg.c_lat, rng);
    const auto velocity = [&](const Latent& z, float t) {
        mmdit::ConditionSet uncond;
        uncond.z_t = &z;
        const VelocityField u_uncond = mmdit::predict_velocity(store, cfg, uncond, t, stats);

        mmdit::ConditionSet img;
        img.z_t = &z;
        img.v = &spec.v;
        img.mask = &spec.mask;
        const VelocityField u_img = mmdit::predict_velocity(store, cfg, img, t, stats);

        mmdit::ConditionSet full = img;
        full.prompt = spec.prompt;
        full.external_crop = spec.external_crop;
        const VelocityField u_full = mmdit::predict_velocity(store, cfg, full, t, stats);
        return cfg_combine(u_uncond, u_img, u_full, spec.scales);
    };
    return integrate(velocity, std::move(z0), spec.steps);
}

inline ImageTensor sample(const mmdit::ParamStore<float>& store, const mmdit::ModelConfig& cfg,
                          const SampleSpec& spec, mmdit::ForwardStats* stats = nullptr) {
    return codec::decode(sample_latent(store, cfg, spec, stats));
}

}  // namespace unidiff::flow
