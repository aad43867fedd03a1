#pragma once

// Mixture sampling, condition dropout, the three-stage recipe, AdamW with
// decoupled weight decay, and bit-exact checkpoint/resume.
//
// Batch gradients: worker w processes samples i ≡ w (mod W) in order into its
// own accumulator; accumulators are reduced in worker order. For a fixed
// UNIDIFF_THREADS the metric stream and the weights are bit-identical across
// runs; the default is single-threaded.

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "unidiff/codec.hpp"
#include "unidiff/core.hpp"
#include "unidiff/flow.hpp"
#include "unidiff/generators.hpp"
#include "unidiff/mmdit.hpp"

namespace unidiff::train {

// ---- mixtures -------------------------------------------------------------------

struct MixtureSpec {
    std::array<double, world::kNumTaskKinds> ratio{};  // indexed by TaskKind

    double sum() const {
        double s = 0;
        for (double r : ratio) s += r;
        return s;
    }
    void validate() const {
        for (double r : ratio)
            if (r < 0) throw ConfigError("mixture: negative ratio");
        if (std::abs(sum() - 1.0) > 1e-9) throw ConfigError("mixture: ratios must sum to 1");
    }

    static MixtureSpec t2i_only() {
        MixtureSpec m;
        m.ratio[static_cast<int>(world::TaskKind::T2I)] = 1.0;
        return m;
    }
    // the multi-task mixture: t2i 28%, inpaint 10%, outpaint 10%, edit 47%,
    // auxiliary 3% (split equally over depth/pose/seg), layout 2%
    static MixtureSpec multi_task() {
        MixtureSpec m;
        using world::TaskKind;
        m.ratio[static_cast<int>(TaskKind::T2I)] = 0.28;
        m.ratio[static_cast<int>(TaskKind::Inpaint)] = 0.10;
        m.ratio[static_cast<int>(TaskKind::Outpaint)] = 0.10;
        m.ratio[static_cast<int>(TaskKind::Edit)] = 0.47;
        m.ratio[static_cast<int>(TaskKind::Depth)] = 0.01;
        m.ratio[static_cast<int>(TaskKind::Pose)] = 0.01;
        m.ratio[static_cast<int>(TaskKind::Seg)] = 0.01;
        m.ratio[static_cast<int>(TaskKind::Layout)] = 0.02;
        return m;
    }
    // identity task 1:1 against everything else (base renormalized to 0.5)
    static MixtureSpec with_id_half(const MixtureSpec& base) {
        MixtureSpec m;
        const double s = base.sum();
        for (int i = 0; i < world::kNumTaskKinds; ++i) m.ratio[static_cast<size_t>(i)] = 0.5 * base.ratio[static_cast<size_t>(i)] / s;
        m.ratio[static_cast<int>(world::TaskKind::Id)] = 0.5;
        return m;
    }
};

inline world::TaskKind draw_kind(const MixtureSpec& mix, Rng& rng) {
    const double u = rng.uniform() * mix.sum();
    double acc = 0;
    for (int i = 0; i < world::kNumTaskKinds; ++i) {
        acc += mix.ratio[static_cast<size_t>(i)];
        if (u < acc) return static_cast<world::TaskKind>(i);
    }
    return world::TaskKind::T2I;
}

inline std::vector<world::TaskSample> sample_batch(const MixtureSpec& mix, int batch, Rng& rng) {
    mix.validate();
    std::vector<world::TaskSample> out;
    out.reserve(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) out.push_back(world::sample_task(draw_kind(mix, rng), rng));
    return out;
}

// ---- stages ---------------------------------------------------------------------

struct StageSpec {
    std::string name;  // "I", "II", "III"
    MixtureSpec mixture;
    double lr = 1e-4;
    long steps = 20000;
    int batch = 64;
    bool trains_external_encoder = false;

    static StageSpec stage(const std::string& name) {
        StageSpec s;
        s.name = name;
        if (name == "I") {
            s.mixture = MixtureSpec::t2i_only();
        } else if (name == "II") {
            s.mixture = MixtureSpec::multi_task();
        } else if (name == "III") {
            s.mixture = MixtureSpec::with_id_half(MixtureSpec::multi_task());
            s.lr = 2e-5;
            s.steps = 2000;
            s.trains_external_encoder = true;
        } else {
            throw ConfigError("unknown stage: " + name);
        }
        return s;
    }
};

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
};

struct DropoutConfig {
    double text_only = 0.05;
    double visual_only = 0.05;
    double both = 0.05;
};

// ---- training state --------------------------------------------------------------

struct TrainState {
    mmdit::ModelConfig cfg;
    mmdit::ParamStore<float> params;
    AVec<float> m, v;  // Adam moments
    long step = 0;     // optimizer updates so far (bias correction exponent)
    std::string stage_done;         // last fully completed stage ("" before I)
    std::string stage_in_progress;  // nonempty while inside a stage
    long stage_step = 0;            // steps completed inside stage_in_progress
    Rng rng;

    static TrainState fresh(const mmdit::ModelConfig& cfg, uint64_t seed) {
        TrainState st;
        st.cfg = cfg;
        st.params = mmdit::build_param_store<float>(cfg);
        mmdit::init_params(st.params, seed ^ 0x9E3779B97F4A7C15ull);
        st.m.assign(st.params.size(), 0.0f);
        st.v.assign(st.params.size(), 0.0f);
        st.rng = Rng(seed);
        return st;
    }
};

inline void save_train_state(const std::filesystem::path& dir, const TrainState& st,
                             const KvConfig& extra = {}) {
    namespace fs = std::filesystem;
    KvConfig kv = extra;
    kv.set("train.step", std::to_string(st.step));
    kv.set("train.stage_done", st.stage_done);
    kv.set("train.stage_in_progress", st.stage_in_progress);
    kv.set("train.stage_step", std::to_string(st.stage_step));
    mmdit::save_checkpoint(dir, st.cfg, st.params, kv);
    std::ofstream state(dir / "state.txt");
    state << "step=" << st.step << "\n";
    state << "stage_done=" << st.stage_done << "\n";
    state << "stage_in_progress=" << st.stage_in_progress << "\n";
    state << "stage_step=" << st.stage_step << "\n";
    state << "rng=" << st.rng.save() << "\n";
    std::ofstream opt(dir / "optimizer.bin", std::ios::binary);
    opt.write(reinterpret_cast<const char*>(st.m.data()), static_cast<std::streamsize>(st.m.size() * 4));
    opt.write(reinterpret_cast<const char*>(st.v.data()), static_cast<std::streamsize>(st.v.size() * 4));
}

inline TrainState load_train_state(const std::filesystem::path& dir) {
    TrainState st;
    auto loaded = mmdit::load_checkpoint(dir);
    st.cfg = loaded.cfg;
    st.params = std::move(loaded.params);
    st.m.assign(st.params.size(), 0.0f);
    st.v.assign(st.params.size(), 0.0f);
    std::ifstream state(dir / "state.txt");
    if (!state) throw ConfigError("missing state.txt in " + dir.string());
    std::string line;
    while (std::getline(state, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "step") st.step = std::stol(val);
        else if (key == "stage_done") st.stage_done = val;
        else if (key == "stage_in_progress") st.stage_in_progress = val;
        else if (key == "stage_step") st.stage_step = std::stol(val);
        else if (key == "rng") st.rng.restore(val);
    }
    std::ifstream opt(dir / "optimizer.bin", std::ios::binary);
    if (!opt) throw ConfigError("missing optimizer.bin in " + dir.string());
    opt.read(reinterpret_cast<char*>(st.m.data()), static_cast<std::streamsize>(st.m.size() * 4));
    opt.read(reinterpret_cast<char*>(st.v.data()), static_cast<std::streamsize>(st.v.size() * 4));
    if (!opt) throw ConfigError("optimizer.bin truncated in " + dir.string());
    return st;
}

// ---- per-sample loss -------------------------------------------------------------

// pre-drawn randomness so worker scheduling cannot affect the stream
struct SampleNoise {
    std::vector<float> eps;  // field-sized gaussian
    float t = 0.5f;
    bool drop_text = false;
    bool drop_visual = false;
};

inline SampleNoise draw_noise(const mmdit::ModelConfig& cfg, const DropoutConfig& dropout, Rng& rng) {
    SampleNoise n;
    n.eps.resize(static_cast<size_t>(cfg.field_size()));
    for (auto& e : n.eps) e = static_cast<float>(rng.gaussian());
    n.t = static_cast<float>(rng.uniform());
    const double u = rng.uniform();
    if (u < dropout.text_only) {
        n.drop_text = true;
    } else if (u < dropout.text_only + dropout.visual_only) {
        n.drop_visual = true;
    } else if (u < dropout.text_only + dropout.visual_only + dropout.both) {
        n.drop_text = true;
        n.drop_visual = true;
    }
    return n;
}

// forward + backward for one sample; returns the loss. grads == nullptr skips
// the backward pass.
inline double sample_loss(const mmdit::ParamStore<float>& params, const mmdit::ModelConfig& cfg,
                          const world::TaskSample& sample, const SampleNoise& noise, float* grads,
                          mmdit::ForwardStats* stats = nullptr) {
    const codec::Latent z = codec::encode(sample.target_image);
    codec::Latent v_lat = codec::encode(sample.input_image);
    codec::LatentMask m_lat = codec::resize_mask(sample.input_mask, cfg.latent_h, cfg.latent_w);
    if (noise.drop_visual) {
        std::fill(v_lat.v.begin(), v_lat.v.end(), 0.0f);
        std::fill(m_lat.v.begin(), m_lat.v.end(), 0.0f);
    }
    codec::Latent eps(cfg.latent_h, cfg.latent_w, cfg.c_lat);
    eps.v.assign(noise.eps.begin(), noise.eps.end());
    const codec::Latent z_t = flow::interpolate(z, eps, noise.t);
    const codec::Latent d = mmdit::assemble_input(z_t, v_lat, m_lat);
    const mmdit::VelocityField u = flow::target_velocity(z, eps);

    nn::Tape<float> tp(grads != nullptr);
    mmdit::ParamCtx<float> P(tp, params, grads);
    text::PromptBuild<float> prompt;
    if (noise.drop_text) {
        prompt = text::null_prompt(tp, P, cfg.l_max);
    } else {
        prompt = text::embed(tp, P, text::tokenize(sample.prompt, cfg.l_max));
        if (sample.external) {
            std::vector<float> crop = sample.external->v;
            const nn::Var feats = text::encode_identity(tp, P, crop, cfg.n_placeholder, cfg.d_model);
            prompt = text::inject_external(tp, prompt, feats);
        }
    }
    const nn::Var field = mmdit::forward_field(tp, P, cfg, prompt, noise.t, d.v, stats);
    const nn::Var loss = tp.mse_loss(field, u.v.data());
    const double loss_val = static_cast<double>(tp.data(loss)[0]);
    if (!std::isfinite(loss_val)) throw NumericError("non-finite training loss");
    if (grads) tp.backward(loss);
    return loss_val;
}

// ---- one optimizer step -----------------------------------------------------------

struct StepMetrics {
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    long step = 0;
    int text_dropped = 0;
    int visual_dropped = 0;
    double max_activation = 0.0;
};

// scratch shared across steps so the big buffers are allocated once
struct TrainScratch {
    std::vector<AVec<float>> worker_grads;
    AVec<float> grads;

    void ensure(size_t n_params, int workers) {
        if (grads.size() != n_params) grads.assign(n_params, 0.0f);
        worker_grads.resize(static_cast<size_t>(workers));
        for (auto& g : worker_grads)
            if (g.size() != n_params) g.assign(n_params, 0.0f);
    }
};

inline StepMetrics train_step(TrainState& st, const std::vector<world::TaskSample>& batch,
                              const StageSpec& stage, const OptimizerConfig& opt, TrainScratch& scratch,
                              const DropoutConfig& dropout = {}) {
    const int n = static_cast<int>(batch.size());
    if (n == 0) throw ConfigError("train_step: empty batch");
    const int workers = std::min(thread_count(), n);
    scratch.ensure(st.params.size(), workers);

    // all randomness drawn up front on the state RNG, in sample order
    std::vector<SampleNoise> noise;
    noise.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) noise.push_back(draw_noise(st.cfg, dropout, st.rng));

    std::vector<double> losses(static_cast<size_t>(n), 0.0);
    std::vector<mmdit::ForwardStats> stats(static_cast<size_t>(workers));
    for (auto& g : scratch.worker_grads) std::fill(g.begin(), g.end(), 0.0f);
    parallel_for(
        n,
        [&](int i) {
            const int w = i % workers;
            losses[static_cast<size_t>(i)] = sample_loss(st.params, st.cfg, batch[static_cast<size_t>(i)],
                                                         noise[static_cast<size_t>(i)],
                                                         scratch.worker_grads[static_cast<size_t>(w)].data(),
                                                         &stats[static_cast<size_t>(w)]);
        },
        workers);

    // deterministic reduction: worker order, scaled by 1/batch
    const float inv_n = 1.0f / static_cast<float>(n);
    std::fill(scratch.grads.begin(), scratch.grads.end(), 0.0f);
    for (int w = 0; w < workers; ++w) {
        const float* g = scratch.worker_grads[static_cast<size_t>(w)].data();
        float* dst = scratch.grads.data();
        for (size_t k = 0; k < scratch.grads.size(); ++k) dst[k] += g[k];
    }
    for (auto& g : scratch.grads) g *= inv_n;

    StepMetrics met;
    for (int i = 0; i < n; ++i) met.loss += losses[static_cast<size_t>(i)];
    met.loss /= n;
    for (int i = 0; i < n; ++i) {
        met.text_dropped += noise[static_cast<size_t>(i)].drop_text ? 1 : 0;
        met.visual_dropped += noise[static_cast<size_t>(i)].drop_visual ? 1 : 0;
    }
    for (const auto& s : stats) met.max_activation = std::max(met.max_activation, s.max_abs);

    // global-norm clip
    double norm2 = 0.0;
    for (float g : scratch.grads) norm2 += static_cast<double>(g) * g;
    met.grad_norm = std::sqrt(norm2);
    if (!std::isfinite(met.grad_norm)) throw NumericError("non-finite gradient norm");
    const float scale = met.grad_norm > opt.clip_norm
                            ? static_cast<float>(opt.clip_norm / met.grad_norm)
                            : 1.0f;

    // AdamW with decoupled weight decay; the external encoder stays frozen
    // until the stage enables it
    st.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.step));
    const float lr = static_cast<float>(stage.lr);
    for (const auto& e : st.params.entries) {
        const bool frozen = !stage.trains_external_encoder && e.name.rfind("ext.", 0) == 0;
        if (frozen) continue;
        const size_t begin = e.offset, end = e.offset + static_cast<size_t>(e.r) * e.c;
        for (size_t k = begin; k < end; ++k) {
            const float g = scratch.grads[k] * scale;
            st.m[k] = static_cast<float>(opt.beta1) * st.m[k] + (1.0f - static_cast<float>(opt.beta1)) * g;
            st.v[k] = static_cast<float>(opt.beta2) * st.v[k] + (1.0f - static_cast<float>(opt.beta2)) * g * g;
            const double mhat = st.m[k] / bc1;
            const double vhat = st.v[k] / bc2;
            const double update = mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * st.params.w[k];
            st.params.w[k] -= static_cast<float>(lr * update);
        }
    }
    met.lr = stage.lr;
    met.step = st.step;
    return met;
}

// ---- stage runner -----------------------------------------------------------------

struct StageRunConfig {
    std::filesystem::path out_dir;      // checkpoints land here
    long checkpoint_every = 500;
    bool force = false;                 // bypass stage-order enforcement
    OptimizerConfig optimizer;
    DropoutConfig dropout;
    std::function<void(const StepMetrics&)> on_metrics;  // optional observer
};

inline void append_metrics_csv(const std::filesystem::path& path, const std::string& stage,
                               const StepMetrics& m, double wallclock_sec) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream f(path, std::ios::app);
    if (!f) throw ConfigError("cannot append metrics: " + path.string());
    if (fresh) f << "step,stage,loss,grad_norm,lr,wallclock\n";
    f << m.step << "," << stage << "," << std::setprecision(10) << m.loss << "," << m.grad_norm << ","
      << m.lr << "," << wallclock_sec << "\n";
}

inline void enforce_stage_order(const TrainState& st, const StageSpec& stage, bool force) {
    if (stage.name == "III" && !stage.trains_external_encoder)
        throw ConfigError("stage III requires trains_external_encoder=true");
    if (force) return;
    if (st.stage_in_progress == stage.name) return;  // resuming
    const std::string required = stage.name == "I" ? "" : (stage.name == "II" ? "I" : "II");
    if (st.stage_done != required)
        throw ConfigError("stage " + stage.name + " requires completed stage '" + required +
                          "' (have '" + st.stage_done + "'); use --force to override");
}

inline TrainState run_stage(const StageSpec& stage, TrainState st, const StageRunConfig& run) {
    enforce_stage_order(st, stage, run.force);
    if (st.stage_in_progress != stage.name) {
        st.stage_in_progress = stage.name;
        st.stage_step = 0;
    }
    namespace fs = std::filesystem;
    fs::create_directories(run.out_dir);
    const fs::path metrics_path = run.out_dir / "metrics.csv";
    const fs::path latest = run.out_dir / "latest";
    TrainScratch scratch;
    const auto t0 = std::chrono::steady_clock::now();
    while (st.stage_step < stage.steps) {
        const auto batch = sample_batch(stage.mixture, stage.batch, st.rng);
        StepMetrics met;
        try {
            met = train_step(st, batch, stage, run.optimizer, scratch, run.dropout);
        } catch (const NumericError&) {
            save_train_state(run.out_dir / "abort", st);  // state dump for postmortem
            throw;
        }
        st.stage_step += 1;
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        append_metrics_csv(metrics_path, stage.name, met, wall);
        if (run.on_metrics) run.on_metrics(met);
        if (run.checkpoint_every > 0 && st.stage_step % run.checkpoint_every == 0)
            save_train_state(latest, st);
    }
    st.stage_done = stage.name;
    st.stage_in_progress.clear();
    st.stage_step = 0;
    save_train_state(latest, st);
    return st;
}

// ---- float64 gradient check ---------------------------------------------------------

// Central differences (step 1e-5) on n_weights weights drawn across all named
// parameter groups; returns the max relative error. Runs the full sample loss
// pipeline in double precision.
inline double grad_check(const mmdit::ModelConfig& cfg, const world::TaskSample& sample, int n_weights,
                         uint64_t seed) {
    auto ps = mmdit::build_param_store<double>(cfg);
    mmdit::init_params(ps, seed);
    {
        Rng rng(seed ^ 0xABCDEF);
        for (const auto& e : ps.entries) {
            if (!e.zero_init) continue;
            double* p = ps.ptr(e);
            for (size_t i = 0; i < static_cast<size_t>(e.r) * e.c; ++i) p[i] = rng.gaussian() * 0.05;
        }
    }
    // sample constants in double
    const codec::Latent zf = codec::encode(sample.target_image);
    const codec::Latent vf = codec::encode(sample.input_image);
    const codec::LatentMask mf = codec::resize_mask(sample.input_mask, cfg.latent_h, cfg.latent_w);
    Rng rng(seed ^ 0x5555);
    std::vector<double> eps(static_cast<size_t>(cfg.field_size()));
    for (auto& e : eps) e = rng.gaussian();
    const double t = 0.31;
    std::vector<double> z(zf.v.begin(), zf.v.end());
    const std::vector<double> z_t = flow::interpolate_vec(z, eps, t);
    const std::vector<double> u = flow::target_velocity_vec(z, eps);
    std::vector<double> cond(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_in());
    {
        size_t a = 0;
        for (int y = 0; y < cfg.latent_h; ++y)
            for (int x = 0; x < cfg.latent_w; ++x) {
                const size_t base = (static_cast<size_t>(y) * cfg.latent_w + x) * cfg.c_lat;
                for (int c = 0; c < cfg.c_lat; ++c) cond[a++] = z_t[base + c];
                for (int c = 0; c < cfg.c_lat; ++c) cond[a++] = vf.v[base + c];
                cond[a++] = mf.v[static_cast<size_t>(y) * cfg.latent_w + x];
            }
    }
    std::vector<double> crop;
    if (sample.external) crop.assign(sample.external->v.begin(), sample.external->v.end());

    const auto loss_of = [&](double* grads) {
        nn::Tape<double> tp(grads != nullptr);
        mmdit::ParamCtx<double> P(tp, ps, grads);
        auto prompt = text::embed(tp, P, text::tokenize(sample.prompt, cfg.l_max));
        if (sample.external) {
            const nn::Var feats = text::encode_identity(tp, P, crop, cfg.n_placeholder, cfg.d_model);
            prompt = text::inject_external(tp, prompt, feats);
        }
        const nn::Var field = mmdit::forward_field(tp, P, cfg, prompt, t, cond);
        const nn::Var loss = tp.mse_loss(field, u.data());
        const double val = tp.data(loss)[0];
        if (grads) tp.backward(loss);
        return val;
    };

    std::vector<double> grads(ps.size(), 0.0);
    loss_of(grads.data());

    // probes: one weight inside every parameter-group family first, then
    // uniformly over the remaining entries
    std::vector<size_t> probe_entries;
    {
        const std::vector<std::string> families = {
            "tok_emb",      "pos_text",          "pos_latent",    "patch_proj.w", "time.fc1.w",
            "L0.txt.qkv.w", "L0.lat.attn_out.w", "L0.txt.mod.w",  "L0.lat.mlp1.w", "final.mod.w",
            "head.w",       "ext.fc1.w",         "ext.fc2.w"};
        for (const auto& name : families)
            probe_entries.push_back(static_cast<size_t>(ps.index.at(name)));
    }
    Rng pick(seed ^ 0x777);
    while (static_cast<int>(probe_entries.size()) < n_weights)
        probe_entries.push_back(pick.uniform_int(ps.entries.size()));
    probe_entries.resize(static_cast<size_t>(std::max<int>(n_weights, 13)));
    double worst = 0.0;
    const double h = 1e-5;
    const auto& voc = text::vocabulary();
    for (size_t k = 0; k < probe_entries.size(); ++k) {
        const auto& e = ps.entries[probe_entries[k]];
        size_t off = e.offset + pick.uniform_int(static_cast<uint64_t>(e.r) * e.c);
        if (e.name == "tok_emb") {
            // probe a row the prompt actually uses
            const text::TokenSequence ids = text::tokenize(sample.prompt, cfg.l_max);
            const int id = ids.ids[pick.uniform_int(static_cast<uint64_t>(ids.content_length(voc.pad_id())))];
            off = e.offset + static_cast<size_t>(id) * e.c + pick.uniform_int(static_cast<uint64_t>(e.c));
        }
        const double keep = ps.w[off];
        ps.w[off] = keep + h;
        const double fp = loss_of(nullptr);
        ps.w[off] = keep - h;
        const double fm = loss_of(nullptr);
        ps.w[off] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        // relative error with an absolute floor: below ~1e-5 the central
        // difference itself is dominated by truncation noise
        const double rel = std::abs(fd - grads[off]) / std::max({1e-5, std::abs(fd), std::abs(grads[off])});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace unidiff::train
