#pragma once

// Evaluation suites over exact programmatic verifiers, the multi-task
// ablation runner, the efficiency benchmark (channel vs. sequence
// concatenation), and the scaling sweep.
//
// Determinism: every generated image gets its own RNG seeded from (seed,
// index); aggregation runs in index order, so reports are identical for a
// given (checkpoint, seed, n) at any thread count.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "unidiff/flow.hpp"
#include "unidiff/train.hpp"

namespace unidiff::eval {

struct EvalReport {
    double single_object = 0.0;  // full per-object pass on single-object scenes
    double color = 0.0;          // color binding on single-object scenes
    double two_object = 0.0;     // both shapes present on relational scenes
    double counting = 0.0;       // exact count on counting scenes
    double position = 0.0;       // relation correct on relational scenes
    double edit_success = 0.0;
    double preservation_rmse = 0.0;
    double id_correlation = 0.0;
    int sample_count = 0;
    uint64_t seed = 0;
    double max_activation = 0.0;  // divergence tripwire over all forwards
};

struct EvalOptions {
    int steps = 50;
    flow::GuidanceScales scales;
    bool oracle_mode = false;  // score the oracle targets instead of sampling
    world::VerifyThresholds thresholds;
    std::string dump_dir;  // when set, write a PPM per generated image
};

namespace detail {

// generate the model output for a task sample (or its oracle under oracle_mode)
inline ImageTensor generate_for(const mmdit::ParamStore<float>& store, const mmdit::ModelConfig& cfg,
                                const world::TaskSample& sample, uint64_t seed, const EvalOptions& opt,
                                mmdit::ForwardStats* stats) {
    if (opt.oracle_mode) return sample.target_image;
    flow::SampleSpec spec;
    const text::TokenSequence prompt = text::tokenize(sample.prompt, cfg.l_max);
    spec.prompt = &prompt;
    if (sample.external) spec.external_crop = &*sample.external;
    spec.v = codec::encode(sample.input_image);
    spec.mask = codec::resize_mask(sample.input_mask, cfg.latent_h, cfg.latent_w);
    spec.steps = opt.steps;
    spec.seed = seed;
    spec.scales = opt.scales;
    ImageTensor img = flow::sample(store, cfg, spec, stats);
    for (auto& v : img.v) v = std::clamp(v, -1.0f, 1.0f);
    return img;
}

inline void maybe_dump(const EvalOptions& opt, const char* tag, uint64_t seed, const ImageTensor& img,
                       const ImageTensor& target) {
    if (opt.dump_dir.empty()) return;
    std::filesystem::create_directories(opt.dump_dir);
    char name[128];
    std::snprintf(name, sizeof(name), "%s/%s_%016llx_gen.ppm", opt.dump_dir.c_str(), tag,
                  static_cast<unsigned long long>(seed));
    write_ppm(name, img);
    std::snprintf(name, sizeof(name), "%s/%s_%016llx_ref.ppm", opt.dump_dir.c_str(), tag,
                  static_cast<unsigned long long>(seed));
    write_ppm(name, target);
}

}  // namespace detail

// ---- compositional suite ------------------------------------------------------------

inline EvalReport eval_compositional(const mmdit::ParamStore<float>& store, const mmdit::ModelConfig& cfg,
                                     int n, uint64_t seed, const EvalOptions& opt = {}) {
    EvalReport rep;
    rep.sample_count = n;
    rep.seed = seed;
    if (n == 0) return rep;
    mmdit::ForwardStats stats;

    const auto run_category = [&](uint64_t salt, const auto& make_scene, const auto& accumulate) {
        std::vector<uint64_t> seeds(static_cast<size_t>(n));
        Rng seeder(seed ^ salt);
        for (auto& s : seeds) s = seeder.fork_seed();
        std::vector<world::TaskSample> samples;
        for (int i = 0; i < n; ++i) {
            Rng rng(seeds[static_cast<size_t>(i)]);
            samples.push_back(world::make_t2i(make_scene(rng)));
        }
        std::vector<world::VerificationReport> reports(static_cast<size_t>(n));
        std::vector<mmdit::ForwardStats> wstats(static_cast<size_t>(n));
        parallel_for(n, [&](int i) {
            const ImageTensor img = detail::generate_for(store, cfg, samples[static_cast<size_t>(i)],
                                                         seeds[static_cast<size_t>(i)], opt,
                                                         &wstats[static_cast<size_t>(i)]);
            reports[static_cast<size_t>(i)] =
                world::verify(samples[static_cast<size_t>(i)], img, opt.thresholds);
            detail::maybe_dump(opt, "comp", seeds[static_cast<size_t>(i)], img,
                               samples[static_cast<size_t>(i)].target_image);
        });
        for (int i = 0; i < n; ++i) {
            accumulate(reports[static_cast<size_t>(i)]);
            stats.max_abs = std::max(stats.max_abs, wstats[static_cast<size_t>(i)].max_abs);
        }
    };

    int single_pass = 0, color_pass = 0, two_pass = 0, count_pass = 0, pos_pass = 0;
    run_category(0x51, world::sample_scene_single, [&](const world::VerificationReport& r) {
        single_pass += r.passed ? 1 : 0;
        color_pass += r.color_ok ? 1 : 0;
    });
    run_category(0x52, world::sample_scene_pair, [&](const world::VerificationReport& r) {
        two_pass += r.presence_ok ? 1 : 0;
        pos_pass += r.position_ok ? 1 : 0;
    });
    run_category(0x53, world::sample_scene_counting,
                 [&](const world::VerificationReport& r) { count_pass += r.count_ok ? 1 : 0; });

    rep.single_object = static_cast<double>(single_pass) / n;
    rep.color = static_cast<double>(color_pass) / n;
    rep.two_object = static_cast<double>(two_pass) / n;
    rep.position = static_cast<double>(pos_pass) / n;
    rep.counting = static_cast<double>(count_pass) / n;
    rep.max_activation = stats.max_abs;
    return rep;
}

// ---- editing suite --------------------------------------------------------------------

inline EvalReport eval_editing(const mmdit::ParamStore<float>& store, const mmdit::ModelConfig& cfg, int n,
                               uint64_t seed, const EvalOptions& opt = {}) {
    EvalReport rep;
    rep.sample_count = n;
    rep.seed = seed;
    if (n == 0) return rep;
    std::vector<uint64_t> seeds(static_cast<size_t>(n));
    Rng seeder(seed ^ 0xED17);
    for (auto& s : seeds) s = seeder.fork_seed();
    std::vector<world::TaskSample> samples;
    for (int i = 0; i < n; ++i) {
        Rng rng(seeds[static_cast<size_t>(i)]);
        samples.push_back(world::sample_task(world::TaskKind::Edit, rng));
    }
    std::vector<world::VerificationReport> reports(static_cast<size_t>(n));
    std::vector<mmdit::ForwardStats> wstats(static_cast<size_t>(n));
    parallel_for(n, [&](int i) {
        const ImageTensor img = detail::generate_for(store, cfg, samples[static_cast<size_t>(i)],
                                                     seeds[static_cast<size_t>(i)], opt,
                                                     &wstats[static_cast<size_t>(i)]);
        reports[static_cast<size_t>(i)] = world::verify(samples[static_cast<size_t>(i)], img, opt.thresholds);
        detail::maybe_dump(opt, "edit", seeds[static_cast<size_t>(i)], img,
                           samples[static_cast<size_t>(i)].target_image);
    });
    int success = 0;
    double rmse = 0.0;
    for (int i = 0; i < n; ++i) {
        success += reports[static_cast<size_t>(i)].instruction_ok ? 1 : 0;
        rmse += reports[static_cast<size_t>(i)].preservation_rmse;
        rep.max_activation = std::max(rep.max_activation, wstats[static_cast<size_t>(i)].max_abs);
    }
    rep.edit_success = static_cast<double>(success) / n;
    rep.preservation_rmse = rmse / n;
    return rep;
}

// ---- identity suite --------------------------------------------------------------------

inline EvalReport eval_id(const mmdit::ParamStore<float>& store, const mmdit::ModelConfig& cfg, int n,
                          uint64_t seed, const EvalOptions& opt = {}) {
    EvalReport rep;
    rep.sample_count = n;
    rep.seed = seed;
    if (n == 0) return rep;
    std::vector<uint64_t> seeds(static_cast<size_t>(n));
    Rng seeder(seed ^ 0x1D);
    for (auto& s : seeds) s = seeder.fork_seed();
    std::vector<world::TaskSample> samples;
    for (int i = 0; i < n; ++i) {
        Rng rng(seeds[static_cast<size_t>(i)]);
        samples.push_back(world::sample_task(world::TaskKind::Id, rng));
    }
    std::vector<double> corr(static_cast<size_t>(n), 0.0);
    std::vector<mmdit::ForwardStats> wstats(static_cast<size_t>(n));
    parallel_for(n, [&](int i) {
        const ImageTensor img = detail::generate_for(store, cfg, samples[static_cast<size_t>(i)],
                                                     seeds[static_cast<size_t>(i)], opt,
                                                     &wstats[static_cast<size_t>(i)]);
        corr[static_cast<size_t>(i)] =
            world::glyph_max_ncc(img, world::glyph_library()[static_cast<size_t>(
                                          samples[static_cast<size_t>(i)].glyph_id)]);
        detail::maybe_dump(opt, "id", seeds[static_cast<size_t>(i)], img,
                           samples[static_cast<size_t>(i)].target_image);
    });
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        mean += corr[static_cast<size_t>(i)];
        rep.max_activation = std::max(rep.max_activation, wstats[static_cast<size_t>(i)].max_abs);
    }
    rep.id_correlation = mean / n;
    return rep;
}

// ---- pixel-task suite (depth / pose / seg) ------------------------------------------------

// mean per-pixel agreement against the oracle visualization
inline double eval_pixel_agreement(const mmdit::ParamStore<float>& store, const mmdit::ModelConfig& cfg,
                                   world::TaskKind kind, int n, uint64_t seed, const EvalOptions& opt = {}) {
    if (n == 0) return 0.0;
    std::vector<uint64_t> seeds(static_cast<size_t>(n));
    Rng seeder(seed ^ 0xA9);
    for (auto& s : seeds) s = seeder.fork_seed();
    std::vector<world::TaskSample> samples;
    for (int i = 0; i < n; ++i) {
        Rng rng(seeds[static_cast<size_t>(i)]);
        samples.push_back(world::sample_task(kind, rng));
    }
    std::vector<double> agreement(static_cast<size_t>(n), 0.0);
    parallel_for(n, [&](int i) {
        const ImageTensor img = detail::generate_for(store, cfg, samples[static_cast<size_t>(i)],
                                                     seeds[static_cast<size_t>(i)], opt, nullptr);
        agreement[static_cast<size_t>(i)] =
            world::verify(samples[static_cast<size_t>(i)], img, opt.thresholds).pixel_agreement;
    });
    double mean = 0.0;
    for (double a : agreement) mean += a;
    return mean / n;
}

// ---- report I/O -----------------------------------------------------------------------

inline constexpr const char* kEvalCsvHeader =
    "suite,n,seed,single_object,color,two_object,counting,position,edit_success,preservation_rmse,id_"
    "correlation";

inline void append_eval_csv(const std::filesystem::path& path, const std::string& suite,
                            const EvalReport& r) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream f(path, std::ios::app);
    if (!f) throw ConfigError("cannot write eval report: " + path.string());
    if (fresh) f << kEvalCsvHeader << "\n";
    f << suite << "," << r.sample_count << "," << r.seed << "," << r.single_object << "," << r.color << ","
      << r.two_object << "," << r.counting << "," << r.position << "," << r.edit_success << ","
      << r.preservation_rmse << "," << r.id_correlation << "\n";
}

inline std::string format_eval_table(const std::string& suite, const EvalReport& r) {
    std::ostringstream os;
    os << "suite: " << suite << " (n=" << r.sample_count << ", seed=" << r.seed << ")\n";
    const auto row = [&](const char* k, double v) {
        os << "  " << std::left << std::setw(20) << k << std::fixed << std::setprecision(4) << v << "\n";
    };
    row("single_object", r.single_object);
    row("color", r.color);
    row("two_object", r.two_object);
    row("counting", r.counting);
    row("position", r.position);
    row("edit_success", r.edit_success);
    row("preservation_rmse", r.preservation_rmse);
    row("id_correlation", r.id_correlation);
    return os.str();
}

// ---- efficiency benchmark ----------------------------------------------------------------

struct BenchRow {
    world::TaskKind task;
    mmdit::ConcatMode mode;
    int tokens = 0;
    double attention_flops = 0.0;
    double median_forward_sec = 0.0;
};

// forward wall time per (task, mode) under identical kernels; single-threaded
inline std::vector<BenchRow> bench_efficiency(const std::string& size_tag,
                                              const std::vector<world::TaskKind>& tasks,
                                              const std::vector<mmdit::ConcatMode>& modes, int reps,
                                              uint64_t seed = 7) {
    std::vector<BenchRow> out;
    for (const mmdit::ConcatMode mode : modes) {
        mmdit::ModelConfig cfg = mmdit::ladder_config(size_tag);
        cfg.mode = mode;
        auto store = mmdit::build_param_store<float>(cfg);
        mmdit::init_params(store, seed);
        Rng rng(seed);
        const codec::Latent z_t = flow::gaussian_latent(cfg.latent_h, cfg.latent_w, cfg.c_lat, rng);
        const codec::Latent v = flow::gaussian_latent(cfg.latent_h, cfg.latent_w, cfg.c_lat, rng);
        codec::LatentMask m(cfg.latent_h, cfg.latent_w, 1.0f);
        const text::TokenSequence prompt = text::tokenize("<t2i> a red circle", cfg.l_max);
        for (const world::TaskKind task : tasks) {
            mmdit::ConditionSet cond;
            cond.prompt = &prompt;
            cond.z_t = &z_t;
            if (mmdit::task_has_visual_input(task)) {
                cond.v = &v;
                cond.mask = &m;
            }
            BenchRow row;
            row.task = task;
            row.mode = mode;
            row.tokens = mmdit::count_tokens(task, cfg, mode);
            row.attention_flops = mmdit::attention_flops(cfg, row.tokens);
            std::vector<double> times;
            times.reserve(static_cast<size_t>(reps));
            mmdit::predict_velocity(store, cfg, cond, 0.5f);  // warmup
            for (int r = 0; r < reps; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                mmdit::predict_velocity(store, cfg, cond, 0.5f);
                times.push_back(
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            }
            std::sort(times.begin(), times.end());
            row.median_forward_sec = times[times.size() / 2];
            out.push_back(row);
        }
    }
    return out;
}

inline void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write bench report: " + path.string());
    f << "task,mode,tokens,attention_flops,median_forward_sec\n";
    for (const auto& r : rows)
        f << world::task_kind_name(r.task) << "," << mmdit::concat_mode_name(r.mode) << "," << r.tokens
          << "," << r.attention_flops << "," << r.median_forward_sec << "\n";
}

// ---- ablation runner -------------------------------------------------------------------

struct AblationPlan {
    std::string size_tag = "micro-B";
    long steps = 1000;        // main multi-task phase per row
    long id_steps = 100;      // extra 1:1 identity phase for rows with the id task
    int batch = 8;
    double lr = 1e-4;
    double id_lr = 2e-5;
    int eval_n = 30;
    int eval_steps = 25;
    uint64_t seed = 1234;
    bool include_row_c = false;  // optional row (c): id without auxiliary tasks
};

struct AblationRow {
    std::string name;
    EvalReport compositional;
    EvalReport editing;
    EvalReport id;
};

// the task-set rows: (a) generation only, (b) +editing, (c) optional
// +identity without auxiliaries, (d) +auxiliaries, (e) everything
inline std::vector<std::pair<std::string, std::vector<int>>> ablation_rows(bool include_c) {
    // encoded as: 0 = generation block, 1 = editing, 2 = auxiliary+layout, 3 = id
    std::vector<std::pair<std::string, std::vector<int>>> rows = {
        {"a", {0}}, {"b", {0, 1}}, {"d", {0, 1, 2}}, {"e", {0, 1, 2, 3}}};
    if (include_c) rows.insert(rows.begin() + 2, {"c", {0, 1, 3}});
    return rows;
}

inline train::MixtureSpec ablation_mixture(const std::vector<int>& blocks) {
    using world::TaskKind;
    std::vector<std::pair<TaskKind, double>> parts;
    for (int b : blocks) {
        if (b == 0) {
            parts.push_back({TaskKind::T2I, 0.28});
            parts.push_back({TaskKind::Inpaint, 0.10});
            parts.push_back({TaskKind::Outpaint, 0.10});
        } else if (b == 1) {
            parts.push_back({TaskKind::Edit, 0.47});
        } else if (b == 2) {
            parts.push_back({TaskKind::Depth, 0.01});
            parts.push_back({TaskKind::Pose, 0.01});
            parts.push_back({TaskKind::Seg, 0.01});
            parts.push_back({TaskKind::Layout, 0.02});
        }
    }
    train::MixtureSpec m;
    double sum = 0;
    for (const auto& [k, r] : parts) sum += r;
    for (const auto& [k, r] : parts) m.ratio[static_cast<size_t>(static_cast<int>(k))] = r / sum;
    return m;
}

template <typename ProgressFn>
std::vector<AblationRow> run_ablation(const AblationPlan& plan, const ProgressFn& progress) {
    std::vector<AblationRow> table;
    for (const auto& [name, blocks] : ablation_rows(plan.include_row_c)) {
        const bool has_id = std::find(blocks.begin(), blocks.end(), 3) != blocks.end();
        const mmdit::ModelConfig cfg = mmdit::ladder_config(plan.size_tag);
        train::TrainState st = train::TrainState::fresh(cfg, plan.seed);  // shared seed across rows
        train::StageSpec stage;
        stage.name = "II";
        stage.mixture = ablation_mixture(blocks);
        stage.lr = plan.lr;
        stage.steps = plan.steps;
        stage.batch = plan.batch;
        train::TrainScratch scratch;
        train::OptimizerConfig opt;
        train::DropoutConfig dropout;
        for (long s = 0; s < plan.steps; ++s) {
            const auto batch = train::sample_batch(stage.mixture, stage.batch, st.rng);
            const auto met = train::train_step(st, batch, stage, opt, scratch, dropout);
            progress(name, s, met);
        }
        if (has_id) {
            train::StageSpec id_stage;
            id_stage.name = "III";
            id_stage.mixture = train::MixtureSpec::with_id_half(stage.mixture);
            id_stage.lr = plan.id_lr;
            id_stage.steps = plan.id_steps;
            id_stage.batch = plan.batch;
            id_stage.trains_external_encoder = true;
            for (long s = 0; s < plan.id_steps; ++s) {
                const auto batch = train::sample_batch(id_stage.mixture, id_stage.batch, st.rng);
                const auto met = train::train_step(st, batch, id_stage, opt, scratch, dropout);
                progress(name, plan.steps + s, met);
            }
        }
        AblationRow row;
        row.name = name;
        {
            EvalOptions o;
            o.steps = plan.eval_steps;
            row.compositional = eval_compositional(st.params, cfg, plan.eval_n, plan.seed ^ 0xE1, o);
        }
        const bool has_edit = std::find(blocks.begin(), blocks.end(), 1) != blocks.end();
        if (has_edit) {
            EvalOptions o;
            o.steps = plan.eval_steps;
            row.editing = eval_editing(st.params, cfg, plan.eval_n, plan.seed ^ 0xE2, o);
        }
        if (has_id) {
            EvalOptions o;
            o.steps = plan.eval_steps;
            row.id = eval_id(st.params, cfg, plan.eval_n, plan.seed ^ 0xE3, o);
        }
        table.push_back(row);
    }
    return table;
}

// ---- scaling sweep --------------------------------------------------------------------

struct ScalingRow {
    std::string size_tag;
    size_t param_count = 0;
    EvalReport compositional;
    EvalReport editing;
};

// identical recipe per size; param counts are exact
template <typename ProgressFn>
std::vector<ScalingRow> run_scaling(const std::vector<std::string>& sizes, long steps, int batch,
                                    double lr, int eval_n, int eval_steps, uint64_t seed,
                                    const ProgressFn& progress) {
    std::vector<ScalingRow> out;
    for (const auto& tag : sizes) {
        const mmdit::ModelConfig cfg = mmdit::ladder_config(tag);
        train::TrainState st = train::TrainState::fresh(cfg, seed);
        train::StageSpec stage;
        stage.name = "II";
        stage.mixture = train::MixtureSpec::multi_task();
        stage.lr = lr;
        stage.steps = steps;
        stage.batch = batch;
        train::TrainScratch scratch;
        train::OptimizerConfig opt;
        for (long s = 0; s < steps; ++s) {
            const auto b = train::sample_batch(stage.mixture, stage.batch, st.rng);
            progress(tag, s, train::train_step(st, b, stage, opt, scratch));
        }
        ScalingRow row;
        row.size_tag = tag;
        row.param_count = st.params.size();
        EvalOptions o;
        o.steps = eval_steps;
        row.compositional = eval_compositional(st.params, cfg, eval_n, seed ^ 0x5C, o);
        row.editing = eval_editing(st.params, cfg, eval_n, seed ^ 0x5D, o);
        out.push_back(row);
    }
    return out;
}

}  // namespace unidiff::eval
