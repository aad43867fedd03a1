// unidiff: data generation, staged training, sampling, evaluation, and
// benchmarking for the unified shapes-world diffusion model.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime numeric failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "unidiff/eval.hpp"
#include "unidiff/flow.hpp"
#include "unidiff/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unidiff;

namespace {

struct CommonArgs {
    std::string out = "out";
    uint64_t seed = 0;
};

RunManifest begin_manifest(const std::string& command, const KvConfig& snapshot, uint64_t seed) {
    RunManifest m;
    m.command = command;
    m.config_snapshot = snapshot.dump();
    m.seed = seed;
    m.started_utc = RunManifest::now_utc();
    return m;
}

json scene_to_json(const world::SceneSpec& scene) {
    json arr = json::array();
    for (const auto& o : scene.objects)
        arr.push_back({{"shape", world::shape_word(o.shape)},
                       {"color", world::color_word(o.color)},
                       {"row", o.row},
                       {"col", o.col},
                       {"large", o.large}});
    return arr;
}

// ---- gen-data ----------------------------------------------------------------

int cmd_gen_data(const CommonArgs& common, int n_per_task, const std::string& kinds_csv) {
    std::vector<world::TaskKind> kinds;
    if (kinds_csv.empty()) {
        for (int k = 0; k < world::kNumTaskKinds; ++k) kinds.push_back(static_cast<world::TaskKind>(k));
    } else {
        std::stringstream ss(kinds_csv);
        std::string item;
        while (std::getline(ss, item, ',')) kinds.push_back(world::task_kind_from_name(item));
    }
    KvConfig snap;
    snap.set("gen.n_per_task", std::to_string(n_per_task));
    snap.set("gen.kinds", kinds_csv.empty() ? "all" : kinds_csv);
    snap.set("gen.out", common.out);
    snap.set("gen.seed", std::to_string(common.seed));
    RunManifest man = begin_manifest("gen-data", snap, common.seed);

    const fs::path root(common.out);
    fs::create_directories(root / "data");
    std::ofstream manifest(root / "data" / "manifest.jsonl");
    if (!manifest) throw ConfigError("cannot write to " + (root / "data").string());
    Rng rng(common.seed);
    for (const world::TaskKind kind : kinds) {
        for (int i = 0; i < n_per_task; ++i) {
            const world::TaskSample s = world::sample_task(kind, rng);
            char base[64];
            std::snprintf(base, sizeof(base), "%s_%05d", world::task_kind_name(kind), i);
            const std::string stem = (root / "data" / base).string();
            write_ppm(stem + "_input.ppm", s.input_image);
            write_pgm(stem + "_mask.pgm", s.input_mask);
            write_ppm(stem + "_target.ppm", s.target_image);
            json rec = {{"kind", world::task_kind_name(kind)},
                        {"prompt", s.prompt},
                        {"scene", scene_to_json(s.scene)},
                        {"input", std::string(base) + "_input.ppm"},
                        {"mask", std::string(base) + "_mask.pgm"},
                        {"target", std::string(base) + "_target.ppm"}};
            if (s.external) {
                write_ppm(stem + "_ext.ppm", *s.external);
                rec["external"] = std::string(base) + "_ext.ppm";
                rec["glyph_id"] = s.glyph_id;
            }
            if (s.kind == world::TaskKind::Edit) rec["pre_scene"] = scene_to_json(s.pre_scene);
            manifest << rec.dump() << "\n";
        }
    }
    man.outputs.push_back((root / "data").string());
    man.finished_utc = RunManifest::now_utc();
    man.write(root);
    return 0;
}

// ---- train ----------------------------------------------------------------------

mmdit::ModelConfig model_config_from(const KvConfig& kv) {
    if (kv.has("model.size_tag") && !kv.has("model.d_model")) {
        mmdit::ModelConfig cfg = mmdit::ladder_config(kv.get("model.size_tag"));
        return cfg;
    }
    return mmdit::config_from_kv(kv);
}

train::StageSpec stage_from_config(const std::string& name, const KvConfig& kv) {
    train::StageSpec st = train::StageSpec::stage(name);
    st.lr = kv.get_real_or("train.lr." + name, st.lr);
    st.steps = kv.get_int_or("train.steps." + name, st.steps);
    st.batch = static_cast<int>(kv.get_int_or("train.batch", st.batch));
    return st;
}

int cmd_train(const CommonArgs& common, const std::string& config_path, const std::string& stage_name,
              const std::string& resume, bool force) {
    KvConfig kv = config_path.empty() ? KvConfig() : KvConfig::from_file(config_path);
    const uint64_t seed = common.seed ? common.seed : static_cast<uint64_t>(kv.get_int_or("train.seed", 1));
    const mmdit::ModelConfig cfg = model_config_from(kv);
    const train::StageSpec stage = stage_from_config(stage_name, kv);

    KvConfig snap = kv;
    mmdit::config_to_kv(cfg, snap);
    snap.set("train.stage", stage_name);
    snap.set("train.seed.effective", std::to_string(seed));
    snap.set("train.resume", resume);
    {
        std::ostringstream mix;
        for (int i = 0; i < world::kNumTaskKinds; ++i) {
            if (i) mix << " ";
            mix << world::task_kind_name(static_cast<world::TaskKind>(i)) << ":"
                << stage.mixture.ratio[static_cast<size_t>(i)];
        }
        snap.set("train.mixture", mix.str());
    }
    RunManifest man = begin_manifest("train", snap, seed);

    train::TrainState state = resume.empty() ? train::TrainState::fresh(cfg, seed)
                                             : train::load_train_state(resume);
    train::StageRunConfig run;
    run.out_dir = fs::path(common.out) / "ckpt";
    run.force = force;
    run.checkpoint_every = kv.get_int_or("train.checkpoint_every", 500);
    run.dropout.text_only = kv.get_real_or("train.dropout.text", 0.05);
    run.dropout.visual_only = kv.get_real_or("train.dropout.visual", 0.05);
    run.dropout.both = kv.get_real_or("train.dropout.both", 0.05);
    const long log_every = kv.get_int_or("train.log_every", 50);
    run.on_metrics = [&](const train::StepMetrics& m) {
        if (log_every > 0 && m.step % log_every == 0)
            std::cout << "step " << m.step << " loss " << m.loss << " grad " << m.grad_norm << "\n";
    };
    state = train::run_stage(stage, std::move(state), run);
    const fs::path done = fs::path(common.out) / "ckpt" / ("stage-" + stage_name);
    train::save_train_state(done, state);
    man.outputs.push_back(done.string());
    man.outputs.push_back((run.out_dir / "metrics.csv").string());
    man.finished_utc = RunManifest::now_utc();
    man.write(common.out);
    return 0;
}

// ---- sample ----------------------------------------------------------------------

int cmd_sample(const CommonArgs& common, const std::string& ckpt, const std::string& prompt,
               const std::string& input_image, const std::string& mask_path, int glyph, int steps,
               double alpha_x, double alpha_v, int count) {
    const mmdit::LoadedModel model = mmdit::load_checkpoint(ckpt);
    const mmdit::ModelConfig& cfg = model.cfg;

    const text::TokenSequence tokens = text::tokenize(prompt, cfg.l_max);

    ImageTensor v_img(world::kCanvas, world::kCanvas, 0.0f);  // empty input by default
    if (!input_image.empty()) v_img = read_ppm(input_image);
    MaskImage m_img(world::kCanvas, world::kCanvas, 1);  // all-ones mask by default
    if (!mask_path.empty()) m_img = read_pgm(mask_path);

    std::optional<ImageTensor> external;
    if (glyph >= 0) {
        if (glyph >= world::kGlyphCount) throw ConfigError("unknown glyph id " + std::to_string(glyph));
        external = world::glyph_library()[static_cast<size_t>(glyph)];
    }

    KvConfig snap = model.kv;
    snap.set("sample.prompt", prompt);
    snap.set("sample.steps", std::to_string(steps));
    snap.set("sample.alpha_x", std::to_string(alpha_x));
    snap.set("sample.alpha_v", std::to_string(alpha_v));
    snap.set("sample.seed", std::to_string(common.seed));
    snap.set("sample.ckpt", ckpt);
    RunManifest man = begin_manifest("sample", snap, common.seed);

    fs::create_directories(fs::path(common.out) / "samples");
    flow::SampleSpec spec;
    spec.prompt = &tokens;
    if (external) spec.external_crop = &*external;
    spec.v = codec::encode(v_img);
    spec.mask = codec::resize_mask(m_img, cfg.latent_h, cfg.latent_w);
    spec.steps = steps;
    spec.scales.alpha_x = static_cast<float>(alpha_x);
    spec.scales.alpha_v = static_cast<float>(alpha_v);
    for (int i = 0; i < count; ++i) {
        spec.seed = common.seed + static_cast<uint64_t>(i);
        ImageTensor img = flow::sample(model.params, cfg, spec);
        for (auto& x : img.v) x = std::clamp(x, -1.0f, 1.0f);
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%04d.ppm", i);
        const std::string path = (fs::path(common.out) / "samples" / name).string();
        write_ppm(path, img);
        man.outputs.push_back(path);
        std::cout << path << "\n";
    }
    man.finished_utc = RunManifest::now_utc();
    man.write(common.out);
    return 0;
}

// ---- eval -----------------------------------------------------------------------

int cmd_eval(const CommonArgs& common, const std::string& ckpt, const std::string& suite, int n,
             bool oracle, int steps, long ab_steps, long ab_id_steps, int ab_batch, bool include_c) {
    KvConfig snap;
    snap.set("eval.suite", suite);
    snap.set("eval.n", std::to_string(n));
    snap.set("eval.seed", std::to_string(common.seed));
    snap.set("eval.oracle", oracle ? "1" : "0");
    snap.set("eval.ckpt", ckpt);
    RunManifest man = begin_manifest("eval", snap, common.seed);
    fs::create_directories(common.out);
    const fs::path csv = fs::path(common.out) / ("eval_" + suite + ".csv");

    eval::EvalOptions opt;
    opt.oracle_mode = oracle;
    opt.steps = steps;

    if (suite == "compositional" || suite == "edit" || suite == "id") {
        if (ckpt.empty()) throw ConfigError("--ckpt is required for suite " + suite);
        const mmdit::LoadedModel model = mmdit::load_checkpoint(ckpt);
        eval::EvalReport rep;
        if (suite == "compositional")
            rep = eval::eval_compositional(model.params, model.cfg, n, common.seed, opt);
        else if (suite == "edit")
            rep = eval::eval_editing(model.params, model.cfg, n, common.seed, opt);
        else
            rep = eval::eval_id(model.params, model.cfg, n, common.seed, opt);
        eval::append_eval_csv(csv, suite, rep);
        std::cout << eval::format_eval_table(suite, rep);
    } else if (suite == "ablation") {
        eval::AblationPlan plan;
        plan.steps = ab_steps;
        plan.id_steps = ab_id_steps;
        plan.batch = ab_batch;
        plan.eval_n = n;
        plan.eval_steps = steps;
        plan.seed = common.seed;
        plan.include_row_c = include_c;
        const auto table =
            eval::run_ablation(plan, [](const std::string&, long, const train::StepMetrics&) {});
        for (const auto& row : table) {
            eval::append_eval_csv(csv, "ablation." + row.name + ".compositional", row.compositional);
            eval::append_eval_csv(csv, "ablation." + row.name + ".edit", row.editing);
            eval::append_eval_csv(csv, "ablation." + row.name + ".id", row.id);
            std::cout << "row (" << row.name << "): t2i " << row.compositional.single_object << " edit "
                      << row.editing.edit_success << " id " << row.id.id_correlation << "\n";
        }
    } else if (suite == "scaling") {
        const auto table = eval::run_scaling({"micro-B", "micro-L", "micro-XL"}, ab_steps, ab_batch, 1e-4,
                                             n, steps, common.seed,
                                             [](const std::string&, long, const train::StepMetrics&) {});
        for (const auto& row : table) {
            eval::append_eval_csv(csv, "scaling." + row.size_tag, row.compositional);
            std::cout << row.size_tag << " params " << row.param_count << " t2i "
                      << row.compositional.single_object << "\n";
        }
    } else {
        throw ConfigError("unknown suite: " + suite);
    }
    man.outputs.push_back(csv.string());
    man.finished_utc = RunManifest::now_utc();
    man.write(common.out);
    return 0;
}

// ---- bench ----------------------------------------------------------------------

int cmd_bench(const CommonArgs& common, const std::string& size_tag, const std::string& modes_csv,
              int reps) {
    std::vector<mmdit::ConcatMode> modes;
    std::stringstream ss(modes_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "channel") modes.push_back(mmdit::ConcatMode::Channel);
        else if (item == "sequence") modes.push_back(mmdit::ConcatMode::Sequence);
        else throw ConfigError("unknown mode: " + item);
    }
    KvConfig snap;
    snap.set("bench.size_tag", size_tag);
    snap.set("bench.modes", modes_csv);
    snap.set("bench.reps", std::to_string(reps));
    RunManifest man = begin_manifest("bench", snap, common.seed);
    if (reps < 3) man.warnings.push_back("reps < 3: medians are unreliable");

    const auto rows = eval::bench_efficiency(size_tag, {world::TaskKind::T2I, world::TaskKind::Edit},
                                             modes, reps, common.seed);
    fs::create_directories(common.out);
    const fs::path csv = fs::path(common.out) / "bench.csv";
    eval::write_bench_csv(csv, rows);
    for (const auto& r : rows)
        std::cout << world::task_kind_name(r.task) << " " << mmdit::concat_mode_name(r.mode) << " tokens "
                  << r.tokens << " median " << r.median_forward_sec << "s\n";
    man.outputs.push_back(csv.string());
    man.finished_utc = RunManifest::now_utc();
    man.write(common.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified multi-task diffusion on the synthetic shapes world"};
    app.require_subcommand(1);

    CommonArgs common;

    auto* gen = app.add_subcommand("gen-data", "generate a task-sample dataset");
    int n_per_task = 10;
    std::string kinds_csv;
    gen->add_option("--out", common.out, "output root");
    gen->add_option("--n-per-task", n_per_task, "samples per task kind");
    gen->add_option("--seed", common.seed, "rng seed");
    gen->add_option("--kinds", kinds_csv, "comma-separated task kinds (default: all)");

    auto* tr = app.add_subcommand("train", "run one training stage");
    std::string config_path, stage_name = "I", resume;
    bool force = false;
    tr->add_option("--config", config_path, "key=value config file");
    tr->add_option("--stage", stage_name, "stage name: I, II, III")->required();
    tr->add_option("--resume", resume, "checkpoint directory to resume from");
    tr->add_option("--out", common.out, "output root");
    tr->add_option("--seed", common.seed, "rng seed (overrides config)");
    tr->add_flag("--force", force, "bypass stage-order enforcement");

    auto* sa = app.add_subcommand("sample", "generate images from a checkpoint");
    std::string ckpt, prompt, input_image, mask_path;
    int glyph = -1, steps = 50, count = 1;
    double alpha_x = 4.0, alpha_v = 1.5;
    sa->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    sa->add_option("--prompt", prompt, "prompt text (task token first)");
    sa->add_option("--input-image", input_image, "conditioning image (PPM)");
    sa->add_option("--mask", mask_path, "input mask (PGM)");
    sa->add_option("--glyph", glyph, "identity glyph id for <p> prompts");
    sa->add_option("--alpha-x", alpha_x, "text guidance scale");
    sa->add_option("--alpha-v", alpha_v, "image guidance scale");
    sa->add_option("--steps", steps, "Euler steps");
    sa->add_option("--seed", common.seed, "rng seed");
    sa->add_option("--n", count, "number of images");
    sa->add_option("--out", common.out, "output root");

    auto* ev = app.add_subcommand("eval", "run an evaluation suite");
    std::string suite = "compositional";
    int eval_n = 20, eval_steps = 50;
    bool oracle = false, include_c = false;
    long ab_steps = 800, ab_id_steps = 80;
    int ab_batch = 8;
    ev->add_option("--ckpt", ckpt, "checkpoint directory");
    ev->add_option("--suite", suite, "compositional, edit, id, ablation, scaling")->required();
    ev->add_option("--n", eval_n, "samples per category");
    ev->add_option("--seed", common.seed, "rng seed");
    ev->add_option("--steps", eval_steps, "sampler steps during eval");
    ev->add_flag("--oracle", oracle, "score oracle targets (harness soundness)");
    ev->add_option("--ablation-steps", ab_steps, "training steps per ablation/scaling row");
    ev->add_option("--ablation-id-steps", ab_id_steps, "identity-phase steps for ablation row e");
    ev->add_option("--ablation-batch", ab_batch, "batch size for ablation/scaling rows");
    ev->add_flag("--include-row-c", include_c, "also train optional ablation row (c)");
    ev->add_option("--out", common.out, "output root");

    auto* be = app.add_subcommand("bench", "sequence-length efficiency benchmark");
    std::string size_tag = "micro-XL", modes_csv = "channel,sequence";
    int reps = 30;
    be->add_option("--size", size_tag, "model size tag");
    be->add_option("--modes", modes_csv, "comma-separated: channel,sequence");
    be->add_option("--reps", reps, "forward repetitions per row");
    be->add_option("--seed", common.seed, "rng seed");
    be->add_option("--out", common.out, "output root");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(common, n_per_task, kinds_csv);
        if (tr->parsed()) return cmd_train(common, config_path, stage_name, resume, force);
        if (sa->parsed())
            return cmd_sample(common, ckpt, prompt, input_image, mask_path, glyph, steps, alpha_x, alpha_v,
                              count);
        if (ev->parsed())
            return cmd_eval(common, ckpt, suite, eval_n, oracle, eval_steps, ab_steps, ab_id_steps,
                            ab_batch, include_c);
        if (be->parsed()) return cmd_bench(common, size_tag, modes_csv, reps);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
