#include "doctest.h"

#include <filesystem>

#include "unidiff/flow.hpp"
#include "unidiff/mmdit.hpp"

using namespace unidiff;
using namespace unidiff::mmdit;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 32;
    c.n_heads = 4;
    c.patch = 2;
    c.l_max = 8;
    c.latent_h = 4;
    c.latent_w = 4;
    c.c_lat = 3;
    c.mlp_ratio = 2;
    c.time_freq_dim = 16;
    c.id_hidden = 8;
    c.n_placeholder = 2;
    c.id_crop_dim = 12;
    c.size_tag = "tiny";
    return c;
}

template <typename T>
std::vector<T> randv(size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.gaussian() * scale);
    return v;
}

text::TokenSequence tiny_prompt() {
    const auto& voc = text::vocabulary();
    text::TokenSequence seq;
    seq.ids = {voc.id("<t2i>"), voc.id("<p>"), voc.id("<p>"), voc.id("a"),
               voc.id("red"),   voc.id("circle")};
    seq.ids.resize(8, voc.pad_id());
    return seq;
}

// loss of the tiny model on a fixed synthetic sample (used for FD checks)
template <typename T>
nn::Var tiny_loss(nn::Tape<T>& tp, const ParamStore<T>& ps, T* grads, const ModelConfig& cfg,
                  const std::vector<T>& cond, const std::vector<T>& crop, const std::vector<T>& target) {
    ParamCtx<T> P(tp, ps, grads);
    auto prompt = text::embed(tp, P, tiny_prompt());
    const nn::Var feats = text::encode_identity(tp, P, crop, cfg.n_placeholder, cfg.d_model);
    prompt = text::inject_external(tp, prompt, feats);
    const nn::Var field = forward_field(tp, P, cfg, prompt, T(0.37), cond);
    return tp.mse_loss(field, target.data());
}

}  // namespace

TEST_CASE("freshly initialized model emits the zero field") {
    const ModelConfig cfg = tiny_config();
    auto ps = build_param_store<float>(cfg);
    init_params(ps, 42);
    nn::Tape<float> tp(false);
    ParamCtx<float> P(tp, ps, nullptr);
    const auto prompt = text::embed(tp, P, tiny_prompt());
    const auto cond = randv<float>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_in(), 7);
    const nn::Var field = forward_field(tp, P, cfg, prompt, 0.5f, cond);
    for (int i = 0; i < tp.rows(field) * tp.cols(field); ++i) CHECK(tp.data(field)[i] == 0.0f);
}

TEST_CASE("padding rows cannot influence the output") {
    const ModelConfig cfg = tiny_config();
    auto ps = build_param_store<float>(cfg);
    init_params(ps, 42);
    // make the trunk nontrivial: randomize the zero-init groups too
    {
        Rng rng(43);
        for (const auto& e : ps.entries) {
            if (!e.zero_init) continue;
            float* p = ps.ptr(e);
            for (size_t i = 0; i < static_cast<size_t>(e.r) * e.c; ++i)
                p[i] = static_cast<float>(rng.gaussian() * 0.05);
        }
    }
    const auto cond = randv<float>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_in(), 9);
    const int content = 3;

    const auto run_with_pad_content = [&](uint64_t pad_seed) {
        nn::Tape<float> tp(false);
        ParamCtx<float> P(tp, ps, nullptr);
        // prompt rows: fixed content rows, random garbage in the pad rows
        std::vector<float> rows = randv<float>(static_cast<size_t>(cfg.l_max) * cfg.d_model, pad_seed, 2.0);
        const auto fixed = randv<float>(static_cast<size_t>(content) * cfg.d_model, 1234);
        std::copy(fixed.begin(), fixed.end(), rows.begin());
        text::PromptBuild<float> prompt;
        prompt.embs = tp.constant(rows, cfg.l_max, cfg.d_model);
        prompt.key_mask.assign(static_cast<size_t>(cfg.l_max), 0);
        for (int i = content; i < cfg.l_max; ++i) prompt.key_mask[static_cast<size_t>(i)] = 1;
        const nn::Var field = forward_field(tp, P, cfg, prompt, 0.25f, cond);
        return std::vector<float>(tp.data(field), tp.data(field) + cfg.field_size());
    };
    const auto a = run_with_pad_content(111);
    const auto b = run_with_pad_content(999);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("forward is deterministic") {
    const ModelConfig cfg = tiny_config();
    auto ps = build_param_store<float>(cfg);
    init_params(ps, 77);
    const auto cond = randv<float>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_in(), 3);
    const auto run = [&] {
        nn::Tape<float> tp(false);
        ParamCtx<float> P(tp, ps, nullptr);
        const auto prompt = text::embed(tp, P, tiny_prompt());
        const nn::Var f = forward_field(tp, P, cfg, prompt, 0.6f, cond);
        return std::vector<float>(tp.data(f), tp.data(f) + cfg.field_size());
    };
    const auto a = run(), b = run();
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("non-finite conditioned latent is rejected") {
    const ModelConfig cfg = tiny_config();
    auto ps = build_param_store<float>(cfg);
    init_params(ps, 5);
    nn::Tape<float> tp(false);
    ParamCtx<float> P(tp, ps, nullptr);
    const auto prompt = text::embed(tp, P, tiny_prompt());
    auto cond = randv<float>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_in(), 3);
    cond[10] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(forward_field(tp, P, cfg, prompt, 0.5f, cond), NumericError);
    CHECK_THROWS_AS(forward_field(tp, P, cfg, prompt, 1.5f,
                                  randv<float>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_in(), 3)),
                    ConfigError);
}

TEST_CASE("count_tokens: channel mode is task-independent") {
    ModelConfig cfg;  // defaults: 32x32 latent, patch 2, l_max 24
    int expect = cfg.l_max + cfg.n_latent_tokens();
    CHECK(expect == 280);
    for (int k = 0; k < world::kNumTaskKinds; ++k)
        CHECK(count_tokens(static_cast<world::TaskKind>(k), cfg, ConcatMode::Channel) == expect);
    CHECK(count_tokens(world::TaskKind::Edit, cfg, ConcatMode::Sequence) == 536);
    CHECK(count_tokens(world::TaskKind::T2I, cfg, ConcatMode::Sequence) == 280);
    CHECK(count_tokens(world::TaskKind::Inpaint, cfg, ConcatMode::Sequence) == 536);
}

TEST_CASE("gradients match central finite differences across all groups (float64)") {
    ModelConfig cfg = tiny_config();
    auto ps = build_param_store<double>(cfg);
    init_params(ps, 11);
    {  // perturb zero-init groups so every path carries gradient
        Rng rng(12);
        for (const auto& e : ps.entries) {
            if (!e.zero_init) continue;
            double* p = ps.ptr(e);
            for (size_t i = 0; i < static_cast<size_t>(e.r) * e.c; ++i) p[i] = rng.gaussian() * 0.05;
        }
    }
    const auto cond = randv<double>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_in(), 21, 0.5);
    const auto crop = randv<double>(static_cast<size_t>(cfg.id_crop_dim), 22, 0.5);
    const auto target = randv<double>(static_cast<size_t>(cfg.field_size()), 23, 0.5);

    std::vector<double> grads(ps.size(), 0.0);
    {
        nn::Tape<double> tp(true);
        tp.backward(tiny_loss(tp, ps, grads.data(), cfg, cond, crop, target));
    }
    const auto loss_at = [&]() {
        nn::Tape<double> tp(false);
        return tp.data(tiny_loss<double>(tp, ps, nullptr, cfg, cond, crop, target))[0];
    };

    // one probe inside every parameter group family
    const std::vector<std::string> names = {
        "tok_emb",        "pos_text",       "pos_latent",    "patch_proj.w", "time.fc1.w",
        "L0.txt.qkv.w",   "L0.lat.qkv.w",   "L0.txt.attn_out.w", "L1.lat.mlp1.w", "L1.txt.mod.w",
        "L0.lat.mod.w",   "final.mod.w",    "head.w",        "ext.fc1.w",    "ext.fc2.w"};
    Rng pick(31);
    const double h = 1e-5;
    for (const auto& name : names) {
        const auto& e = ps.entry(name);
        size_t off = e.offset + pick.uniform_int(static_cast<uint64_t>(e.r) * e.c);
        if (name == "tok_emb") {
            // probe a row that the prompt actually uses
            const size_t row = static_cast<size_t>(text::vocabulary().id("red"));
            off = e.offset + row * static_cast<size_t>(e.c) + pick.uniform_int(static_cast<uint64_t>(e.c));
        }
        const double keep = ps.w[off];
        ps.w[off] = keep + h;
        const double fp = loss_at();
        ps.w[off] = keep - h;
        const double fm = loss_at();
        ps.w[off] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(fd - grads[off]) / std::max({1e-8, std::abs(fd), std::abs(grads[off])});
        CHECK_MESSAGE(rel < 1e-4, name, " off=", off, " fd=", fd, " ad=", grads[off]);
    }
}

TEST_CASE("sequence-mode forward accepts both conditioned and bare inputs") {
    ModelConfig cfg = tiny_config();
    cfg.mode = ConcatMode::Sequence;
    auto ps = build_param_store<float>(cfg);
    init_params(ps, 55);
    nn::Tape<float> tp(false);
    ParamCtx<float> P(tp, ps, nullptr);
    const auto prompt = text::embed(tp, P, tiny_prompt());
    const auto zt = randv<float>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * cfg.c_lat, 66);
    const auto vm = randv<float>(static_cast<size_t>(cfg.latent_h) * cfg.latent_w * (cfg.c_lat + 1), 67);
    const nn::Var bare = forward_field_seq<float>(tp, P, cfg, prompt, 0.4f, zt, nullptr);
    const nn::Var with_cond = forward_field_seq(tp, P, cfg, prompt, 0.4f, zt, &vm);
    CHECK(tp.rows(bare) == cfg.latent_h * cfg.latent_w);
    CHECK(tp.rows(with_cond) == cfg.latent_h * cfg.latent_w);
    CHECK(tp.cols(with_cond) == cfg.c_lat);
}

TEST_CASE("checkpoint round trip is bit exact and validates shapes") {
    const ModelConfig cfg = tiny_config();
    auto ps = build_param_store<float>(cfg);
    init_params(ps, 99);
    const auto dir = std::filesystem::temp_directory_path() / "unidiff_ckpt_test";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, cfg, ps);
    const LoadedModel m = load_checkpoint(dir);
    CHECK(m.cfg.d_model == cfg.d_model);
    REQUIRE(m.params.w.size() == ps.w.size());
    for (size_t i = 0; i < ps.w.size(); ++i) CHECK(m.params.w[i] == ps.w[i]);

    // a different architecture must refuse these weights
    ModelConfig other = cfg;
    other.n_layers = 3;
    auto ps2 = build_param_store<float>(other);
    CHECK_THROWS_AS(load_weights(dir, ps2), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("micro ladder parameter counts are fixed") {
    for (const char* tag : {"micro-B", "micro-L", "micro-XL"}) {
        const ModelConfig cfg = ladder_config(tag);
        const auto ps = build_param_store<float>(cfg);
        CHECK(ps.size() > 0);
    }
    CHECK(ladder_config("micro-B").n_layers == 6);
    CHECK(ladder_config("micro-L").d_model == 288);
    CHECK(ladder_config("micro-XL").n_heads == 12);
    CHECK_THROWS_AS(ladder_config("micro-XXL"), ConfigError);
}
