#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "clvit/model.hpp"
#include "clvit/optim.hpp"
#include "test_helpers.hpp"

using namespace clvit;
using model::ViTConfig;

namespace {

ViTConfig tiny_config() {
    ViTConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.channels = 3;
    c.dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.num_classes = 4;
    c.lora_rank = 2;
    c.lora_alpha = 2.0;
    return c;
}

Tensor random_images(const ViTConfig& cfg, int batch, Rng& rng) {
    Shape s{batch, cfg.channels, cfg.image_size, cfg.image_size};
    std::vector<double> data(static_cast<std::size_t>(numel(s)));
    for (auto& v : data) v = rng.uniform(0.0, 1.0);
    return Tensor::from_data(std::move(s), std::move(data));
}

void randomize_factors(model::LoRAParams& lora, Rng& rng, double stddev = 0.05) {
    for (auto& [name, t] : lora.factors) {
        std::vector<double> d(static_cast<std::size_t>(t.numel()));
        for (auto& v : d) v = rng.normal(0.0, stddev);
        lora.factors[name] = Tensor::from_data(t.shape(), std::move(d)).trainable(name);
    }
}

// One-sided Jacobi: singular values of a square row-major matrix.
std::vector<double> singular_values(std::vector<double> a, int n) {
    // work on columns of a^T so rotations touch contiguous rows
    std::vector<double> m(a.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(j * n + i)] = a[static_cast<std::size_t>(i * n + j)];
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0, aqq = 0, apq = 0;
                for (int i = 0; i < n; ++i) {
                    app += m[static_cast<std::size_t>(p * n + i)] * m[static_cast<std::size_t>(p * n + i)];
                    aqq += m[static_cast<std::size_t>(q * n + i)] * m[static_cast<std::size_t>(q * n + i)];
                    apq += m[static_cast<std::size_t>(p * n + i)] * m[static_cast<std::size_t>(q * n + i)];
                }
                off += apq * apq;
                if (std::fabs(apq) < 1e-15) continue;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1 + tau * tau));
                const double c = 1.0 / std::sqrt(1 + t * t);
                const double s = c * t;
                for (int i = 0; i < n; ++i) {
                    const double vp = m[static_cast<std::size_t>(p * n + i)];
                    const double vq = m[static_cast<std::size_t>(q * n + i)];
                    m[static_cast<std::size_t>(p * n + i)] = c * vp - s * vq;
                    m[static_cast<std::size_t>(q * n + i)] = s * vp + c * vq;
                }
            }
        }
        if (off < 1e-28) break;
    }
    std::vector<double> sv(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) {
        double s = 0;
        for (int i = 0; i < n; ++i) s += m[static_cast<std::size_t>(p * n + i)] * m[static_cast<std::size_t>(p * n + i)];
        sv[static_cast<std::size_t>(p)] = std::sqrt(s);
    }
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

}  // namespace

TEST_CASE("init is deterministic") {
    ViTConfig cfg = tiny_config();
    model::ParamStore a = model::init_model(cfg, 42);
    model::ParamStore b = model::init_model(cfg, 42);
    REQUIRE(a.size() == b.size());
    for (const auto& [name, t] : a.entries()) CHECK(t.bit_equal(b.at(name)));

    model::ParamStore c = model::init_model(cfg, 43);
    bool any_diff = false;
    for (const auto& [name, t] : c.entries())
        if (!t.bit_equal(a.at(name))) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("schema matches the documented name set") {
    ViTConfig cfg = tiny_config();
    model::ParamStore store = model::init_model(cfg, 1);

    // independently enumerated expectation for depth=1, dim=8, heads=2,
    // patch=4, image=8 (2x2 grid + class token = 5 tokens, mlp hidden 32)
    std::vector<std::pair<std::string, Shape>> expect = {
        {"block.0.attn.k.bias", {8}},      {"block.0.attn.k.weight", {8, 8}},
        {"block.0.attn.out.bias", {8}},    {"block.0.attn.out.weight", {8, 8}},
        {"block.0.attn.q.bias", {8}},      {"block.0.attn.q.weight", {8, 8}},
        {"block.0.attn.v.bias", {8}},      {"block.0.attn.v.weight", {8, 8}},
        {"block.0.ln1.bias", {8}},         {"block.0.ln1.gain", {8}},
        {"block.0.ln2.bias", {8}},         {"block.0.ln2.gain", {8}},
        {"block.0.mlp.fc1.bias", {32}},    {"block.0.mlp.fc1.weight", {8, 32}},
        {"block.0.mlp.fc2.bias", {8}},     {"block.0.mlp.fc2.weight", {32, 8}},
        {"cls_token", {8}},                {"embed.bias", {8}},
        {"embed.weight", {48, 8}},         {"head.bias", {4}},
        {"head.weight", {8, 4}},           {"norm.bias", {8}},
        {"norm.gain", {8}},                {"pos_embed", {5, 8}},
    };
    REQUIRE(store.size() == expect.size());
    std::size_t i = 0;
    for (const auto& [name, t] : store.entries()) {
        CHECK(name == expect[i].first);
        CHECK(t.shape() == expect[i].second);
        ++i;
    }
}

TEST_CASE("invalid configs are rejected") {
    ViTConfig cfg = tiny_config();
    cfg.lora_rank = cfg.dim;  // violates K < M
    CHECK_THROWS_AS(model::init_model(cfg, 1), ConfigError);

    cfg = tiny_config();
    cfg.image_size = 10;  // not divisible by patch
    CHECK_THROWS_AS(model::init_model(cfg, 1), ConfigError);

    cfg = tiny_config();
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("fresh adapters are a bit-exact no-op") {
    ViTConfig cfg = tiny_config();
    model::ParamStore store = model::init_model(cfg, 7);
    model::LoRAParams lora = model::attach_lora(cfg, 8);

    for (const auto& base : model::adapted_projections(cfg))
        for (std::int64_t i = 0; i < lora.factors.at(base + ".lora_up").numel(); ++i)
            CHECK(lora.factors.at(base + ".lora_up").at(i) == 0.0);

    Rng rng(9);
    Tensor images = random_images(cfg, 3, rng);
    auto plain = model::forward(store, nullptr, images);
    auto adapted = model::forward(store, &lora, images);
    CHECK(adapted.logits.bit_equal(plain.logits));
    CHECK(adapted.features.bit_equal(plain.features));
}

TEST_CASE("adapter set covers exactly the q and v projections") {
    ViTConfig cfg = tiny_config();
    cfg.depth = 3;
    model::LoRAParams lora = model::attach_lora(cfg, 1);
    CHECK(lora.factors.size() == static_cast<std::size_t>(2 * cfg.depth * 2));  // down+up per matrix
    for (int i = 0; i < cfg.depth; ++i) {
        for (const char* proj : {"q", "v"}) {
            const std::string base = "block." + std::to_string(i) + ".attn." + std::string(proj);
            CHECK(lora.factors.count(base + ".lora_down") == 1);
            CHECK(lora.factors.count(base + ".lora_up") == 1);
            CHECK(lora.factors.at(base + ".lora_down").shape() ==
                  Shape{cfg.lora_rank, cfg.dim});
            CHECK(lora.factors.at(base + ".lora_up").shape() == Shape{cfg.dim, cfg.lora_rank});
        }
    }
}

TEST_CASE("paper-shape LoRA parameter count") {
    ViTConfig cfg = ViTConfig::paper_shape();
    model::LoRAParams lora = model::attach_lora(cfg, 1);
    // closed form: 12 blocks x 2 matrices x (16*768 + 768*16)
    CHECK(lora.total_params() == 589824);
    CHECK(lora.total_params() == 12ll * 2 * 2 * (768 * 16));
}

TEST_CASE("forward shape contract and batch permutation") {
    ViTConfig cfg = tiny_config();
    model::ParamStore store = model::init_model(cfg, 3);
    Rng rng(4);
    Tensor images = random_images(cfg, 5, rng);
    auto out = model::forward(store, nullptr, images);
    CHECK(out.logits.shape() == Shape{5, cfg.num_classes});
    CHECK(out.features.shape() == Shape{5, cfg.dim});

    // reversed batch order gives reversed rows
    const std::int64_t ib = images.numel() / 5;
    std::vector<double> rev(static_cast<std::size_t>(images.numel()));
    for (int i = 0; i < 5; ++i)
        std::copy_n(images.data() + i * ib, ib, rev.data() + (4 - i) * ib);
    auto out_rev = model::forward(store, nullptr,
                                  Tensor::from_data(images.shape(), std::move(rev)));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < cfg.num_classes; ++j)
            CHECK(out_rev.logits.at((4 - i) * cfg.num_classes + j) ==
                  out.logits.at(i * cfg.num_classes + j));
}

TEST_CASE("merged forward equals adapter forward") {
    Rng rng(11);
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        ViTConfig cfg = tiny_config();
        cfg.depth = 1 + static_cast<int>(seed % 2);
        cfg.dim = (seed % 3 == 0) ? 8 : 16;
        cfg.heads = 2;
        cfg.lora_rank = 2;
        model::ParamStore store = model::init_model(cfg, seed);
        model::LoRAParams lora = model::attach_lora(cfg, seed + 100);
        randomize_factors(lora, rng);

        Tensor images = random_images(cfg, 2, rng);
        auto adapted = model::forward(store, &lora, images);
        model::ParamStore merged = model::merge_lora(store, lora);
        auto plain = model::forward(merged, nullptr, images);

        CHECK(testutil::max_abs_diff(adapted.logits, plain.logits) < 1e-9);
        CHECK(testutil::max_abs_diff(adapted.features, plain.features) < 1e-9);
    }
}

TEST_CASE("merge with zero adapters copies the store; re-merge is rejected") {
    ViTConfig cfg = tiny_config();
    model::ParamStore store = model::init_model(cfg, 5);
    model::LoRAParams lora = model::attach_lora(cfg, 6);
    model::ParamStore merged = model::merge_lora(store, lora);
    for (const auto& [name, t] : store.entries()) CHECK(t.bit_equal(merged.at(name)));
    CHECK(lora.consumed);
    CHECK_THROWS_AS(model::merge_lora(store, lora), ContractError);
    CHECK_THROWS_AS(model::forward(store, &lora, Tensor::zeros({1, 3, 8, 8})), ContractError);
}

TEST_CASE("adapter update has rank at most K") {
    ViTConfig cfg = tiny_config();
    cfg.dim = 16;
    cfg.lora_rank = 3;
    cfg.heads = 2;
    model::ParamStore store = model::init_model(cfg, 2);
    model::LoRAParams lora = model::attach_lora(cfg, 3);
    Rng rng(12);
    randomize_factors(lora, rng, 0.3);

    model::ParamStore merged = model::merge_lora(store, lora);
    const Tensor& before = store.at("block.0.attn.q.weight");
    const Tensor& after = merged.at("block.0.attn.q.weight");
    std::vector<double> delta(static_cast<std::size_t>(before.numel()));
    for (std::int64_t i = 0; i < before.numel(); ++i) delta[static_cast<std::size_t>(i)] = after.at(i) - before.at(i);

    auto sv = singular_values(delta, cfg.dim);
    CHECK(sv[0] > 1e-6);
    for (std::size_t i = static_cast<std::size_t>(cfg.lora_rank); i < sv.size(); ++i)
        CHECK(sv[i] < 1e-9 * sv[0]);
}

TEST_CASE("param_count enumeration") {
    ViTConfig cfg = tiny_config();
    model::ParamStore store = model::init_model(cfg, 1);
    auto pc = model::param_count(store, nullptr);
    CHECK(pc.trainable == 0);
    CHECK(pc.total == store.total_params());

    model::LoRAParams lora = model::attach_lora(cfg, 2);
    auto pc2 = model::param_count(store, &lora);
    CHECK(pc2.trainable == lora.total_params());
    CHECK(pc2.fraction > 0.0);
    CHECK(pc2.fraction < 1.0);

    // paper-shape store: the trainable count is the closed-form LoRA count
    ViTConfig paper = ViTConfig::paper_shape();
    model::ParamStore pstore = model::init_model(paper, 1);
    model::LoRAParams plora = model::attach_lora(paper, 2);
    auto pc3 = model::param_count(pstore, &plora);
    CHECK(pc3.trainable == 589824);
}

TEST_CASE("full tiny model gradients match finite differences") {
    ViTConfig cfg = tiny_config();
    model::ParamStore frozen = model::init_model(cfg, 21);
    model::ParamStore store = frozen.with_trainable(model::head_names());
    model::LoRAParams lora = model::attach_lora(cfg, 22);
    Rng rng(23);
    randomize_factors(lora, rng);

    Tensor images = random_images(cfg, 2, rng);
    const std::vector<int> labels = {1, 3};

    // every trainable parameter of the LoRA regime: adapter factors + head
    for (const auto& [name, factor] : lora.factors) {
        auto f = [&](const Tensor& probe) {
            model::LoRAParams l2 = lora;
            l2.factors[name] = probe;
            auto out = model::forward(store, &l2, images);
            return cross_entropy(out.logits, labels);
        };
        CHECK(grad_check(f, factor, 1e-5) < 1e-4);
    }
    for (const auto& name : model::head_names()) {
        auto f = [&](const Tensor& probe) {
            model::ParamStore s2 = store;
            s2.set(name, probe);
            auto out = model::forward(s2, &lora, images);
            return cross_entropy(out.logits, labels);
        };
        CHECK(grad_check(f, store.at(name), 1e-5) < 1e-4);
    }

    // full fine-tuning regime: every parameter in the store
    model::ParamStore all = frozen.all_trainable();
    for (const auto& [name, t] : all.entries()) {
        auto f = [&](const Tensor& probe) {
            model::ParamStore s2 = all;
            s2.set(name, probe);
            auto out = model::forward(s2, nullptr, images);
            return cross_entropy(out.logits, labels);
        };
        CHECK(grad_check(f, t, 1e-5) < 1e-4);
    }
}

TEST_CASE("training touches only trainable tensors") {
    ViTConfig cfg = tiny_config();
    model::ParamStore pre = model::init_model(cfg, 31);
    model::ParamStore store = pre.with_trainable(model::head_names());
    model::LoRAParams lora = model::attach_lora(cfg, 32);
    Rng rng(33);
    Tensor images = random_images(cfg, 4, rng);
    const std::vector<int> labels = {0, 1, 2, 3};

    optim::Adam opt(optim::AdamConfig{.lr = 1e-2});
    for (int step = 0; step < 3; ++step) {
        Tape tape;
        GradMap grads;
        {
            TapeScope scope(tape);
            auto out = model::forward(store, &lora, images);
            grads = tape.backward(cross_entropy(out.logits, labels));
        }
        opt.step(
            grads,
            [&](const std::string& n) {
                return lora.factors.count(n) ? lora.factors.at(n) : store.at(n);
            },
            [&](const std::string& n, Tensor t) {
                if (lora.factors.count(n))
                    lora.factors[n] = t.trainable(n);
                else
                    store.set(n, t.trainable(n));
            });
    }

    int changed = 0;
    for (const auto& [name, t] : store.entries()) {
        const bool is_head = name == "head.weight" || name == "head.bias";
        if (is_head) {
            if (!t.bit_equal(pre.at(name))) ++changed;
        } else {
            CHECK(t.bit_equal(pre.at(name)));  // frozen backbone bit-identical
        }
    }
    CHECK(changed == 2);
    // adapters moved too
    CHECK_FALSE(lora.factors.at("block.0.attn.q.lora_down")
                    .bit_equal(model::attach_lora(cfg, 32).factors.at("block.0.attn.q.lora_down")));
}
