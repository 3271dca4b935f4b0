#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clvit/flop_cost.hpp"
#include "clvit/flops.hpp"
#include "clvit/harness.hpp"
#include "clvit/losses.hpp"
#include "clvit/model.hpp"
#include "clvit/optim.hpp"
#include "test_helpers.hpp"

using namespace clvit;
using flops::TrainableMask;

namespace {

model::ViTConfig small_config() {
    model::ViTConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.dim = 16;
    c.depth = 2;
    c.heads = 2;
    c.num_classes = 5;
    c.lora_rank = 2;
    return c;
}

Tensor random_images(const model::ViTConfig& cfg, int batch, Rng& rng) {
    Shape s{batch, cfg.channels, cfg.image_size, cfg.image_size};
    std::vector<double> data(static_cast<std::size_t>(numel(s)));
    for (auto& v : data) v = rng.uniform(0.0, 1.0);
    return Tensor::from_data(std::move(s), std::move(data));
}

std::vector<int> random_labels(int batch, int classes, Rng& rng) {
    std::vector<int> out;
    for (int i = 0; i < batch; ++i) out.push_back(static_cast<int>(rng.integer(0, classes - 1)));
    return out;
}

// one real training step, instrumented
flopcount::u64 measured_step(const model::ViTConfig& cfg, int batch, TrainableMask mask,
                             bool use_kl, std::uint64_t seed) {
    Rng rng(seed);
    Tensor images = random_images(cfg, batch, rng);
    std::vector<int> labels = random_labels(batch, cfg.num_classes, rng);

    model::ParamStore pre = model::init_model(cfg, seed);
    flopcount::Scope scope;
    if (mask == TrainableMask::none) {
        auto out = model::forward(pre, nullptr, images);
        cross_entropy(out.logits, labels);
        return scope.take();
    }

    model::ParamStore store = mask == TrainableMask::all
                                  ? pre.all_trainable()
                                  : pre.all_frozen().with_trainable(model::head_names());
    model::LoRAParams lora = model::attach_lora(cfg, seed + 1);
    model::LoRAParams* lp = mask == TrainableMask::lora_only ? &lora : nullptr;
    model::ParamStore reference = pre.all_frozen();

    Tape tape;
    {
        TapeScope ts(tape);
        auto out = model::forward(store, lp, images);
        Tensor loss;
        if (use_kl) {
            Tensor pre_features = model::forward(reference, nullptr, images).features;
            Tensor cls = losses::classification_loss(out.logits, labels);
            Tensor kl = losses::kl_feature_loss(pre_features, out.features);
            loss = losses::combined_loss(cls, kl, losses::LossWeights{});
        } else {
            loss = losses::classification_loss(out.logits, labels);
        }
        tape.backward(loss);
    }
    return scope.take();
}

double ratio_err(flopcount::u64 a, flopcount::u64 b) {
    return std::fabs(static_cast<double>(a) - static_cast<double>(b)) /
           static_cast<double>(std::max<flopcount::u64>(b, 1));
}

}  // namespace

TEST_CASE("forward count matches the instrumented counter") {
    Rng rng(1);
    for (const bool with_lora : {false, true}) {
        for (const int batch : {1, 3}) {
            model::ViTConfig cfg = small_config();
            model::ParamStore store = model::init_model(cfg, 11);
            model::LoRAParams lora = model::attach_lora(cfg, 12);

            flopcount::Scope scope;
            model::forward(store, with_lora ? &lora : nullptr, random_images(cfg, batch, rng));
            const auto measured = scope.take();
            const auto analytic = flops::forward_flops(cfg, batch, with_lora);
            INFO("with_lora=", with_lora, " batch=", batch, " measured=", measured,
                 " analytic=", analytic);
            CHECK(ratio_err(measured, analytic) < 0.01);
        }
    }
}

TEST_CASE("forward count is linear in batch and honors depth 0") {
    model::ViTConfig cfg = small_config();
    CHECK(flops::forward_flops(cfg, 8) == 2 * flops::forward_flops(cfg, 4));
    CHECK(flops::forward_flops(cfg, 2) == 2 * flops::forward_flops(cfg, 1));

    model::ViTConfig flat = cfg;
    flat.depth = 0;
    const auto x = flat;
    const flops::u64 pd = static_cast<flops::u64>(x.patch_dim());
    const flops::u64 m = static_cast<flops::u64>(x.dim);
    const flops::u64 patches = static_cast<flops::u64>(x.tokens() - 1);
    const flops::u64 c = static_cast<flops::u64>(x.num_classes);
    // embed + pos add + final norm + head, nothing else
    const flops::u64 expect = flopcount::matmul(patches, pd, m) + patches * m +
                              static_cast<flops::u64>(x.tokens()) * m +
                              flopcount::layernorm(1, m) + flopcount::matmul(1, m, c) + c;
    CHECK(flops::forward_flops(flat, 1) == expect);
}

TEST_CASE("training-step counts match the instrumented counter for all masks") {
    for (const auto mask : {TrainableMask::lora_only, TrainableMask::all}) {
        for (const bool kl : {false, true}) {
            if (mask == TrainableMask::all && kl) continue;  // not a protocol regime
            for (const int batch : {2, 5}) {
                model::ViTConfig cfg = small_config();
                const auto measured = measured_step(cfg, batch, mask, kl, 100 + batch);
                const auto analytic = flops::training_step_flops(cfg, batch, mask, kl);
                INFO("mask=", static_cast<int>(mask), " kl=", kl, " batch=", batch,
                     " measured=", measured, " analytic=", analytic);
                CHECK(ratio_err(measured, analytic) < 0.01);
            }
        }
    }
}

TEST_CASE("counts agree on other geometries") {
    Rng rng(7);
    for (int variant = 0; variant < 3; ++variant) {
        model::ViTConfig cfg = small_config();
        cfg.depth = 1 + variant;
        cfg.dim = variant == 2 ? 32 : 16;
        cfg.heads = variant == 2 ? 4 : 2;
        cfg.lora_rank = 2 + variant;
        const auto measured = measured_step(cfg, 3, TrainableMask::lora_only, false, 55);
        const auto analytic = flops::training_step_flops(cfg, 3, TrainableMask::lora_only, false);
        CHECK(ratio_err(measured, analytic) < 0.01);

        const auto measured_all = measured_step(cfg, 3, TrainableMask::all, false, 56);
        const auto analytic_all = flops::training_step_flops(cfg, 3, TrainableMask::all, false);
        CHECK(ratio_err(measured_all, analytic_all) < 0.01);
    }
}

TEST_CASE("mask ordering and the zero mask") {
    model::ViTConfig cfg = small_config();
    const auto none = flops::backward_flops(cfg, 4, TrainableMask::none);
    const auto lora = flops::backward_flops(cfg, 4, TrainableMask::lora_only);
    const auto all = flops::backward_flops(cfg, 4, TrainableMask::all);
    CHECK(none.weight_grad == 0);
    CHECK(none.total() == 0);
    CHECK(none.total() <= lora.total());
    CHECK(lora.total() < all.total());
    CHECK(lora.weight_grad < all.weight_grad);
    CHECK(all.total() >= all.activation_grad);
}

TEST_CASE("paper-shape step ratio lands in the expected band") {
    model::ViTConfig cfg = model::ViTConfig::paper_shape();
    const double full =
        static_cast<double>(flops::training_step_flops(cfg, 32, TrainableMask::all, false));
    const double lora =
        static_cast<double>(flops::training_step_flops(cfg, 32, TrainableMask::lora_only, false));
    const double ratio = full / lora;
    INFO("full/lora step ratio = ", ratio);
    CHECK(ratio > 1.4);
    CHECK(ratio < 1.6);
}

TEST_CASE("monotonicity in depth, width, and batch") {
    model::ViTConfig cfg = small_config();
    auto step = [&](const model::ViTConfig& c, std::int64_t b) {
        return flops::training_step_flops(c, b, TrainableMask::all, false);
    };
    model::ViTConfig deeper = cfg;
    deeper.depth += 1;
    model::ViTConfig wider = cfg;
    wider.dim *= 2;
    CHECK(step(deeper, 4) > step(cfg, 4));
    CHECK(step(wider, 4) > step(cfg, 4));
    CHECK(step(cfg, 8) > step(cfg, 4));
}

TEST_CASE("replay charges exactly twice the naive per-step compute") {
    model::ViTConfig cfg = small_config();
    flops::StepSchedule schedule;
    schedule.task_steps = {10, 10};
    schedule.task_samples = {320, 320};
    schedule.batch = 32;
    const auto naive = flops::protocol_flops(cfg, schedule, flops::Method::naive_seq);
    const auto replay = flops::protocol_flops(cfg, schedule, flops::Method::replay);
    CHECK(replay.total == 2 * naive.total);
    for (std::size_t i = 0; i < naive.phases.size(); ++i)
        CHECK(replay.phases[i].flops == 2 * naive.phases[i].flops);
}

TEST_CASE("protocol totals: ours beats replay and memft can be zero") {
    model::ViTConfig cfg = small_config();
    flops::StepSchedule schedule;
    schedule.task_steps = {20, 20, 20, 20};
    schedule.task_samples = {640, 640, 640, 640};
    schedule.memft_steps = 15;
    schedule.memft_samples = 480;
    schedule.batch = 32;

    const auto ours = flops::protocol_flops(cfg, schedule, flops::Method::ours_xent);
    const auto replay = flops::protocol_flops(cfg, schedule, flops::Method::replay);
    CHECK(ours.total < replay.total);
    const double reduction = static_cast<double>(replay.total) / static_cast<double>(ours.total);
    INFO("reduction = ", reduction);
    CHECK(reduction > 1.0);

    flops::StepSchedule no_memft = schedule;
    no_memft.memft_steps = 0;
    no_memft.memft_samples = 0;
    const auto lean = flops::protocol_flops(cfg, no_memft, flops::Method::ours_xent);
    for (const auto& p : lean.phases) CHECK(p.name != "memft");

    // report serialization carries the phases
    const std::string json = ours.to_json();
    CHECK(json.find("\"memft\"") != std::string::npos);
    CHECK(ours.to_csv().find("total") != std::string::npos);
}

TEST_CASE("instrumented protocol run stays within 1 percent of the analytic report") {
    dataio::SyntheticSpec spec;
    spec.num_classes = 4;
    spec.image_size = 8;
    spec.pretrain_per_class = 4;
    spec.train_per_class = 8;
    spec.test_per_class = 4;
    spec.seed = 5;
    auto bundle = dataio::generate_synthetic(spec);

    model::ViTConfig cfg = small_config();
    cfg.num_classes = 4;
    model::ParamStore pre = model::init_model(cfg, 9);

    harness::ProtocolConfig pc;
    pc.task_train.epochs = 2;
    pc.task_train.batch_size = 8;
    pc.memft_train.epochs = 2;
    pc.memft_train.batch_size = 8;
    pc.memory_per_class = 2;

    harness::SplitPlan plan = harness::SplitPlan::even(4, 2);
    for (const auto method : {flops::Method::ours_xent, flops::Method::ours_kl,
                              flops::Method::naive_seq, flops::Method::replay}) {
        auto result = harness::run_protocol(pre, bundle.train, bundle.test, plan, pc, method);
        INFO(flops::method_name(method), ": measured=", result.measured_flops,
             " analytic=", result.flop_report.total);
        CHECK(ratio_err(result.measured_flops, result.flop_report.total) < 0.01);
    }
}
