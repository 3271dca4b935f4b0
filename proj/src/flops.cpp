#include "clvit/flops.hpp"

#include <sstream>

#include "clvit/flop_cost.hpp"

// The analytic counts below mirror, term by term, the fc::add calls the
// tensor ops make at runtime. Liveness mirrors the tape: a gradient is
// computed for an input only when a trainable leaf can reach it. With
// lora_only the embeddings are frozen constants, so block 0 sees no
// layernorm/key/query-base backward while deeper blocks do.

namespace clvit::flops {

namespace fc = flopcount;

namespace {

struct Dims {
    u64 b, t, patches, m, h, d, hid, pd, c, k;
};

Dims dims(const model::ViTConfig& cfg, std::int64_t batch) {
    cfg.validate();
    Dims x{};
    x.b = static_cast<u64>(batch);
    x.t = static_cast<u64>(cfg.tokens());
    x.patches = x.t - 1;
    x.m = static_cast<u64>(cfg.dim);
    x.h = static_cast<u64>(cfg.heads);
    x.d = static_cast<u64>(cfg.head_dim());
    x.hid = static_cast<u64>(cfg.mlp_hidden());
    x.pd = static_cast<u64>(cfg.patch_dim());
    x.c = static_cast<u64>(cfg.num_classes);
    x.k = static_cast<u64>(cfg.lora_rank);
    return x;
}

// adapter branch forward on one projection: x*down^T -> *up^T -> scale -> add
u64 lora_branch_forward(const Dims& x) {
    return fc::matmul(x.b * x.t, x.m, x.k) + fc::matmul(x.b * x.t, x.k, x.m) +
           fc::elementwise(x.b * x.t * x.m) + fc::elementwise(x.b * x.t * x.m);
}

}  // namespace

u64 forward_flops(const model::ViTConfig& cfg, std::int64_t batch, bool with_lora) {
    const Dims x = dims(cfg, batch);
    u64 f = 0;
    // patch embedding (patchify itself is data movement)
    f += fc::matmul(x.b * x.patches, x.pd, x.m) + fc::elementwise(x.b * x.patches * x.m);
    // class token prepend is movement; positional add is elementwise
    f += fc::elementwise(x.b * x.t * x.m);

    const u64 bt = x.b * x.t;
    const u64 bht = x.b * x.h * x.t;
    u64 block = 0;
    block += fc::layernorm(bt, x.m);                                // ln1
    block += 3 * (fc::matmul(bt, x.m, x.m) + fc::elementwise(bt * x.m));  // q,k,v
    if (with_lora) block += 2 * lora_branch_forward(x);             // q and v branches
    block += fc::matmul(bht, x.d, x.t) + fc::elementwise(bht * x.t);  // scores + scale
    block += fc::softmax(bht, x.t);
    block += fc::matmul(bht, x.t, x.d);                             // value mix
    block += fc::matmul(bt, x.m, x.m) + fc::elementwise(bt * x.m);  // out projection
    block += fc::elementwise(bt * x.m);                             // residual
    block += fc::layernorm(bt, x.m);                                // ln2
    block += fc::matmul(bt, x.m, x.hid) + fc::elementwise(bt * x.hid);  // fc1
    block += fc::gelu(bt * x.hid);
    block += fc::matmul(bt, x.hid, x.m) + fc::elementwise(bt * x.m);  // fc2
    block += fc::elementwise(bt * x.m);                             // residual
    f += static_cast<u64>(cfg.depth) * block;

    f += fc::layernorm(x.b, x.m);                                // final norm (class token)
    f += fc::matmul(x.b, x.m, x.c) + fc::elementwise(x.b * x.c);  // head
    return f;
}

BackwardSplit backward_flops(const model::ViTConfig& cfg, std::int64_t batch, TrainableMask mask) {
    BackwardSplit out;
    if (mask == TrainableMask::none) return out;  // nothing trainable: no tape, no backward

    const Dims x = dims(cfg, batch);
    const bool lora = mask == TrainableMask::lora_only;
    const bool all = mask == TrainableMask::all;
    const u64 bt = x.b * x.t;
    const u64 bht = x.b * x.h * x.t;
    const u64 btm = bt * x.m;

    u64& act = out.activation_grad;
    u64& wgt = out.weight_grad;

    // head: dFeatures always; dW/db trainable in both regimes
    act += fc::matmul(x.b, x.c, x.m);              // dFeatures
    wgt += fc::matmul(x.b, x.m, x.c);              // dW
    act += fc::elementwise(x.b * x.c);             // bias-add passthrough
    wgt += fc::reduce(x.b * x.c);                  // db
    act += fc::layernorm_backward_dx(x.b, x.m);    // final norm dx
    if (all) wgt += fc::layernorm_backward_affine(x.b, x.m);
    act += fc::elementwise(x.b * x.m);             // class-token select scatter

    for (int i = 0; i < cfg.depth; ++i) {
        // with frozen embeddings, block 0's input is a constant
        const bool x_live = all || i > 0;

        // residual 2: both branches live
        act += 2 * fc::elementwise(btm);
        // fc2: dInput always; dW/db only when all
        act += fc::matmul(bt, x.m, x.hid);
        act += fc::elementwise(btm);  // bias-add passthrough
        if (all) {
            wgt += fc::matmul(bt, x.hid, x.m);
            wgt += fc::reduce(btm);
        }
        act += fc::gelu_backward(bt * x.hid);
        // fc1
        act += fc::matmul(bt, x.hid, x.m);
        act += fc::elementwise(bt * x.hid);
        if (all) {
            wgt += fc::matmul(bt, x.m, x.hid);
            wgt += fc::reduce(bt * x.hid);
        }
        // ln2: its input is always live (attention output feeds it)
        act += fc::layernorm_backward_dx(bt, x.m);
        if (all) wgt += fc::layernorm_backward_affine(bt, x.m);
        // residual 1
        act += (x_live ? 2 : 1) * fc::elementwise(btm);
        // out projection
        act += fc::matmul(bt, x.m, x.m);
        act += fc::elementwise(btm);
        if (all) {
            wgt += fc::matmul(bt, x.m, x.m);
            wgt += fc::reduce(btm);
        }
        // merge heads: transpose + reshape scatters
        act += 2 * fc::elementwise(btm);
        // value mix: both attn and v live
        act += fc::matmul(bht, x.d, x.t) + fc::matmul(bht, x.t, x.d);
        act += fc::softmax_backward(bht, x.t);
        act += fc::elementwise(2 * bht * x.t);  // score scaling
        // scores: dq always, dk only when k is live
        act += fc::matmul(bht, x.t, x.d);
        const bool k_live = x_live;
        if (k_live) {
            act += fc::matmul(bht, x.d, x.t);
            act += fc::elementwise(btm);  // transpose(k) scatter
        }
        // split_heads is reshape+transpose, two scatters per live tensor
        act += 2 * fc::elementwise(btm);  // q
        act += 2 * fc::elementwise(btm);  // v
        if (k_live) act += 2 * fc::elementwise(btm);

        // q and v projections with adapter branches
        for (int proj = 0; proj < 2; ++proj) {
            if (lora) {
                // add of base + branch
                act += (x_live ? 2 : 1) * fc::elementwise(btm);
                act += fc::elementwise(2 * btm);  // branch scaling
                // up matmul: d(u1) activation, d(up^T) weight
                act += fc::matmul(bt, x.m, x.k);
                wgt += fc::matmul(bt, x.k, x.m);
                act += fc::elementwise(x.m * x.k);  // transpose(up) scatter
                // down matmul: d(h) only when live, d(down^T) always
                if (x_live) act += fc::matmul(bt, x.k, x.m);
                wgt += fc::matmul(bt, x.m, x.k);
                act += fc::elementwise(x.k * x.m);  // transpose(down) scatter
                if (x_live) {
                    // frozen base projection still propagates dh
                    act += fc::matmul(bt, x.m, x.m);
                    act += fc::elementwise(btm);  // bias-add passthrough
                }
            } else {
                act += fc::matmul(bt, x.m, x.m);
                act += fc::elementwise(btm);
                wgt += fc::matmul(bt, x.m, x.m);
                wgt += fc::reduce(btm);
            }
        }
        // k projection
        if (k_live) {
            act += fc::matmul(bt, x.m, x.m);
            act += fc::elementwise(btm);
        }
        if (all) {
            wgt += fc::matmul(bt, x.m, x.m);
            wgt += fc::reduce(btm);
        }
        // ln1
        if (x_live) act += fc::layernorm_backward_dx(bt, x.m);
        if (all) wgt += fc::layernorm_backward_affine(bt, x.m);
    }

    if (all) {
        // positional add: dx passthrough + table reduce
        act += fc::elementwise(btm);
        wgt += fc::reduce(btm);
        // prepend: class-token reduce + patch-row scatter
        wgt += fc::reduce(x.b * x.m);
        act += fc::elementwise(x.b * x.patches * x.m);
        // embedding bias + weight (patch input is constant, no dX)
        act += fc::elementwise(x.b * x.patches * x.m);
        wgt += fc::reduce(x.b * x.patches * x.m);
        wgt += fc::matmul(x.b * x.patches, x.pd, x.m);
    }
    return out;
}

u64 training_step_flops(const model::ViTConfig& cfg, std::int64_t batch, TrainableMask mask,
                        bool use_kl) {
    const Dims x = dims(cfg, batch);
    const bool with_lora = mask == TrainableMask::lora_only;
    u64 f = forward_flops(cfg, batch, with_lora);
    f += fc::cross_entropy(x.b, x.c);
    if (mask != TrainableMask::none) f += fc::cross_entropy_backward(x.b, x.c);
    f += backward_flops(cfg, batch, mask).total();
    if (use_kl) {
        f += forward_flops(cfg, batch, false);  // frozen reference forward
        f += 2 * fc::softmax(x.b, x.m);         // both feature distributions
        f += fc::kl_div(x.b, x.m);
        if (mask != TrainableMask::none) {
            f += fc::kl_div_backward_dq(x.b, x.m);
            f += fc::softmax_backward(x.b, x.m);  // ft branch only
        }
        // scalar combine: two scales + add forward, their backward scatters
        f += 3;
        if (mask != TrainableMask::none) f += 6;
    }
    return f;
}

std::string method_name(Method m) {
    switch (m) {
        case Method::ours_xent: return "ours_xent";
        case Method::ours_kl: return "ours_kl";
        case Method::naive_seq: return "naive_seq";
        case Method::replay: return "replay";
    }
    return "?";
}

namespace {

// step cost = samples * per_sample + steps * per_step_constant; every term
// of a training step is linear in the batch except the scalar loss combine
// used by the KL objective
constexpr u64 kl_step_constant(bool use_kl) { return use_kl ? 9 : 0; }

u64 per_sample_step_flops(const model::ViTConfig& cfg, TrainableMask mask, bool use_kl) {
    return training_step_flops(cfg, 1, mask, use_kl) - kl_step_constant(use_kl);
}

}  // namespace

FlopReport protocol_flops(const model::ViTConfig& cfg, const StepSchedule& schedule, Method m) {
    FlopReport r;
    r.forward_per_sample = forward_flops(cfg, 1, false);
    const BackwardSplit bs = backward_flops(cfg, 1, TrainableMask::all);
    r.backward_act_per_sample = bs.activation_grad;
    r.backward_w_per_sample = bs.weight_grad;
    if (schedule.task_samples.size() != schedule.task_steps.size())
        throw ContractError("protocol_flops: schedule step/sample lists disagree");

    const bool ours = m == Method::ours_xent || m == Method::ours_kl;
    const bool kl = m == Method::ours_kl;
    for (std::size_t i = 0; i < schedule.task_steps.size(); ++i) {
        PhaseFlops p;
        p.name = "task" + std::to_string(i);
        p.steps = static_cast<u64>(schedule.task_steps[i]);
        const u64 samples = static_cast<u64>(schedule.task_samples[i]);
        if (ours) {
            p.flops = samples * per_sample_step_flops(cfg, TrainableMask::lora_only, kl) +
                      p.steps * kl_step_constant(kl);
        } else if (m == Method::naive_seq) {
            p.flops = samples * per_sample_step_flops(cfg, TrainableMask::all, false);
        } else {
            // replay: every step carries a memory minibatch, twice the samples
            p.flops = 2 * samples * per_sample_step_flops(cfg, TrainableMask::all, false);
        }
        r.phases.push_back(p);
    }
    if (ours && schedule.memft_steps > 0) {
        PhaseFlops p;
        p.name = "memft";
        p.steps = static_cast<u64>(schedule.memft_steps);
        p.flops = static_cast<u64>(schedule.memft_samples) *
                  per_sample_step_flops(cfg, TrainableMask::all, false);
        r.phases.push_back(p);
    }
    r.total = 0;
    for (const auto& p : r.phases) r.total += p.flops;
    return r;
}

std::string FlopReport::to_json() const {
    std::ostringstream os;
    os << "{\n";
    os << "  \"forward_flops_per_sample\": " << forward_per_sample << ",\n";
    os << "  \"backward_flops_per_sample\": {\n";
    os << "    \"activation_grad\": " << backward_act_per_sample << ",\n";
    os << "    \"weight_grad\": " << backward_w_per_sample << "\n  },\n";
    os << "  \"phases\": [\n";
    for (std::size_t i = 0; i < phases.size(); ++i) {
        os << "    {\"name\": \"" << phases[i].name << "\", \"steps\": " << phases[i].steps
           << ", \"flops\": " << phases[i].flops << "}";
        os << (i + 1 < phases.size() ? ",\n" : "\n");
    }
    os << "  ],\n";
    os << "  \"total\": " << total << ",\n";
    os << "  \"reduction_vs_reference\": " << reduction_vs_reference << "\n";
    os << "}\n";
    return os.str();
}

std::string FlopReport::to_csv() const {
    std::ostringstream os;
    os << "phase,steps,flops\n";
    for (const auto& p : phases) os << p.name << "," << p.steps << "," << p.flops << "\n";
    os << "total,," << total << "\n";
    return os.str();
}

}  // namespace clvit::flops
