#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clvit/model.hpp"

namespace clvit::flops {

using u64 = std::uint64_t;

enum class TrainableMask { none, lora_only, all };

// Analytic forward cost of one batch through the model (no loss). with_lora
// adds the adapter branches on every query/value projection. Costs follow
// the shared convention in flop_cost.hpp, mirroring the runtime counter op
// by op, so the two agree to rounding on any config.
u64 forward_flops(const model::ViTConfig& cfg, std::int64_t batch, bool with_lora = false);

struct BackwardSplit {
    u64 activation_grad = 0;
    u64 weight_grad = 0;
    u64 total() const { return activation_grad + weight_grad; }
};

// Analytic backward cost. Activation gradients are charged for every op on
// the path from the loss to a trainable leaf; weight gradients only for the
// trainable tensors themselves. lora_only assumes adapters are attached and
// only factors + head train; all is full fine-tuning of the plain model;
// none runs no backward at all.
BackwardSplit backward_flops(const model::ViTConfig& cfg, std::int64_t batch, TrainableMask mask);

// Full training step: forward (+adapters), loss forward/backward, model
// backward, and with use_kl the frozen reference forward plus the KL terms.
u64 training_step_flops(const model::ViTConfig& cfg, std::int64_t batch, TrainableMask mask,
                        bool use_kl);

// Per-phase totals of a whole protocol run.
struct PhaseFlops {
    std::string name;
    u64 steps = 0;
    u64 flops = 0;
};

struct FlopReport {
    u64 forward_per_sample = 0;
    u64 backward_act_per_sample = 0;
    u64 backward_w_per_sample = 0;
    std::vector<PhaseFlops> phases;
    u64 total = 0;
    double reduction_vs_reference = 0.0;  // reference total / this total, 0 if unset

    std::string to_json() const;
    std::string to_csv() const;
};

// Step and sample counts are inputs, not guesses: the harness derives them
// from the actual run schedule (batches may be ragged, so samples are
// tracked separately from optimizer steps).
struct StepSchedule {
    std::vector<std::int64_t> task_steps;
    std::vector<std::int64_t> task_samples;
    std::int64_t memft_steps = 0;
    std::int64_t memft_samples = 0;
    std::int64_t batch = 32;
};

enum class Method { ours_xent, ours_kl, naive_seq, replay };
std::string method_name(Method m);

FlopReport protocol_flops(const model::ViTConfig& cfg, const StepSchedule& schedule, Method m);

}  // namespace clvit::flops
