#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clvit/data_io.hpp"
#include "clvit/flop_cost.hpp"
#include "clvit/flops.hpp"
#include "clvit/losses.hpp"
#include "clvit/model.hpp"
#include "clvit/task_arithmetic.hpp"

namespace clvit::harness {

// Disjoint class partition defining the task sequence.
struct TaskSpec {
    int id = 0;
    std::vector<int> classes;
};

struct SplitPlan {
    std::vector<TaskSpec> tasks;

    int num_tasks() const { return static_cast<int>(tasks.size()); }
    // class id -> task index; throws unless the class sets partition {0..C-1}
    std::vector<int> task_of_class(int num_classes) const;
    void validate(int num_classes) const { (void)task_of_class(num_classes); }

    // floor(C/N) classes dealt round-robin; the C mod N leftovers all join
    // the final task, which is therefore the largest.
    static SplitPlan even(int num_classes, int num_tasks);

    // plain-text format: one "task <id>: <class> <class> ..." line per task,
    // classes as indices or names, '#' comments allowed
    static SplitPlan parse(const std::string& text, const std::vector<std::string>& class_names);
    std::string serialize(const std::vector<std::string>& class_names) const;
};

// Deterministic per-task sample index lists (shuffled by seed within tasks).
std::vector<std::vector<std::int64_t>> split_indices(const std::vector<int>& labels,
                                                     const SplitPlan& plan, std::uint64_t seed);

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-6;
    int batch_size = 32;
    int epochs = 20;
    losses::LossWeights loss_weights;
    std::uint64_t seed = 0;

    void validate() const;

    static TrainConfig desk() { return TrainConfig{}; }
    // hyperparameters used at full scale: Adam 5e-6, decay 1e-6, batch 32
    static TrainConfig paper() {
        TrainConfig c;
        c.learning_rate = 5e-6;
        c.weight_decay = 1e-6;
        c.batch_size = 32;
        c.epochs = 50;
        return c;
    }
};

// Class-balanced retained subset: min(per_class, available) samples of each
// class under a seeded shuffle.
struct MemoryReservoir {
    std::vector<std::int64_t> indices;
    int per_class = 10;
    std::map<int, int> per_class_counts;
    bool clamped = false;  // some class had fewer than per_class samples
};

MemoryReservoir build_memory(const dataio::Dataset& data, int per_class, std::uint64_t seed);

struct EvalReport {
    std::vector<double> per_task_accuracy;
    std::vector<std::int64_t> per_task_n;
    double overall_accuracy = 0.0;
    std::int64_t total_n = 0;
    std::vector<double> forgetting;  // best-so-far minus final, when history exists

    std::string to_csv() const;
    std::string to_json() const;
};

struct TrainStats {
    std::int64_t steps = 0;
    std::int64_t samples = 0;
    flopcount::u64 measured_flops = 0;
};

// One task: fresh adapters on a frozen copy of theta_pre, Adam over
// factors + head, loss per use_kl, returns the merged dense model.
model::ParamStore train_task(const model::ParamStore& theta_pre, const dataio::Dataset& data,
                             const std::vector<std::int64_t>& task_indices,
                             const TrainConfig& cfg, bool use_kl, TrainStats* stats = nullptr);

// Balanced-memory fine-tuning of the merged model; all parameters train
// unless lora_only re-attaches adapters for the ablation.
model::ParamStore memory_finetune(const model::ParamStore& theta_final,
                                  const dataio::Dataset& data, const MemoryReservoir& mem,
                                  const TrainConfig& cfg, bool lora_only = false,
                                  TrainStats* stats = nullptr);

// Full-parameter training of a fresh model on the pretrain pool.
model::ParamStore pretrain(const dataio::Dataset& data, const model::ViTConfig& cfg,
                           const TrainConfig& tcfg, TrainStats* stats = nullptr);

EvalReport evaluate(const model::ParamStore& theta, const dataio::Dataset& test,
                    const SplitPlan* plan);

std::vector<double> forgetting_from_history(const std::vector<EvalReport>& history);

using flops::Method;

std::optional<Method> parse_method(const std::string& name);

struct ProtocolConfig {
    TrainConfig task_train;
    TrainConfig memft_train;
    int memory_per_class = 10;
    double merge_lambda = 0.25;
    int replay_capacity = 200;
    bool memft_lora_only = false;
    bool memft_use_kl = false;
    int jobs = 1;  // worker threads for the independent per-task trainings
};

struct ProtocolResult {
    EvalReport report;
    std::vector<std::string> snapshot_names;
    std::vector<EvalReport> snapshots;
    flops::FlopReport flop_report;           // analytic, from the real schedule
    flopcount::u64 measured_flops = 0;       // instrumented counter total
    flops::StepSchedule schedule;
    model::ParamStore theta_final;
    std::vector<taskvec::TaskVector> task_vectors;                   // ours only
    std::vector<std::pair<std::string, model::ParamStore>> stores;   // named artifacts
};

ProtocolResult run_protocol(const model::ParamStore& theta_pre, const dataio::Dataset& train,
                            const dataio::Dataset& test, const SplitPlan& plan,
                            const ProtocolConfig& cfg, Method method);

}  // namespace clvit::harness
