#include "clvit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "clvit/kernels.hpp"
#include "clvit/optim.hpp"
#include "clvit/rng.hpp"

namespace clvit::harness {

// ------------------------------ split plan ---------------------------------

std::vector<int> SplitPlan::task_of_class(int num_classes) const {
    if (tasks.empty()) throw ContractError("split plan has no tasks");
    std::vector<int> owner(static_cast<std::size_t>(num_classes), -1);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        for (int c : tasks[t].classes) {
            if (c < 0 || c >= num_classes)
                throw ContractError("split plan: class " + std::to_string(c) + " outside [0, " +
                                    std::to_string(num_classes) + ")");
            if (owner[static_cast<std::size_t>(c)] != -1)
                throw ContractError("split plan: class " + std::to_string(c) +
                                    " assigned to two tasks");
            owner[static_cast<std::size_t>(c)] = static_cast<int>(t);
        }
    }
    for (int c = 0; c < num_classes; ++c) {
        if (owner[static_cast<std::size_t>(c)] == -1)
            throw ContractError("split plan: class " + std::to_string(c) + " has no task");
    }
    return owner;
}

SplitPlan SplitPlan::even(int num_classes, int num_tasks) {
    if (num_tasks < 1 || num_tasks > num_classes)
        throw ContractError("even split: need 1 <= tasks <= classes, got " +
                            std::to_string(num_tasks) + " tasks for " +
                            std::to_string(num_classes) + " classes");
    SplitPlan plan;
    plan.tasks.resize(static_cast<std::size_t>(num_tasks));
    for (int t = 0; t < num_tasks; ++t) plan.tasks[static_cast<std::size_t>(t)].id = t;
    const int per = num_classes / num_tasks;
    // full round-robin rounds only; the remainder goes to the last task
    for (int c = 0; c < per * num_tasks; ++c)
        plan.tasks[static_cast<std::size_t>(c % num_tasks)].classes.push_back(c);
    for (int c = per * num_tasks; c < num_classes; ++c)
        plan.tasks.back().classes.push_back(c);
    return plan;
}

SplitPlan SplitPlan::parse(const std::string& text, const std::vector<std::string>& class_names) {
    auto resolve = [&](const std::string& tok) -> int {
        for (std::size_t i = 0; i < class_names.size(); ++i) {
            if (class_names[i] == tok) return static_cast<int>(i);
        }
        try {
            std::size_t pos = 0;
            const int v = std::stoi(tok, &pos);
            if (pos == tok.size()) return v;
        } catch (const std::exception&) {
        }
        throw ParseError("split plan: unknown class '" + tok + "'");
    };
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };

    SplitPlan plan;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word != "task")
            throw ParseError("split plan line " + std::to_string(lineno) +
                             ": expected 'task <id>: ...'");
        std::string idtok;
        ls >> idtok;
        bool saw_colon = false;
        if (!idtok.empty() && idtok.back() == ':') {
            idtok.pop_back();
            saw_colon = true;
        }
        TaskSpec spec;
        try {
            spec.id = std::stoi(idtok);
        } catch (const std::exception&) {
            throw ParseError("split plan line " + std::to_string(lineno) + ": bad task id '" +
                             idtok + "'");
        }
        std::string rest;
        std::getline(ls, rest);
        if (!saw_colon) {
            const auto colon = rest.find(':');
            if (colon == std::string::npos)
                throw ParseError("split plan line " + std::to_string(lineno) + ": missing ':'");
            rest = rest.substr(colon + 1);
        }
        // comma separation allows multi-word class names; otherwise whitespace
        std::vector<std::string> tokens;
        if (rest.find(',') != std::string::npos) {
            std::istringstream cs(rest);
            std::string item;
            while (std::getline(cs, item, ',')) {
                item = trim(item);
                if (!item.empty()) tokens.push_back(item);
            }
        } else {
            std::istringstream ws(rest);
            std::string item;
            while (ws >> item) tokens.push_back(item);
        }
        for (const auto& tok : tokens) spec.classes.push_back(resolve(tok));
        plan.tasks.push_back(std::move(spec));
    }
    std::sort(plan.tasks.begin(), plan.tasks.end(),
              [](const TaskSpec& a, const TaskSpec& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < plan.tasks.size(); ++i) {
        if (plan.tasks[i].id != static_cast<int>(i))
            throw ParseError("split plan: task ids must be 0..N-1 without gaps");
    }
    return plan;
}

std::string SplitPlan::serialize(const std::vector<std::string>& class_names) const {
    std::ostringstream os;
    os << "# task to class mapping\n";
    for (const auto& t : tasks) {
        os << "task " << t.id << ":";
        for (std::size_t i = 0; i < t.classes.size(); ++i) {
            const int c = t.classes[i];
            os << (i ? ", " : " ");
            if (c >= 0 && static_cast<std::size_t>(c) < class_names.size())
                os << class_names[static_cast<std::size_t>(c)];
            else
                os << c;
        }
        os << "\n";
    }
    return os.str();
}

std::vector<std::vector<std::int64_t>> split_indices(const std::vector<int>& labels,
                                                     const SplitPlan& plan, std::uint64_t seed) {
    int num_classes = 0;
    for (const auto& t : plan.tasks)
        for (int c : t.classes) num_classes = std::max(num_classes, c + 1);
    const std::vector<int> owner = plan.task_of_class(num_classes);

    std::vector<std::vector<std::int64_t>> out(plan.tasks.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l < 0 || l >= num_classes)
            throw ContractError("split_indices: label " + std::to_string(l) +
                                " not covered by the plan");
        out[static_cast<std::size_t>(owner[static_cast<std::size_t>(l)])].push_back(
            static_cast<std::int64_t>(i));
    }
    for (std::size_t t = 0; t < out.size(); ++t) {
        Rng rng(Rng::mix(seed, 0x5b11d + t));
        rng.shuffle(out[t]);
    }
    return out;
}

void TrainConfig::validate() const {
    if (learning_rate < 0.0 || weight_decay < 0.0)
        throw ConfigError("train config: rates must be nonnegative");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    loss_weights.validate();
}

// ------------------------------ memory -------------------------------------

MemoryReservoir build_memory(const dataio::Dataset& data, int per_class, std::uint64_t seed) {
    if (per_class < 1) throw ContractError("build_memory: per_class must be >= 1");
    const int classes = data.num_classes();
    std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(classes));
    for (std::int64_t i = 0; i < data.size(); ++i)
        by_class[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])].push_back(i);

    MemoryReservoir mem;
    mem.per_class = per_class;
    for (int c = 0; c < classes; ++c) {
        auto& pool = by_class[static_cast<std::size_t>(c)];
        if (pool.empty())
            throw ContractError("build_memory: class " + std::to_string(c) + " has no samples");
        Rng rng(Rng::mix(seed, 0x3e3000 + static_cast<std::uint64_t>(c)));
        rng.shuffle(pool);
        const int take = std::min<int>(per_class, static_cast<int>(pool.size()));
        if (take < per_class) mem.clamped = true;
        for (int i = 0; i < take; ++i) mem.indices.push_back(pool[static_cast<std::size_t>(i)]);
        mem.per_class_counts[c] = take;
    }
    return mem;
}

// ------------------------------ training -----------------------------------

namespace {

using model::ParamStore;

std::vector<std::vector<std::int64_t>> make_batches(std::vector<std::int64_t> order,
                                                    int batch_size) {
    std::vector<std::vector<std::int64_t>> batches;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// Uniform reservoir over the sample stream (the replay baseline's memory).
class ReservoirBuffer {
  public:
    ReservoirBuffer(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

    void add(std::int64_t index) {
        ++seen_;
        if (static_cast<int>(items_.size()) < capacity_) {
            items_.push_back(index);
        } else {
            const std::int64_t j = rng_.integer(0, seen_ - 1);
            if (j < capacity_) items_[static_cast<std::size_t>(j)] = index;
        }
    }

    // with replacement; empty buffer yields an empty draw
    std::vector<std::int64_t> sample(int count) {
        std::vector<std::int64_t> out;
        if (items_.empty()) return out;
        out.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i)
            out.push_back(items_[static_cast<std::size_t>(
                rng_.integer(0, static_cast<std::int64_t>(items_.size()) - 1))]);
        return out;
    }

  private:
    int capacity_;
    std::int64_t seen_ = 0;
    std::vector<std::int64_t> items_;
    Rng rng_;
};

struct LoopTargets {
    ParamStore* store = nullptr;
    model::LoRAParams* lora = nullptr;         // may be null
    const ParamStore* kl_reference = nullptr;  // frozen backbone for the KL term
};

// Shared minibatch loop: shuffle per epoch, forward, loss, backward, Adam.
// When replay is set, each batch is extended with a same-sized memory draw
// after feeding the buffer, so every replay step carries twice the samples.
void train_loop(const LoopTargets& tgt, const dataio::Dataset& data,
                const std::vector<std::int64_t>& indices, const TrainConfig& cfg,
                ReservoirBuffer* replay, TrainStats* stats) {
    cfg.validate();
    if (indices.empty()) throw ContractError("training: empty sample set");
    for (std::int64_t i : indices) {
        const int l = data.labels[static_cast<std::size_t>(i)];
        if (l >= tgt.store->config().num_classes)
            throw ContractError("training: label " + std::to_string(l) +
                                " exceeds the model's class count");
    }

    optim::Adam opt(optim::AdamConfig{.lr = cfg.learning_rate,
                                      .weight_decay = cfg.weight_decay});
    auto get = [&](const std::string& n) -> Tensor {
        if (tgt.lora != nullptr && tgt.lora->factors.count(n)) return tgt.lora->factors.at(n);
        return tgt.store->at(n);
    };
    auto set = [&](const std::string& n, Tensor t) {
        if (tgt.lora != nullptr && tgt.lora->factors.count(n)) {
            tgt.lora->factors[n] = t.trainable(n);
        } else {
            tgt.store->set(n, t.trainable(n));
        }
    };

    flopcount::Scope flop_scope;
    Rng shuffle_rng(Rng::mix(cfg.seed, 0xba7c4));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::int64_t> order = indices;
        shuffle_rng.shuffle(order);
        for (auto& batch : make_batches(std::move(order), cfg.batch_size)) {
            if (replay != nullptr) {
                for (std::int64_t i : batch) replay->add(i);
                const auto mem = replay->sample(static_cast<int>(batch.size()));
                batch.insert(batch.end(), mem.begin(), mem.end());
            }
            Tensor images = dataio::batch_images(data, batch);
            const std::vector<int> labels = dataio::batch_labels(data, batch);

            Tape tape;
            GradMap grads;
            {
                TapeScope scope(tape);
                auto out = model::forward(*tgt.store, tgt.lora, images);
                Tensor loss;
                if (tgt.kl_reference != nullptr) {
                    Tensor pre_features =
                        model::forward(*tgt.kl_reference, nullptr, images).features;
                    Tensor cls = losses::classification_loss(out.logits, labels);
                    Tensor kl = losses::kl_feature_loss(pre_features, out.features);
                    loss = losses::combined_loss(cls, kl, cfg.loss_weights);
                } else {
                    loss = losses::classification_loss(out.logits, labels);
                }
                grads = tape.backward(loss);
            }
            opt.step(grads, get, set);
            if (stats != nullptr) {
                ++stats->steps;
                stats->samples += static_cast<std::int64_t>(batch.size());
            }
        }
    }
    if (stats != nullptr) stats->measured_flops += flop_scope.take();
}

}  // namespace

model::ParamStore train_task(const model::ParamStore& theta_pre, const dataio::Dataset& data,
                             const std::vector<std::int64_t>& task_indices,
                             const TrainConfig& cfg, bool use_kl, TrainStats* stats) {
    if (task_indices.empty()) throw ContractError("train_task: task has no samples");
    ParamStore reference = theta_pre.all_frozen();
    ParamStore store = reference.with_trainable(model::head_names());
    model::LoRAParams lora = model::attach_lora(store.config(), Rng::mix(cfg.seed, 0xada7));

    LoopTargets tgt;
    tgt.store = &store;
    tgt.lora = &lora;
    tgt.kl_reference = use_kl ? &reference : nullptr;
    train_loop(tgt, data, task_indices, cfg, nullptr, stats);
    return model::merge_lora(store, lora);
}

model::ParamStore memory_finetune(const model::ParamStore& theta_final,
                                  const dataio::Dataset& data, const MemoryReservoir& mem,
                                  const TrainConfig& cfg, bool lora_only, TrainStats* stats) {
    if (mem.indices.empty()) throw ContractError("memory_finetune: reservoir is empty");
    if (lora_only) {
        ParamStore store = theta_final.all_frozen().with_trainable(model::head_names());
        model::LoRAParams lora = model::attach_lora(store.config(), Rng::mix(cfg.seed, 0x10ad));
        LoopTargets tgt;
        tgt.store = &store;
        tgt.lora = &lora;
        train_loop(tgt, data, mem.indices, cfg, nullptr, stats);
        return model::merge_lora(store, lora);
    }
    ParamStore store = theta_final.all_trainable();
    LoopTargets tgt;
    tgt.store = &store;
    train_loop(tgt, data, mem.indices, cfg, nullptr, stats);
    return store.all_frozen();
}

model::ParamStore pretrain(const dataio::Dataset& data, const model::ViTConfig& cfg,
                           const TrainConfig& tcfg, TrainStats* stats) {
    ParamStore store = model::init_model(cfg, tcfg.seed).all_trainable();
    std::vector<std::int64_t> all(static_cast<std::size_t>(data.size()));
    for (std::int64_t i = 0; i < data.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    LoopTargets tgt;
    tgt.store = &store;
    train_loop(tgt, data, all, tcfg, nullptr, stats);
    return store.all_frozen();
}

// ------------------------------ evaluation ---------------------------------

EvalReport evaluate(const model::ParamStore& theta, const dataio::Dataset& test,
                    const SplitPlan* plan) {
    const int classes = theta.config().num_classes;
    std::vector<int> owner;
    int num_tasks = 0;
    if (plan != nullptr) {
        owner = plan->task_of_class(classes);
        num_tasks = plan->num_tasks();
    }

    std::vector<std::int64_t> hits(static_cast<std::size_t>(num_tasks), 0);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_tasks), 0);
    std::int64_t hit_total = 0;

    constexpr std::int64_t kEvalBatch = 64;
    for (std::int64_t at = 0; at < test.size(); at += kEvalBatch) {
        std::vector<std::int64_t> batch;
        for (std::int64_t i = at; i < std::min(test.size(), at + kEvalBatch); ++i)
            batch.push_back(i);
        Tensor logits = model::forward(theta, nullptr, dataio::batch_images(test, batch)).logits;
        for (std::size_t r = 0; r < batch.size(); ++r) {
            const double* row = logits.data() + static_cast<std::int64_t>(r) * classes;
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c;
            const int label = test.labels[static_cast<std::size_t>(batch[r])];
            if (label >= classes)
                throw ContractError("evaluate: label " + std::to_string(label) +
                                    " exceeds the model's class count");
            const bool hit = best == label;
            hit_total += hit;
            if (plan != nullptr) {
                const int t = owner[static_cast<std::size_t>(label)];
                counts[static_cast<std::size_t>(t)] += 1;
                hits[static_cast<std::size_t>(t)] += hit;
            }
        }
    }

    EvalReport rep;
    rep.total_n = test.size();
    rep.overall_accuracy = test.size() > 0
                               ? static_cast<double>(hit_total) / static_cast<double>(test.size())
                               : 0.0;
    for (int t = 0; t < num_tasks; ++t) {
        rep.per_task_n.push_back(counts[static_cast<std::size_t>(t)]);
        rep.per_task_accuracy.push_back(
            counts[static_cast<std::size_t>(t)] > 0
                ? static_cast<double>(hits[static_cast<std::size_t>(t)]) /
                      static_cast<double>(counts[static_cast<std::size_t>(t)])
                : 0.0);
    }
    return rep;
}

std::vector<double> forgetting_from_history(const std::vector<EvalReport>& history) {
    if (history.empty()) return {};
    const std::size_t tasks = history.back().per_task_accuracy.size();
    std::vector<double> out(tasks, 0.0);
    for (std::size_t t = 0; t < tasks; ++t) {
        double best = 0.0;
        for (const auto& rep : history)
            if (t < rep.per_task_accuracy.size()) best = std::max(best, rep.per_task_accuracy[t]);
        out[t] = best - history.back().per_task_accuracy[t];
    }
    return out;
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "task,accuracy,n,forgetting\n";
    for (std::size_t t = 0; t < per_task_accuracy.size(); ++t) {
        os << t << "," << per_task_accuracy[t] << "," << per_task_n[t] << ",";
        if (t < forgetting.size()) os << forgetting[t];
        os << "\n";
    }
    os << "overall," << overall_accuracy << "," << total_n << ",\n";
    return os.str();
}

std::string EvalReport::to_json() const {
    std::ostringstream os;
    os << "{\n  \"overall_accuracy\": " << overall_accuracy << ",\n  \"total_n\": " << total_n
       << ",\n  \"tasks\": [\n";
    for (std::size_t t = 0; t < per_task_accuracy.size(); ++t) {
        os << "    {\"task\": " << t << ", \"accuracy\": " << per_task_accuracy[t]
           << ", \"n\": " << per_task_n[t];
        if (t < forgetting.size()) os << ", \"forgetting\": " << forgetting[t];
        os << "}" << (t + 1 < per_task_accuracy.size() ? "," : "") << "\n";
    }
    os << "  ]\n}\n";
    return os.str();
}

// ------------------------------ protocol -----------------------------------

std::optional<Method> parse_method(const std::string& name) {
    if (name == "ours_xent") return Method::ours_xent;
    if (name == "ours_kl") return Method::ours_kl;
    if (name == "naive_seq") return Method::naive_seq;
    if (name == "replay") return Method::replay;
    return std::nullopt;
}

ProtocolResult run_protocol(const model::ParamStore& theta_pre, const dataio::Dataset& train,
                            const dataio::Dataset& test, const SplitPlan& plan,
                            const ProtocolConfig& cfg, Method method) {
    const model::ViTConfig& mcfg = theta_pre.config();
    plan.validate(mcfg.num_classes);
    const auto task_indices = split_indices(train.labels, plan, cfg.task_train.seed);
    for (const auto& idx : task_indices) {
        if (idx.empty()) throw ContractError("run_protocol: a task received no samples");
    }

    ProtocolResult result;
    result.schedule.batch = cfg.task_train.batch_size;

    const bool ours = method == Method::ours_xent || method == Method::ours_kl;
    const bool use_kl = method == Method::ours_kl;

    if (ours) {
        const int n = plan.num_tasks();
        std::vector<model::ParamStore> tuned(static_cast<std::size_t>(n));
        std::vector<TrainStats> stats(static_cast<std::size_t>(n));

        // per-task trainings only share the read-only theta_pre; run them on
        // a bounded worker pool when asked to
        auto run_one = [&](int t) {
            TrainConfig tc = cfg.task_train;
            tc.seed = Rng::mix(cfg.task_train.seed, 0x7a50 + static_cast<std::uint64_t>(t));
            tuned[static_cast<std::size_t>(t)] =
                train_task(theta_pre, train, task_indices[static_cast<std::size_t>(t)], tc,
                           use_kl, &stats[static_cast<std::size_t>(t)]);
        };
        const int jobs = std::max(1, std::min(cfg.jobs, n));
        if (jobs == 1) {
            for (int t = 0; t < n; ++t) run_one(t);
        } else {
            std::vector<std::thread> pool;
            std::atomic<int> next{0};
            for (int w = 0; w < jobs; ++w) {
                pool.emplace_back([&]() {
                    kernels::SerialSection serial;  // workers are the parallelism
                    for (;;) {
                        const int t = next.fetch_add(1);
                        if (t >= n) break;
                        run_one(t);
                    }
                });
            }
            for (auto& th : pool) th.join();
        }

        // fixed task-index order makes the merged result independent of
        // training completion order
        std::vector<taskvec::TaskVector> vectors;
        for (int t = 0; t < n; ++t) {
            vectors.push_back(taskvec::compute_task_vector(
                tuned[static_cast<std::size_t>(t)], theta_pre, "task-" + std::to_string(t)));
            result.stores.emplace_back("task" + std::to_string(t),
                                       tuned[static_cast<std::size_t>(t)]);
            result.schedule.task_steps.push_back(stats[static_cast<std::size_t>(t)].steps);
            result.schedule.task_samples.push_back(stats[static_cast<std::size_t>(t)].samples);
            result.measured_flops += stats[static_cast<std::size_t>(t)].measured_flops;
        }
        taskvec::TaskVector tau =
            taskvec::scale_and_sum(vectors, taskvec::MergeConfig{cfg.merge_lambda});
        model::ParamStore merged = taskvec::apply(theta_pre, tau);
        result.task_vectors = std::move(vectors);
        result.stores.emplace_back("merged", merged);

        result.snapshot_names.push_back("merged");
        result.snapshots.push_back(evaluate(merged, test, &plan));

        MemoryReservoir mem =
            build_memory(train, cfg.memory_per_class, Rng::mix(cfg.task_train.seed, 0x3e3));
        TrainConfig mc = cfg.memft_train;
        mc.seed = Rng::mix(cfg.memft_train.seed, 0x3ef7);
        TrainStats mstats;
        result.theta_final = memory_finetune(merged, train, mem, mc, cfg.memft_lora_only,
                                             &mstats);
        result.schedule.memft_steps = mstats.steps;
        result.schedule.memft_samples = mstats.samples;
        result.measured_flops += mstats.measured_flops;
        result.stores.emplace_back("final", result.theta_final);

        result.snapshot_names.push_back("memft");
        result.snapshots.push_back(evaluate(result.theta_final, test, &plan));
    } else {
        // sequential baselines: one model fine-tuned across the task stream
        ParamStore store = theta_pre.all_trainable();
        ReservoirBuffer replay(cfg.replay_capacity, Rng::mix(cfg.task_train.seed, 0x4e9));
        for (int t = 0; t < plan.num_tasks(); ++t) {
            TrainConfig tc = cfg.task_train;
            tc.seed = Rng::mix(cfg.task_train.seed, 0x7a50 + static_cast<std::uint64_t>(t));
            TrainStats stats;
            LoopTargets tgt;
            tgt.store = &store;
            train_loop(tgt, train, task_indices[static_cast<std::size_t>(t)], tc,
                       method == Method::replay ? &replay : nullptr, &stats);
            result.schedule.task_steps.push_back(stats.steps);
            // the schedule records task-stream samples; the flop model charges
            // replay steps at twice this count
            result.schedule.task_samples.push_back(
                method == Method::replay ? stats.samples / 2 : stats.samples);
            result.measured_flops += stats.measured_flops;
            result.snapshot_names.push_back("after_task" + std::to_string(t));
            result.snapshots.push_back(evaluate(store, test, &plan));
        }
        result.theta_final = store.all_frozen();
        result.stores.emplace_back("final", result.theta_final);
    }

    result.report = result.snapshots.back();
    result.report.forgetting = forgetting_from_history(result.snapshots);
    result.flop_report = flops::protocol_flops(mcfg, result.schedule, method);
    return result;
}

}  // namespace clvit::harness
