#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "clvit/data_io.hpp"
#include "clvit/harness.hpp"
#include "clvit/manifest.hpp"
#include "clvit/rng.hpp"

namespace clvit::cli {

namespace fs = std::filesystem;

namespace {

// Resolved command line + streams, shared by every subcommand callback.
struct Ctx {
    std::vector<std::string> argv;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;
};

struct ModelFlags {
    model::ViTConfig cfg = model::ViTConfig::desk();

    void attach(CLI::App* app) {
        app->add_option("--image-size", cfg.image_size, "input image edge in pixels");
        app->add_option("--patch-size", cfg.patch_size, "patch edge in pixels");
        app->add_option("--channels", cfg.channels, "image channels");
        app->add_option("--dim", cfg.dim, "hidden width");
        app->add_option("--depth", cfg.depth, "transformer blocks");
        app->add_option("--heads", cfg.heads, "attention heads");
        app->add_option("--mlp-ratio", cfg.mlp_ratio, "mlp hidden ratio");
        app->add_option("--classes", cfg.num_classes, "classifier classes");
        app->add_option("--rank", cfg.lora_rank, "adapter rank K");
        app->add_option("--alpha", cfg.lora_alpha, "adapter scaling alpha");
    }

    void echo(std::map<std::string, std::string>& into) const {
        into["image_size"] = std::to_string(cfg.image_size);
        into["patch_size"] = std::to_string(cfg.patch_size);
        into["channels"] = std::to_string(cfg.channels);
        into["dim"] = std::to_string(cfg.dim);
        into["depth"] = std::to_string(cfg.depth);
        into["heads"] = std::to_string(cfg.heads);
        into["mlp_ratio"] = std::to_string(cfg.mlp_ratio);
        into["num_classes"] = std::to_string(cfg.num_classes);
        into["lora_rank"] = std::to_string(cfg.lora_rank);
        into["lora_alpha"] = std::to_string(cfg.lora_alpha);
    }
};

struct TrainFlags {
    harness::TrainConfig cfg;
    std::string preset;

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "hyperparameter preset: desk or paper")
            ->check(CLI::IsMember({"desk", "paper"}));
        app->add_option("--lr", cfg.learning_rate, "Adam learning rate");
        app->add_option("--weight-decay", cfg.weight_decay, "L2 weight decay");
        app->add_option("--batch", cfg.batch_size, "minibatch size");
        app->add_option("--epochs", cfg.epochs, "training epochs");
        app->add_option("--lambda1", cfg.loss_weights.lambda1, "classification loss weight");
        app->add_option("--lambda2", cfg.loss_weights.lambda2, "KL loss weight");
    }

    // preset fills defaults; explicit flags win
    harness::TrainConfig resolve(const CLI::App* app) const {
        harness::TrainConfig out =
            preset == "paper" ? harness::TrainConfig::paper() : harness::TrainConfig::desk();
        if (app->count("--lr")) out.learning_rate = cfg.learning_rate;
        if (app->count("--weight-decay")) out.weight_decay = cfg.weight_decay;
        if (app->count("--batch")) out.batch_size = cfg.batch_size;
        if (app->count("--epochs")) out.epochs = cfg.epochs;
        if (app->count("--lambda1")) out.loss_weights.lambda1 = cfg.loss_weights.lambda1;
        if (app->count("--lambda2")) out.loss_weights.lambda2 = cfg.loss_weights.lambda2;
        out.seed = cfg.seed;
        return out;
    }

    static void echo(const harness::TrainConfig& c, const std::string& prefix,
                     std::map<std::string, std::string>& into) {
        std::ostringstream lr, wd;
        lr << c.learning_rate;
        wd << c.weight_decay;
        into[prefix + "learning_rate"] = lr.str();
        into[prefix + "weight_decay"] = wd.str();
        into[prefix + "batch_size"] = std::to_string(c.batch_size);
        into[prefix + "epochs"] = std::to_string(c.epochs);
        into[prefix + "lambda1"] = std::to_string(c.loss_weights.lambda1);
        into[prefix + "lambda2"] = std::to_string(c.loss_weights.lambda2);
    }
};

std::string default_out_dir() {
    if (const char* env = std::getenv("CLVIT_OUT_DIR")) return env;
    return ".";
}

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out.good()) throw IoError("write failure on '" + path + "'");
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

harness::SplitPlan load_plan(const std::string& plan_path, int tasks,
                             const std::vector<std::string>& class_names, int num_classes) {
    if (!plan_path.empty()) return harness::SplitPlan::parse(read_text(plan_path), class_names);
    if (tasks > 0) return harness::SplitPlan::even(num_classes, tasks);
    throw ContractError("either --plan or --tasks is required");
}

// Applies a JSON config file as defaults: any "--key value" absent from the
// command line is appended. Flags beat the file; the file beats built-ins.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
    std::string config_path;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") config_path = args[i + 1];
    }
    if (config_path.empty()) return args;

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(config_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("config file '" + config_path + "': " + e.what());
    }
    if (!j.is_object()) throw ParseError("config file '" + config_path + "': expected an object");
    auto has_flag = [&](const std::string& flag) {
        return std::find(args.begin(), args.end(), flag) != args.end();
    };
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (has_flag(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) args.push_back(flag);
        } else if (value.is_string()) {
            args.push_back(flag);
            args.push_back(value.get<std::string>());
        } else {
            args.push_back(flag);
            args.push_back(value.dump());
        }
    }
    return args;
}

int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err);

// ------------------------------- commands ----------------------------------

void cmd_synth_data(CLI::App* app, const std::shared_ptr<Ctx>& ctx, const std::shared_ptr<int>& rc) {
    auto spec = std::make_shared<dataio::SyntheticSpec>();
    auto out_dir = std::make_shared<std::string>(default_out_dir());
    auto name = std::make_shared<std::string>("synth");
    auto config = std::make_shared<std::string>();
    app->add_option("--classes", spec->num_classes, "number of classes (>= 2)");
    app->add_option("--image-size", spec->image_size, "image edge in pixels");
    app->add_option("--channels", spec->channels, "image channels");
    app->add_option("--pretrain-per-class", spec->pretrain_per_class, "pretrain pool size");
    app->add_option("--train-per-class", spec->train_per_class, "task pool size");
    app->add_option("--test-per-class", spec->test_per_class, "test pool size");
    app->add_option("--noise-std", spec->noise_std, "pixel noise stddev (bytes)");
    app->add_option("--seed", spec->seed, "generator seed");
    app->add_option("--out-dir", *out_dir, "output directory");
    app->add_option("--name", *name, "output file stem");
    app->add_option("--config", *config, "JSON config file (defaults below flags)");

    app->callback([=]() {
        fs::create_directories(*out_dir);
        auto bundle = dataio::generate_synthetic(*spec);

        manifest::RunManifest m;
        m.command = "synth-data";
        m.argv = ctx->argv;
        m.seeds = {spec->seed};
        m.config["classes"] = std::to_string(spec->num_classes);
        m.config["image_size"] = std::to_string(spec->image_size);
        m.config["channels"] = std::to_string(spec->channels);
        m.config["pretrain_per_class"] = std::to_string(spec->pretrain_per_class);
        m.config["train_per_class"] = std::to_string(spec->train_per_class);
        m.config["test_per_class"] = std::to_string(spec->test_per_class);
        std::ostringstream ns;
        ns << spec->noise_std;
        m.config["noise_std"] = ns.str();

        const std::string base = join(*out_dir, *name);
        dataio::save_dataset(base + ".pretrain.ds", bundle.pretrain);
        dataio::save_dataset(base + ".train.ds", bundle.train);
        dataio::save_dataset(base + ".test.ds", bundle.test);
        for (const char* suffix : {".pretrain.ds", ".train.ds", ".test.ds"})
            m.note_output(base + suffix);
        m.finalize();
        m.save(base + ".manifest.json");

        *ctx->out << "wrote " << base << ".{pretrain,train,test}.ds  (" << bundle.pretrain.size()
                  << "/" << bundle.train.size() << "/" << bundle.test.size() << " samples)\n";
        *rc = 0;
    });
}

void cmd_pretrain(CLI::App* app, const std::shared_ptr<Ctx>& ctx, const std::shared_ptr<int>& rc) {
    auto mf = std::make_shared<ModelFlags>();
    auto tf = std::make_shared<TrainFlags>();
    auto data_path = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>(default_out_dir());
    auto name = std::make_shared<std::string>("pre");
    auto config = std::make_shared<std::string>();
    app->add_option("--data", *data_path, "pretrain pool dataset")->required();
    app->add_option("--out-dir", *out_dir, "output directory");
    app->add_option("--name", *name, "output file stem");
    app->add_option("--seed", tf->cfg.seed, "training seed");
    app->add_option("--config", *config, "JSON config file (defaults below flags)");
    mf->attach(app);
    tf->attach(app);

    app->callback([=]() {
        fs::create_directories(*out_dir);
        dataio::Dataset data = dataio::load_dataset(*data_path);
        harness::TrainConfig tc = tf->resolve(app);
        if (!app->count("--epochs")) tc.epochs = 15;  // pretraining budget default

        harness::TrainStats stats;
        model::ParamStore store = harness::pretrain(data, mf->cfg, tc, &stats);
        harness::EvalReport rep = harness::evaluate(store, data, nullptr);

        const std::string ckpt = join(*out_dir, *name + ".ckpt");
        dataio::save_store(ckpt, store);

        manifest::RunManifest m;
        m.command = "pretrain";
        m.argv = ctx->argv;
        m.seeds = {tc.seed};
        mf->echo(m.config);
        TrainFlags::echo(tc, "", m.config);
        m.note_input(*data_path);
        m.note_output(ckpt);
        m.finalize();
        m.save(join(*out_dir, *name + ".manifest.json"));

        *ctx->out << "pretrained " << stats.steps << " steps; pool accuracy "
                  << rep.overall_accuracy << "\nwrote " << ckpt << "\n";
        *rc = 0;
    });
}

void cmd_train_task(CLI::App* app, const std::shared_ptr<Ctx>& ctx,
                    const std::shared_ptr<int>& rc) {
    auto tf = std::make_shared<TrainFlags>();
    auto pre_path = std::make_shared<std::string>();
    auto data_path = std::make_shared<std::string>();
    auto plan_path = std::make_shared<std::string>();
    auto tasks = std::make_shared<int>(0);
    auto task_id = std::make_shared<int>(-1);
    auto use_kl = std::make_shared<bool>(false);
    auto emit_vector = std::make_shared<bool>(false);
    auto out_dir = std::make_shared<std::string>(default_out_dir());
    auto name = std::make_shared<std::string>();
    auto config = std::make_shared<std::string>();
    app->add_option("--pre", *pre_path, "pretrained checkpoint")->required();
    app->add_option("--data", *data_path, "task-training dataset")->required();
    app->add_option("--plan", *plan_path, "split plan file");
    app->add_option("--tasks", *tasks, "even split into N tasks");
    app->add_option("--task", *task_id, "task id to train")->required();
    app->add_flag("--kl", *use_kl, "use the combined XEnt + KL objective");
    app->add_flag("--emit-vector", *emit_vector, "also write the task vector");
    app->add_option("--out-dir", *out_dir, "output directory");
    app->add_option("--name", *name, "output file stem (default task<id>)");
    app->add_option("--seed", tf->cfg.seed, "training seed");
    app->add_option("--config", *config, "JSON config file (defaults below flags)");
    tf->attach(app);

    app->callback([=]() {
        fs::create_directories(*out_dir);
        model::ParamStore pre = dataio::load_store(*pre_path);
        dataio::Dataset data = dataio::load_dataset(*data_path);
        harness::SplitPlan plan =
            load_plan(*plan_path, *tasks, data.class_names, pre.config().num_classes);
        plan.validate(pre.config().num_classes);
        if (*task_id < 0 || *task_id >= plan.num_tasks())
            throw ContractError("unknown task id " + std::to_string(*task_id) + ", plan has " +
                                std::to_string(plan.num_tasks()) + " tasks");

        harness::TrainConfig tc = tf->resolve(app);
        auto idx = harness::split_indices(data.labels, plan, tc.seed);
        model::ParamStore tuned =
            harness::train_task(pre, data, idx[static_cast<std::size_t>(*task_id)], tc, *use_kl);

        const std::string stem = name->empty() ? "task" + std::to_string(*task_id) : *name;
        const std::string ckpt = join(*out_dir, stem + ".ckpt");
        dataio::save_store(ckpt, tuned);

        manifest::RunManifest m;
        m.command = "train-task";
        m.argv = ctx->argv;
        m.seeds = {tc.seed};
        TrainFlags::echo(tc, "", m.config);
        m.config["task"] = std::to_string(*task_id);
        m.config["kl"] = *use_kl ? "true" : "false";
        m.note_input(*pre_path);
        m.note_input(*data_path);
        m.note_output(ckpt);

        if (*emit_vector) {
            taskvec::TaskVector tv =
                taskvec::compute_task_vector(tuned, pre, "task-" + std::to_string(*task_id));
            const std::string vpath = join(*out_dir, stem + ".vector.ckpt");
            dataio::save_task_vector(vpath, tv);
            m.note_output(vpath);
            *ctx->out << "wrote " << vpath << "\n";
        }
        m.finalize();
        m.save(join(*out_dir, stem + ".manifest.json"));
        *ctx->out << "wrote " << ckpt << "\n";
        *rc = 0;
    });
}

void cmd_merge(CLI::App* app, const std::shared_ptr<Ctx>& ctx, const std::shared_ptr<int>& rc) {
    auto pre_path = std::make_shared<std::string>();
    auto inputs = std::make_shared<std::vector<std::string>>();
    auto lambda = std::make_shared<double>(0.25);
    auto out_dir = std::make_shared<std::string>(default_out_dir());
    auto name = std::make_shared<std::string>("merged");
    auto config = std::make_shared<std::string>();
    app->add_option("--pre", *pre_path, "pretrained checkpoint")->required();
    app->add_option("--inputs", *inputs,
                    "task-vector or fine-tuned-store checkpoints (comma separated)")
        ->required()
        ->delimiter(',');
    app->add_option("--lambda", *lambda, "task-vector scaling factor");
    app->add_option("--out-dir", *out_dir, "output directory");
    app->add_option("--name", *name, "output file stem");
    app->add_option("--config", *config, "JSON config file (defaults below flags)");

    app->callback([=]() {
        fs::create_directories(*out_dir);
        model::ParamStore pre = dataio::load_store(*pre_path);

        std::vector<taskvec::TaskVector> vectors;
        for (const auto& path : *inputs) {
            const dataio::CheckpointInfo info = dataio::scan_checkpoint(path);
            if (info.kind == dataio::CheckpointKind::task_vector) {
                vectors.push_back(dataio::load_task_vector(path));
            } else if (info.kind == dataio::CheckpointKind::store) {
                vectors.push_back(
                    taskvec::compute_task_vector(dataio::load_store(path), pre, path));
            } else {
                throw CompatibilityError("'" + path + "' is neither a store nor a task vector");
            }
        }
        taskvec::TaskVector tau = taskvec::scale_and_sum(vectors, taskvec::MergeConfig{*lambda});
        model::ParamStore merged = taskvec::apply(pre, tau);

        const std::string ckpt = join(*out_dir, *name + ".ckpt");
        dataio::save_store(ckpt, merged);

        manifest::RunManifest m;
        m.command = "merge";
        m.argv = ctx->argv;
        std::ostringstream ls;
        ls << *lambda;
        m.config["lambda"] = ls.str();
        m.note_input(*pre_path);
        for (const auto& path : *inputs) m.note_input(path);
        m.note_output(ckpt);
        m.finalize();
        m.save(join(*out_dir, *name + ".manifest.json"));
        *ctx->out << "merged " << vectors.size() << " vectors at lambda " << *lambda << "\nwrote "
                  << ckpt << "\n";
        *rc = 0;
    });
}

void cmd_memft(CLI::App* app, const std::shared_ptr<Ctx>& ctx, const std::shared_ptr<int>& rc) {
    auto tf = std::make_shared<TrainFlags>();
    auto model_path = std::make_shared<std::string>();
    auto data_path = std::make_shared<std::string>();
    auto per_class = std::make_shared<int>(10);
    auto lora_only = std::make_shared<bool>(false);
    auto out_dir = std::make_shared<std::string>(default_out_dir());
    auto name = std::make_shared<std::string>("final");
    auto config = std::make_shared<std::string>();
    app->add_option("--model", *model_path, "merged model checkpoint")->required();
    app->add_option("--data", *data_path, "training dataset for the reservoir")->required();
    app->add_option("--per-class", *per_class, "memory samples per class")
        ->check(CLI::Range(1, 1 << 20));
    app->add_flag("--lora-only", *lora_only, "fine-tune adapters + head instead of all weights");
    app->add_option("--out-dir", *out_dir, "output directory");
    app->add_option("--name", *name, "output file stem");
    app->add_option("--seed", tf->cfg.seed, "training seed");
    app->add_option("--config", *config, "JSON config file (defaults below flags)");
    tf->attach(app);

    app->callback([=]() {
        fs::create_directories(*out_dir);
        model::ParamStore store = dataio::load_store(*model_path);
        dataio::Dataset data = dataio::load_dataset(*data_path);
        harness::TrainConfig tc = tf->resolve(app);

        harness::MemoryReservoir mem = harness::build_memory(data, *per_class, tc.seed);
        model::ParamStore tuned = harness::memory_finetune(store, data, mem, tc, *lora_only);

        const std::string ckpt = join(*out_dir, *name + ".ckpt");
        dataio::save_store(ckpt, tuned);

        nlohmann::json rj;
        rj["per_class_target"] = *per_class;
        rj["clamped"] = mem.clamped;
        rj["total"] = mem.indices.size();
        for (const auto& [cls, count] : mem.per_class_counts)
            rj["per_class_counts"][std::to_string(cls)] = count;
        const std::string report = join(*out_dir, *name + ".reservoir.json");
        write_text(report, rj.dump(2) + "\n");

        manifest::RunManifest m;
        m.command = "memft";
        m.argv = ctx->argv;
        m.seeds = {tc.seed};
        TrainFlags::echo(tc, "", m.config);
        m.config["per_class"] = std::to_string(*per_class);
        m.config["lora_only"] = *lora_only ? "true" : "false";
        m.note_input(*model_path);
        m.note_input(*data_path);
        m.note_output(ckpt);
        m.note_output(report);
        m.finalize();
        m.save(join(*out_dir, *name + ".manifest.json"));
        *ctx->out << "memory fine-tuned on " << mem.indices.size() << " samples\nwrote " << ckpt
                  << "\n";
        *rc = 0;
    });
}

void cmd_eval(CLI::App* app, const std::shared_ptr<Ctx>& ctx, const std::shared_ptr<int>& rc) {
    auto model_path = std::make_shared<std::string>();
    auto data_path = std::make_shared<std::string>();
    auto plan_path = std::make_shared<std::string>();
    auto tasks = std::make_shared<int>(0);
    auto out_dir = std::make_shared<std::string>(default_out_dir());
    auto name = std::make_shared<std::string>("eval");
    auto config = std::make_shared<std::string>();
    app->add_option("--model", *model_path, "model checkpoint")->required();
    app->add_option("--data", *data_path, "test dataset")->required();
    app->add_option("--plan", *plan_path, "split plan file (optional)");
    app->add_option("--tasks", *tasks, "even split into N tasks (optional)");
    app->add_option("--out-dir", *out_dir, "output directory");
    app->add_option("--name", *name, "output file stem");
    app->add_option("--config", *config, "JSON config file (defaults below flags)");

    app->callback([=]() {
        fs::create_directories(*out_dir);
        model::ParamStore store = dataio::load_store(*model_path);
        dataio::Dataset data = dataio::load_dataset(*data_path);

        harness::EvalReport rep;
        if (!plan_path->empty() || *tasks > 0) {
            harness::SplitPlan plan =
                load_plan(*plan_path, *tasks, data.class_names, store.config().num_classes);
            rep = harness::evaluate(store, data, &plan);
        } else {
            rep = harness::evaluate(store, data, nullptr);  // overall-only report
        }

        const std::string csv = join(*out_dir, *name + ".csv");
        const std::string json = join(*out_dir, *name + ".json");
        write_text(csv, rep.to_csv());
        write_text(json, rep.to_json());

        manifest::RunManifest m;
        m.command = "eval";
        m.argv = ctx->argv;
        m.note_input(*model_path);
        m.note_input(*data_path);
        m.note_output(csv);
        m.note_output(json);
        m.finalize();
        m.save(join(*out_dir, *name + ".manifest.json"));
        *ctx->out << "overall accuracy " << rep.overall_accuracy << " on " << rep.total_n
                  << " samples\nwrote " << csv << "\n";
        *rc = 0;
    });
}

void cmd_bench(CLI::App* app, const std::shared_ptr<Ctx>& ctx, const std::shared_ptr<int>& rc) {
    auto mf = std::make_shared<ModelFlags>();
    auto tf = std::make_shared<TrainFlags>();
    auto method_name = std::make_shared<std::string>();
    auto data_prefix = std::make_shared<std::string>();
    auto pre_path = std::make_shared<std::string>();
    auto plan_path = std::make_shared<std::string>();
    auto tasks = std::make_shared<int>(4);
    auto per_class = std::make_shared<int>(10);
    auto lambda = std::make_shared<double>(0.25);
    auto memft_epochs = std::make_shared<int>(0);
    auto pretrain_epochs = std::make_shared<int>(15);
    auto jobs = std::make_shared<int>(0);
    auto out_dir = std::make_shared<std::string>(default_out_dir());
    auto config = std::make_shared<std::string>();
    app->add_option("--method", *method_name, "ours_xent | ours_kl | naive_seq | replay")
        ->required()
        ->check(CLI::IsMember({"ours_xent", "ours_kl", "naive_seq", "replay"}));
    app->add_option("--data-prefix", *data_prefix,
                    "dataset stem; expects <stem>.{pretrain,train,test}.ds")
        ->required();
    app->add_option("--pre", *pre_path, "reuse a pretrained checkpoint (skips pretraining)");
    app->add_option("--plan", *plan_path, "split plan file");
    app->add_option("--tasks", *tasks, "even split into N tasks");
    app->add_option("--per-class", *per_class, "memory samples per class");
    app->add_option("--lambda", *lambda, "task-vector scaling factor");
    app->add_option("--memft-epochs", *memft_epochs, "memory fine-tune epochs (0 = --epochs)");
    app->add_option("--pretrain-epochs", *pretrain_epochs, "pretraining epochs");
    app->add_option("--jobs", *jobs,
                    "worker threads for per-task trainings (0 = min(tasks, cores))");
    app->add_option("--out-dir", *out_dir, "output directory");
    app->add_option("--seed", tf->cfg.seed, "seed for every phase");
    app->add_option("--config", *config, "JSON config file (defaults below flags)");
    mf->attach(app);
    tf->attach(app);

    app->callback([=]() {
        fs::create_directories(*out_dir);
        const auto method = harness::parse_method(*method_name);
        if (!method) throw ContractError("unknown method '" + *method_name + "'");

        dataio::Dataset pretrain_data = dataio::load_dataset(*data_prefix + ".pretrain.ds");
        dataio::Dataset train_data = dataio::load_dataset(*data_prefix + ".train.ds");
        dataio::Dataset test_data = dataio::load_dataset(*data_prefix + ".test.ds");

        harness::TrainConfig tc = tf->resolve(app);

        manifest::RunManifest m;
        m.command = "bench";
        m.argv = ctx->argv;
        m.seeds = {tc.seed};
        m.config["method"] = *method_name;
        mf->echo(m.config);
        TrainFlags::echo(tc, "task_", m.config);
        m.config["tasks"] = std::to_string(*tasks);
        m.config["per_class"] = std::to_string(*per_class);
        std::ostringstream ls;
        ls << *lambda;
        m.config["lambda"] = ls.str();
        m.config["jobs"] = std::to_string(*jobs);
        m.config["pretrain_epochs"] = std::to_string(*pretrain_epochs);
        for (const char* suffix : {".pretrain.ds", ".train.ds", ".test.ds"})
            m.note_input(*data_prefix + suffix);

        model::ParamStore pre = [&] {
            if (!pre_path->empty()) {
                m.note_input(*pre_path);
                return dataio::load_store(*pre_path);
            }
            harness::TrainConfig ptc = tc;
            ptc.epochs = *pretrain_epochs;
            ptc.seed = Rng::mix(tc.seed, 0x97e0);
            return harness::pretrain(pretrain_data, mf->cfg, ptc);
        }();

        harness::SplitPlan plan =
            load_plan(*plan_path, *tasks, train_data.class_names, pre.config().num_classes);
        plan.validate(pre.config().num_classes);

        harness::ProtocolConfig pc;
        pc.task_train = tc;
        pc.memft_train = tc;
        if (*memft_epochs > 0) pc.memft_train.epochs = *memft_epochs;
        pc.memory_per_class = *per_class;
        pc.merge_lambda = *lambda;
        // bounded worker pool: one job per task, capped at the core count
        pc.jobs = *jobs > 0 ? *jobs
                            : std::min(plan.num_tasks(),
                                       std::max(1, static_cast<int>(
                                                       std::thread::hardware_concurrency())));

        harness::ProtocolResult result =
            harness::run_protocol(pre, train_data, test_data, plan, pc, *method);

        const auto replay_ref =
            flops::protocol_flops(pre.config(), result.schedule, flops::Method::replay);
        result.flop_report.reduction_vs_reference =
            static_cast<double>(replay_ref.total) / static_cast<double>(result.flop_report.total);

        const fs::path dir(*out_dir);
        const std::string pre_ckpt = join(dir, "pre.ckpt");
        dataio::save_store(pre_ckpt, pre);
        m.note_output(pre_ckpt);
        for (const auto& [sname, store] : result.stores) {
            const std::string path = join(dir, sname + ".ckpt");
            dataio::save_store(path, store);
            m.note_output(path);
        }
        for (const auto& tv : result.task_vectors) {
            const std::string path = join(dir, tv.provenance + ".vector.ckpt");
            dataio::save_task_vector(path, tv);
            m.note_output(path);
        }

        const std::string plan_txt = join(dir, "plan.txt");
        write_text(plan_txt, plan.serialize(train_data.class_names));
        m.note_output(plan_txt);

        const std::string eval_csv = join(dir, "eval.csv");
        const std::string eval_json = join(dir, "eval.json");
        write_text(eval_csv, result.report.to_csv());
        write_text(eval_json, result.report.to_json());
        m.note_output(eval_csv);
        m.note_output(eval_json);

        nlohmann::json sj = nlohmann::json::array();
        for (std::size_t i = 0; i < result.snapshots.size(); ++i) {
            sj.push_back({{"stage", result.snapshot_names[i]},
                          {"overall_accuracy", result.snapshots[i].overall_accuracy},
                          {"per_task_accuracy", result.snapshots[i].per_task_accuracy}});
        }
        const std::string snap_json = join(dir, "snapshots.json");
        write_text(snap_json, sj.dump(2) + "\n");
        m.note_output(snap_json);

        const std::string flops_json = join(dir, "flops.json");
        const std::string flops_csv = join(dir, "flops.csv");
        write_text(flops_json, result.flop_report.to_json());
        write_text(flops_csv, result.flop_report.to_csv());
        m.note_output(flops_json);
        m.note_output(flops_csv);

        nlohmann::json mj;
        mj["measured_flops"] = result.measured_flops;
        mj["analytic_flops"] = result.flop_report.total;
        const std::string measured_json = join(dir, "measured_flops.json");
        write_text(measured_json, mj.dump(2) + "\n");
        m.note_output(measured_json);

        m.finalize();
        m.save(join(dir, "manifest.json"));

        *ctx->out << *method_name << ": overall accuracy " << result.report.overall_accuracy
                  << "\n";
        for (std::size_t i = 0; i < result.snapshots.size(); ++i)
            *ctx->out << "  " << result.snapshot_names[i] << ": "
                      << result.snapshots[i].overall_accuracy << "\n";
        *ctx->out << "analytic PFLOPs " << static_cast<double>(result.flop_report.total) / 1e15
                  << ", reduction vs replay " << result.flop_report.reduction_vs_reference
                  << "x\n";
        *rc = 0;
    });
}

void cmd_rerun(CLI::App* app, const std::shared_ptr<Ctx>& ctx, const std::shared_ptr<int>& rc) {
    auto manifest_path = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>();
    app->add_option("--manifest", *manifest_path, "manifest of the run to reproduce")->required();
    app->add_option("--out-dir", *out_dir, "directory for the reproduced outputs")->required();

    app->callback([=]() {
        manifest::RunManifest recorded = manifest::RunManifest::load(*manifest_path);
        if (recorded.argv.empty())
            throw ContractError("manifest has no recorded command line to rerun");

        std::vector<std::string> args = recorded.argv;
        bool rewrote = false;
        for (std::size_t i = 0; i + 1 < args.size(); ++i) {
            if (args[i] == "--out-dir") {
                args[i + 1] = *out_dir;
                rewrote = true;
            }
        }
        if (!rewrote) {
            args.push_back("--out-dir");
            args.push_back(*out_dir);
        }
        std::ostringstream sink;
        const int inner = dispatch(args, sink, *ctx->err);
        if (inner != 0) throw ContractError("rerun of the recorded command failed");

        bool all_match = true;
        for (const auto& [path, hash] : recorded.outputs) {
            const std::string name = fs::path(path).filename().string();
            const std::string mine = (fs::path(*out_dir) / name).string();
            std::string got = "<missing>";
            if (fs::exists(mine)) got = manifest::hex(manifest::hash_file(mine));
            const bool match = got == hash;
            all_match = all_match && match;
            *ctx->out << (match ? "MATCH " : "DIFF  ") << name << " " << hash << " vs " << got
                      << "\n";
        }
        if (!all_match) throw ContractError("rerun outputs differ from the manifest");
        *ctx->out << "rerun reproduced every artifact hash\n";
        *rc = 0;
    });
}

int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    try {
        args = apply_config_file(args);
    } catch (const clvit::Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }

    CLI::App app{"continual-learning engine: per-task adapters, task-vector merging, "
                 "balanced-memory fine-tuning"};
    app.name("clvit");
    app.require_subcommand(1);

    auto ctx = std::make_shared<Ctx>();
    ctx->argv = args;
    ctx->out = &out;
    ctx->err = &err;
    auto rc = std::make_shared<int>(1);

    cmd_synth_data(app.add_subcommand("synth-data", "generate a synthetic dataset bundle"), ctx,
                   rc);
    cmd_pretrain(app.add_subcommand("pretrain", "train a fresh backbone on the pretrain pool"),
                 ctx, rc);
    cmd_train_task(app.add_subcommand("train-task", "adapter-train one task from theta_pre"), ctx,
                   rc);
    cmd_merge(app.add_subcommand("merge", "scale, sum and apply task vectors"), ctx, rc);
    cmd_memft(app.add_subcommand("memft", "balanced-memory fine-tuning"), ctx, rc);
    cmd_eval(app.add_subcommand("eval", "per-task and overall accuracy reports"), ctx, rc);
    cmd_bench(app.add_subcommand("bench", "full protocol run with reports and manifest"), ctx, rc);
    cmd_rerun(app.add_subcommand("rerun", "re-execute a manifest and compare artifact hashes"),
              ctx, rc);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const clvit::ConfigError& e) {
        // bad flag values are usage errors, not runtime failures
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const clvit::Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return *rc;
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    return dispatch(std::move(args), out, err);
}

}  // namespace clvit::cli
