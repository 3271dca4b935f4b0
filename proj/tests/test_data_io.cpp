#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "clvit/data_io.hpp"
#include "test_helpers.hpp"

using namespace clvit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("clvit_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

dataio::SyntheticSpec tiny_spec() {
    dataio::SyntheticSpec spec;
    spec.num_classes = 4;
    spec.image_size = 8;
    spec.pretrain_per_class = 3;
    spec.train_per_class = 5;
    spec.test_per_class = 4;
    spec.seed = 99;
    return spec;
}

model::ViTConfig small_config() {
    model::ViTConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.num_classes = 4;
    c.lora_rank = 2;
    return c;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and noise-free at std 0") {
    dataio::SyntheticSpec spec = tiny_spec();
    spec.noise_std = 0.0;
    auto a = dataio::generate_synthetic(spec);
    auto b = dataio::generate_synthetic(spec);
    CHECK(a.train.images == b.train.images);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.pretrain.images == b.pretrain.images);
    CHECK(a.test.images == b.test.images);

    // with zero noise every sample equals its class prototype
    for (std::int64_t i = 0; i < a.train.size(); ++i) {
        const auto proto = dataio::class_prototype(spec, a.train.labels[static_cast<std::size_t>(i)]);
        const std::uint8_t* img =
            a.train.images.data() + static_cast<std::size_t>(i * a.train.image_bytes());
        for (std::int64_t j = 0; j < a.train.image_bytes(); ++j)
            CHECK(static_cast<double>(img[j]) ==
                  std::clamp(std::round(proto[static_cast<std::size_t>(j)]), 0.0, 255.0));
    }
}

TEST_CASE("nearest-prototype classifier is near perfect at low noise") {
    dataio::SyntheticSpec spec = tiny_spec();
    spec.num_classes = 8;
    spec.image_size = 16;
    spec.test_per_class = 20;
    spec.noise_std = 25.0;  // 0.1 * byte range
    auto bundle = dataio::generate_synthetic(spec);

    std::vector<std::vector<double>> protos;
    for (int c = 0; c < spec.num_classes; ++c) protos.push_back(dataio::class_prototype(spec, c));

    std::int64_t hit = 0;
    const dataio::Dataset& ds = bundle.test;
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        const std::uint8_t* img = ds.images.data() + static_cast<std::size_t>(i * ds.image_bytes());
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < spec.num_classes; ++c) {
            double d = 0.0;
            for (std::int64_t j = 0; j < ds.image_bytes(); ++j) {
                const double diff = img[j] - protos[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == ds.labels[static_cast<std::size_t>(i)]) ++hit;
    }
    CHECK(static_cast<double>(hit) / ds.size() >= 0.99);
}

TEST_CASE("generated pools are pairwise disjoint") {
    auto bundle = dataio::generate_synthetic(tiny_spec());
    auto key = [](const dataio::Dataset& ds, std::int64_t i) {
        return std::string(reinterpret_cast<const char*>(ds.images.data()) + i * ds.image_bytes(),
                           static_cast<std::size_t>(ds.image_bytes()));
    };
    std::set<std::string> seen;
    for (const auto* ds : {&bundle.pretrain, &bundle.train, &bundle.test}) {
        for (std::int64_t i = 0; i < ds->size(); ++i) {
            auto [it, fresh] = seen.insert(key(*ds, i));
            CHECK(fresh);
        }
    }
}

TEST_CASE("dataset files round trip byte for byte") {
    TempDir dir;
    auto bundle = dataio::generate_synthetic(tiny_spec());
    const std::string p1 = dir.file("a.ds");
    const std::string p2 = dir.file("b.ds");
    dataio::save_dataset(p1, bundle.train);
    dataio::Dataset loaded = dataio::load_dataset(p1);
    CHECK(loaded.images == bundle.train.images);
    CHECK(loaded.labels == bundle.train.labels);
    CHECK(loaded.class_names == bundle.train.class_names);
    dataio::save_dataset(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("corrupt dataset files are rejected without partial loads") {
    TempDir dir;
    auto bundle = dataio::generate_synthetic(tiny_spec());
    const std::string p = dir.file("a.ds");
    dataio::save_dataset(p, bundle.train);
    const std::string good = slurp(p);

    // truncated payload
    dump(dir.file("trunc.ds"), good.substr(0, good.size() - 7));
    CHECK_THROWS_AS(dataio::load_dataset(dir.file("trunc.ds")), ParseError);

    // bad magic
    std::string bad = good;
    bad[0] = 'X';
    dump(dir.file("magic.ds"), bad);
    CHECK_THROWS_AS(dataio::load_dataset(dir.file("magic.ds")), ParseError);

    // header length beyond file
    std::string hdr = good;
    hdr[8] = static_cast<char>(0xff);
    hdr[9] = static_cast<char>(0xff);
    dump(dir.file("hdr.ds"), hdr);
    CHECK_THROWS_AS(dataio::load_dataset(dir.file("hdr.ds")), ParseError);

    CHECK_THROWS_AS(dataio::load_dataset(dir.file("missing.ds")), IoError);
}

TEST_CASE("raw records round trip and size checks") {
    TempDir dir;
    auto bundle = dataio::generate_synthetic(tiny_spec());
    const std::string p = dir.file("raw.bin");
    dataio::save_raw_records(p, bundle.train);

    dataio::RawLayout layout{bundle.train.channels, bundle.train.height, bundle.train.width,
                             bundle.train.num_classes()};
    dataio::Dataset loaded = dataio::load_raw_records(p, layout);
    CHECK(loaded.images == bundle.train.images);
    CHECK(loaded.labels == bundle.train.labels);

    // off-by-one file length
    std::string bytes = slurp(p);
    dump(dir.file("off.bin"), bytes + "x");
    CHECK_THROWS_AS(dataio::load_raw_records(dir.file("off.bin"), layout), ParseError);

    // labels must stay below the declared class count
    dataio::RawLayout narrow = layout;
    narrow.num_classes = 2;
    CHECK_THROWS_AS(dataio::load_raw_records(p, narrow), ParseError);
}

TEST_CASE("store checkpoints round trip losslessly") {
    TempDir dir;
    model::ParamStore store = model::init_model(small_config(), 7);
    const std::string p = dir.file("store.ckpt");
    dataio::save_store(p, store);

    model::ParamStore loaded = dataio::load_store(p);
    CHECK(loaded.config() == store.config());
    taskvec::TaskVector diff = taskvec::compute_task_vector(loaded, store);
    for (const auto& [name, d] : diff.deltas)
        for (std::int64_t i = 0; i < d.numel(); ++i) CHECK(d.at(i) == 0.0);

    // save -> load -> save is byte-stable
    const std::string p2 = dir.file("store2.ckpt");
    dataio::save_store(p2, loaded);
    CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("header-only scan agrees with the full load") {
    TempDir dir;
    model::ParamStore store = model::init_model(small_config(), 8);
    const std::string p = dir.file("store.ckpt");
    dataio::save_store(p, store);

    dataio::CheckpointInfo info = dataio::scan_checkpoint(p);
    CHECK(info.kind == dataio::CheckpointKind::store);
    CHECK(info.config == store.config());
    model::ParamStore loaded = dataio::load_store(p);
    REQUIRE(info.entries.size() == loaded.size());
    std::size_t i = 0;
    for (const auto& [name, t] : loaded.entries()) {
        CHECK(info.entries[i].first == name);
        CHECK(info.entries[i].second == t.shape());
        ++i;
    }
}

TEST_CASE("checkpoint kind safety") {
    TempDir dir;
    model::ParamStore pre = model::init_model(small_config(), 9);
    model::ParamStore other = model::init_model(small_config(), 10);
    taskvec::TaskVector tv = taskvec::compute_task_vector(other, pre, "task-3");

    const std::string p = dir.file("tv.ckpt");
    dataio::save_task_vector(p, tv);
    CHECK_THROWS_AS(dataio::load_store(p), CompatibilityError);

    taskvec::TaskVector loaded = dataio::load_task_vector(p);
    CHECK(loaded.provenance == "task-3");
    for (const auto& [name, d] : tv.deltas)
        CHECK(d.bit_equal(loaded.deltas.at(name)));

    const std::string sp = dir.file("store.ckpt");
    dataio::save_store(sp, pre);
    CHECK_THROWS_AS(dataio::load_task_vector(sp), CompatibilityError);
}

TEST_CASE("adapter checkpoints round trip") {
    TempDir dir;
    model::LoRAParams lora = model::attach_lora(small_config(), 11);
    const std::string p = dir.file("adapters.ckpt");
    dataio::save_adapters(p, lora);
    model::LoRAParams loaded = dataio::load_adapters(p);
    CHECK(loaded.scaling == lora.scaling);
    CHECK(loaded.factors.size() == lora.factors.size());
    for (const auto& [name, t] : lora.factors) {
        CHECK(t.bit_equal(loaded.factors.at(name)));
        CHECK(loaded.factors.at(name).requires_grad());
    }
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir;
    model::ParamStore store = model::init_model(small_config(), 12);
    const std::string p = dir.file("store.ckpt");
    dataio::save_store(p, store);
    const std::string good = slurp(p);

    dump(dir.file("trunc.ckpt"), good.substr(0, good.size() - 16));
    CHECK_THROWS_AS(dataio::load_store(dir.file("trunc.ckpt")), ParseError);

    std::string magic = good;
    magic[3] = '?';
    dump(dir.file("magic.ckpt"), magic);
    CHECK_THROWS_AS(dataio::load_store(dir.file("magic.ckpt")), ParseError);

    // flip the version digit inside the header
    std::string ver = good;
    const auto at = ver.find("version 1");
    ver[at + 8] = '9';
    dump(dir.file("ver.ckpt"), ver);
    CHECK_THROWS_AS(dataio::load_store(dir.file("ver.ckpt")), ParseError);
}

TEST_CASE("random store round trips are byte exact") {
    TempDir dir;
    Rng rng(77);
    for (std::uint64_t trial = 0; trial < 8; ++trial) {
        model::ViTConfig cfg = small_config();
        cfg.depth = 1 + static_cast<int>(trial % 2);
        model::ParamStore store = model::init_model(cfg, 100 + trial);
        // perturb with uniform noise so payloads are arbitrary doubles
        for (const auto& name : store.names()) {
            std::vector<double> d = store.at(name).copy_of_data();
            for (auto& v : d) v = rng.uniform(-3.0, 3.0);
            store.set(name, Tensor::from_data(store.at(name).shape(), std::move(d)).named(name));
        }
        const std::string p = dir.file("r" + std::to_string(trial) + ".ckpt");
        dataio::save_store(p, store);
        model::ParamStore loaded = dataio::load_store(p);
        for (const auto& [name, t] : store.entries()) CHECK(t.bit_equal(loaded.at(name)));
    }
}

TEST_CASE("batch helpers gather and scale") {
    auto bundle = dataio::generate_synthetic(tiny_spec());
    const dataio::Dataset& ds = bundle.train;
    Tensor batch = dataio::batch_images(ds, {0, 2});
    CHECK(batch.shape() == Shape{2, ds.channels, ds.height, ds.width});
    CHECK(batch.at(0) == ds.images[0] / 255.0);
    auto labels = dataio::batch_labels(ds, {0, 2});
    CHECK(labels[0] == ds.labels[0]);
    CHECK(labels[1] == ds.labels[2]);
    CHECK_THROWS_AS(dataio::batch_images(ds, {ds.size()}), IndexError);
}
