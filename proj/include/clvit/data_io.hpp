#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clvit/model.hpp"
#include "clvit/task_arithmetic.hpp"

// Binary formats (little-endian, byte-exact; see docs/FORMATS.md):
//
// dataset file:   magic "CLVTDSET" | u64 header_len | ASCII header | payload
//   header lines: version, count, channels, height, width, classes,
//                 optional class_name entries, end
//   payload:      count u32 labels, then count images of channels*h*w bytes
//
// checkpoint:     magic "CLVTCKPT" | u64 header_len | ASCII header | payload
//   header lines: version, kind (store|task_vector|adapters), config k=v...,
//                 optional provenance, entry lines (name ndim dims... offset),
//                 end
//   payload:      f64 tensors at the stated offsets, assigned sequentially

namespace clvit::dataio {

struct Dataset {
    int channels = 3;
    int height = 16;
    int width = 16;
    std::vector<std::uint8_t> images;  // size * channels * height * width
    std::vector<int> labels;
    std::vector<std::string> class_names;  // optional

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t image_bytes() const {
        return static_cast<std::int64_t>(channels) * height * width;
    }
    int num_classes() const;
    void validate() const;
};

struct SyntheticSpec {
    int num_classes = 8;
    int image_size = 16;
    int channels = 3;
    int pretrain_per_class = 40;
    int train_per_class = 30;
    int test_per_class = 25;
    double noise_std = 80.0;  // byte units; high enough that merging alone stays imperfect
    std::uint64_t seed = 1;

    void validate() const;
};

// Pretrain, task-training and test pools drawn disjointly from one seeded
// generator stream.
struct SyntheticBundle {
    Dataset pretrain;
    Dataset train;
    Dataset test;
};

// Deterministic per-class prototype: an oriented grating plus a class color
// bias, values in [0,255], laid out channel-major like Dataset images.
std::vector<double> class_prototype(const SyntheticSpec& spec, int cls);

SyntheticBundle generate_synthetic(const SyntheticSpec& spec);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Fixed-size records: 1 label byte followed by channels*height*width pixel
// bytes (the classic small-image binary layout).
struct RawLayout {
    int channels = 3;
    int height = 32;
    int width = 32;
    int num_classes = 10;
};
Dataset load_raw_records(const std::string& path, const RawLayout& layout);
void save_raw_records(const std::string& path, const Dataset& ds);

enum class CheckpointKind { store, task_vector, adapters };
std::string kind_name(CheckpointKind k);

struct CheckpointInfo {
    int version = 0;
    CheckpointKind kind = CheckpointKind::store;
    model::ViTConfig config;
    std::string provenance;
    std::vector<std::pair<std::string, Shape>> entries;
};

void save_store(const std::string& path, const model::ParamStore& store);
void save_task_vector(const std::string& path, const taskvec::TaskVector& tv);
void save_adapters(const std::string& path, const model::LoRAParams& lora);

// Reads magic + header only; never touches the payload.
CheckpointInfo scan_checkpoint(const std::string& path);

model::ParamStore load_store(const std::string& path);
taskvec::TaskVector load_task_vector(const std::string& path);
model::LoRAParams load_adapters(const std::string& path);

// Gathers sample indices into a [n, channels, H, W] tensor scaled by 1/255.
Tensor batch_images(const Dataset& ds, const std::vector<std::int64_t>& indices);
std::vector<int> batch_labels(const Dataset& ds, const std::vector<std::int64_t>& indices);

}  // namespace clvit::dataio
