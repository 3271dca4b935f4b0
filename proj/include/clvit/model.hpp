#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clvit/tensor.hpp"

namespace clvit::model {

// Geometry and adapter hyperparameters of the small ViT. dim is the hidden
// width M, lora_rank the K of the rank-K updates attached to every attention
// query/value projection.
struct ViTConfig {
    int image_size = 16;
    int patch_size = 4;
    int channels = 3;
    int dim = 64;
    int depth = 4;
    int heads = 4;
    double mlp_ratio = 4.0;
    int num_classes = 8;
    int lora_rank = 4;
    double lora_alpha = 4.0;

    int grid() const { return image_size / patch_size; }
    int tokens() const { return grid() * grid() + 1; }  // patches + class token
    int head_dim() const { return dim / heads; }
    int mlp_hidden() const { return static_cast<int>(dim * mlp_ratio); }
    int patch_dim() const { return patch_size * patch_size * channels; }
    double lora_scaling() const { return lora_alpha / lora_rank; }

    void validate() const;

    static ViTConfig desk() { return ViTConfig{}; }
    // ViT-Base shape with a 1000-way head, used for parameter-count checks.
    static ViTConfig paper_shape() {
        ViTConfig c;
        c.image_size = 224;
        c.patch_size = 16;
        c.channels = 3;
        c.dim = 768;
        c.depth = 12;
        c.heads = 12;
        c.num_classes = 1000;
        c.lora_rank = 16;
        c.lora_alpha = 16.0;
        return c;
    }

    bool operator==(const ViTConfig&) const = default;
};

// Named, lexicographically ordered weight collection. The name set and all
// shapes are fully determined by the config, which makes any two stores from
// the same config arithmetic-compatible.
class ParamStore {
  public:
    ParamStore() = default;
    ParamStore(ViTConfig cfg, std::map<std::string, Tensor> entries)
        : cfg_(cfg), entries_(std::move(entries)) {}

    const ViTConfig& config() const { return cfg_; }
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    void set(const std::string& name, Tensor t);  // shape-checked replacement
    std::size_t size() const { return entries_.size(); }
    const std::map<std::string, Tensor>& entries() const { return entries_; }
    std::vector<std::string> names() const;
    std::int64_t total_params() const;

    ParamStore with_trainable(const std::vector<std::string>& names) const;
    ParamStore all_trainable() const;
    ParamStore all_frozen() const;

  private:
    ViTConfig cfg_;
    std::map<std::string, Tensor> entries_;
};

// Rank-K factor pairs for every adapted projection. down is [K,M], up is
// [M,K]; the effective weight update is lora_scaling * up-composed-with-down,
// rank <= K by construction. up starts at zero so a fresh adapter is exactly
// the identity update.
struct LoRAParams {
    ViTConfig config;
    double scaling = 1.0;
    std::map<std::string, Tensor> factors;
    bool consumed = false;

    std::int64_t total_params() const;
};

// Canonical parameter naming schema (the checkpoint / task-vector contract):
//   embed.weight [patch_dim, M]      embed.bias [M]
//   cls_token [M]                    pos_embed [tokens, M]
//   block.<i>.ln1.gain|bias [M]
//   block.<i>.attn.{q,k,v,out}.weight [M,M] |.bias [M]
//   block.<i>.ln2.gain|bias [M]
//   block.<i>.mlp.fc1.weight [M,H]   block.<i>.mlp.fc1.bias [H]
//   block.<i>.mlp.fc2.weight [H,M]   block.<i>.mlp.fc2.bias [M]
//   norm.gain|bias [M]
//   head.weight [M,C]                head.bias [C]
// Adapter factors use block.<i>.attn.{q,v}.lora_down / .lora_up.
std::vector<std::pair<std::string, Shape>> schema(const ViTConfig& cfg);
std::vector<std::string> adapted_projections(const ViTConfig& cfg);  // q/v base names

ParamStore init_model(const ViTConfig& cfg, std::uint64_t seed);
LoRAParams attach_lora(const ViTConfig& cfg, std::uint64_t seed);

struct ForwardOut {
    Tensor features;  // backbone class-token output [b, M]
    Tensor logits;    // head output [b, C]
};

// images: [b, channels, H, W] in [0,1]. lora may be null.
ForwardOut forward(const ParamStore& params, const LoRAParams* lora, const Tensor& images);

// Folds scaling*up*down into the adapted weights and returns a plain store.
// Consumes the adapters: a second merge of the same LoRAParams throws.
ParamStore merge_lora(const ParamStore& params, LoRAParams& lora);

struct ParamCount {
    std::int64_t total = 0;
    std::int64_t trainable = 0;
    double fraction = 0.0;
};
ParamCount param_count(const ParamStore& params, const LoRAParams* lora);

// Flattens [b,C,H,W] images into per-patch rows [b, patches, patch_dim],
// channel-major within a patch.
Tensor patchify(const ViTConfig& cfg, const Tensor& images);

// Trainable-name helpers for the two training regimes.
std::vector<std::string> head_names();

}  // namespace clvit::model
