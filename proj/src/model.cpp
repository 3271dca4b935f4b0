#include "clvit/model.hpp"

#include <algorithm>
#include <cmath>

#include "clvit/kernels.hpp"
#include "clvit/rng.hpp"

namespace clvit::model {

namespace {

constexpr double kInitStd = 0.02;

std::string block_prefix(int i) { return "block." + std::to_string(i) + "."; }

}  // namespace

void ViTConfig::validate() const {
    // depth 0 is a valid degenerate model (embedding + head only)
    if (image_size <= 0 || patch_size <= 0 || channels <= 0 || dim <= 0 || depth < 0 ||
        heads <= 0 || num_classes <= 0 || mlp_ratio <= 0.0)
        throw ConfigError("config: all sizes must be positive");
    if (image_size % patch_size != 0)
        throw ConfigError("config: image_size " + std::to_string(image_size) +
                          " not divisible by patch_size " + std::to_string(patch_size));
    if (dim % heads != 0)
        throw ConfigError("config: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    if (lora_rank < 1 || lora_rank >= dim)
        throw ConfigError("config: lora_rank must satisfy 1 <= K < dim, got K=" +
                          std::to_string(lora_rank) + ", dim=" + std::to_string(dim));
    if (lora_alpha <= 0.0) throw ConfigError("config: lora_alpha must be positive");
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw CompatibilityError("param store has no entry '" + name + "'");
    return it->second;
}

void ParamStore::set(const std::string& name, Tensor t) {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw CompatibilityError("param store has no entry '" + name + "'");
    if (it->second.shape() != t.shape())
        throw ShapeError("param '" + name + "' expects shape " + shape_str(it->second.shape()) +
                         ", got " + shape_str(t.shape()));
    it->second = std::move(t);
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::int64_t ParamStore::total_params() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : entries_) n += v.numel();
    return n;
}

ParamStore ParamStore::with_trainable(const std::vector<std::string>& names) const {
    ParamStore out = *this;
    for (const auto& n : names) {
        auto it = out.entries_.find(n);
        if (it == out.entries_.end())
            throw CompatibilityError("with_trainable: no entry '" + n + "'");
        it->second = it->second.trainable(n);
    }
    return out;
}

ParamStore ParamStore::all_trainable() const {
    ParamStore out = *this;
    for (auto& [k, v] : out.entries_) v = v.trainable(k);
    return out;
}

ParamStore ParamStore::all_frozen() const {
    ParamStore out = *this;
    for (auto& [k, v] : out.entries_) v = v.frozen().named(k);
    return out;
}

std::int64_t LoRAParams::total_params() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : factors) n += v.numel();
    return n;
}

std::vector<std::pair<std::string, Shape>> schema(const ViTConfig& cfg) {
    cfg.validate();
    const std::int64_t m = cfg.dim;
    const std::int64_t h = cfg.mlp_hidden();
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("embed.weight", Shape{cfg.patch_dim(), m});
    out.emplace_back("embed.bias", Shape{m});
    out.emplace_back("cls_token", Shape{m});
    out.emplace_back("pos_embed", Shape{cfg.tokens(), m});
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string p = block_prefix(i);
        out.emplace_back(p + "ln1.gain", Shape{m});
        out.emplace_back(p + "ln1.bias", Shape{m});
        for (const char* proj : {"q", "k", "v", "out"}) {
            out.emplace_back(p + "attn." + proj + ".weight", Shape{m, m});
            out.emplace_back(p + "attn." + proj + ".bias", Shape{m});
        }
        out.emplace_back(p + "ln2.gain", Shape{m});
        out.emplace_back(p + "ln2.bias", Shape{m});
        out.emplace_back(p + "mlp.fc1.weight", Shape{m, h});
        out.emplace_back(p + "mlp.fc1.bias", Shape{h});
        out.emplace_back(p + "mlp.fc2.weight", Shape{h, m});
        out.emplace_back(p + "mlp.fc2.bias", Shape{m});
    }
    out.emplace_back("norm.gain", Shape{m});
    out.emplace_back("norm.bias", Shape{m});
    out.emplace_back("head.weight", Shape{m, cfg.num_classes});
    out.emplace_back("head.bias", Shape{cfg.num_classes});
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> adapted_projections(const ViTConfig& cfg) {
    std::vector<std::string> out;
    for (int i = 0; i < cfg.depth; ++i) {
        out.push_back(block_prefix(i) + "attn.q");
        out.push_back(block_prefix(i) + "attn.v");
    }
    return out;
}

std::vector<std::string> head_names() { return {"head.weight", "head.bias"}; }

namespace {

bool is_weight_name(const std::string& name) {
    // everything except biases and norm gains draws from the trunc normal;
    // gains start at one, biases at zero
    if (name.ends_with(".bias")) return false;
    if (name.ends_with(".gain")) return false;
    return true;
}

}  // namespace

ParamStore init_model(const ViTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
    std::map<std::string, Tensor> entries;
    for (const auto& [name, shape] : schema(cfg)) {
        std::vector<double> data(static_cast<std::size_t>(numel(shape)), 0.0);
        if (is_weight_name(name)) {
            for (auto& v : data) v = rng.trunc_normal(kInitStd);
        } else if (name.ends_with(".gain")) {
            std::fill(data.begin(), data.end(), 1.0);
        }
        entries.emplace(name, Tensor::from_data(shape, std::move(data)).named(name));
    }
    return ParamStore(cfg, std::move(entries));
}

LoRAParams attach_lora(const ViTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::mix(seed, 0x6c6f7261ULL));
    LoRAParams lora;
    lora.config = cfg;
    lora.scaling = cfg.lora_scaling();
    const std::int64_t m = cfg.dim;
    const std::int64_t k = cfg.lora_rank;
    for (const auto& base : adapted_projections(cfg)) {
        const std::string down_name = base + ".lora_down";
        const std::string up_name = base + ".lora_up";
        std::vector<double> down(static_cast<std::size_t>(k * m));
        for (auto& v : down) v = rng.normal(0.0, kInitStd);
        lora.factors.emplace(down_name,
                             Tensor::from_data({k, m}, std::move(down)).trainable(down_name));
        lora.factors.emplace(up_name, Tensor::zeros({m, k}).trainable(up_name));
    }
    return lora;
}

Tensor patchify(const ViTConfig& cfg, const Tensor& images) {
    if (images.ndim() != 4 || images.size(1) != cfg.channels || images.size(2) != cfg.image_size ||
        images.size(3) != cfg.image_size)
        throw ShapeError("patchify: expected [b, " + std::to_string(cfg.channels) + ", " +
                         std::to_string(cfg.image_size) + ", " + std::to_string(cfg.image_size) +
                         "], got " + shape_str(images.shape()));
    const std::int64_t b = images.size(0);
    const std::int64_t g = cfg.grid();
    const std::int64_t p = cfg.patch_size;
    const std::int64_t c = cfg.channels;
    const std::int64_t s = cfg.image_size;
    const std::int64_t pd = cfg.patch_dim();

    std::vector<double> out(static_cast<std::size_t>(b * g * g * pd));
    const double* src = images.data();
    for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t py = 0; py < g; ++py) {
            for (std::int64_t px = 0; px < g; ++px) {
                double* dst = out.data() + ((i * g + py) * g + px) * pd;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    for (std::int64_t y = 0; y < p; ++y) {
                        const double* row = src + ((i * c + ch) * s + py * p + y) * s + px * p;
                        for (std::int64_t x = 0; x < p; ++x) *dst++ = row[x];
                    }
                }
            }
        }
    }
    return Tensor::from_data({b, g * g, pd}, std::move(out));
}

namespace {

// y = x*W + bias, with the optional rank-K adapter branch added in.
Tensor projection(const Tensor& x, const ParamStore& params, const LoRAParams* lora,
                  const std::string& base) {
    Tensor y = add(matmul(x, params.at(base + ".weight")), params.at(base + ".bias"));
    if (lora != nullptr) {
        auto dit = lora->factors.find(base + ".lora_down");
        if (dit != lora->factors.end()) {
            const Tensor& down = dit->second;
            const Tensor& up = lora->factors.at(base + ".lora_up");
            Tensor delta = matmul(matmul(x, transpose(down)), transpose(up));
            y = add(y, scalar_mul(delta, lora->scaling));
        }
    }
    return y;
}

Tensor split_heads(const Tensor& x, std::int64_t heads) {
    const std::int64_t b = x.size(0), t = x.size(1), m = x.size(2);
    return transpose(reshape(x, {b, t, heads, m / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
    const std::int64_t b = x.size(0), h = x.size(1), t = x.size(2), d = x.size(3);
    return reshape(transpose(x, {0, 2, 1, 3}), {b, t, h * d});
}

}  // namespace

ForwardOut forward(const ParamStore& params, const LoRAParams* lora, const Tensor& images) {
    const ViTConfig& cfg = params.config();
    if (lora != nullptr) {
        if (lora->consumed) throw ContractError("forward: adapters were already merged");
        if (!(lora->config == cfg))
            throw CompatibilityError("forward: adapter config does not match the store");
    }

    Tensor x = patchify(cfg, images);
    x = add(matmul(x, params.at("embed.weight")), params.at("embed.bias"));
    x = prepend_token(x, params.at("cls_token"));
    x = add(x, params.at("pos_embed"));

    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string p = block_prefix(i);
        Tensor h = layernorm(x, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"));
        Tensor q = split_heads(projection(h, params, lora, p + "attn.q"), cfg.heads);
        Tensor k = split_heads(projection(h, params, lora, p + "attn.k"), cfg.heads);
        Tensor v = split_heads(projection(h, params, lora, p + "attn.v"), cfg.heads);
        Tensor scores = scalar_mul(matmul(q, transpose(k)), attn_scale);
        Tensor attn = softmax(scores, -1);
        Tensor mixed = merge_heads(matmul(attn, v));
        Tensor attn_out = add(matmul(mixed, params.at(p + "attn.out.weight")),
                              params.at(p + "attn.out.bias"));
        x = add(x, attn_out);

        Tensor h2 = layernorm(x, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"));
        Tensor mid = gelu(add(matmul(h2, params.at(p + "mlp.fc1.weight")),
                              params.at(p + "mlp.fc1.bias")));
        Tensor mlp_out = add(matmul(mid, params.at(p + "mlp.fc2.weight")),
                             params.at(p + "mlp.fc2.bias"));
        x = add(x, mlp_out);
    }

    // final norm is row-wise, so normalizing just the class token equals
    // normalizing all tokens and then selecting it
    Tensor cls = select(x, 1, 0);
    Tensor features = layernorm(cls, params.at("norm.gain"), params.at("norm.bias"));
    Tensor logits = add(matmul(features, params.at("head.weight")), params.at("head.bias"));
    return ForwardOut{features, logits};
}

ParamStore merge_lora(const ParamStore& params, LoRAParams& lora) {
    if (lora.consumed)
        throw ContractError("merge_lora: adapters were already merged into a store");
    if (!(lora.config == params.config()))
        throw CompatibilityError("merge_lora: adapter config does not match the store");

    const std::int64_t m = params.config().dim;
    const std::int64_t k = params.config().lora_rank;

    std::map<std::string, Tensor> entries = params.entries();
    for (const auto& base : adapted_projections(params.config())) {
        const Tensor& down = lora.factors.at(base + ".lora_down");  // [K,M]
        const Tensor& up = lora.factors.at(base + ".lora_up");      // [M,K]

        // stored weights are [in,out]: W' = W + scaling * down^T * up^T
        std::vector<double> down_t(static_cast<std::size_t>(m * k));
        std::vector<double> up_t(static_cast<std::size_t>(k * m));
        kernels::transpose_2d(down.data(), down_t.data(), k, m);
        kernels::transpose_2d(up.data(), up_t.data(), m, k);
        std::vector<double> delta(static_cast<std::size_t>(m * m));
        kernels::mm_nn(down_t.data(), up_t.data(), delta.data(), m, k, m, false);

        const std::string wname = base + ".weight";
        std::vector<double> merged = entries.at(wname).copy_of_data();
        kernels::axpy(lora.scaling, delta.data(), merged.data(), m * m);
        entries.at(wname) = Tensor::from_data({m, m}, std::move(merged)).named(wname);
    }
    lora.consumed = true;
    return ParamStore(params.config(), std::move(entries)).all_frozen();
}

ParamCount param_count(const ParamStore& params, const LoRAParams* lora) {
    ParamCount pc;
    for (const auto& [name, t] : params.entries()) {
        pc.total += t.numel();
        if (t.requires_grad()) pc.trainable += t.numel();
    }
    if (lora != nullptr && !lora->consumed) {
        pc.total += lora->total_params();
        pc.trainable += lora->total_params();
    }
    pc.fraction = pc.total > 0 ? static_cast<double>(pc.trainable) / static_cast<double>(pc.total)
                               : 0.0;
    return pc;
}

}  // namespace clvit::model
