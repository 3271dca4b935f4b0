#include "clvit/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "clvit/rng.hpp"

namespace clvit::dataio {

namespace {

constexpr char kDatasetMagic[8] = {'C', 'L', 'V', 'T', 'D', 'S', 'E', 'T'};
constexpr char kCheckpointMagic[8] = {'C', 'L', 'V', 'T', 'C', 'K', 'P', 'T'};
constexpr int kDatasetVersion = 1;
constexpr int kCheckpointVersion = 1;

void append_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(buf, 8);
}

std::uint64_t read_u64(const std::string& bytes, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failure on '" + path + "'");
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.good()) throw IoError("write failure on '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

// Splits "magic | u64 len | header | payload", validating sizes.
struct FileParts {
    std::vector<std::string> header_lines;
    std::size_t payload_offset = 0;
};

FileParts split_file(const std::string& bytes, const char magic[8], const std::string& path) {
    if (bytes.size() < 16)
        throw ParseError("'" + path + "': truncated before header (size " +
                         std::to_string(bytes.size()) + ")");
    if (std::memcmp(bytes.data(), magic, 8) != 0)
        throw ParseError("'" + path + "': bad magic at offset 0");
    const std::uint64_t hlen = read_u64(bytes, 8);
    if (16 + hlen > bytes.size())
        throw ParseError("'" + path + "': header length " + std::to_string(hlen) +
                         " exceeds file size");
    FileParts parts;
    parts.payload_offset = 16 + static_cast<std::size_t>(hlen);
    std::istringstream hs(bytes.substr(16, static_cast<std::size_t>(hlen)));
    std::string line;
    while (std::getline(hs, line)) {
        if (!line.empty()) parts.header_lines.push_back(line);
    }
    if (parts.header_lines.empty() || parts.header_lines.back() != "end")
        throw ParseError("'" + path + "': header missing terminating 'end'");
    parts.header_lines.pop_back();
    return parts;
}

std::string config_line(const model::ViTConfig& c) {
    std::ostringstream os;
    os << "config image_size=" << c.image_size << " patch_size=" << c.patch_size
       << " channels=" << c.channels << " dim=" << c.dim << " depth=" << c.depth
       << " heads=" << c.heads << " mlp_ratio=" << c.mlp_ratio
       << " num_classes=" << c.num_classes << " lora_rank=" << c.lora_rank
       << " lora_alpha=" << c.lora_alpha;
    return os.str();
}

model::ViTConfig parse_config_line(const std::string& line, const std::string& path) {
    model::ViTConfig c;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ParseError("'" + path + "': malformed config token '" + tok + "'");
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        try {
            if (key == "image_size") c.image_size = std::stoi(val);
            else if (key == "patch_size") c.patch_size = std::stoi(val);
            else if (key == "channels") c.channels = std::stoi(val);
            else if (key == "dim") c.dim = std::stoi(val);
            else if (key == "depth") c.depth = std::stoi(val);
            else if (key == "heads") c.heads = std::stoi(val);
            else if (key == "mlp_ratio") c.mlp_ratio = std::stod(val);
            else if (key == "num_classes") c.num_classes = std::stoi(val);
            else if (key == "lora_rank") c.lora_rank = std::stoi(val);
            else if (key == "lora_alpha") c.lora_alpha = std::stod(val);
            else throw ParseError("'" + path + "': unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ParseError("'" + path + "': bad config value '" + tok + "'");
        }
    }
    return c;
}

void append_f64_payload(std::string& out, const double* data, std::int64_t n) {
    const std::size_t bytes = static_cast<std::size_t>(n) * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, data, bytes);
}

}  // namespace

int Dataset::num_classes() const {
    if (!class_names.empty()) return static_cast<int>(class_names.size());
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return mx + 1;
}

void Dataset::validate() const {
    if (static_cast<std::int64_t>(images.size()) != size() * image_bytes())
        throw ContractError("dataset: image payload size does not match label count");
    const int c = num_classes();
    for (int l : labels) {
        if (l < 0 || l >= c)
            throw ContractError("dataset: label " + std::to_string(l) + " outside [0, " +
                                std::to_string(c) + ")");
    }
}

void SyntheticSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (image_size <= 0 || channels <= 0) throw ConfigError("synthetic: bad image dims");
    if (pretrain_per_class < 0 || train_per_class < 1 || test_per_class < 1)
        throw ConfigError("synthetic: bad per-class sample counts");
    if (noise_std < 0.0) throw ConfigError("synthetic: noise_std must be >= 0");
}

std::vector<double> class_prototype(const SyntheticSpec& spec, int cls) {
    spec.validate();
    if (cls < 0 || cls >= spec.num_classes)
        throw IndexError("class_prototype: class " + std::to_string(cls) + " out of range");

    const int s = spec.image_size;
    const double theta = std::numbers::pi * cls / spec.num_classes;
    const double freq = 1.5 + 0.7 * (cls % 4);
    const double k = 2.0 * std::numbers::pi * freq / s;
    const double phase = 0.35 * cls;
    const double ct = std::cos(theta), st = std::sin(theta);

    std::vector<double> proto(static_cast<std::size_t>(spec.channels) * s * s);
    for (int ch = 0; ch < spec.channels; ++ch) {
        const double bias = ((cls >> (ch % 3)) & 1) ? 28.0 : -28.0;
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                const double wave = std::sin(k * (x * ct + y * st) + phase);
                double v = 127.5 + 58.0 * wave + bias;
                v = std::clamp(v, 0.0, 255.0);
                proto[static_cast<std::size_t>((ch * s + y) * s + x)] = v;
            }
        }
    }
    return proto;
}

namespace {

Dataset make_pool(const SyntheticSpec& spec, int per_class, Rng& rng) {
    Dataset ds;
    ds.channels = spec.channels;
    ds.height = spec.image_size;
    ds.width = spec.image_size;
    for (int c = 0; c < spec.num_classes; ++c)
        ds.class_names.push_back("class_" + std::to_string(c));

    const std::int64_t ib = ds.image_bytes();
    std::vector<std::vector<double>> protos;
    for (int c = 0; c < spec.num_classes; ++c) protos.push_back(class_prototype(spec, c));

    // class-ordered generation, then a seeded shuffle of the sample order
    std::vector<std::vector<std::uint8_t>> samples;
    std::vector<int> labels;
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            std::vector<std::uint8_t> img(static_cast<std::size_t>(ib));
            for (std::int64_t j = 0; j < ib; ++j) {
                double v = protos[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
                if (spec.noise_std > 0.0) v += rng.normal(0.0, spec.noise_std);
                v = std::clamp(std::round(v), 0.0, 255.0);
                img[static_cast<std::size_t>(j)] = static_cast<std::uint8_t>(v);
            }
            samples.push_back(std::move(img));
            labels.push_back(c);
        }
    }
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    ds.images.reserve(samples.size() * static_cast<std::size_t>(ib));
    for (std::size_t i : order) {
        ds.images.insert(ds.images.end(), samples[i].begin(), samples[i].end());
        ds.labels.push_back(labels[i]);
    }
    return ds;
}

}  // namespace

SyntheticBundle generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticBundle b;
    Rng pre = Rng(spec.seed).fork(1);
    Rng train = Rng(spec.seed).fork(2);
    Rng test = Rng(spec.seed).fork(3);
    b.pretrain = make_pool(spec, spec.pretrain_per_class, pre);
    b.train = make_pool(spec, spec.train_per_class, train);
    b.test = make_pool(spec, spec.test_per_class, test);
    return b;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    ds.validate();
    std::ostringstream h;
    h << "version " << kDatasetVersion << "\n";
    h << "count " << ds.size() << "\n";
    h << "channels " << ds.channels << "\n";
    h << "height " << ds.height << "\n";
    h << "width " << ds.width << "\n";
    h << "classes " << ds.num_classes() << "\n";
    for (std::size_t i = 0; i < ds.class_names.size(); ++i)
        h << "class_name " << i << " " << ds.class_names[i] << "\n";
    h << "end\n";
    const std::string header = h.str();

    std::string out(kDatasetMagic, 8);
    append_u64(out, header.size());
    out += header;
    for (int l : ds.labels) {
        const std::uint32_t v = static_cast<std::uint32_t>(l);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    out.append(reinterpret_cast<const char*>(ds.images.data()), ds.images.size());
    write_file(path, out);
}

Dataset load_dataset(const std::string& path) {
    const std::string bytes = read_file(path);
    const FileParts parts = split_file(bytes, kDatasetMagic, path);

    Dataset ds;
    std::int64_t count = -1;
    int version = -1, classes = -1;
    std::vector<std::pair<int, std::string>> names;
    for (const auto& line : parts.header_lines) {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "version") is >> version;
        else if (key == "count") is >> count;
        else if (key == "channels") is >> ds.channels;
        else if (key == "height") is >> ds.height;
        else if (key == "width") is >> ds.width;
        else if (key == "classes") is >> classes;
        else if (key == "class_name") {
            int idx;
            std::string n;
            is >> idx >> n;
            names.emplace_back(idx, n);
        } else {
            throw ParseError("'" + path + "': unknown dataset header key '" + key + "'");
        }
        if (is.fail()) throw ParseError("'" + path + "': malformed header line '" + line + "'");
    }
    if (version != kDatasetVersion)
        throw ParseError("'" + path + "': unsupported dataset version " + std::to_string(version));
    if (count < 0 || classes < 1) throw ParseError("'" + path + "': incomplete dataset header");
    for (const auto& [idx, n] : names) {
        ds.class_names.resize(std::max<std::size_t>(ds.class_names.size(),
                                                    static_cast<std::size_t>(idx) + 1));
        ds.class_names[static_cast<std::size_t>(idx)] = n;
    }

    const std::size_t label_bytes = static_cast<std::size_t>(count) * 4;
    const std::size_t image_bytes =
        static_cast<std::size_t>(count) * static_cast<std::size_t>(ds.image_bytes());
    const std::size_t want = parts.payload_offset + label_bytes + image_bytes;
    if (bytes.size() != want)
        throw ParseError("'" + path + "': payload size mismatch, expected " +
                         std::to_string(want) + " bytes, file has " +
                         std::to_string(bytes.size()) + " (payload starts at offset " +
                         std::to_string(parts.payload_offset) + ")");

    ds.labels.resize(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        std::uint32_t v = 0;
        for (int j = 0; j < 4; ++j)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(
                     bytes[parts.payload_offset + static_cast<std::size_t>(i) * 4 +
                           static_cast<std::size_t>(j)]))
                 << (8 * j);
        const int label = static_cast<int>(v);
        if (label >= classes)
            throw ParseError("'" + path + "': label " + std::to_string(label) + " >= classes " +
                             std::to_string(classes));
        ds.labels[static_cast<std::size_t>(i)] = label;
    }
    const char* img = bytes.data() + parts.payload_offset + label_bytes;
    ds.images.assign(reinterpret_cast<const std::uint8_t*>(img),
                     reinterpret_cast<const std::uint8_t*>(img) + image_bytes);
    if (ds.class_names.empty()) {
        for (int c = 0; c < classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
    }
    ds.validate();
    return ds;
}

Dataset load_raw_records(const std::string& path, const RawLayout& layout) {
    const std::string bytes = read_file(path);
    const std::size_t record =
        1 + static_cast<std::size_t>(layout.channels) * layout.height * layout.width;
    if (bytes.size() % record != 0)
        throw ParseError("'" + path + "': size " + std::to_string(bytes.size()) +
                         " is not a multiple of record size " + std::to_string(record));

    Dataset ds;
    ds.channels = layout.channels;
    ds.height = layout.height;
    ds.width = layout.width;
    const std::size_t n = bytes.size() / record;
    ds.images.reserve(n * (record - 1));
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char label = static_cast<unsigned char>(bytes[i * record]);
        if (label >= layout.num_classes)
            throw ParseError("'" + path + "': record " + std::to_string(i) + " label " +
                             std::to_string(label) + " >= classes " +
                             std::to_string(layout.num_classes));
        ds.labels.push_back(label);
        const char* px = bytes.data() + i * record + 1;
        ds.images.insert(ds.images.end(), reinterpret_cast<const std::uint8_t*>(px),
                         reinterpret_cast<const std::uint8_t*>(px) + record - 1);
    }
    for (int c = 0; c < layout.num_classes; ++c)
        ds.class_names.push_back("class_" + std::to_string(c));
    ds.validate();
    return ds;
}

void save_raw_records(const std::string& path, const Dataset& ds) {
    ds.validate();
    if (ds.num_classes() > 256)
        throw ContractError("raw records: labels must fit one byte");
    std::string out;
    const std::size_t ib = static_cast<std::size_t>(ds.image_bytes());
    out.reserve(static_cast<std::size_t>(ds.size()) * (1 + ib));
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        out.push_back(static_cast<char>(ds.labels[static_cast<std::size_t>(i)]));
        const std::uint8_t* px = ds.images.data() + static_cast<std::size_t>(i) * ib;
        out.append(reinterpret_cast<const char*>(px), ib);
    }
    write_file(path, out);
}

std::string kind_name(CheckpointKind k) {
    switch (k) {
        case CheckpointKind::store: return "store";
        case CheckpointKind::task_vector: return "task_vector";
        case CheckpointKind::adapters: return "adapters";
    }
    return "?";
}

namespace {

CheckpointKind parse_kind(const std::string& s, const std::string& path) {
    if (s == "store") return CheckpointKind::store;
    if (s == "task_vector") return CheckpointKind::task_vector;
    if (s == "adapters") return CheckpointKind::adapters;
    throw ParseError("'" + path + "': unknown checkpoint kind '" + s + "'");
}

void save_checkpoint(const std::string& path, CheckpointKind kind, const model::ViTConfig& cfg,
                     const std::string& provenance,
                     const std::map<std::string, Tensor>& entries) {
    std::ostringstream h;
    h << "version " << kCheckpointVersion << "\n";
    h << "kind " << kind_name(kind) << "\n";
    h << config_line(cfg) << "\n";
    if (!provenance.empty()) h << "provenance " << provenance << "\n";
    std::uint64_t offset = 0;
    for (const auto& [name, t] : entries) {
        h << "entry " << name << " " << t.ndim();
        for (auto d : t.shape()) h << " " << d;
        h << " " << offset << "\n";
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
    }
    h << "end\n";
    const std::string header = h.str();

    std::string out(kCheckpointMagic, 8);
    append_u64(out, header.size());
    out += header;
    for (const auto& [name, t] : entries) append_f64_payload(out, t.data(), t.numel());
    write_file(path, out);
}

struct LoadedCheckpoint {
    CheckpointInfo info;
    std::map<std::string, Tensor> entries;
};

CheckpointInfo parse_header(const FileParts& parts, const std::string& path) {
    CheckpointInfo info;
    bool saw_config = false;
    std::uint64_t expect_offset = 0;
    for (const auto& line : parts.header_lines) {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "version") {
            is >> info.version;
        } else if (key == "kind") {
            std::string k;
            is >> k;
            info.kind = parse_kind(k, path);
        } else if (key == "config") {
            info.config = parse_config_line(line.substr(7), path);
            saw_config = true;
        } else if (key == "provenance") {
            std::string rest;
            std::getline(is, rest);
            info.provenance = rest.empty() ? rest : rest.substr(1);
        } else if (key == "entry") {
            std::string name;
            int nd = 0;
            is >> name >> nd;
            if (is.fail() || nd < 1 || nd > 8)
                throw ParseError("'" + path + "': malformed entry line '" + line + "'");
            Shape shape(static_cast<std::size_t>(nd));
            for (int i = 0; i < nd; ++i) is >> shape[static_cast<std::size_t>(i)];
            std::uint64_t offset = 0;
            is >> offset;
            if (is.fail()) throw ParseError("'" + path + "': malformed entry line '" + line + "'");
            for (auto d : shape) {
                if (d < 1) throw ParseError("'" + path + "': bad shape in entry '" + name + "'");
            }
            for (const auto& [n, s] : info.entries) {
                if (n == name) throw ParseError("'" + path + "': duplicate entry name '" + name + "'");
            }
            if (offset != expect_offset)
                throw ParseError("'" + path + "': entry '" + name + "' offset " +
                                 std::to_string(offset) + " overlaps or leaves a gap (expected " +
                                 std::to_string(expect_offset) + ")");
            expect_offset += static_cast<std::uint64_t>(numel(shape)) * sizeof(double);
            info.entries.emplace_back(name, std::move(shape));
        } else {
            throw ParseError("'" + path + "': unknown checkpoint header key '" + key + "'");
        }
    }
    if (info.version != kCheckpointVersion)
        throw ParseError("'" + path + "': unsupported checkpoint version " +
                         std::to_string(info.version));
    if (!saw_config) throw ParseError("'" + path + "': checkpoint header missing config");
    return info;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    const FileParts parts = split_file(bytes, kCheckpointMagic, path);
    LoadedCheckpoint lc;
    lc.info = parse_header(parts, path);

    std::uint64_t total = 0;
    for (const auto& [name, shape] : lc.info.entries)
        total += static_cast<std::uint64_t>(numel(shape)) * sizeof(double);
    if (bytes.size() != parts.payload_offset + total)
        throw ParseError("'" + path + "': payload size mismatch, expected " +
                         std::to_string(parts.payload_offset + total) + " bytes, file has " +
                         std::to_string(bytes.size()));

    std::size_t off = parts.payload_offset;
    for (const auto& [name, shape] : lc.info.entries) {
        const std::int64_t n = numel(shape);
        std::vector<double> data(static_cast<std::size_t>(n));
        std::memcpy(data.data(), bytes.data() + off, static_cast<std::size_t>(n) * sizeof(double));
        off += static_cast<std::size_t>(n) * sizeof(double);
        lc.entries.emplace(name, Tensor::from_data(shape, std::move(data)).named(name));
    }
    return lc;
}

}  // namespace

void save_store(const std::string& path, const model::ParamStore& store) {
    save_checkpoint(path, CheckpointKind::store, store.config(), "", store.entries());
}

void save_task_vector(const std::string& path, const taskvec::TaskVector& tv) {
    save_checkpoint(path, CheckpointKind::task_vector, tv.config, tv.provenance, tv.deltas);
}

void save_adapters(const std::string& path, const model::LoRAParams& lora) {
    if (lora.consumed) throw ContractError("save_adapters: adapters were already merged");
    save_checkpoint(path, CheckpointKind::adapters, lora.config, "", lora.factors);
}

CheckpointInfo scan_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string head(16, '\0');
    in.read(head.data(), 16);
    if (in.gcount() != 16) throw ParseError("'" + path + "': truncated before header");
    if (std::memcmp(head.data(), kCheckpointMagic, 8) != 0)
        throw ParseError("'" + path + "': bad magic at offset 0");
    const std::uint64_t hlen = read_u64(head, 8);
    std::string rest(static_cast<std::size_t>(hlen), '\0');
    in.read(rest.data(), static_cast<std::streamsize>(hlen));
    if (static_cast<std::uint64_t>(in.gcount()) != hlen)
        throw ParseError("'" + path + "': truncated header");

    FileParts parts;
    parts.payload_offset = 16 + static_cast<std::size_t>(hlen);
    std::istringstream hs(rest);
    std::string line;
    while (std::getline(hs, line)) {
        if (!line.empty()) parts.header_lines.push_back(line);
    }
    if (parts.header_lines.empty() || parts.header_lines.back() != "end")
        throw ParseError("'" + path + "': header missing terminating 'end'");
    parts.header_lines.pop_back();
    return parse_header(parts, path);
}

model::ParamStore load_store(const std::string& path) {
    LoadedCheckpoint lc = load_checkpoint(path);
    if (lc.info.kind != CheckpointKind::store)
        throw CompatibilityError("'" + path + "' holds a " + kind_name(lc.info.kind) +
                                 " checkpoint, a full store is required");
    // schema cross-check against the config
    const auto expect = model::schema(lc.info.config);
    if (expect.size() != lc.entries.size())
        throw ParseError("'" + path + "': entry count does not match the config schema");
    for (const auto& [name, shape] : expect) {
        auto it = lc.entries.find(name);
        if (it == lc.entries.end() || it->second.shape() != shape)
            throw ParseError("'" + path + "': entry '" + name + "' missing or mis-shaped");
    }
    return model::ParamStore(lc.info.config, std::move(lc.entries));
}

taskvec::TaskVector load_task_vector(const std::string& path) {
    LoadedCheckpoint lc = load_checkpoint(path);
    if (lc.info.kind != CheckpointKind::task_vector)
        throw CompatibilityError("'" + path + "' holds a " + kind_name(lc.info.kind) +
                                 " checkpoint, a task vector is required");
    taskvec::TaskVector tv;
    tv.config = lc.info.config;
    tv.provenance = lc.info.provenance;
    for (auto& [name, t] : lc.entries) tv.deltas.emplace(name, t.detached());
    return tv;
}

model::LoRAParams load_adapters(const std::string& path) {
    LoadedCheckpoint lc = load_checkpoint(path);
    if (lc.info.kind != CheckpointKind::adapters)
        throw CompatibilityError("'" + path + "' holds a " + kind_name(lc.info.kind) +
                                 " checkpoint, adapters are required");
    model::LoRAParams lora;
    lora.config = lc.info.config;
    lora.scaling = lc.info.config.lora_scaling();
    for (auto& [name, t] : lc.entries) lora.factors.emplace(name, t.trainable(name));
    return lora;
}

Tensor batch_images(const Dataset& ds, const std::vector<std::int64_t>& indices) {
    const std::int64_t ib = ds.image_bytes();
    std::vector<double> data(static_cast<std::size_t>(indices.size()) *
                             static_cast<std::size_t>(ib));
    double* dst = data.data();
    for (std::int64_t idx : indices) {
        if (idx < 0 || idx >= ds.size())
            throw IndexError("batch_images: sample index " + std::to_string(idx) +
                             " out of range");
        const std::uint8_t* src = ds.images.data() + static_cast<std::size_t>(idx * ib);
        for (std::int64_t j = 0; j < ib; ++j) *dst++ = src[j] / 255.0;
    }
    return Tensor::from_data(
        {static_cast<std::int64_t>(indices.size()), ds.channels, ds.height, ds.width},
        std::move(data));
}

std::vector<int> batch_labels(const Dataset& ds, const std::vector<std::int64_t>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::int64_t idx : indices) {
        if (idx < 0 || idx >= ds.size())
            throw IndexError("batch_labels: sample index " + std::to_string(idx) +
                             " out of range");
        out.push_back(ds.labels[static_cast<std::size_t>(idx)]);
    }
    return out;
}

}  // namespace clvit::dataio
