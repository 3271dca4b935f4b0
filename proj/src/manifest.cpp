#include "clvit/manifest.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "clvit/common.hpp"

namespace clvit::manifest {

std::uint64_t hash_bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for hashing");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return hash_bytes(bytes.data(), bytes.size());
}

std::string hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

void RunManifest::note_input(const std::string& path) { inputs[path] = hex(hash_file(path)); }

void RunManifest::note_output(const std::string& path) { outputs[path] = hex(hash_file(path)); }

void RunManifest::finalize() {
    std::ostringstream os;
    os << command;
    for (const auto& a : argv) os << '\0' << a;
    for (const auto& [k, v] : config) os << '\0' << k << '=' << v;
    for (auto s : seeds) os << '\0' << s;
    const std::string blob = os.str();
    run_id = hex(hash_bytes(blob.data(), blob.size()));
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["run_id"] = run_id;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("manifest: invalid JSON: ") + e.what());
    }
    RunManifest m;
    try {
        m.run_id = j.value("run_id", "");
        m.command = j.value("command", "");
        m.argv = j.value("argv", std::vector<std::string>{});
        m.config = j.value("config", std::map<std::string, std::string>{});
        m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
        m.inputs = j.value("inputs", std::map<std::string, std::string>{});
        m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest: bad field types: ") + e.what());
    }
    return m;
}

void RunManifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const std::string text = to_json();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out.good()) throw IoError("write failure on '" + path + "'");
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

}  // namespace clvit::manifest
