#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace clvit::manifest {

// FNV-1a 64-bit content hash, reported as 16 hex digits.
std::uint64_t hash_bytes(const void* data, std::size_t len);
std::uint64_t hash_file(const std::string& path);
std::string hex(std::uint64_t h);

// Everything needed to reproduce a run: the resolved argv, config echo,
// seeds, and content hashes of every input and produced file. Rerunning the
// recorded command must reproduce the output hashes bit for bit.
struct RunManifest {
    std::string run_id;  // hash of command + resolved config + seeds
    std::string command;
    std::vector<std::string> argv;
    std::map<std::string, std::string> config;  // resolved key -> value
    std::vector<std::uint64_t> seeds;
    std::map<std::string, std::string> inputs;   // path -> hash
    std::map<std::string, std::string> outputs;  // path -> hash

    void note_input(const std::string& path);
    void note_output(const std::string& path);
    void finalize();  // computes run_id

    std::string to_json() const;
    static RunManifest from_json(const std::string& text);

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

}  // namespace clvit::manifest
