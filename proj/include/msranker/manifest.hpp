#pragma once

// Run manifests: every CLI command records its resolved configuration, seed,
// input digests, and outputs, so a run can be reproduced from the manifest
// alone in deterministic mode.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "msranker/tensor.hpp"

namespace msranker {

inline std::string file_digest_hex(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open file for digest: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

struct RunManifest {
    std::string command;
    nlohmann::json config;
    uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;
    std::vector<std::string> outputs;
    double wall_clock_sec = 0.0;

    void add_input(const std::string& path) { input_digests[path] = file_digest_hex(path); }

    nlohmann::json to_json() const {
        return {{"command", command},
                {"config", config},
                {"seed", seed},
                {"inputs", input_digests},
                {"outputs", outputs},
                {"wall_clock_sec", wall_clock_sec}};
    }

    // Written to a temporary then renamed, so the manifest appears atomically.
    void write(const std::string& path) const {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary);
            if (!os) throw ValidationError("cannot write manifest: " + tmp);
            os << to_json().dump(2) << "\n";
        }
        std::filesystem::rename(tmp, path);
    }
};

}  // namespace msranker
