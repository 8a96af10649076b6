#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlhof/common.hpp"
#include "mtlhof/digest.hpp"
#include "mtlhof/version.hpp"

namespace mtlhof {

// Reproducibility envelope written next to every artifact-producing command's
// outputs: the resolved arguments, seed, input digests, and artifact digests.
// Replaying the recorded argv must reproduce the recorded artifact digests.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;
    std::map<std::string, std::string> artifact_digests;
    double wall_clock_seconds = 0.0;
    std::string version = kVersionString;

    void add_input(const std::string& path) { input_digests[path] = sha256_file(path); }
    void add_artifact(const std::string& path) { artifact_digests[path] = sha256_file(path); }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["argv"] = argv;
        j["config"] = config;
        j["seed"] = seed;
        j["inputs"] = input_digests;
        j["artifacts"] = artifact_digests;
        j["wall_clock_seconds"] = wall_clock_seconds;
        j["version"] = version;
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.config = j.at("config");
        m.seed = j.at("seed").get<std::uint64_t>();
        m.input_digests = j.at("inputs").get<std::map<std::string, std::string>>();
        m.artifact_digests = j.at("artifacts").get<std::map<std::string, std::string>>();
        m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        m.version = j.at("version").get<std::string>();
        return m;
    }
};

inline void write_manifest(const RunManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << manifest.to_json().dump(2) << '\n';
}

inline RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path + " is not valid JSON: " + e.what());
    }
    return RunManifest::from_json(j);
}

}  // namespace mtlhof
