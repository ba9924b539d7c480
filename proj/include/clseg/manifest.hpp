// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "clseg/errors.hpp"

namespace clseg {

inline constexpr const char* kToolVersion = "clseg 0.1.0";

// write temp, rename: output files appear atomically
inline void atomic_write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write file: " + path);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw DataError("short write to " + path);
    }
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot finalize file: " + path);
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open input file for digest: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

inline std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Provenance record written before any other output artifact. Re-running a
// subcommand with the same inputs reproduces every artifact byte for byte;
// only the timestamps here differ.
struct RunManifest {
    std::string subcommand;
    nlohmann::ordered_json config;  // all defaults materialized
    std::map<std::string, std::string> input_digests;
    std::uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;

    void add_input(const std::string& label, const std::string& path) {
        input_digests[label + ":" + path] = file_digest(path);
    }

    void write(const std::string& path) const {
        nlohmann::ordered_json j;
        j["subcommand"] = subcommand;
        j["tool_version"] = kToolVersion;
        j["seed"] = seed;
        j["config"] = config;
        j["inputs"] = input_digests;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at;
        atomic_write_text(path, j.dump(2) + "\n");
    }
};

}  // namespace clseg
