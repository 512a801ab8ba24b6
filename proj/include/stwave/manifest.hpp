#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stwave {

inline constexpr const char* kToolVersion = "stwave 1.0.0";

// Everything needed to reproduce a run: the subcommand, its arguments
// (workdir excluded — a rerun gets a fresh one), the fully resolved
// configuration, and bookkeeping. Written atomically to manifest.json when a
// run starts (exit_status = -1, finished empty) and rewritten when it ends.
struct Manifest {
    std::string command;            // subcommand name
    std::vector<std::string> args;  // original arguments, without --workdir
    std::string config_text;        // resolved configuration, serialized
    std::string config_hash;        // hex hash of config_text
    uint64_t seed = 0;
    std::string tool_version = kToolVersion;
    std::string started;            // UTC "YYYY-MM-DD HH:MM:SS"
    std::string finished;           // empty while running
    int exit_status = -1;           // -1 while running
};

// Atomic write (tmp + rename); directories are created as needed.
void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

} // namespace stwave
