#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fdnet {

/// SHA-1 of "blob <size>\0<content>", i.e. what `git hash-object` prints.
std::string git_blob_hash(const std::string& content);

/// Blob hash of a file; for a directory, the hash of the sorted
/// "<relative path> <blob hash>" listing of every regular file below it,
/// skipping run manifests.
std::string content_hash(const std::filesystem::path& path);

/// Provenance record written next to every command's outputs. Timestamps
/// appear here and nowhere else.
struct RunManifest {
    std::string command;
    std::string config;  // canonical config echo
    std::map<std::string, std::string> input_hashes;  // path -> content hash
    std::map<std::string, std::uint64_t> seeds;
    std::vector<std::string> artifacts;
    std::string started_at;
    std::string finished_at;
};

inline constexpr const char* kRunManifestFile = "run_manifest.json";

std::string utc_timestamp();
void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_run_manifest(const std::filesystem::path& file);

}  // namespace fdnet
