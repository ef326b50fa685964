#include "fdnet/run_manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "fdnet/error.hpp"
#include "json.hpp"

namespace fdnet {
namespace {

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string git_blob_hash(const std::string& content) {
    const std::string object = "blob " + std::to_string(content.size()) + '\0' + content;
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(object.data(), object.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
        throw InternalError("SHA-1 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        const unsigned char b = digest[i];
        std::snprintf(buf, sizeof buf, "%02x", b);
        hex += buf;
    }
    return hex;
}

std::string content_hash(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw IoError("input not found: " + path.string());
    if (!fs::is_directory(path)) return git_blob_hash(read_bytes(path));
    std::vector<std::string> lines;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
        if (!entry.is_regular_file() || entry.path().filename() == kRunManifestFile) continue;
        lines.push_back(fs::relative(entry.path(), path).generic_string() + " " + git_blob_hash(read_bytes(entry.path())));
    }
    std::sort(lines.begin(), lines.end());
    std::string listing;
    for (const auto& l : lines) listing += l + "\n";
    return git_blob_hash(listing);
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    nlohmann::ordered_json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["input_hashes"] = m.input_hashes;
    j["seeds"] = m.seeds;
    j["artifacts"] = m.artifacts;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    std::ofstream out(dir / kRunManifestFile, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / kRunManifestFile).string());
    out << j.dump(2) << '\n';
}

RunManifest read_run_manifest(const std::filesystem::path& file) {
    try {
        const auto j = nlohmann::json::parse(read_bytes(file));
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.config = j.at("config").get<std::string>();
        m.input_hashes = j.at("input_hashes").get<std::map<std::string, std::string>>();
        m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
        m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
        m.started_at = j.at("started_at").get<std::string>();
        m.finished_at = j.at("finished_at").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed run manifest " + file.string() + ": " + e.what());
    }
}

}  // namespace fdnet
