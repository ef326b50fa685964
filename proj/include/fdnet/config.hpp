#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fdnet/model.hpp"
#include "fdnet/phantom.hpp"
#include "fdnet/train.hpp"

namespace fdnet::config {

struct DataConfig {
    phantom::PhantomSpec phantom;
    std::size_t count = 32;
    phantom::SplitFractions split;
    std::string dir;
    std::string embedding_dir;
};

/// Everything a run reads from `key = value` files with [model], [train]
/// and [data] sections.
struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    DataConfig data;
};

/// Valid keys of one section, in documentation order. Empty for an unknown
/// section.
std::vector<std::string> valid_keys(const std::string& section);

/// Sets one key from text. Throws ConfigError naming the key and the valid
/// set when the key is unknown, or when the value does not parse.
void set_value(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& cfg, const std::string& section, const std::string& key);

/// Parses INI text on top of `base`. Keys outside a section are rejected.
RunConfig parse(const std::string& text, RunConfig base = {});
RunConfig load_file(const std::filesystem::path& path, RunConfig base = {});

/// Canonical text of one section (deterministic; used for config echoes).
std::string section_text(const RunConfig& cfg, const std::string& section);
std::string to_text(const RunConfig& cfg);

/// [model] echo <-> ModelConfig, used by checkpoints.
std::string model_echo(const model::ModelConfig& cfg);
model::ModelConfig parse_model_echo(const std::string& text);

}  // namespace fdnet::config
