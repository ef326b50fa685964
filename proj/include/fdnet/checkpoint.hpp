#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fdnet/model.hpp"
#include "fdnet/optim.hpp"

namespace fdnet::train {

inline constexpr std::uint32_t kCheckpointMajor = 1;
inline constexpr std::uint32_t kCheckpointMinor = 0;

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
};

/// In-memory image of a checkpoint file (layout in docs/checkpoint-format.md).
struct Checkpoint {
    std::uint32_t version_major = kCheckpointMajor;
    std::uint32_t version_minor = kCheckpointMinor;
    std::string model_config;  // [model] echo
    std::string train_config;  // [train] echo, informational
    std::uint64_t step = 0;
    std::vector<NamedArray> params;
    std::optional<Adam::State> optimizer;
};

Checkpoint capture(const model::FDNet& net, const Adam* optimizer, std::uint64_t step, std::string train_config = {});

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError on missing/corrupt files and VersionError when the major
/// version differs from kCheckpointMajor.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored parameter values into `net`. Names and shapes must match.
void restore_params(model::FDNet& net, const Checkpoint& ckpt);

/// Rebuilds the model described by the checkpoint's config echo.
model::FDNet model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace fdnet::train
