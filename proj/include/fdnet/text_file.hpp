#pragma once

#include <filesystem>
#include <string>

namespace fdnet {

/// Whole-file helpers; both throw IoError naming the path.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace fdnet
