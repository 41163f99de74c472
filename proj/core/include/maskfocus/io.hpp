#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace maskfocus::io {

// Throws Error(Io) on failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace maskfocus::io
