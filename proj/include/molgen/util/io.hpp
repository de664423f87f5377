// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace molgen {

/// Writes a file through a sibling temporary and renames it into place, so a
/// reader never observes a partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer,
                       bool binary = false);

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& contents);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace molgen
