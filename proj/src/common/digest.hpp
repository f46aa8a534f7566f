#pragma once

#include <string>

namespace common {

/// SHA-256 of a byte string, as lowercase hex.
std::string sha256_hex(const std::string& bytes);

/// SHA-256 of a file's contents, as lowercase hex. Throws if unreadable.
std::string sha256_file(const std::string& path);

}  // namespace common
