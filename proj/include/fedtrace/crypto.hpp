#pragma once

#include <string>
#include <string_view>

namespace fedtrace {

// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

// Lowercase hex HMAC-SHA256; key is raw bytes (we pass hex strings as-is).
std::string hmac_sha256_hex(std::string_view key, std::string_view bytes);

std::string to_hex(std::string_view bytes);

}  // namespace fedtrace
