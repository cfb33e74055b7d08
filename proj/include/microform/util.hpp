#pragma once

#include <string>
#include <string_view>

namespace microform {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// Random RFC 4122 version-4 UUID.
std::string new_uuid();

/// Current UTC time as RFC 3339 (`2026-01-02T03:04:05Z`).
std::string utc_timestamp();

}  // namespace microform
