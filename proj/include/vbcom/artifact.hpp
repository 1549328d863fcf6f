#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

namespace vbcom {

/// Provenance appended to every CSV row and written into manifests.
struct ArtifactStamp {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

inline std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

inline constexpr const char* kStampColumns = ",config_hash,seed";

inline std::string stamp_columns(const ArtifactStamp& s) {
  return "," + hash_hex(s.config_hash) + "," + std::to_string(s.seed);
}

}  // namespace vbcom
