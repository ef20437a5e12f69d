#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ragbias {

// Hex-encoded SHA-256 of the input bytes. Used for content addressing:
// collection fingerprints, prompt hashes, cache keys.
std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a. Cheap non-cryptographic hash for feature hashing and
// seed derivation.
std::uint64_t fnv1a64(std::string_view data);

}  // namespace ragbias
