#pragma once

// Small I/O helpers: deterministic float formatting, atomic file writes,
// FNV-1a checksums for the run manifest.

#include <cstdint>
#include <string>
#include <vector>

namespace rehom::io {

// Shortest round-trip decimal formatting ("%.17g"), locale-independent.
std::string fmt_double(double x);

// Write content to path atomically: temp file in the same directory, fsync,
// rename. Creates parent directories as needed.
void atomic_write(const std::string& path, const std::string& content);
void atomic_write(const std::string& path, const void* data, std::size_t size);

std::string read_file(const std::string& path);  // throws ConfigError if missing
bool file_exists(const std::string& path);

// FNV-1a 64-bit checksum.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64_str(const std::string& s);
std::uint64_t fnv1a64_file(const std::string& path);

// Hex rendering of a 64-bit checksum (16 lowercase digits).
std::string hex64(std::uint64_t v);

}  // namespace rehom::io
