#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lspd::io {

// Little-endian primitives. Readers throw std::runtime_error(`what`) on a
// short read so callers can report a format-specific message.

void write_u32(std::ostream &os, std::uint32_t v);
void write_u64(std::ostream &os, std::uint64_t v);
void write_bytes(std::ostream &os, std::string const &s);
void write_f32(std::ostream &os, std::span<const float> v);

std::uint32_t read_u32(std::istream &is, char const *what);
std::uint64_t read_u64(std::istream &is, char const *what);
std::string read_bytes(std::istream &is, std::size_t n, char const *what);
std::vector<float> read_f32(std::istream &is, std::size_t n, char const *what);

/// Array block: u32 ndim, u32 dims..., f32 payload.
void write_array(std::ostream &os, std::span<const std::uint32_t> dims, std::span<const float> data);
struct ArrayBlock
{
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};
ArrayBlock read_array(std::istream &is, char const *what);

/// Writes to a sibling temporary file and renames it over `path`, so a
/// reader never sees a half-written file.
void atomic_write(std::filesystem::path const &path, std::function<void(std::ostream &)> const &body);

} // namespace lspd::io
