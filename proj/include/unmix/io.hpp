#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unmix::io {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);

/// FNV-1a 64-bit; used for config fingerprints in file headers.
std::uint64_t fnv1a(std::string_view text);
std::string hex64(std::uint64_t value);

/// Writes `tag n v0 v1 ...` on one line.
void write_array(std::ostream& out, std::string_view tag, std::span<const double> values);
void write_array(std::ostream& out, std::string_view tag, std::span<const std::size_t> values);

/// Reads a line written by write_array, checking the tag and (if nonzero)
/// the expected element count.
std::vector<double> read_doubles(std::istream& in, std::string_view tag, std::size_t expected = 0);
std::vector<std::size_t> read_indices(std::istream& in, std::string_view tag,
                                      std::size_t expected = 0);

/// Reads `magic vN` and returns N; throws on a different magic.
int read_header(std::istream& in, std::string_view magic);

/// Reads a `key value` line and returns value.
std::string read_field(std::istream& in, std::string_view key);

}  // namespace unmix::io
