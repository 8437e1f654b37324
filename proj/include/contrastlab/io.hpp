#pragma once

// Small file/format helpers shared by the corpus, trainer and experiment
// modules: whole-file reads/writes, FNV-1a hashing for manifests, and
// fixed-format float printing for byte-stable CSV output.

#include <cstdint>
#include <string>
#include <utility>

namespace contrastlab {

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64(const std::string& text);
std::string fnv1a64_hex(const std::string& text);
std::string hash_file_hex(const std::string& path);

// printf-style "%.12g" / fixed-decimal formatting; used everywhere a float
// lands in a CSV or log line so identical runs produce identical bytes.
std::string format_double(double value, int significant_digits = 12);
std::string format_fixed(double value, int decimals);

// 1-based (line, column) of a byte offset inside a text buffer.
std::pair<int, int> line_column_at(const std::string& text, std::size_t byte_offset);

}  // namespace contrastlab
