#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace convsql::detail {

std::string sha256_hex(std::string_view data);

inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string ascii_lower(std::string_view s);
std::string ascii_upper(std::string_view s);
bool iequals_ascii(std::string_view a, std::string_view b);

std::string read_text_file(const std::filesystem::path& path);
// Write-then-rename so concurrent readers never see a torn file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string getenv_or(const char* name, const std::string& fallback = {});

}  // namespace convsql::detail
