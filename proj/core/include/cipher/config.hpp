#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cipher {

// Flat dotted-key configuration ("data.resolution = 64"). Later sources override earlier ones.
class Config {
public:
    static Config parse(std::string_view text, std::string_view origin = "<string>");
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, std::string value);
    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    void merge(const Config& overrides);

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<std::int64_t> get_ints(const std::string& key) const;

    // Canonical "key = value" lines sorted by key.
    std::string to_text() const;
    std::string hash() const;
    void save(const std::filesystem::path& path) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace cipher
