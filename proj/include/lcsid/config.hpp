#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace lcsid {

/// Flat "key = value" configuration with [section] headers. Keys are stored
/// as "section.key"; '#' starts a comment. Later assignments override earlier
/// ones, which is how command-line flags are layered on top of a file.
class Config {
public:
    static Config parse(std::istream& is, const std::string& origin = "<config>");
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_list(const std::string& key) const;

    /// Throws ValidationError naming the first key not in the allowed set.
    void check_keys(const std::set<std::string>& allowed) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace lcsid
