#include "lcsid/config.hpp"

#include "lcsid/errors.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

namespace lcsid {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double_value(const std::string& key, const std::string& text)
{
    const std::string t = trim(text);
    double value = 0.0;
    const char* first = t.data();
    if (!t.empty() && *first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), value);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
        throw ValidationError("config key '" + key + "': expected a number, got '" + t + "'");
    }
    return value;
}

}  // namespace

Config Config::parse(std::istream& is, const std::string& origin)
{
    Config cfg;
    std::string section;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ValidationError(origin + ":" + std::to_string(line_no) + ": malformed section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ValidationError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        cfg.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open config " + path.string());
    }
    return parse(is, path.string());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const
{
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const
{
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double_value(key, it->second);
}

std::uint64_t Config::get_seed(const std::string& key, std::uint64_t fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    const std::string t = trim(it->second);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
        throw ValidationError("config key '" + key + "': expected a non-negative integer seed, got '" + t + "'");
    }
    return value;
}

long long Config::get_int(const std::string& key, long long fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    const std::string t = trim(it->second);
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
        throw ValidationError("config key '" + key + "': expected an integer, got '" + t + "'");
    }
    return value;
}

bool Config::get_bool(const std::string& key, bool fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    const std::string t = trim(it->second);
    if (t == "true" || t == "1" || t == "yes") {
        return true;
    }
    if (t == "false" || t == "0" || t == "no") {
        return false;
    }
    throw ValidationError("config key '" + key + "': expected true or false, got '" + t + "'");
}

std::vector<double> Config::get_list(const std::string& key) const
{
    std::vector<double> out;
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return out;
    }
    std::istringstream is(it->second);
    std::string item;
    while (std::getline(is, item, ',')) {
        out.push_back(parse_double_value(key, item));
    }
    return out;
}

void Config::check_keys(const std::set<std::string>& allowed) const
{
    for (const auto& [key, value] : values_) {
        if (allowed.count(key) == 0) {
            throw ValidationError("unknown config key '" + key + "'");
        }
    }
}

}  // namespace lcsid
