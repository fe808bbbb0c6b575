#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace rfa {

/// key=value run configuration: an ASCII file with '#' comments, overridden
/// by command-line flags. Unknown keys are rejected up front; every command
/// logs the fully resolved configuration it ran with.
class RunConfig {
public:
    static const std::set<std::string>& known_keys();
    static RunConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;

    /// Sorted "key=value" lines of the resolved configuration.
    std::string resolved() const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace rfa
