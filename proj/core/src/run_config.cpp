#include "rfa/run_config.hpp"

#include "rfa/tensor.hpp"

#include <fstream>
#include <sstream>

namespace rfa {

const std::set<std::string>& RunConfig::known_keys() {
    static const std::set<std::string> keys = {
        "seed",       "k",          "stride",     "channels",  "factory",   "epochs",
        "batch",      "lr0",        "out",        "model",     "classes",   "hw",
        "train_count","test_count", "images",     "labels",    "checkpoint","index",
        "class",      "tol",        "mutate",     "bench_n",   "bench_channels",
        "bench_sizes","bench_warm", "bench_iters","gradcam_stage",
    };
    return keys;
}

static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    check(is.is_open(), "cannot open config file " + path);
    RunConfig config;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        check(eq != std::string::npos,
              path + ":" + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
        config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    check(known_keys().count(key) > 0, "unknown config key '" + key + "'");
    values_[key] = value;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int64_t RunConfig::get_int(const std::string& key, int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(it->second, &pos);
        check(pos == it->second.size(), "");
        return v;
    } catch (...) {
        fail("config key '" + key + "' is not an integer: '" + it->second + "'");
    }
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        check(pos == it->second.size(), "");
        return v;
    } catch (...) {
        fail("config key '" + key + "' is not a number: '" + it->second + "'");
    }
}

std::string RunConfig::resolved() const {
    std::ostringstream os;
    for (const auto& [key, value] : values_) os << key << "=" << value << "\n";
    return os.str();
}

} // namespace rfa
