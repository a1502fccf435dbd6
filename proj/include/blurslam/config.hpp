#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "blurslam/errors.hpp"

namespace blurslam {

/// Flat key=value settings with dotted section prefixes, e.g.
/// "tracker.levels = 3". Later sources override earlier ones, so the
/// intended precedence is: built-in defaults < config file < command line.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw MissingFile(path);
        Config cfg;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string stripped = strip(line.substr(0, line.find('#')));
            if (stripped.empty()) continue;
            const size_t eq = stripped.find('=');
            if (eq == std::string::npos) throw MalformedLine(path, line_no, line);
            const std::string key = strip(stripped.substr(0, eq));
            const std::string value = strip(stripped.substr(eq + 1));
            if (key.empty() || value.empty()) throw MalformedLine(path, line_no, line);
            cfg.set(key, value);
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Every entry of `overrides` wins over this config's entries.
    void merge(const Config& overrides) {
        for (const auto& [k, v] : overrides.values_) values_[k] = v;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        const auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    double get_double(const std::string& key, double def) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::istringstream ss(it->second);
        double v;
        if (!(ss >> v) || !fully_consumed(ss))
            throw DomainError("config: " + key + " = '" + it->second + "' is not a number");
        return v;
    }

    int get_int(const std::string& key, int def) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::istringstream ss(it->second);
        int v;
        if (!(ss >> v) || !fully_consumed(ss))
            throw DomainError("config: " + key + " = '" + it->second + "' is not an integer");
        return v;
    }

    bool get_bool(const std::string& key, bool def) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::string v = it->second;
        std::transform(v.begin(), v.end(), v.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "off" || v == "no") return false;
        throw DomainError("config: " + key + " = '" + it->second + "' is not a boolean");
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string strip(const std::string& s) {
        const size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        const size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    static bool fully_consumed(std::istringstream& ss) {
        std::string rest;
        return !(ss >> rest);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace blurslam
