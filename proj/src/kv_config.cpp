#include "ssseg/kv_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssseg {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text) {
    KvConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: expected key=value, got: " + line);
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse(os.str());
}

bool KvConfig::has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return true;
    return false;
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    return fallback;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return std::stod(v);
    return fallback;
}

int64_t KvConfig::get_int(const std::string& key, int64_t fallback) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return std::stoll(v);
    return fallback;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    for (const auto& [k, v] : entries_) {
        if (k != key) continue;
        if (v == "1" || v == "true" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "no") return false;
        throw std::runtime_error("config: bad boolean for " + key + ": " + v);
    }
    return fallback;
}

std::vector<int> KvConfig::get_int_list(const std::string& key,
                                        const std::vector<int>& fallback) const {
    for (const auto& [k, v] : entries_) {
        if (k != key) continue;
        std::vector<int> out;
        std::istringstream is(v);
        std::string item;
        while (std::getline(is, item, ',')) out.push_back(std::stoi(trim(item)));
        return out;
    }
    return fallback;
}

void KvConfig::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
        if (k == key) {
            v = value;
            return;
        }
    entries_.emplace_back(key, value);
}

void KvConfig::set_double(const std::string& key, double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    set(key, buf);
}

void KvConfig::set_int(const std::string& key, int64_t value) {
    set(key, std::to_string(value));
}

std::string KvConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << "=" << v << "\n";
    return os.str();
}

}  // namespace ssseg
