#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ssseg {

// Flat key=value text config. '#' starts a comment; keys keep their first
// assignment order for round-tripping.
class KvConfig {
public:
    static KvConfig parse(const std::string& text);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // comma-separated integer list
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

    void set(const std::string& key, const std::string& value);
    void set_double(const std::string& key, double value);
    void set_int(const std::string& key, int64_t value);

    std::string to_text() const;
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace ssseg
