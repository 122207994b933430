#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace slidepipe {

// UTF-8 `key = value` config file. '#' starts a comment; blank lines are
// ignored; keys are case-sensitive. Unknown keys are kept so callers can
// reject them explicitly.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::optional<std::string> get(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::map<std::string, std::string>& values() const { return values_; }

    // Canonical serialization, keys sorted.
    std::string dump() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace slidepipe
