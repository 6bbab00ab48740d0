#pragma once

/* JSON experiment configuration with dotted-path access and CLI overrides.
 * Precedence: built-in defaults < config file < --set key=value flags. */

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace wmsteer {

class Config {
public:
    Config() : root_(nlohmann::json::object()) {}
    explicit Config(nlohmann::json root);

    static Config from_file(const std::string& path);

    bool has(const std::string& dotted) const;
    double get_double(const std::string& dotted, double fallback) const;
    std::int64_t get_int(const std::string& dotted, std::int64_t fallback) const;
    bool get_bool(const std::string& dotted, bool fallback) const;
    std::string get_string(const std::string& dotted, const std::string& fallback) const;

    void set(const std::string& dotted, nlohmann::json value);
    // Parses "a.b.c=value"; value is read as JSON when possible, else string.
    void apply_override(const std::string& assignment);

    // Overlays every entry of `other` on top of this config.
    void merge(const Config& other);

    const nlohmann::json& root() const { return root_; }
    std::string dump(int indent = -1) const { return root_.dump(indent); }
    std::uint64_t fingerprint() const;

private:
    const nlohmann::json* locate(const std::string& dotted) const;
    nlohmann::json root_;
};

}  // namespace wmsteer
