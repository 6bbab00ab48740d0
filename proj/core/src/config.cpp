#include "wmsteer/config.hpp"

#include <fstream>
#include <functional>

#include "wmsteer/common.hpp"

namespace wmsteer {

namespace {

std::vector<std::string> split_path(const std::string& dotted) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : dotted) {
        if (c == '.') {
            require(!cur.empty(), "config: empty path segment in '" + dotted + "'");
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    require(!cur.empty(), "config: empty path segment in '" + dotted + "'");
    parts.push_back(cur);
    return parts;
}

}  // namespace

Config::Config(nlohmann::json root) : root_(std::move(root)) {
    require(root_.is_object(), "config: top level must be a JSON object");
}

Config Config::from_file(const std::string& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), "config: cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("config: failed to parse " + path + ": " + e.what());
    }
    return Config(std::move(j));
}

const nlohmann::json* Config::locate(const std::string& dotted) const {
    const nlohmann::json* cur = &root_;
    for (const auto& part : split_path(dotted)) {
        if (!cur->is_object()) return nullptr;
        auto it = cur->find(part);
        if (it == cur->end()) return nullptr;
        cur = &*it;
    }
    return cur;
}

bool Config::has(const std::string& dotted) const { return locate(dotted) != nullptr; }

double Config::get_double(const std::string& dotted, double fallback) const {
    const nlohmann::json* v = locate(dotted);
    if (!v) return fallback;
    require(v->is_number(), "config: " + dotted + " is not a number");
    return v->get<double>();
}

std::int64_t Config::get_int(const std::string& dotted, std::int64_t fallback) const {
    const nlohmann::json* v = locate(dotted);
    if (!v) return fallback;
    require(v->is_number_integer(), "config: " + dotted + " is not an integer");
    return v->get<std::int64_t>();
}

bool Config::get_bool(const std::string& dotted, bool fallback) const {
    const nlohmann::json* v = locate(dotted);
    if (!v) return fallback;
    require(v->is_boolean(), "config: " + dotted + " is not a boolean");
    return v->get<bool>();
}

std::string Config::get_string(const std::string& dotted, const std::string& fallback) const {
    const nlohmann::json* v = locate(dotted);
    if (!v) return fallback;
    require(v->is_string(), "config: " + dotted + " is not a string");
    return v->get<std::string>();
}

void Config::set(const std::string& dotted, nlohmann::json value) {
    nlohmann::json* cur = &root_;
    auto parts = split_path(dotted);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!cur->contains(parts[i]) || !(*cur)[parts[i]].is_object())
            (*cur)[parts[i]] = nlohmann::json::object();
        cur = &(*cur)[parts[i]];
    }
    (*cur)[parts.back()] = std::move(value);
}

void Config::apply_override(const std::string& assignment) {
    auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0,
            "config: override must look like key.path=value, got '" + assignment + "'");
    std::string key = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // unquoted strings
    set(key, std::move(value));
}

void Config::merge(const Config& other) {
    std::function<void(nlohmann::json&, const nlohmann::json&)> overlay =
        [&](nlohmann::json& dst, const nlohmann::json& src) {
            for (auto it = src.begin(); it != src.end(); ++it) {
                if (it->is_object() && dst.contains(it.key()) && dst[it.key()].is_object())
                    overlay(dst[it.key()], *it);
                else
                    dst[it.key()] = *it;
            }
        };
    overlay(root_, other.root_);
}

std::uint64_t Config::fingerprint() const { return fnv1a(root_.dump()); }

}  // namespace wmsteer
