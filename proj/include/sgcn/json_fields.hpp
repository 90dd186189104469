#pragma once

// Strict JSON section readers: unknown keys and wrong types are config errors.

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "sgcn/core.hpp"

namespace sgcn::json {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& section) {
    if (!j.is_object()) throw InvalidConfig("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw InvalidConfig("unknown config key '" + section + "." + key + "'");
    }
}

/// Copies j[key] into out when present; keeps the default otherwise.
template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig("config key '" + section + "." + key + "' has the wrong type: " + e.what());
    }
}

inline json section(const json& j, const char* key) {
    if (!j.contains(key)) return json::object();
    return j.at(key);
}

}  // namespace sgcn::json
