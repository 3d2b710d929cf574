#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "dasr/config.hpp"

namespace dasr::detail {

// Tracks which keys of an object were consumed so leftovers can be
// reported as unknown.
class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type (" + it->type_name() + ")");
        }
    }

    const nlohmann::json* sub(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};


}  // namespace dasr::detail
