#pragma once

// Strict JSON object reader shared by the serializers: every field read is
// recorded and finish() rejects anything unrecognized, so malformed or
// mis-keyed documents fail loudly with a path to the offending field.

#include "rtvla/serialize.hpp"

#include "json.hpp"

#include <set>
#include <string>
#include <utility>

namespace rtvla::jsonio {

using nlohmann::ordered_json;

struct Obj {
    const ordered_json& j;
    std::string where;
    std::set<std::string> seen;

    Obj(const ordered_json& j_, std::string where_) : j(j_), where(std::move(where_)) {
        if (!j.is_object()) throw ParseError(where + ": expected an object");
    }

    const ordered_json* get(const std::string& key, bool required) {
        seen.insert(key);
        auto it = j.find(key);
        if (it == j.end()) {
            if (required) throw ParseError(where + ": missing field '" + key + "'");
            return nullptr;
        }
        return &*it;
    }

    template <typename T>
    T num(const std::string& key, T fallback, bool required = false) {
        const ordered_json* v = get(key, required);
        if (!v) return fallback;
        if (!v->is_number()) throw ParseError(where + "." + key + ": expected a number");
        return v->get<T>();
    }

    std::string str(const std::string& key, const std::string& fallback,
                    bool required = false) {
        const ordered_json* v = get(key, required);
        if (!v) return fallback;
        if (!v->is_string()) throw ParseError(where + "." + key + ": expected a string");
        return v->get<std::string>();
    }

    bool flag(const std::string& key, bool fallback) {
        const ordered_json* v = get(key, false);
        if (!v) return fallback;
        if (!v->is_boolean()) throw ParseError(where + "." + key + ": expected a boolean");
        return v->get<bool>();
    }

    void finish() {
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!seen.count(it.key()))
                throw ParseError(where + ": unknown field '" + it.key() + "'");
    }
};

}  // namespace rtvla::jsonio
