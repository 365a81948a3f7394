#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace lanechange {

// Raised for config documents that parse but do not validate.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<std::string_view> known,
                                std::string_view where) {
  if (!j.is_object()) {
    throw ConfigError(std::string(where) + ": expected a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (auto k : known) {
      if (k == key) {
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace lanechange
