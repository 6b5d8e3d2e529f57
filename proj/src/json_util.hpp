#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "d2nn/error.hpp"

namespace d2nn::jsonutil {

/// Unknown keys are configuration errors, not warnings.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& context) {
  if (!j.is_object()) fail(ErrorKind::Config, context + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto key : allowed) known = known || item.key() == key;
    if (!known) fail(ErrorKind::Config, context + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace d2nn::jsonutil
