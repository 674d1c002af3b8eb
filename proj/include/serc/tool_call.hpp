#pragma once

#include <string>

#include "json.hpp"

namespace serc {

struct ToolCall {
  std::string tool_name;
  nlohmann::json tool_input;

  bool operator==(const ToolCall&) const = default;
};

}  // namespace serc
