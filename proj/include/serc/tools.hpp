#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "serc/tool_call.hpp"
#include "serc/trajectory.hpp"

namespace serc {

struct ToolLimits {
  std::chrono::milliseconds wall_clock_timeout{2000};
  std::size_t max_output_bytes = 4096;
};

void validate(const ToolLimits& limits);

// Handlers return the observation payload; throwing ToolFailure (or any
// exception) yields a tool-error observation instead of crashing the run.
using ToolHandler = std::function<std::string(const nlohmann::json& input)>;

class ToolRegistry {
 public:
  void register_tool(std::string name, ToolHandler handler);
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

  // Runs the named handler on a worker thread, enforcing the wall-clock
  // timeout and output cap. Unknown tools throw; handler failures and
  // timeouts come back as observations.
  Observation invoke(const ToolCall& call, const ToolLimits& limits) const;

 private:
  std::map<std::string, ToolHandler, std::less<>> tools_;
};

// First syntactically complete {"tool_name":..., "tool_input":{...}}
// object in the text; nullopt when no call is present; MalformedToolCall
// when a call was clearly attempted but is truncated or ill-typed.
std::optional<ToolCall> parse_tool_call(std::string_view text);

// Every complete call in order of appearance (protocol checks).
std::vector<ToolCall> find_tool_calls(std::string_view text);

std::string table_lookup(const nlohmann::json& table, std::string_view row_key,
                         std::string_view column_key);

ToolRegistry make_builtin_registry();
ToolRegistry make_builtin_registry(nlohmann::json scene_table);

}  // namespace serc
