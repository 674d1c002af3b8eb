#include "serc/tools.hpp"

#include <future>
#include <thread>
#include <utility>

#include "serc/errors.hpp"
#include "serc/rational.hpp"

namespace serc {

namespace {

using nlohmann::json;

// index one past the matching close brace, or nullopt if the object
// never closes before the end of the text
std::optional<std::size_t> balanced_end(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) {
        return i + 1;
      }
    }
  }
  return std::nullopt;
}

struct ScanResult {
  std::vector<ToolCall> calls;
  bool saw_malformed = false;
};

ScanResult scan_tool_calls(std::string_view text) {
  ScanResult out;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string_view::npos) {
    auto end = balanced_end(text, pos);
    if (!end) {
      // truncated object; only an attempted call makes this malformed
      if (text.find("tool_name", pos) != std::string_view::npos) {
        out.saw_malformed = true;
      }
      ++pos;
      continue;
    }
    json obj = json::parse(text.substr(pos, *end - pos), nullptr, false);
    if (obj.is_object() && obj.contains("tool_name")) {
      auto input = obj.find("tool_input");
      if (obj["tool_name"].is_string() && input != obj.end() && input->is_object()) {
        out.calls.push_back({obj["tool_name"].get<std::string>(), *input});
        pos = *end;
        continue;
      }
      out.saw_malformed = true;
      pos = *end;
      continue;
    }
    // not a call at this brace; objects nested inside may still be one
    ++pos;
  }
  return out;
}

}  // namespace

void validate(const ToolLimits& limits) {
  if (limits.wall_clock_timeout.count() <= 0) {
    throw ConfigError("tool wall-clock timeout must be positive");
  }
  if (limits.max_output_bytes == 0) {
    throw ConfigError("tool output cap must be positive");
  }
}

void ToolRegistry::register_tool(std::string name, ToolHandler handler) {
  if (name.empty()) {
    throw ConfigError("tool name must be nonempty");
  }
  if (!handler) {
    throw ConfigError("tool handler must be callable");
  }
  auto [it, inserted] = tools_.emplace(std::move(name), std::move(handler));
  if (!inserted) {
    throw DuplicateToolError("tool '" + it->first + "' is already registered");
  }
}

bool ToolRegistry::contains(std::string_view name) const {
  return tools_.find(name) != tools_.end();
}

std::vector<std::string> ToolRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(tools_.size());
  for (const auto& [name, handler] : tools_) {
    out.push_back(name);
  }
  return out;
}

Observation ToolRegistry::invoke(const ToolCall& call, const ToolLimits& limits) const {
  validate(limits);
  auto it = tools_.find(call.tool_name);
  if (it == tools_.end()) {
    throw UnknownToolError("unknown tool '" + call.tool_name + "'");
  }

  // handler and input are copied so a timed-out worker can outlive both
  // the registry and the caller
  std::packaged_task<std::string()> task(
      [handler = it->second, input = call.tool_input]() { return handler(input); });
  auto result = task.get_future();
  std::thread worker(std::move(task));

  if (result.wait_for(limits.wall_clock_timeout) == std::future_status::timeout) {
    worker.detach();
    return {call.tool_name,
            "tool call exceeded " + std::to_string(limits.wall_clock_timeout.count()) + "ms",
            ObservationStatus::Timeout};
  }
  worker.join();

  try {
    std::string payload = result.get();
    if (payload.size() > limits.max_output_bytes) {
      static const std::string marker = "...[truncated]";
      if (limits.max_output_bytes > marker.size()) {
        payload = payload.substr(0, limits.max_output_bytes - marker.size()) + marker;
      } else {
        payload.resize(limits.max_output_bytes);
      }
    }
    return {call.tool_name, std::move(payload), ObservationStatus::Ok};
  } catch (const std::exception& e) {
    return {call.tool_name, e.what(), ObservationStatus::ToolError};
  }
}

std::optional<ToolCall> parse_tool_call(std::string_view text) {
  ScanResult scan = scan_tool_calls(text);
  if (!scan.calls.empty()) {
    return std::move(scan.calls.front());
  }
  if (scan.saw_malformed) {
    throw MalformedToolCall("tool call is truncated or has an unusable tool_input");
  }
  return std::nullopt;
}

std::vector<ToolCall> find_tool_calls(std::string_view text) {
  return scan_tool_calls(text).calls;
}

std::string table_lookup(const nlohmann::json& table, std::string_view row_key,
                         std::string_view column_key) {
  if (!table.is_object() || !table.contains("rows") || !table.contains("cols") ||
      !table.contains("cells")) {
    throw ToolFailure("scene table needs rows, cols and cells");
  }
  const auto& rows = table["rows"];
  const auto& cols = table["cols"];
  const auto& cells = table["cells"];
  if (!rows.is_array() || !cols.is_array() || !cells.is_array()) {
    throw ToolFailure("scene table needs rows, cols and cells as arrays");
  }

  std::size_t row = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].is_string() && rows[i].get_ref<const std::string&>() == row_key) {
      row = i;
      break;
    }
  }
  if (row == rows.size()) {
    throw MissingRowError("row '" + std::string(row_key) + "' not found");
  }

  std::size_t col = cols.size();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i].is_string() && cols[i].get_ref<const std::string&>() == column_key) {
      col = i;
      break;
    }
  }
  if (col == cols.size()) {
    throw MissingColumnError("column '" + std::string(column_key) + "' not found");
  }

  if (row >= cells.size() || col >= cells[row].size()) {
    throw ToolFailure("cell out of range");
  }
  const auto& cell = cells[row][col];
  return cell.is_string() ? cell.get<std::string>() : cell.dump();
}

ToolRegistry make_builtin_registry() {
  ToolRegistry registry;
  registry.register_tool("calculator", [](const json& input) -> std::string {
    auto expr = input.find("expr");
    if (expr == input.end() || !expr->is_string()) {
      throw ToolFailure("calculator requires a string field 'expr'");
    }
    return eval_expression(expr->get<std::string>());
  });
  return registry;
}

ToolRegistry make_builtin_registry(nlohmann::json scene_table) {
  ToolRegistry registry = make_builtin_registry();
  registry.register_tool(
      "table_lookup", [table = std::move(scene_table)](const json& input) -> std::string {
        auto row = input.find("row_key");
        auto col = input.find("column_key");
        if (row == input.end() || !row->is_string() || col == input.end() || !col->is_string()) {
          throw ToolFailure("table_lookup requires string fields 'row_key' and 'column_key'");
        }
        return table_lookup(table, row->get<std::string>(), col->get<std::string>());
      });
  return registry;
}

}  // namespace serc
