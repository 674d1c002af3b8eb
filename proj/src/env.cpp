#include "serc/env.hpp"

#include <array>
#include <cctype>
#include <memory>
#include <random>

#include "serc/errors.hpp"
#include "serc/rational.hpp"
#include "serc/util.hpp"

namespace serc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kArithName = "arithmetic-chain";
constexpr const char* kTableName = "table-qa";

struct Node {
  char op = 0;  // 0 for leaves
  int value = 0;
  std::unique_ptr<Node> lhs;
  std::unique_ptr<Node> rhs;
};

std::unique_ptr<Node> random_tree(std::mt19937_64& rng, int ops) {
  auto node = std::make_unique<Node>();
  if (ops == 0) {
    std::uniform_int_distribution<int> leaf(2, 12);
    node->value = leaf(rng);
    return node;
  }
  std::uniform_int_distribution<int> split(0, ops - 1);
  std::uniform_int_distribution<int> op_pick(0, 2);
  int left_ops = split(rng);
  node->op = "+-*"[op_pick(rng)];
  node->lhs = random_tree(rng, left_ops);
  node->rhs = random_tree(rng, ops - 1 - left_ops);
  return node;
}

int precedence(char op) { return op == '*' ? 2 : 1; }

std::string render_tree(const Node& node, int parent_prec, bool is_right_of_minus) {
  if (node.op == 0) {
    return std::to_string(node.value);
  }
  int prec = precedence(node.op);
  std::string text = render_tree(*node.lhs, prec, false) + node.op +
                     render_tree(*node.rhs, prec, node.op == '-');
  if (prec < parent_prec || (prec == parent_prec && is_right_of_minus)) {
    return "(" + text + ")";
  }
  return text;
}

json tree_json(const Node& node) {
  if (node.op == 0) {
    return json{{"value", node.value}};
  }
  json out;
  out["op"] = std::string(1, node.op);
  out["lhs"] = tree_json(*node.lhs);
  out["rhs"] = tree_json(*node.rhs);
  return out;
}

BigInt eval_tree_json(const json& node) {
  if (node.contains("value")) {
    if (!node["value"].is_number_integer()) {
      throw MalformedRecord("scene.tree", "leaf value must be an integer");
    }
    return BigInt(node["value"].get<long long>());
  }
  if (!node.contains("op") || !node.contains("lhs") || !node.contains("rhs")) {
    throw MalformedRecord("scene.tree", "internal node needs op, lhs, rhs");
  }
  BigInt lhs = eval_tree_json(node["lhs"]);
  BigInt rhs = eval_tree_json(node["rhs"]);
  std::string op = node["op"].get<std::string>();
  if (op == "+") {
    return lhs + rhs;
  }
  if (op == "-") {
    return lhs - rhs;
  }
  if (op == "*") {
    return lhs * rhs;
  }
  throw MalformedRecord("scene.tree", "unknown operator '" + op + "'");
}

const std::array<const char*, 12> kColumnPool = {"alpha", "beta",  "gamma", "delta",
                                                 "epsilon", "zeta", "eta",   "theta",
                                                 "iota",  "kappa", "lambda", "mu"};

std::string column_name(int i) {
  if (i < static_cast<int>(kColumnPool.size())) {
    return kColumnPool[static_cast<std::size_t>(i)];
  }
  return std::string(kColumnPool[static_cast<std::size_t>(i) % kColumnPool.size()]) +
         std::to_string(i / static_cast<int>(kColumnPool.size()) + 1);
}

GeneratedTask generate_arithmetic(const EnvConfig& cfg) {
  auto rng = make_rng(mix_seed(cfg.seed, 0xa417));
  auto tree = random_tree(rng, cfg.difficulty);
  std::string expression = render_tree(*tree, 0, false);

  GeneratedTask out;
  out.origin = cfg;
  out.task.id = "arith-d" + std::to_string(cfg.difficulty) + "-s" + std::to_string(cfg.seed);
  out.task.question = "Evaluate: " + expression;
  out.task.scene = json{{"kind", kArithName}, {"expression", expression}, {"tree", tree_json(*tree)}};
  out.task.answer_spec = "integer";
  out.ground_truth = eval_tree_json(out.task.scene["tree"]).str();
  return out;
}

GeneratedTask generate_table(const EnvConfig& cfg) {
  auto rng = make_rng(mix_seed(cfg.seed, 0x7ab1e));
  int n = cfg.difficulty;

  json rows = json::array();
  json cols = json::array();
  for (int i = 0; i < n; ++i) {
    rows.push_back(std::to_string(2019 + i));
    cols.push_back(column_name(i));
  }
  std::uniform_int_distribution<int> tenths(10, 9999);
  json cells = json::array();
  for (int r = 0; r < n; ++r) {
    json row = json::array();
    for (int c = 0; c < n; ++c) {
      int v = tenths(rng);
      row.push_back(std::to_string(v / 10) + "." + std::to_string(v % 10));
    }
    cells.push_back(std::move(row));
  }
  std::uniform_int_distribution<int> pick(0, n - 1);
  int target_row = pick(rng);
  int target_col = pick(rng);

  GeneratedTask out;
  out.origin = cfg;
  out.task.id = "table-d" + std::to_string(cfg.difficulty) + "-s" + std::to_string(cfg.seed);
  std::string row_key = rows[static_cast<std::size_t>(target_row)].get<std::string>();
  std::string col_key = cols[static_cast<std::size_t>(target_col)].get<std::string>();
  out.task.question = "What is the value for row " + row_key + ", column " + col_key + "?";
  out.task.scene = json{{"kind", kTableName},
                        {"rows", rows},
                        {"cols", cols},
                        {"cells", cells},
                        {"target_row", row_key},
                        {"target_col", col_key}};
  out.task.answer_spec = "decimal";
  out.ground_truth =
      cells[static_cast<std::size_t>(target_row)][static_cast<std::size_t>(target_col)]
          .get<std::string>();
  return out;
}

std::string_view trim(std::string_view text) {
  std::size_t begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) {
    return {};
  }
  std::size_t end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

}  // namespace

std::string task_kind_name(TaskKind kind) {
  return kind == TaskKind::ArithmeticChain ? kArithName : kTableName;
}

void validate(const EnvConfig& cfg) {
  if (cfg.difficulty < 1) {
    throw ConfigError("difficulty must be at least 1");
  }
}

GeneratedTask generate_task(const EnvConfig& cfg) {
  validate(cfg);
  return cfg.kind == TaskKind::ArithmeticChain ? generate_arithmetic(cfg) : generate_table(cfg);
}

std::vector<GeneratedTask> make_task_batch(const EnvConfig& cfg, int count, std::uint64_t salt) {
  std::vector<GeneratedTask> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    EnvConfig task_cfg = cfg;
    task_cfg.seed = mix_seed(cfg.seed, salt, static_cast<std::uint64_t>(i));
    out.push_back(generate_task(task_cfg));
  }
  return out;
}

bool answers_equal(std::string_view left, std::string_view right) {
  auto lv = parse_decimal(left);
  auto rv = parse_decimal(right);
  if (lv && rv) {
    return *lv == *rv;
  }
  return trim(left) == trim(right);
}

double outcome_reward(const GeneratedTask& task, std::string_view final_answer) {
  return answers_equal(final_answer, task.ground_truth) ? 1.0 : 0.0;
}

std::string oracle_solve(const GeneratedTask& task) {
  const json& scene = task.task.scene;
  if (task_kind_of(task.task) == TaskKind::ArithmeticChain) {
    return eval_tree_json(scene.at("tree")).str();
  }
  const json& rows = scene.at("rows");
  const json& cols = scene.at("cols");
  std::string row_key = scene.at("target_row").get<std::string>();
  std::string col_key = scene.at("target_col").get<std::string>();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].get<std::string>() != row_key) {
      continue;
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (cols[c].get<std::string>() == col_key) {
        return scene.at("cells")[r][c].get<std::string>();
      }
    }
  }
  throw Error("task scene does not contain its own target cell");
}

std::string encode_task_record(const GeneratedTask& task) {
  ordered_json out;
  out["id"] = task.task.id;
  out["kind"] = task_kind_name(task.origin.kind);
  out["difficulty"] = task.origin.difficulty;
  out["seed"] = task.origin.seed;
  out["question"] = task.task.question;
  out["scene"] = task.task.scene;
  out["answer_spec"] = task.task.answer_spec;
  out["ground_truth"] = task.ground_truth;
  return out.dump();
}

GeneratedTask decode_task_record(std::string_view line) {
  json root = json::parse(line, nullptr, false);
  if (root.is_discarded() || !root.is_object()) {
    throw MalformedRecord("", "not a JSON object");
  }
  auto require_string = [&root](const char* key) {
    auto it = root.find(key);
    if (it == root.end() || !it->is_string()) {
      throw MalformedRecord(key, "missing or not a string");
    }
    return it->get<std::string>();
  };

  GeneratedTask out;
  out.task.id = require_string("id");
  std::string kind = require_string("kind");
  if (kind == kArithName) {
    out.origin.kind = TaskKind::ArithmeticChain;
  } else if (kind == kTableName) {
    out.origin.kind = TaskKind::TableQa;
  } else {
    throw MalformedRecord("kind", "unknown kind '" + kind + "'");
  }
  auto difficulty = root.find("difficulty");
  if (difficulty == root.end() || !difficulty->is_number_integer()) {
    throw MalformedRecord("difficulty", "missing or not an integer");
  }
  out.origin.difficulty = difficulty->get<int>();
  auto seed = root.find("seed");
  if (seed == root.end() || !seed->is_number_unsigned()) {
    throw MalformedRecord("seed", "missing or not an unsigned integer");
  }
  out.origin.seed = seed->get<std::uint64_t>();
  out.task.question = require_string("question");
  auto scene = root.find("scene");
  if (scene == root.end() || !scene->is_object()) {
    throw MalformedRecord("scene", "missing or not an object");
  }
  out.task.scene = *scene;
  out.task.answer_spec = require_string("answer_spec");
  out.ground_truth = require_string("ground_truth");
  return out;
}

TaskKind task_kind_of(const TaskInstance& task) {
  auto kind = task.scene.find("kind");
  if (kind != task.scene.end() && kind->is_string() &&
      kind->get_ref<const std::string&>() == kTableName) {
    return TaskKind::TableQa;
  }
  return TaskKind::ArithmeticChain;
}

ToolRegistry registry_for_task(const TaskInstance& task) {
  if (task_kind_of(task) == TaskKind::TableQa) {
    return make_builtin_registry(task.scene);
  }
  return make_builtin_registry();
}

ToolCall canonical_tool_call(const TaskInstance& task) {
  if (task_kind_of(task) == TaskKind::TableQa) {
    return {"table_lookup",
            json{{"row_key", task.scene.at("target_row")},
                 {"column_key", task.scene.at("target_col")}}};
  }
  return {"calculator", json{{"expr", task.scene.at("expression")}}};
}

std::string corrupted_expression(const std::string& expr) {
  // Bump the leftmost literal whose change shifts the value. A bump can be
  // invisible when the literal sits under multiplication by zero, so verify
  // each candidate against the original before settling on it.
  Rational original = eval_expression_exact(expr);
  std::size_t pos = 0;
  while (pos < expr.size()) {
    std::size_t start = expr.find_first_of("0123456789", pos);
    if (start == std::string::npos) {
      break;
    }
    std::size_t end = start;
    while (end < expr.size() && std::isdigit(static_cast<unsigned char>(expr[end]))) {
      ++end;
    }
    long long value = std::stoll(expr.substr(start, end - start));
    std::string candidate =
        expr.substr(0, start) + std::to_string(value + 1) + expr.substr(end);
    if (eval_expression_exact(candidate) != original) {
      return candidate;
    }
    pos = end;
  }
  return "(" + expr + ")+1";
}

ToolCall corrupted_tool_call(const TaskInstance& task) {
  if (task_kind_of(task) == TaskKind::TableQa) {
    const json& rows = task.scene.at("rows");
    const json& cols = task.scene.at("cols");
    const json& cells = task.scene.at("cells");
    std::string row_key = task.scene.at("target_row").get<std::string>();
    std::string col_key = task.scene.at("target_col").get<std::string>();
    std::size_t target_r = 0;
    std::size_t target_c = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].get<std::string>() == row_key) {
        target_r = i;
      }
    }
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i].get<std::string>() == col_key) {
        target_c = i;
      }
    }
    std::string truth = cells[target_r][target_c].get<std::string>();
    // Prefer a same-column miss one row over; random cells can collide, so
    // walk until the looked-up value actually differs.
    for (std::size_t step = 1; step < rows.size() * cols.size(); ++step) {
      std::size_t r = (target_r + step) % rows.size();
      std::size_t c = (target_c + step / rows.size()) % cols.size();
      if (cells[r][c].get<std::string>() != truth) {
        return {"table_lookup",
                json{{"row_key", rows[r]}, {"column_key", cols[c]}}};
      }
    }
    return {"table_lookup",
            json{{"row_key", rows[(target_r + 1) % rows.size()]}, {"column_key", cols[target_c]}}};
  }
  std::string expr = task.scene.at("expression").get<std::string>();
  return {"calculator", json{{"expr", corrupted_expression(expr)}}};
}

void ground_tool_check(VerificationTuple& tuple, const TaskInstance& task, const Step& step,
                       const ToolRegistry& registry, const ToolLimits& limits) {
  if (step.action.kind == ActionKind::TextStep) {
    tuple.tool_check = false;
    tuple.tool_result = 0;
    return;
  }

  ToolCall canonical = canonical_tool_call(task);
  if (!registry.contains(canonical.tool_name)) {
    tuple.tool_check = false;
    tuple.tool_result = 0;
    return;
  }
  Observation expected = registry.invoke(canonical, limits);
  if (expected.status != ObservationStatus::Ok) {
    tuple.tool_check = false;
    tuple.tool_result = 0;
    return;
  }

  bool confirmed = false;
  if (step.action.kind == ActionKind::FinalAnswer) {
    auto answer = extract_final_answer(step.action.content);
    confirmed = answer && answers_equal(*answer, expected.payload);
  } else {
    confirmed = step.observation && step.observation->status == ObservationStatus::Ok &&
                answers_equal(step.observation->payload, expected.payload);
  }
  tuple.tool_check = true;
  tuple.tool_result = confirmed ? 1 : -1;
}

}  // namespace serc
