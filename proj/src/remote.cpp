#include "serc/remote.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "serc/errors.hpp"
#include "serc/prompts.hpp"

namespace serc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct ParsedEndpoint {
  std::string host;
  int port = 80;
  std::string path = "/";
};

ParsedEndpoint parse_endpoint(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind("https://", 0) == 0) {
    throw ConfigError("https endpoints are not supported; use a plain http endpoint");
  }
  if (url.rfind(scheme, 0) != 0) {
    throw ConfigError("endpoint must start with http:// (got '" + url + "')");
  }
  std::string rest = url.substr(scheme.size());
  if (rest.empty()) {
    throw ConfigError("endpoint is missing a host");
  }

  ParsedEndpoint out;
  std::size_t slash = rest.find('/');
  std::string authority = slash == std::string::npos ? rest : rest.substr(0, slash);
  if (slash != std::string::npos) {
    out.path = rest.substr(slash);
  }

  std::size_t colon = authority.find(':');
  if (colon == std::string::npos) {
    out.host = authority;
  } else {
    out.host = authority.substr(0, colon);
    std::string port_text = authority.substr(colon + 1);
    try {
      std::size_t used = 0;
      out.port = std::stoi(port_text, &used);
      if (used != port_text.size()) {
        throw std::invalid_argument(port_text);
      }
    } catch (const std::exception&) {
      throw ConfigError("endpoint port '" + port_text + "' is not a number");
    }
    if (out.port < 1 || out.port > 65535) {
      throw ConfigError("endpoint port " + std::to_string(out.port) + " is out of range");
    }
  }
  if (out.host.empty()) {
    throw ConfigError("endpoint is missing a host");
  }
  return out;
}

int env_int(const char* name, int fallback) {
  const char* raw = std::getenv(name);
  if (raw == nullptr || *raw == '\0') {
    return fallback;
  }
  std::string text(raw);
  try {
    std::size_t used = 0;
    int value = std::stoi(text, &used);
    if (used != text.size()) {
      throw std::invalid_argument(text);
    }
    return value;
  } catch (const std::exception&) {
    throw ConfigError(std::string(name) + " must be an integer (got '" + text + "')");
  }
}

Completion parse_completion(const std::string& body) {
  json parsed;
  try {
    parsed = json::parse(body);
  } catch (const json::parse_error& err) {
    throw BackendProtocolError(std::string("completion body is not JSON: ") + err.what());
  }
  if (!parsed.is_object() || !parsed.contains("choices") ||
      !parsed["choices"].is_array() || parsed["choices"].empty()) {
    throw BackendProtocolError("completion body has no choices array");
  }
  const json& choice = parsed["choices"][0];

  Completion out;
  if (choice.contains("message") && choice["message"].is_object() &&
      choice["message"].contains("content") && choice["message"]["content"].is_string()) {
    out.text = choice["message"]["content"].get<std::string>();
  } else if (choice.contains("text") && choice["text"].is_string()) {
    out.text = choice["text"].get<std::string>();
  } else {
    throw BackendProtocolError("choice carries neither message.content nor text");
  }
  if (choice.contains("finish_reason") && choice["finish_reason"].is_string() &&
      choice["finish_reason"].get<std::string>() == "length") {
    out.truncated = true;
  }
  return out;
}

bool retryable_status(int status) {
  return status == 429 || (status >= 500 && status < 600);
}

std::string describe_observation(const Observation& obs) {
  std::string status;
  switch (obs.status) {
    case ObservationStatus::Ok:
      status = "ok";
      break;
    case ObservationStatus::ToolError:
      status = "tool-error";
      break;
    case ObservationStatus::Timeout:
      status = "timeout";
      break;
  }
  return obs.source + " [" + status + "]: " + obs.payload;
}

}  // namespace

void validate(const SamplingParams& params) {
  if (!(params.temperature >= 0.0)) {
    throw ConfigError("temperature must be nonnegative");
  }
  if (!(params.repetition_penalty > 0.0)) {
    throw ConfigError("repetition_penalty must be positive");
  }
  if (params.max_tokens < 1) {
    throw ConfigError("max_tokens must be at least 1");
  }
}

void validate(const RemoteConfig& cfg) {
  if (cfg.endpoint.empty()) {
    throw ConfigError("no endpoint configured; set SERC_ENDPOINT");
  }
  parse_endpoint(cfg.endpoint);
  if (cfg.timeout_ms < 1) {
    throw ConfigError("timeout_ms must be at least 1");
  }
  if (cfg.max_inflight < 1) {
    throw ConfigError("max_inflight must be at least 1");
  }
  if (cfg.max_retries < 0) {
    throw ConfigError("max_retries must be nonnegative");
  }
  if (cfg.initial_backoff_ms < 0) {
    throw ConfigError("initial_backoff_ms must be nonnegative");
  }
}

RemoteConfig remote_config_from_env() {
  RemoteConfig cfg;
  if (const char* endpoint = std::getenv("SERC_ENDPOINT")) {
    cfg.endpoint = endpoint;
  }
  if (const char* key = std::getenv("SERC_API_KEY")) {
    cfg.api_key = key;
  }
  cfg.timeout_ms = env_int("SERC_TIMEOUT_MS", cfg.timeout_ms);
  cfg.max_inflight = env_int("SERC_MAX_INFLIGHT", cfg.max_inflight);
  return cfg;
}

struct RemoteClient::Impl {
  std::mutex mu;
  std::condition_variable cv;
  int inflight = 0;

  struct Slot {
    Impl& impl;

    explicit Slot(Impl& owner, int limit) : impl(owner) {
      std::unique_lock<std::mutex> lock(impl.mu);
      impl.cv.wait(lock, [&] { return impl.inflight < limit; });
      ++impl.inflight;
    }

    ~Slot() {
      {
        std::lock_guard<std::mutex> lock(impl.mu);
        --impl.inflight;
      }
      impl.cv.notify_one();
    }
  };
};

RemoteClient::RemoteClient(RemoteConfig cfg)
    : config_(std::move(cfg)), impl_(std::make_unique<Impl>()) {
  validate(config_);
}

RemoteClient::~RemoteClient() = default;

Completion RemoteClient::complete(const std::vector<ChatMessage>& messages,
                                  const SamplingParams& sampling) {
  validate(sampling);
  if (messages.empty()) {
    throw ConfigError("a completion request needs at least one message");
  }

  ParsedEndpoint target = parse_endpoint(config_.endpoint);

  ordered_json body;
  if (!config_.model.empty()) {
    body["model"] = config_.model;
  }
  body["messages"] = ordered_json::array();
  for (const ChatMessage& message : messages) {
    body["messages"].push_back({{"role", message.role}, {"content", message.content}});
  }
  body["temperature"] = sampling.temperature;
  body["repetition_penalty"] = sampling.repetition_penalty;
  body["max_tokens"] = sampling.max_tokens;
  std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }

  Impl::Slot slot(*impl_, config_.max_inflight);

  std::string last_failure = "no attempt made";
  int backoff_ms = config_.initial_backoff_ms;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0 && backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
      backoff_ms *= 2;
    }

    httplib::Client client(target.host, target.port);
    client.set_connection_timeout(config_.timeout_ms / 1000,
                                  (config_.timeout_ms % 1000) * 1000);
    client.set_read_timeout(config_.timeout_ms / 1000,
                            (config_.timeout_ms % 1000) * 1000);
    client.set_write_timeout(config_.timeout_ms / 1000,
                             (config_.timeout_ms % 1000) * 1000);

    httplib::Result res = client.Post(target.path, headers, payload, "application/json");
    if (!res) {
      last_failure = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw AuthError("endpoint rejected the credential (status " +
                      std::to_string(res->status) + ")");
    }
    if (retryable_status(res->status)) {
      last_failure = "status " + std::to_string(res->status);
      if (attempt == config_.max_retries) {
        throw HttpError(res->status, "endpoint kept failing with status " +
                                         std::to_string(res->status) + " after " +
                                         std::to_string(attempt + 1) + " attempts");
      }
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw HttpError(res->status,
                      "endpoint returned status " + std::to_string(res->status));
    }
    return parse_completion(res->body);
  }

  throw BackendTimeout("endpoint unreachable after " +
                       std::to_string(config_.max_retries + 1) + " attempts (" +
                       last_failure + ")");
}

Completion remote_complete(RemoteClient& client,
                           const std::vector<ChatMessage>& messages,
                           const SamplingParams& sampling) {
  return client.complete(messages, sampling);
}

std::vector<ChatMessage> render_messages(const PolicyContext& ctx, RoleMode mode) {
  std::vector<ChatMessage> messages;
  switch (mode) {
    case RoleMode::Solver:
      messages.push_back({"system", std::string(kSolverPrompt)});
      break;
    case RoleMode::Verifier:
      messages.push_back({"system", std::string(kVerifierPrompt)});
      break;
    case RoleMode::SelfRepair:
      messages.push_back({"system", std::string(kSelfRepairPrompt)});
      break;
  }

  std::string user = ctx.solver.render();
  if (mode == RoleMode::Verifier && ctx.review != nullptr) {
    user += "step under review (" + std::to_string(ctx.review->index) + "): " +
            ctx.review->action.content + "\n";
    if (ctx.review->observation) {
      user += "its observation: " + describe_observation(*ctx.review->observation) + "\n";
    }
  }
  if (mode == RoleMode::SelfRepair && ctx.repair_target != nullptr) {
    user += "flagged step: " + std::to_string(ctx.repair_target->step_index) +
            "\nverifier score: " + std::to_string(ctx.repair_target->score) +
            "\nverifier confidence: " + std::to_string(ctx.repair_target->conf) +
            "\ncritique: " + ctx.repair_target->critique + "\n";
  }
  if (!ctx.repair_hint.empty()) {
    user += "repair hint: " + ctx.repair_hint + "\n";
  }
  messages.push_back({"user", std::move(user)});
  return messages;
}

RemotePolicy::RemotePolicy(std::shared_ptr<RemoteClient> client, SamplingParams sampling)
    : client_(std::move(client)), sampling_(sampling) {
  if (client_ == nullptr) {
    throw ConfigError("RemotePolicy needs a client");
  }
  validate(sampling_);
}

std::string RemotePolicy::generate(const PolicyContext& ctx, RoleMode mode,
                                   std::mt19937_64& rng) {
  (void)rng;  // decoding randomness lives server-side
  return client_->complete(render_messages(ctx, mode), sampling_).text;
}

std::string RemotePolicy::name() const { return "remote"; }

}  // namespace serc
