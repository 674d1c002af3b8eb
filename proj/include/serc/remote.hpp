#pragma once

#include <memory>
#include <string>
#include <vector>

#include "serc/policy.hpp"

namespace serc {

// Decoding settings forwarded verbatim in the request body.
struct SamplingParams {
  double temperature = 0.7;
  double repetition_penalty = 1.05;
  int max_tokens = 1024;
};

void validate(const SamplingParams& params);

struct RemoteConfig {
  std::string endpoint;  // full URL, e.g. http://127.0.0.1:8089/v1/chat/completions
  std::string api_key;   // sent as a bearer token when nonempty
  std::string model;     // optional model name in the request body
  int timeout_ms = 30000;
  int max_inflight = 4;
  int max_retries = 2;        // extra attempts after the first, transient failures only
  int initial_backoff_ms = 50;  // doubles after every failed attempt
};

void validate(const RemoteConfig& cfg);

// Reads SERC_ENDPOINT, SERC_API_KEY, SERC_TIMEOUT_MS and SERC_MAX_INFLIGHT.
// Unset variables keep the struct defaults; a missing endpoint is reported by
// validate(), not here, so callers can print a precise message.
RemoteConfig remote_config_from_env();

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct Completion {
  std::string text;
  bool truncated = false;  // server stopped the reply at the max_tokens budget
};

// Chat-completion HTTP client. Safe to share across threads: calls beyond
// max_inflight queue on an internal limiter, every attempt carries the
// configured deadline, and transport failures retry with exponential backoff
// before surfacing as BackendTimeout. Auth failures (401/403) raise AuthError
// immediately; other non-2xx statuses raise HttpError once retries for
// 429/5xx are exhausted.
class RemoteClient {
 public:
  explicit RemoteClient(RemoteConfig cfg);
  ~RemoteClient();

  RemoteClient(const RemoteClient&) = delete;
  RemoteClient& operator=(const RemoteClient&) = delete;

  Completion complete(const std::vector<ChatMessage>& messages,
                      const SamplingParams& sampling);

  const RemoteConfig& config() const noexcept { return config_; }

 private:
  struct Impl;
  RemoteConfig config_;
  std::unique_ptr<Impl> impl_;
};

Completion remote_complete(RemoteClient& client,
                           const std::vector<ChatMessage>& messages,
                           const SamplingParams& sampling);

// The message list generate() would send for a context and role: the role's
// system prompt followed by one user message holding the serialized context.
// Exposed so transcripts can be recorded and replayed byte for byte in tests.
std::vector<ChatMessage> render_messages(const PolicyContext& ctx, RoleMode mode);

// Evaluation-only backend over RemoteClient. Sampling happens server-side,
// so the rng parameter of generate() is unused and no gradients exist;
// training paths reject this backend by type.
class RemotePolicy : public PolicyBackend {
 public:
  explicit RemotePolicy(std::shared_ptr<RemoteClient> client,
                        SamplingParams sampling = {});

  std::string generate(const PolicyContext& ctx, RoleMode mode,
                       std::mt19937_64& rng) override;
  std::string name() const override;

 private:
  std::shared_ptr<RemoteClient> client_;
  SamplingParams sampling_;
};

}  // namespace serc
