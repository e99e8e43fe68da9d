#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "actloop/loop.hpp"
#include "json.hpp"

namespace actloop {

struct RemoteConfig {
    std::string base_url = "http://127.0.0.1:8765";
    int timeout_ms = 5000;
    int retries = 2;  // extra attempts after the first on timeouts, connection errors and 5xx
    std::string token_env = "ACTLOOP_AGENT_TOKEN";

    void validate() const;
};

enum class BackendKind { builtin, remote };

struct AgentBackend {
    BackendKind kind = BackendKind::builtin;
    RemoteConfig remote;
};

AgentBackend backend_from_json(const nlohmann::json& doc);

// One HTTP exchange, kept for replay and auditing.
struct WireRecord {
    std::string endpoint;
    int attempt = 0;
    int status = 0;  // 0 when no response arrived
    std::string request_hash, response_hash;
    double seconds = 0.0;
    std::string error;
};

// FNV-1a of the bytes, 16 hex digits.
std::string wire_hash(const std::string& bytes);

class WireLog {
public:
    void add(WireRecord r);
    std::vector<WireRecord> records() const;
    void write_jsonl(const std::string& path) const;

private:
    mutable std::mutex mu_;
    std::vector<WireRecord> records_;
};

// JSON-over-HTTP client with retry and a bearer token taken from the configured environment variable.
class AgentClient {
public:
    explicit AgentClient(RemoteConfig config, std::shared_ptr<WireLog> log = nullptr);
    // Returns the response body of a 2xx reply; TransportError otherwise.
    std::string post(const std::string& endpoint, const nlohmann::json& body) const;
    const RemoteConfig& config() const { return config_; }
    WireLog& log() const { return *log_; }

private:
    RemoteConfig config_;
    std::shared_ptr<WireLog> log_;
};

// Request bodies. The field names follow the planning and critique prompt schemas.
nlohmann::json plan_request(const DomainSpec& spec, const Goal& goal, const SymbolicState& state);
nlohmann::json replan_request(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                              const SymbolicState& state);
nlohmann::json critic_request(const DomainSpec& spec, const Segment& segment, const PlanStep& step);

class RemotePlanner : public PlanAgent {
public:
    explicit RemotePlanner(AgentClient client) : client_(std::move(client)) {}
    PlanSequence plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& state) override;
    PlanSequence replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                        const SymbolicState& state) override;
    const AgentClient& client() const { return client_; }

private:
    AgentClient client_;
};

class RemoteCritic : public CriticAgent {
public:
    RemoteCritic(AgentClient client, CriticConfig config = {}) : client_(std::move(client)), config_(config) {}
    CriticReport critique(const DomainSpec& spec, const Segment& segment, const PlanStep& step) override;
    const AgentClient& client() const { return client_; }

private:
    AgentClient client_;
    CriticConfig config_;
};

std::unique_ptr<PlanAgent> make_planner(const AgentBackend& backend, std::shared_ptr<WireLog> log = nullptr);
std::unique_ptr<CriticAgent> make_critic(const AgentBackend& backend, const CriticConfig& config = {},
                                         std::shared_ptr<WireLog> log = nullptr);

// Mock server script: ordered rules, the first match with uses left answers.
struct MockRule {
    std::string name;
    std::string path;                   // exact endpoint, e.g. "/plan"
    std::vector<std::string> contains;  // substrings the request body must contain
    int times = -1;                     // uses before the rule retires; -1 for unlimited
    int delay_ms = 0;
    int status = 200;
    std::string body;                   // response body, sent verbatim
};

struct MockScript {
    std::vector<MockRule> rules;
    std::string require_token;  // when set, requests without "Bearer <token>" get 401
};

MockScript parse_mock_script(const nlohmann::json& doc);
MockScript load_mock_script(const std::string& path);

// One request the mock server answered (or refused), in arrival order.
struct MockExchange {
    std::string path, request, response;
    int status = 0;
};

// Line-delimited {"path", "status", "request", "response"} records; bodies are kept as raw strings.
std::string transcript_to_jsonl(const std::vector<MockExchange>& exchanges);
std::vector<MockExchange> transcript_from_jsonl(const std::string& text);

class MockServer {
public:
    explicit MockServer(MockScript script);
    ~MockServer();
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    // Port 0 picks a free port. TransportError when the port cannot be bound.
    void start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();
    int port() const { return port_; }
    std::string url() const;
    int hits(const std::string& rule_name) const;
    int unmatched() const;
    std::vector<MockExchange> transcript() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::string host_;
};

}  // namespace actloop
