#include "actloop/gateway.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "actloop/error.hpp"
#include "httplib.h"

namespace actloop {

using nlohmann::json;

void RemoteConfig::validate() const {
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0)
        throw ConfigError("remote base_url must start with http:// or https://");
    if (timeout_ms <= 0) throw ConfigError("remote timeout_ms must be positive");
    if (retries < 0) throw ConfigError("remote retries must be non-negative");
    if (token_env.empty()) throw ConfigError("remote token_env must name an environment variable");
}

AgentBackend backend_from_json(const json& doc) {
    AgentBackend b;
    if (doc.is_string()) {
        if (doc.get<std::string>() == "builtin") return b;
        throw ConfigError("backend must be \"builtin\" or a remote endpoint object");
    }
    if (!doc.is_object()) throw ConfigError("backend must be \"builtin\" or a remote endpoint object");
    const auto kind = doc.value("kind", std::string("remote"));
    if (kind == "builtin") return b;
    if (kind != "remote") throw ConfigError("unknown backend kind '" + kind + "'");
    b.kind = BackendKind::remote;
    b.remote.base_url = doc.value("base_url", b.remote.base_url);
    b.remote.timeout_ms = doc.value("timeout_ms", b.remote.timeout_ms);
    b.remote.retries = doc.value("retries", b.remote.retries);
    b.remote.token_env = doc.value("token_env", b.remote.token_env);
    b.remote.validate();
    return b;
}

std::string wire_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void WireLog::add(WireRecord r) {
    std::lock_guard lock(mu_);
    records_.push_back(std::move(r));
}

std::vector<WireRecord> WireLog::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

void WireLog::write_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("cannot write " + path);
    for (const auto& r : records())
        out << json{{"endpoint", r.endpoint},         {"attempt", r.attempt},
                    {"status", r.status},             {"request_hash", r.request_hash},
                    {"response_hash", r.response_hash}, {"seconds", r.seconds},
                    {"error", r.error}}
                   .dump()
            << '\n';
}

AgentClient::AgentClient(RemoteConfig config, std::shared_ptr<WireLog> log)
    : config_(std::move(config)), log_(log ? std::move(log) : std::make_shared<WireLog>()) {
    config_.validate();
}

std::string AgentClient::post(const std::string& endpoint, const json& body) const {
    const std::string payload = body.dump();
    httplib::Headers headers;
    if (const char* token = std::getenv(config_.token_env.c_str()); token && *token)
        headers.emplace("Authorization", std::string("Bearer ") + token);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    std::string last_error;
    for (int attempt = 1; attempt <= config_.retries + 1; ++attempt) {
        httplib::Client cli(config_.base_url);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
        WireRecord rec;
        rec.endpoint = endpoint;
        rec.attempt = attempt;
        rec.request_hash = wire_hash(payload);
        const auto t0 = std::chrono::steady_clock::now();
        auto res = cli.Post(endpoint, headers, payload, "application/json");
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!res) {
            rec.error = httplib::to_string(res.error());
            last_error = endpoint + ": " + rec.error;
            log_->add(rec);
            continue;
        }
        rec.status = res->status;
        rec.response_hash = wire_hash(res->body);
        if (res->status >= 200 && res->status < 300) {
            log_->add(rec);
            return res->body;
        }
        rec.error = "HTTP " + std::to_string(res->status);
        log_->add(rec);
        last_error = endpoint + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200);
        if (res->status < 500) break;  // client errors are not retried
    }
    throw TransportError(last_error);
}

namespace {

json phrases(const DomainSpec& spec, const std::vector<Literal>& lits) {
    json a = json::array();
    for (const auto& l : lits) a.push_back(literal_to_string(spec, l, true));
    return a;
}

json parse_body(const std::string& body, const std::string& what) {
    std::string text = body;
    const auto close = text.find("</think>");
    if (close != std::string::npos) text = text.substr(close + 8);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(what + " response is not valid JSON: " + e.what());
    }
}

std::string describe_failure(const DomainSpec& spec, const PlanReport& r) {
    std::string s = r.reason;
    if (!r.literal.empty()) s += " (condition '" + r.literal + "')";
    if (r.sid > 0) s += " at step " + std::to_string(r.sid);
    (void)spec;
    return s;
}

}  // namespace

json plan_request(const DomainSpec& spec, const Goal& goal, const SymbolicState& state) {
    return {{"GOAL", goal.description},
            {"goal_conditions", phrases(spec, goal.target)},
            {"image", describe_state(spec, state)},
            {"history", json::array()}};
}

json replan_request(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                    const SymbolicState& state) {
    PlanSequence failed;
    failed.steps.push_back(failure.failed);
    PlanSequence remaining = failure.remaining;
    if (!remaining.steps.empty() && remaining.steps.front().sid == failure.failed.sid)
        remaining.steps.erase(remaining.steps.begin());
    std::string feedback = failure.feedback;
    for (const auto& t : failure.tags) feedback += (feedback.empty() ? "" : " ") + std::string("[") + t + "]";
    return {{"global_goal", goal.description},
            {"goal_conditions", phrases(spec, goal.target)},
            {"failed_attempt", plan_to_json(spec, failed).at("steps").at(0)},
            {"critic_feedback", feedback},
            {"remaining_steps", plan_to_json(spec, remaining).at("steps")},
            {"image", describe_state(spec, state)}};
}

json critic_request(const DomainSpec& spec, const Segment& segment, const PlanStep& step) {
    json actions = json::array();
    for (const auto& a : step.actions) {
        json ja = {{"verb", a.verb}, {"objects", a.objects}};
        if (a.tool) ja["tool"] = *a.tool;
        actions.push_back(ja);
    }
    json keyframes = json::array();
    if (segment.frames > 0) {
        std::vector<int> idx{0, segment.frames / 2, segment.frames - 1};
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i > 0 && idx[i] == idx[i - 1]) continue;
            keyframes.push_back(
                {{"frame", idx[i]}, {"state", describe_state(spec, decode_frame(spec, segment.row(idx[i])))}});
        }
    }
    return {{"sid", step.sid},
            {"action instruction", step.instruction},
            {"actions", actions},
            {"pre", phrases(spec, step.pre)},
            {"post", phrases(spec, step.post)},
            {"video", {{"frames", segment.frames}, {"keyframes", keyframes}}}};
}

PlanSequence RemotePlanner::plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& state) {
    json req = plan_request(spec, goal, state);
    for (int round = 0; round < 2; ++round) {
        const auto p = plan_from_json(spec, parse_body(client_.post("/plan", req), "/plan"));
        const auto report = validate_plan(spec, p, state, &goal);
        if (report.ok) return p;
        if (round == 1) throw PlanValidationError("remote plan rejected twice: " + describe_failure(spec, report));
        req["violation"] = describe_failure(spec, report);
    }
    throw PlanValidationError("unreachable");
}

PlanSequence RemotePlanner::replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                                   const SymbolicState& state) {
    json req = replan_request(spec, goal, failure, state);
    for (int round = 0; round < 2; ++round) {
        const auto p = plan_from_json(spec, parse_body(client_.post("/replan", req), "/replan"));
        PlanReport report;
        if (p.steps.empty()) {
            report.ok = false;
            report.reason = "empty replacement plan";
        } else if (p.steps.front().sid != failure.failed.sid) {
            report.ok = false;
            report.sid = p.steps.front().sid;
            report.reason = "replacement must start with sid " + std::to_string(failure.failed.sid);
        } else {
            report = validate_plan(spec, p, state, &goal);
        }
        if (report.ok) return p;
        if (round == 1) throw PlanValidationError("remote replan rejected twice: " + describe_failure(spec, report));
        req["violation"] = describe_failure(spec, report);
    }
    throw PlanValidationError("unreachable");
}

CriticReport RemoteCritic::critique(const DomainSpec& spec, const Segment& segment, const PlanStep& step) {
    const auto body = client_.post("/critic", critic_request(spec, segment, step));
    return report_from_json(spec, step, parse_body(body, "/critic"), config_);
}

std::unique_ptr<PlanAgent> make_planner(const AgentBackend& backend, std::shared_ptr<WireLog> log) {
    if (backend.kind == BackendKind::builtin) return std::make_unique<BuiltinPlanner>();
    return std::make_unique<RemotePlanner>(AgentClient(backend.remote, std::move(log)));
}

std::unique_ptr<CriticAgent> make_critic(const AgentBackend& backend, const CriticConfig& config,
                                         std::shared_ptr<WireLog> log) {
    if (backend.kind == BackendKind::builtin) return std::make_unique<BuiltinCritic>(config);
    return std::make_unique<RemoteCritic>(AgentClient(backend.remote, std::move(log)), config);
}

MockScript parse_mock_script(const json& doc) {
    try {
        MockScript s;
        if (!doc.is_object()) throw SchemaError("mock script must be an object");
        s.require_token = doc.value("require_token", std::string());
        for (const auto& jr : doc.value("rules", json::array())) {
            MockRule r;
            r.name = jr.value("name", std::string());
            r.path = jr.at("path").get<std::string>();
            if (jr.contains("contains")) r.contains = jr.at("contains").get<std::vector<std::string>>();
            r.times = jr.value("times", -1);
            r.delay_ms = jr.value("delay_ms", 0);
            r.status = jr.value("status", 200);
            if (jr.contains("body")) {
                const auto& b = jr.at("body");
                r.body = b.is_string() ? b.get<std::string>() : b.dump();
            }
            if (r.name.empty()) r.name = r.path + "#" + std::to_string(s.rules.size());
            s.rules.push_back(std::move(r));
        }
        return s;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed mock script: ") + e.what());
    }
}

MockScript load_mock_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    try {
        return parse_mock_script(json::parse(in));
    } catch (const json::parse_error& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

struct MockServer::Impl {
    MockScript script;
    httplib::Server server;
    std::thread thread;
    mutable std::mutex mu;
    std::vector<int> remaining;
    std::vector<int> hits;
    int unmatched = 0;
    std::vector<MockExchange> exchanges;

    void handle(const httplib::Request& req, httplib::Response& res) {
        answer(req, res);
        std::lock_guard lock(mu);
        exchanges.push_back({req.path, req.body, res.body, res.status});
    }

    void answer(const httplib::Request& req, httplib::Response& res) {
        if (!script.require_token.empty() && req.get_header_value("Authorization") != "Bearer " + script.require_token) {
            res.status = 401;
            res.set_content(json{{"error", "missing or wrong bearer token"}}.dump(), "application/json");
            return;
        }
        std::optional<MockRule> rule;
        {
            std::lock_guard lock(mu);
            for (std::size_t i = 0; i < script.rules.size(); ++i) {
                const auto& r = script.rules[i];
                if (r.path != req.path || remaining[i] == 0) continue;
                bool ok = true;
                for (const auto& needle : r.contains) ok = ok && req.body.find(needle) != std::string::npos;
                if (!ok) continue;
                if (remaining[i] > 0) --remaining[i];
                ++hits[i];
                rule = r;
                break;
            }
            if (!rule) ++unmatched;
        }
        if (!rule) {
            res.status = 404;
            res.set_content(json{{"error", "no rule matched"},
                                 {"request", {{"method", req.method}, {"path", req.path}, {"body", req.body}}}}
                                .dump(),
                            "application/json");
            return;
        }
        if (rule->delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(rule->delay_ms));
        res.status = rule->status;
        res.set_content(rule->body, "application/json");
    }
};

MockServer::MockServer(MockScript script) : impl_(std::make_unique<Impl>()) {
    impl_->script = std::move(script);
    impl_->remaining.clear();
    for (const auto& r : impl_->script.rules) impl_->remaining.push_back(r.times);
    impl_->hits.assign(impl_->script.rules.size(), 0);
    auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->handle(req, res); };
    impl_->server.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    impl_->server.Post(R"(.*)", handler);
    impl_->server.Get(R"(.*)", handler);
}

MockServer::~MockServer() { stop(); }

void MockServer::start(const std::string& host, int port) {
    if (impl_->thread.joinable()) throw ConfigError("mock server already running");
    host_ = host;
    if (port == 0) {
        port_ = impl_->server.bind_to_any_port(host);
        if (port_ <= 0) throw TransportError("mock server could not bind any port on " + host);
    } else {
        if (!impl_->server.bind_to_port(host, port))
            throw TransportError("mock server could not bind " + host + ":" + std::to_string(port) + " (port busy?)");
        port_ = port;
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void MockServer::stop() {
    if (!impl_ || !impl_->thread.joinable()) return;
    impl_->server.stop();
    impl_->thread.join();
}

std::vector<MockExchange> MockServer::transcript() const {
    std::lock_guard lock(impl_->mu);
    return impl_->exchanges;
}

std::string transcript_to_jsonl(const std::vector<MockExchange>& exchanges) {
    std::string out;
    for (const auto& e : exchanges)
        out += json{{"path", e.path}, {"status", e.status}, {"request", e.request}, {"response", e.response}}.dump() +
               "\n";
    return out;
}

std::vector<MockExchange> transcript_from_jsonl(const std::string& text) {
    std::vector<MockExchange> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            out.push_back({j.at("path").get<std::string>(), j.at("request").get<std::string>(),
                           j.at("response").get<std::string>(), j.at("status").get<int>()});
        } catch (const json::exception& e) {
            throw ParseError("transcript line " + std::to_string(out.size() + 1) + ": " + e.what());
        }
    }
    return out;
}

std::string MockServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

int MockServer::hits(const std::string& rule_name) const {
    std::lock_guard lock(impl_->mu);
    int n = 0;
    for (std::size_t i = 0; i < impl_->script.rules.size(); ++i)
        if (impl_->script.rules[i].name == rule_name) n += impl_->hits[i];
    return n;
}

int MockServer::unmatched() const {
    std::lock_guard lock(impl_->mu);
    return impl_->unmatched;
}

}  // namespace actloop
