#include "agentsoc/api.hpp"

#include <cmath>
#include <regex>

#include <httplib.h>

namespace agentsoc::api {

using pipeline::CycleResult;

namespace {

const std::regex kIncident("^/incidents/([^/]+)$");
const std::regex kRescore("^/incidents/([^/]+)/rescore$");
const std::regex kApproval("^/approvals/([^/]+)$");

std::size_t parse_count(const std::map<std::string, std::string>& q, const std::string& key, std::size_t fallback) {
    const auto it = q.find(key);
    if (it == q.end()) return fallback;
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(it->second, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != it->second.size() || v < 0) throw ValidationError(key + " must be a non-negative integer");
    return static_cast<std::size_t>(v);
}

json incident_item(const json& c) {
    json j;
    j["cycle_id"] = c.at("cycle_id");
    j["status"] = c.at("status");
    if (c.contains("incident") && c.at("incident").is_object()) {
        const auto& inc = c.at("incident");
        for (const auto* key : {"user", "source_host", "target_host", "event_type", "flags", "max_severity", "created_at"})
            j[key] = inc.contains(key) ? inc.at(key) : json(nullptr);
    }
    const auto ranked = c.value("ranked", json::array());
    if (!ranked.empty()) {
        const auto& top = ranked.front();
        const auto& cand = top.at("candidate");
        j["top_action"] = {{"primitive", cand.value("primitive", std::string{})},
                           {"target", cand.value("target", std::string{})},
                           {"composite", top.value("composite", 0.0)}};
    }
    if (c.contains("playbook") && c.at("playbook").is_object())
        j["projected_impact"] = c.at("playbook").value("projected_impact", 0.0);
    j["awaiting_approval"] = c.at("status") == "AwaitingAnalyst";
    if (!c.value("error", std::string{}).empty()) j["error"] = c.at("error");
    return j;
}

json ranking_json(const std::vector<rsem::RankedAction>& ranked) {
    json out = json::array();
    for (const auto& r : ranked)
        out.push_back({{"rank", r.rank},
                       {"action_id", r.candidate.action_id},
                       {"primitive", playbook::to_string(r.candidate.primitive)},
                       {"target", r.candidate.target},
                       {"containment", r.candidate.containment},
                       {"business_impact", r.candidate.business_impact},
                       {"execution_cost", r.candidate.execution_cost},
                       {"composite", r.composite}});
    return out;
}

json weights_json(const rsem::RiskWeights& w) { return {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}}; }

}  // namespace

Response error_response(int status, const std::string& error, const std::string& detail) {
    return {status, json{{"error", error}, {"detail", detail}}};
}

Service::Service(std::filesystem::path journal_dir, std::string token)
    : journal_([&] {
          if (!std::filesystem::is_directory(journal_dir))
              throw Error("journal directory not found: " + journal_dir.string());
          return journal_dir;
      }()),
      token_(std::move(token)) {
    const auto run = journal_.read_json("run.json");
    if (!run) return;
    auto cfg = config::config_from_json(run->at("config"));
    const std::filesystem::path snapshot = run->value("snapshot", std::string{});
    auto state = [&] {
        if (const auto saved = journal_.read_json("state.json")) return knowledge::state_from_json(*saved);
        return pipeline::load_state(snapshot);
    }();
    if (state.catalog->techniques().empty())
        state.catalog = std::make_shared<knowledge::TechniqueCatalog>(knowledge::bundled_catalog());
    store_ = std::make_unique<knowledge::KnowledgeStore>(std::move(state));
    if (cfg.pipeline.live) store_->set_delta_log(journal_.dir() / "deltas.jsonl");
    auto mapping = pipeline::load_mapping(cfg, snapshot);
    auto calibration = pipeline::load_calibration(cfg, snapshot);
    engine_ = std::make_unique<pipeline::Engine>(cfg, *store_, std::move(mapping), std::move(calibration));
    engine_->set_journal(&journal_);
}

Service::~Service() = default;

Response Service::handle(const Request& r) {
    try {
        if (r.path == "/healthz") {
            if (r.method != "GET") return error_response(405, "method_not_allowed", r.method + " " + r.path);
            return {200, json{{"status", "ok"}, {"cycles", journal_.cycle_ids().size()}}};
        }
        if (!token_.empty() && r.authorization != "Bearer " + token_)
            return error_response(401, "unauthorized", "missing or invalid bearer token");

        std::smatch m;
        const auto allow = [&](const char* method) { return r.method == method; };
        if (r.path == "/metrics") return allow("GET") ? metrics() : error_response(405, "method_not_allowed", r.path);
        if (r.path == "/incidents") return allow("GET") ? incidents(r) : error_response(405, "method_not_allowed", r.path);
        if (r.path == "/approvals") return allow("GET") ? approvals() : error_response(405, "method_not_allowed", r.path);
        if (std::regex_match(r.path, m, kRescore))
            return allow("POST") ? rescore(m[1], r.body) : error_response(405, "method_not_allowed", r.path);
        if (std::regex_match(r.path, m, kIncident))
            return allow("GET") ? incident(m[1]) : error_response(405, "method_not_allowed", r.path);
        if (std::regex_match(r.path, m, kApproval))
            return allow("POST") ? decide(m[1], r.body) : error_response(405, "method_not_allowed", r.path);
        return error_response(404, "not_found", "no route for " + r.path);
    } catch (const ValidationError& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

Response Service::incidents(const Request& r) {
    const auto limit = parse_count(r.query, "limit", 50);
    const auto offset = parse_count(r.query, "offset", 0);
    const auto status = r.query.count("status") ? r.query.at("status") : std::string{};
    json items = json::array();
    std::size_t total = 0;
    for (const auto& id : journal_.cycle_ids()) {
        const auto c = journal_.read_cycle(id);
        if (!c) continue;
        if (!status.empty() && c->value("status", std::string{}) != status) continue;
        if (total >= offset && items.size() < limit) items.push_back(incident_item(*c));
        ++total;
    }
    return {200, json{{"total", total}, {"limit", limit}, {"offset", offset}, {"items", items}}};
}

Response Service::incident(const std::string& id) {
    const auto c = journal_.read_cycle(id);
    if (!c) return error_response(404, "not_found", "unknown incident '" + id + "'");
    return {200, *c};
}

Response Service::rescore(const std::string& id, const std::string& body) {
    const auto stored = journal_.read_cycle(id);
    if (!stored) return error_response(404, "not_found", "unknown incident '" + id + "'");
    const auto cycle = pipeline::cycle_from_json(*stored);
    if (cycle.ranked.empty()) return error_response(409, "conflict", "incident '" + id + "' has no ranked actions");

    json req = json::object();
    if (!body.empty()) {
        try {
            req = json::parse(body);
        } catch (const json::exception& e) {
            return error_response(400, "bad_request", std::string("body is not JSON: ") + e.what());
        }
    }
    if (!req.is_object()) return error_response(422, "invalid_weights", "body must be a JSON object");
    rsem::RiskWeights w = cycle.weights;
    for (auto [key, slot] : {std::pair{"alpha", &w.alpha}, std::pair{"beta", &w.beta}, std::pair{"gamma", &w.gamma}}) {
        if (!req.contains(key)) continue;
        if (!req.at(key).is_number()) return error_response(422, "invalid_weights", std::string(key) + " must be a number");
        *slot = req.at(key).get<double>();
    }
    if (!std::isfinite(w.alpha) || !std::isfinite(w.beta) || !std::isfinite(w.gamma) || w.alpha <= 0 || w.beta < 0 ||
        w.gamma < 0)
        return error_response(422, "invalid_weights", "need alpha > 0, beta >= 0, gamma >= 0");
    try {
        w.validate();
    } catch (const ConfigError& e) {
        return error_response(422, "invalid_weights", e.what());
    }

    std::vector<rsem::ActionCandidate> candidates;
    for (const auto& r : cycle.ranked) candidates.push_back(r.candidate);
    const auto what_if = rsem::rank_actions(candidates, w);
    return {200, json{{"cycle_id", id},
                      {"original", {{"weights", weights_json(cycle.weights)}, {"ranking", ranking_json(cycle.ranked)}}},
                      {"what_if", {{"weights", weights_json(w)}, {"ranking", ranking_json(what_if)}}}}};
}

Response Service::approvals() {
    json pending = json::array();
    json decided = json::array();
    for (const auto& id : journal_.cycle_ids()) {
        const auto c = journal_.read_cycle(id);
        if (!c || !c->contains("approval") || c->at("approval").is_null()) continue;
        const auto& a = c->at("approval");
        json item{{"cycle_id", id},
                  {"status", c->value("status", std::string{})},
                  {"playbook_summary", a.value("summary", std::string{})},
                  {"projected_impact", a.value("projected_impact", 0.0)},
                  {"triggered_rules", a.value("triggered_rules", json::array())},
                  {"requested_at", a.value("requested_at", std::string{})},
                  {"decision", a.value("decision", json(nullptr))},
                  {"decided_by", a.value("decided_by", json(nullptr))},
                  {"decided_at", a.value("decided_at", json(nullptr))}};
        (item.at("decision").is_null() ? pending : decided).push_back(std::move(item));
    }
    json items = pending;
    for (auto& d : decided) items.push_back(std::move(d));
    return {200, json{{"pending", pending.size()}, {"items", items}}};
}

Response Service::decide(const std::string& id, const std::string& body) {
    json req;
    try {
        req = json::parse(body);
    } catch (const json::exception& e) {
        return error_response(400, "bad_request", std::string("body is not JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("decision") || !req.at("decision").is_string())
        return error_response(422, "invalid_decision", "body needs a string field 'decision'");
    const auto analyst = req.value("analyst", std::string{});
    if (!journal_.read_cycle(id)) return error_response(404, "not_found", "unknown cycle '" + id + "'");
    if (!engine_) return error_response(409, "conflict", "journal has no run configuration");
    try {
        const auto c = engine_->resume_cycle(id, req.at("decision").get<std::string>(), analyst);
        json out{{"cycle_id", id},
                 {"decision", c.approval && c.approval->decision ? *c.approval->decision : std::string{}},
                 {"decided_by", c.approval && c.approval->decided_by ? *c.approval->decided_by : std::string{}},
                 {"status", c.status()},
                 {"fallback", c.fallback}};
        if (c.execution) out["execution"] = {{"playbook_id", c.execution->playbook_id},
                                             {"mode", playbook::to_string(c.execution->mode)},
                                             {"steps", c.execution->steps.size()},
                                             {"succeeded", c.execution->succeeded()}};
        if (c.fallback) out["note"] = "playbook rejected; MONITOR_ONLY fallback executed";
        return {200, out};
    } catch (const playbook::ConflictError& e) {
        return error_response(409, "already_decided", e.what());
    } catch (const LookupError& e) {
        return error_response(404, "not_found", e.what());
    } catch (const pipeline::StageError& e) {
        return error_response(500, "stage_failed", e.what());
    } catch (const ValidationError& e) {
        return error_response(422, "invalid_decision", e.what());
    }
}

Response Service::metrics() {
    std::vector<std::vector<pipeline::StageTiming>> timings;
    std::vector<std::int64_t> totals;
    std::map<std::string, int> status_counts;
    for (const auto& id : journal_.cycle_ids()) {
        const auto c = journal_.read_cycle(id);
        if (!c) continue;
        ++status_counts[c->value("status", std::string{})];
        if (!c->value("error", std::string{}).empty()) continue;
        std::vector<pipeline::StageTiming> t;
        for (const auto& s : c->value("timings", json::array()))
            t.push_back({s.value("stage", std::string{}), s.value("micros", std::int64_t{0}), s.value("ran", false)});
        timings.push_back(std::move(t));
        totals.push_back(c->value("total_micros", std::int64_t{0}));
    }
    return {200, json{{"cycles", timings.size()},
                      {"status_counts", status_counts},
                      {"timings", pipeline::timing_summary(timings, totals)}}};
}

// ---------------------------------------------------------------------------

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    const auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        Request r;
        r.method = req.method;
        r.path = req.path;
        for (const auto& [k, v] : req.params) r.query.emplace(k, v);
        r.body = req.body;
        r.authorization = req.get_header_value("Authorization");
        const auto out = service_.handle(r);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json");
    };
    server_->Get(".*", handler);
    server_->Post(".*", handler);
    server_->Put(".*", handler);
    server_->Delete(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
    } else if (!server_->bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
    if (server_) server_->stop();
}

}  // namespace agentsoc::api
