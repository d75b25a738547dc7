#include "agentsoc/monitor.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace agentsoc::monitor {

using knowledge::EdgeKind;
using playbook::ActionPrimitive;

namespace {

bool remote(const ingest::AuthEvent& e) {
    return !ingest::is_unknown(e.dest_host) && e.dest_host != e.source_host;
}

}  // namespace

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Achieved: return "Achieved";
        case Verdict::PartiallyAchieved: return "PartiallyAchieved";
        case Verdict::Failed: return "Failed";
    }
    return "?";
}

Verdict verdict_from_string(std::string_view s) {
    if (s == "Achieved") return Verdict::Achieved;
    if (s == "PartiallyAchieved") return Verdict::PartiallyAchieved;
    if (s == "Failed") return Verdict::Failed;
    throw ValidationError("unknown assessment verdict '" + std::string(s) + "'");
}

void MonitorConfig::validate() const {
    if (correlation_window <= 0) throw ConfigError("monitor.correlation_window must be > 0");
}

OutcomeAssessment assess_outcome(const playbook::ExecutionReport& report,
                                 const std::vector<ingest::AuthEvent>& post_events,
                                 const std::vector<ingest::RawAlert>& post_alerts, const knowledge::KnowledgeState& state,
                                 const MonitorConfig& config) {
    config.validate();
    OutcomeAssessment a;
    a.playbook_id = report.playbook_id;
    a.incident_id = report.incident_id;
    a.knowledge_version = state.version();

    auto graph = state.graph;
    if (report.mode == playbook::ExecutionMode::DryRun)
        for (const auto& s : report.steps)
            if (s.status == playbook::StepStatus::Simulated) graph = knowledge::applied(graph, s.delta);

    const Timestamp from = report.effective_time;
    const Timestamp to = report.effective_time + config.correlation_window;
    const auto in_window = [&](Timestamp t) { return t > from && t <= to; };

    std::vector<std::string> targets;
    for (const auto& s : report.steps) {
        if (!playbook::primitive_info(s.primitive).mutating) continue;
        targets.push_back(s.target);
        EffectCheck c;
        c.step_index = s.step_index;
        c.primitive = playbook::to_string(s.primitive);
        c.target = s.target;
        if (s.status == playbook::StepStatus::Failed || s.status == playbook::StepStatus::Skipped) {
            c.predicate = "step executed";
            c.expected = "applied";
            c.observed = playbook::to_string(s.status);
            c.pass = false;
            a.checks.push_back(std::move(c));
            continue;
        }
        const auto& t = s.target;
        std::size_t remaining = 0;
        std::function<bool(const ingest::AuthEvent&)> violates = [](const ingest::AuthEvent&) { return false; };
        switch (s.primitive) {
            case ActionPrimitive::ISOLATE_HOST:
                c.predicate = "no Reachable edges touch " + t + " and no successful remote logons to/from it";
                remaining = graph.find(t) ? graph.edges_touching(t, EdgeKind::Reachable).size() : 0;
                violates = [&](const ingest::AuthEvent& e) { return remote(e) && (e.source_host == t || e.dest_host == t); };
                break;
            case ActionPrimitive::DISABLE_USER:
                c.predicate = "no sessions or CanAuthTo grants for " + t + " and no successful logons by it";
                remaining = graph.out_edges(t, EdgeKind::HasSessionOn).size() + graph.out_edges(t, EdgeKind::CanAuthTo).size();
                violates = [&](const ingest::AuthEvent& e) { return ingest::user_part(e.source_user) == t; };
                break;
            case ActionPrimitive::REVOKE_SESSION: {
                std::string host;
                for (const auto& op : s.delta.ops)
                    if (op.edge) host = op.edge->to;
                c.predicate = "session of " + t + " on " + host + " revoked";
                remaining = graph.find_edge({t, host, EdgeKind::HasSessionOn, {}, {}}) ? 1 : 0;
                violates = [&, host](const ingest::AuthEvent& e) {
                    return ingest::user_part(e.source_user) == t && e.dest_host == host;
                };
                break;
            }
            case ActionPrimitive::RESTRICT_PRIVILEGES:
                c.predicate = "no AdminOf edges from " + t;
                remaining = graph.out_edges(t, EdgeKind::AdminOf).size();
                break;
            case ActionPrimitive::ENABLE_MFA: {
                c.predicate = "mfa enforced for " + t;
                const auto* n = graph.find(t);
                remaining = n && n->attribute("mfa") == "enforced" ? 0 : 1;
                break;
            }
            case ActionPrimitive::QUARANTINE_ACCESS: {
                c.predicate = "no CanAuthTo/AdminOf grants into " + t + " and no successful logons to it";
                for (auto kind : {EdgeKind::CanAuthTo, EdgeKind::AdminOf})
                    for (const auto& e : graph.edges_touching(t, kind))
                        if (e.to == t) ++remaining;
                violates = [&](const ingest::AuthEvent& e) { return remote(e) && e.dest_host == t; };
                break;
            }
            case ActionPrimitive::MONITOR_ONLY: break;
        }
        for (const auto& e : post_events)
            if (e.outcome == ingest::Outcome::Success && in_window(e.time) && violates(e)) c.violating_lines.push_back(e.line);
        c.expected = "0 remaining grants, 0 successful post-events";
        c.observed = std::to_string(remaining) + " remaining grants, " + std::to_string(c.violating_lines.size()) +
                     " successful post-events";
        c.pass = remaining == 0 && c.violating_lines.empty();
        a.checks.push_back(std::move(c));
    }

    for (const auto& alert : post_alerts) {
        if (!in_window(alert.detected_at)) continue;
        const bool touches = std::any_of(alert.triggering_events.begin(), alert.triggering_events.end(),
                                         [&](const ingest::AuthEvent& e) {
                                             return std::find_if(targets.begin(), targets.end(), [&](const std::string& t) {
                                                        return e.source_host == t || e.dest_host == t ||
                                                               ingest::user_part(e.source_user) == t;
                                                    }) != targets.end();
                                         });
        if (touches) a.correlated_alerts.push_back(alert.alert_id);
    }

    const auto passed = std::count_if(a.checks.begin(), a.checks.end(), [](const EffectCheck& c) { return c.pass; });
    if (passed == static_cast<long>(a.checks.size()))
        a.verdict = Verdict::Achieved;
    else if (passed == 0)
        a.verdict = Verdict::Failed;
    else
        a.verdict = Verdict::PartiallyAchieved;
    a.rollback_recommended =
        a.verdict == Verdict::Failed || (a.verdict == Verdict::PartiallyAchieved && config.rollback_on_partial);
    return a;
}

knowledge::KnowledgeDelta emit_feedback(const OutcomeAssessment& assessment, const knowledge::EnterpriseGraph& graph) {
    knowledge::KnowledgeDelta d;
    d.delta_id = assessment.playbook_id + "/feedback";
    d.provenance = knowledge::Provenance::MonitorObservation;
    std::map<std::pair<std::string, std::string>, std::string> writes;
    for (const auto& c : assessment.checks) {
        if (!graph.find(c.target)) continue;
        if (c.pass)
            writes.emplace(std::pair{c.target, std::string("containment_verified")}, "true");
        else
            writes[{c.target, "deviation"}] = c.primitive + "-violated";
    }
    for (const auto& [key, value] : writes) {
        const auto& node = graph.node(key.first);
        const auto it = node.attributes.find(key.second);
        std::optional<std::string> old;
        if (it != node.attributes.end()) old = it->second;
        if (old == value) continue;
        d.ops.push_back(knowledge::DeltaOp::set_attribute(key.first, key.second, old, value));
    }
    return d;
}

json to_json(const OutcomeAssessment& a) {
    json j;
    j["type"] = "assessment";
    j["playbook_id"] = a.playbook_id;
    j["incident_id"] = a.incident_id;
    j["checks"] = json::array();
    for (const auto& c : a.checks)
        j["checks"].push_back({{"step_index", c.step_index},
                               {"primitive", c.primitive},
                               {"target", c.target},
                               {"predicate", c.predicate},
                               {"expected", c.expected},
                               {"observed", c.observed},
                               {"pass", c.pass},
                               {"violating_lines", c.violating_lines}});
    j["correlated_alerts"] = a.correlated_alerts;
    j["verdict"] = to_string(a.verdict);
    j["rollback_recommended"] = a.rollback_recommended;
    j["knowledge_version"] = a.knowledge_version;
    return j;
}

OutcomeAssessment assessment_from_json(const json& j) {
    OutcomeAssessment a;
    a.playbook_id = j.at("playbook_id").get<std::string>();
    a.incident_id = j.value("incident_id", std::string{});
    for (const auto& c : j.value("checks", json::array()))
        a.checks.push_back({c.at("step_index").get<std::size_t>(), c.value("primitive", std::string{}),
                            c.value("target", std::string{}), c.value("predicate", std::string{}),
                            c.value("expected", std::string{}), c.value("observed", std::string{}), c.at("pass").get<bool>(),
                            c.value("violating_lines", std::vector<std::size_t>{})});
    a.correlated_alerts = j.value("correlated_alerts", std::vector<std::string>{});
    a.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    a.rollback_recommended = j.value("rollback_recommended", false);
    a.knowledge_version = j.value("knowledge_version", std::uint64_t{0});
    return a;
}

}  // namespace agentsoc::monitor
