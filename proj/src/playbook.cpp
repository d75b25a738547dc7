#include "agentsoc/playbook.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

namespace agentsoc::playbook {

namespace {

bool forbidden(const knowledge::KnowledgeState& state, ActionPrimitive p, const std::string& target) {
    const auto* node = state.graph.find(target);
    return std::any_of(state.policies.begin(), state.policies.end(), [&](const knowledge::PolicyConstraint& c) {
        return c.effect == knowledge::PolicyEffect::Forbid && c.matches(to_string(p), target, node);
    });
}

template <typename Enum, std::size_t N>
Enum parse_named(std::string_view s, const std::array<Enum, N>& all, const char* what) {
    for (auto e : all)
        if (to_string(e) == s) return e;
    throw ValidationError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr std::array kStatuses{PlaybookStatus::Draft,    PlaybookStatus::Approved, PlaybookStatus::AwaitingAnalyst,
                               PlaybookStatus::Rejected, PlaybookStatus::Executed, PlaybookStatus::RolledBack};

json delta_list(const std::vector<knowledge::KnowledgeDelta>& ds) {
    json arr = json::array();
    for (const auto& d : ds) arr.push_back(knowledge::to_json(d));
    return arr;
}

}  // namespace

std::string to_string(PlaybookStatus s) {
    switch (s) {
        case PlaybookStatus::Draft: return "Draft";
        case PlaybookStatus::Approved: return "Approved";
        case PlaybookStatus::AwaitingAnalyst: return "AwaitingAnalyst";
        case PlaybookStatus::Rejected: return "Rejected";
        case PlaybookStatus::Executed: return "Executed";
        case PlaybookStatus::RolledBack: return "RolledBack";
    }
    return "?";
}

PlaybookStatus playbook_status_from_string(std::string_view s) { return parse_named(s, kStatuses, "playbook status"); }

bool transition_allowed(PlaybookStatus from, PlaybookStatus to) {
    using S = PlaybookStatus;
    switch (from) {
        case S::Draft: return to == S::Approved || to == S::AwaitingAnalyst || to == S::Rejected;
        case S::AwaitingAnalyst: return to == S::Approved || to == S::Rejected;
        case S::Approved: return to == S::Executed;
        case S::Executed: return to == S::RolledBack;
        case S::Rejected:
        case S::RolledBack: return false;
    }
    return false;
}

void Playbook::transition(PlaybookStatus to) {
    if (!transition_allowed(status, to))
        throw IllegalTransition("playbook " + playbook_id + ": illegal transition " + to_string(status) + " -> " +
                                to_string(to));
    status = to;
}

Playbook synthesize_playbook(const perception::IncidentObject& incident,
                             const std::vector<sse::FeasibilityVerdict>& verdicts,
                             const std::vector<rsem::RankedAction>& ranked, const knowledge::KnowledgeState& state,
                             const rsem::Calibration& calibration, const SynthesisConfig& config) {
    if (ranked.empty()) throw ValidationError("synthesize_playbook needs at least one ranked action");
    Playbook pb;
    pb.playbook_id = "PB-" + incident.incident_id;
    pb.incident_id = incident.incident_id;
    pb.created_at = incident.created_at;

    const auto primary = std::find_if(ranked.begin(), ranked.end(), [&](const rsem::RankedAction& r) {
        return !forbidden(state, r.candidate.primitive, r.candidate.target);
    });
    if (primary == ranked.end()) {
        pb.steps.push_back({ActionPrimitive::MONITOR_ONLY, incident.user.id, {}, "fallback:all-candidates-forbidden", 0});
    } else {
        const auto& c = primary->candidate;
        pb.steps.push_back({c.primitive, c.target, c.parameters, c.action_id, c.business_impact});
    }

    if (config.complement_dependencies && primitive_info(pb.steps.front().primitive).mutating) {
        const auto& actor = incident.user.id;
        const auto* user = state.graph.find(actor);
        for (const auto& v : verdicts) {
            if (v.status != sse::FeasibilityStatus::ConditionallyFeasible) continue;
            for (const auto& d : v.dependencies) {
                if (d.predicate.category() != "credentials") continue;
                if (!user || user->kind != knowledge::NodeKind::User || user->attribute("mfa") == "enforced") continue;
                const bool present = std::any_of(pb.steps.begin(), pb.steps.end(), [&](const PlaybookStep& s) {
                    return s.primitive == ActionPrimitive::ENABLE_MFA && s.target == actor;
                });
                if (present || forbidden(state, ActionPrimitive::ENABLE_MFA, actor)) continue;
                const auto impact =
                    rsem::estimate_impact(ActionPrimitive::ENABLE_MFA, actor, state.impact_params, calibration);
                pb.steps.push_back({ActionPrimitive::ENABLE_MFA, actor, {}, "dependency:" + d.note, impact.value});
            }
        }
    }
    for (const auto& s : pb.steps) pb.projected_impact = std::max(pb.projected_impact, s.impact);
    return pb;
}

std::string to_string(GuardrailOutcome o) {
    switch (o) {
        case GuardrailOutcome::AutoExecute: return "AutoExecute";
        case GuardrailOutcome::RequiresAnalyst: return "RequiresAnalyst";
        case GuardrailOutcome::Rejected: return "Rejected";
    }
    return "?";
}

GuardrailOutcome guardrail_outcome_from_string(std::string_view s) {
    return parse_named(s,
                       std::array{GuardrailOutcome::AutoExecute, GuardrailOutcome::RequiresAnalyst,
                                  GuardrailOutcome::Rejected},
                       "guardrail outcome");
}

GuardrailDecision evaluate_guardrails(const Playbook& playbook, const knowledge::KnowledgeState& state,
                                      double impact_threshold) {
    if (!(impact_threshold >= 0 && impact_threshold <= 1))
        throw ConfigError("playbook.approval_threshold must lie in [0,1]");
    GuardrailDecision d;
    std::set<std::string> seen;
    bool forbid = false, approval = false;
    const auto scan = [&](knowledge::PolicyEffect effect) {
        bool hit = false;
        for (const auto& policy : state.policies) {
            if (policy.effect != effect) continue;
            for (const auto& s : playbook.steps) {
                if (!policy.matches(to_string(s.primitive), s.target, state.graph.find(s.target))) continue;
                hit = true;
                if (seen.insert(policy.id).second) d.triggered_rules.push_back(policy.id);
            }
        }
        return hit;
    };
    forbid = scan(knowledge::PolicyEffect::Forbid);
    approval = scan(knowledge::PolicyEffect::RequireApproval);
    const bool over = playbook.projected_impact >= impact_threshold;
    if (over) d.triggered_rules.push_back(kImpactThresholdRule);

    if (forbid) {
        d.outcome = GuardrailOutcome::Rejected;
        d.explanation = "a Forbid policy matches a playbook step";
    } else if (approval || over) {
        d.outcome = GuardrailOutcome::RequiresAnalyst;
        d.explanation = over ? "projected impact " + std::to_string(playbook.projected_impact) +
                                   " reaches the approval threshold " + std::to_string(impact_threshold)
                             : "a RequireApproval policy matches a playbook step";
    } else {
        d.outcome = GuardrailOutcome::AutoExecute;
        d.explanation = "projected impact " + std::to_string(playbook.projected_impact) + " below threshold " +
                        std::to_string(impact_threshold) + "; no policy matched";
    }
    return d;
}

void apply_decision(Playbook& playbook, const GuardrailDecision& decision) {
    switch (decision.outcome) {
        case GuardrailOutcome::AutoExecute: playbook.transition(PlaybookStatus::Approved); break;
        case GuardrailOutcome::RequiresAnalyst: playbook.transition(PlaybookStatus::AwaitingAnalyst); break;
        case GuardrailOutcome::Rejected: playbook.transition(PlaybookStatus::Rejected); break;
    }
}

// ---------------------------------------------------------------------------

std::string to_string(ExecutionMode m) { return m == ExecutionMode::Live ? "Live" : "DryRun"; }

ExecutionMode execution_mode_from_string(std::string_view s) {
    return parse_named(s, std::array{ExecutionMode::DryRun, ExecutionMode::Live}, "execution mode");
}

std::string to_string(StepStatus s) {
    switch (s) {
        case StepStatus::Simulated: return "Simulated";
        case StepStatus::Applied: return "Applied";
        case StepStatus::Failed: return "Failed";
        case StepStatus::Skipped: return "Skipped";
    }
    return "?";
}

StepStatus step_status_from_string(std::string_view s) {
    return parse_named(s, std::array{StepStatus::Simulated, StepStatus::Applied, StepStatus::Failed, StepStatus::Skipped},
                       "step status");
}

bool ExecutionReport::succeeded() const {
    return std::all_of(steps.begin(), steps.end(), [](const StepResult& s) {
        return s.status == StepStatus::Applied || s.status == StepStatus::Simulated;
    });
}

knowledge::EnterpriseGraph Executor::simulate(const PlaybookStep&, const knowledge::KnowledgeDelta& delta,
                                              const knowledge::EnterpriseGraph& scratch) {
    return knowledge::applied(scratch, delta);
}

std::string Executor::apply(const PlaybookStep&, knowledge::KnowledgeDelta delta, knowledge::KnowledgeStore& store) {
    return store.apply_delta(std::move(delta)).delta_id;
}

void AuditLog::append(const std::vector<AuditEntry>& entries) {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to audit log '" + path_.string() + "'");
    for (const auto& e : entries) out << to_json(e).dump() << '\n';
}

void AuditLog::append_record(const json& record) {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to audit log '" + path_.string() + "'");
    out << record.dump() << '\n';
}

ExecutionReport execute_playbook(Playbook& playbook, ExecutionMode mode, knowledge::KnowledgeStore& store,
                                 Executor& executor, Timestamp effective_time, AuditLog* audit) {
    const bool live = mode == ExecutionMode::Live;
    if (playbook.steps.empty()) throw ExecutionError("playbook " + playbook.playbook_id + " has no steps");
    if (playbook.status != PlaybookStatus::Approved && !(mode == ExecutionMode::DryRun && playbook.status == PlaybookStatus::Draft))
        throw ExecutionError("playbook " + playbook.playbook_id + " is " + to_string(playbook.status) +
                             "; execution in " + to_string(mode) + " mode requires Approved");

    ExecutionReport report;
    report.playbook_id = playbook.playbook_id;
    report.incident_id = playbook.incident_id;
    report.mode = mode;
    report.effective_time = effective_time;
    report.version_before = store.version();
    auto scratch = store.snapshot()->graph;

    bool halted = false;
    for (std::size_t i = 0; i < playbook.steps.size(); ++i) {
        const auto& step = playbook.steps[i];
        StepResult r;
        r.step_index = i;
        r.primitive = step.primitive;
        r.target = step.target;
        if (halted) {
            r.status = StepStatus::Skipped;
            report.steps.push_back(std::move(r));
            continue;
        }
        r.started_at = now_utc();
        try {
            const auto& graph = live ? store.snapshot()->graph : scratch;
            auto delta = mutation_delta(step.primitive, step.target, step.parameters, graph);
            delta.delta_id = playbook.playbook_id + (live ? "/step-" : "/sim-") + std::to_string(i);
            delta.timestamp = effective_time;
            if (live) {
                if (!delta.empty()) r.delta_id = executor.apply(step, delta, store);
                r.status = StepStatus::Applied;
            } else {
                scratch = executor.simulate(step, delta, scratch);
                r.delta_id = delta.delta_id;
                r.status = StepStatus::Simulated;
            }
            if (!delta.empty()) {
                auto inverse = delta.inverse();
                inverse.delta_id = delta.delta_id + "/inverse";
                report.rollback_plan.insert(report.rollback_plan.begin(), std::move(inverse));
            }
            r.delta = std::move(delta);
        } catch (const Error& e) {
            r.status = StepStatus::Failed;
            r.error = e.what();
            halted = true;
        }
        r.ended_at = now_utc();
        report.audit.push_back({playbook.playbook_id, i, to_string(step.primitive), step.target, to_string(mode),
                                to_string(r.status), r.started_at, r.ended_at, r.delta_id});
        report.steps.push_back(std::move(r));
    }
    report.version_after = store.version();
    if (audit) audit->append(report.audit);
    if (playbook.status == PlaybookStatus::Approved) playbook.transition(PlaybookStatus::Executed);
    return report;
}

RollbackResult rollback(ExecutionReport& report, Playbook& playbook, knowledge::KnowledgeStore& store) {
    RollbackResult result;
    if (report.mode == ExecutionMode::DryRun)
        throw ValidationError("dry-run report " + report.playbook_id + " has nothing to roll back");
    result.version = store.version();
    if (report.rolled_back) {
        result.warnings.push_back("playbook " + report.playbook_id + " was already rolled back");
        return result;
    }
    if (report.rollback_plan.empty()) {
        result.warnings.push_back("playbook " + report.playbook_id + " applied no mutations");
        return result;
    }
    knowledge::KnowledgeDelta combined;
    combined.delta_id = report.playbook_id + "/rollback";
    combined.provenance = knowledge::Provenance::ExecutionOutcome;
    combined.timestamp = report.effective_time;
    for (const auto& d : report.rollback_plan) combined.ops.insert(combined.ops.end(), d.ops.begin(), d.ops.end());
    try {
        result.version = store.apply_delta(std::move(combined)).version;
    } catch (const ValidationError& e) {
        throw ConflictError("rollback of " + report.playbook_id + " conflicts with later writes: " + e.what());
    }
    result.applied = true;
    report.rolled_back = true;
    if (playbook.status == PlaybookStatus::Executed) playbook.transition(PlaybookStatus::RolledBack);
    return result;
}

// ---------------------------------------------------------------------------

json to_json(const PlaybookStep& s) {
    json j;
    j["primitive"] = to_string(s.primitive);
    j["target"] = s.target;
    if (!s.parameters.empty()) j["parameters"] = s.parameters;
    j["provenance"] = s.provenance;
    j["impact"] = s.impact;
    return j;
}

json to_json(const Playbook& p) {
    json j;
    j["playbook_id"] = p.playbook_id;
    j["incident_id"] = p.incident_id;
    j["steps"] = json::array();
    for (const auto& s : p.steps) j["steps"].push_back(to_json(s));
    j["projected_impact"] = p.projected_impact;
    j["created_at"] = format_utc(p.created_at);
    j["created_at_epoch"] = p.created_at;
    j["status"] = to_string(p.status);
    return j;
}

Playbook playbook_from_json(const json& j) {
    Playbook p;
    p.playbook_id = j.at("playbook_id").get<std::string>();
    p.incident_id = j.at("incident_id").get<std::string>();
    for (const auto& s : j.at("steps")) {
        PlaybookStep step;
        step.primitive = primitive_from_string(s.at("primitive").get<std::string>());
        step.target = s.at("target").get<std::string>();
        if (s.contains("parameters")) step.parameters = s.at("parameters").get<Parameters>();
        step.provenance = s.value("provenance", std::string{});
        step.impact = s.value("impact", 0.0);
        p.steps.push_back(std::move(step));
    }
    p.projected_impact = j.value("projected_impact", 0.0);
    p.created_at = j.value("created_at_epoch", Timestamp{0});
    p.status = playbook_status_from_string(j.at("status").get<std::string>());
    return p;
}

json to_json(const GuardrailDecision& d) {
    return json{{"outcome", to_string(d.outcome)}, {"triggered_rules", d.triggered_rules}, {"explanation", d.explanation}};
}

GuardrailDecision decision_from_json(const json& j) {
    return {guardrail_outcome_from_string(j.at("outcome").get<std::string>()),
            j.value("triggered_rules", std::vector<std::string>{}), j.value("explanation", std::string{})};
}

json to_json(const AuditEntry& a) {
    json j;
    j["playbook_id"] = a.playbook_id;
    j["step_index"] = a.step_index;
    j["primitive"] = a.primitive;
    j["target"] = a.target;
    j["mode"] = a.mode;
    j["status"] = a.status;
    j["started_at"] = a.started_at;
    j["ended_at"] = a.ended_at;
    j["delta_id"] = a.delta_id;
    return j;
}

json to_json(const ExecutionReport& r) {
    json j;
    j["playbook_id"] = r.playbook_id;
    j["incident_id"] = r.incident_id;
    j["mode"] = to_string(r.mode);
    j["steps"] = json::array();
    for (const auto& s : r.steps) {
        json sj;
        sj["step_index"] = s.step_index;
        sj["primitive"] = to_string(s.primitive);
        sj["target"] = s.target;
        sj["status"] = to_string(s.status);
        sj["delta_id"] = s.delta_id;
        sj["delta"] = knowledge::to_json(s.delta);
        sj["started_at"] = s.started_at;
        sj["ended_at"] = s.ended_at;
        if (!s.error.empty()) sj["error"] = s.error;
        j["steps"].push_back(sj);
    }
    j["audit"] = json::array();
    for (const auto& a : r.audit) j["audit"].push_back(to_json(a));
    j["rollback_plan"] = delta_list(r.rollback_plan);
    j["version_before"] = r.version_before;
    j["version_after"] = r.version_after;
    j["effective_time"] = r.effective_time;
    j["rolled_back"] = r.rolled_back;
    return j;
}

ExecutionReport report_from_json(const json& j) {
    ExecutionReport r;
    r.playbook_id = j.at("playbook_id").get<std::string>();
    r.incident_id = j.value("incident_id", std::string{});
    r.mode = execution_mode_from_string(j.at("mode").get<std::string>());
    for (const auto& sj : j.at("steps")) {
        StepResult s;
        s.step_index = sj.at("step_index").get<std::size_t>();
        s.primitive = primitive_from_string(sj.at("primitive").get<std::string>());
        s.target = sj.at("target").get<std::string>();
        s.status = step_status_from_string(sj.at("status").get<std::string>());
        s.delta_id = sj.value("delta_id", std::string{});
        if (sj.contains("delta")) s.delta = knowledge::delta_from_json(sj.at("delta"));
        s.started_at = sj.value("started_at", std::string{});
        s.ended_at = sj.value("ended_at", std::string{});
        s.error = sj.value("error", std::string{});
        r.steps.push_back(std::move(s));
    }
    for (const auto& a : j.value("audit", json::array()))
        r.audit.push_back({a.at("playbook_id").get<std::string>(), a.at("step_index").get<std::size_t>(),
                           a.at("primitive").get<std::string>(), a.at("target").get<std::string>(),
                           a.at("mode").get<std::string>(), a.at("status").get<std::string>(),
                           a.value("started_at", std::string{}), a.value("ended_at", std::string{}),
                           a.value("delta_id", std::string{})});
    for (const auto& d : j.value("rollback_plan", json::array())) r.rollback_plan.push_back(knowledge::delta_from_json(d));
    r.version_before = j.value("version_before", std::uint64_t{0});
    r.version_after = j.value("version_after", std::uint64_t{0});
    r.effective_time = j.value("effective_time", Timestamp{0});
    r.rolled_back = j.value("rolled_back", false);
    return r;
}

}  // namespace agentsoc::playbook
