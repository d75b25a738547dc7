#include "agentsoc/rsem.hpp"

#include <algorithm>
#include <cmath>

#include "agentsoc/bundled_data.hpp"

namespace agentsoc::rsem {

namespace {

void check_unit(double v, const char* what) {
    if (!(v >= 0 && v <= 1)) throw ValidationError(std::string(what) + " must lie in [0,1], got " + std::to_string(v));
}

std::string substitute(std::string text, const std::string& key, const std::string& value) {
    for (std::size_t pos; (pos = text.find(key)) != std::string::npos;) text.replace(pos, key.size(), value);
    return text;
}

std::string bind_target(const std::string& t, const perception::IncidentObject& inc) {
    if (t == "$source") return inc.source_host.id;
    if (t == "$target") return inc.target_host ? inc.target_host->id : std::string{};
    if (t == "$principal") return inc.user.id;
    if (!t.empty() && t[0] == '$') throw ValidationError("unknown candidate binding '" + t + "'");
    return t;
}

}  // namespace

void RiskWeights::validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma))
        throw ConfigError("risk weights must be finite");
    if (!(alpha > 0)) throw ConfigError("rsem.alpha must be > 0");
    if (beta < 0) throw ConfigError("rsem.beta must be >= 0");
    if (gamma < 0) throw ConfigError("rsem.gamma must be >= 0");
}

double composite_score(double containment, double impact, double cost, const RiskWeights& w) {
    w.validate();
    check_unit(containment, "containment");
    check_unit(impact, "business impact");
    check_unit(cost, "execution cost");
    return w.alpha * containment - w.beta * impact - w.gamma * cost;
}

Calibration Calibration::from_json(const json& j) {
    Calibration c;
    const auto factors = j.value("containment_calibration", json::object());
    for (const auto& [k, v] : factors.items())
        c.containment_factor[playbook::primitive_from_string(k)] = v.get<double>();
    c.monitor_only_containment = j.value("monitor_only_containment", 0.15);
    const auto costs = j.value("execution_cost", json::object());
    for (const auto& [k, v] : costs.items())
        c.execution_cost[playbook::primitive_from_string(k)] = v.get<double>();
    const auto w = j.value("impact_component_weights", json::object());
    c.w_downtime = w.value("downtime_cost", 1.0);
    c.w_disruption = w.value("user_disruption", 1.0);
    c.w_compliance = w.value("compliance_sensitivity", 1.0);
    c.default_impact = j.value("default_impact", 0.5);
    for (const auto& t : j.value("candidate_templates", json::array()))
        c.templates.push_back({playbook::primitive_from_string(t.at("primitive").get<std::string>()),
                               t.at("target").get<std::string>(), t.value("label", std::string{})});
    c.validate();
    return c;
}

Calibration Calibration::bundled() { return from_json(json::parse(bundled::rsem_calibration_json())); }

void Calibration::validate() const {
    for (const auto& [p, f] : containment_factor) check_unit(f, "containment calibration factor");
    for (const auto& [p, f] : execution_cost) check_unit(f, "execution cost");
    check_unit(monitor_only_containment, "monitor_only_containment");
    check_unit(default_impact, "default_impact");
    for (double w : {w_downtime, w_disruption, w_compliance})
        if (!(w >= 0) || !std::isfinite(w)) throw ValidationError("impact component weights must be finite and >= 0");
    if (w_downtime + w_disruption + w_compliance <= 0) throw ValidationError("impact component weights sum to zero");
}

ContainmentEstimate estimate_containment(ActionPrimitive primitive, const std::string& target,
                                         const playbook::Parameters& params, const ScoringContext& ctx,
                                         const Calibration& calibration) {
    ContainmentEstimate est;
    if (primitive == ActionPrimitive::MONITOR_ONLY) {
        est.calibrated = calibration.monitor_only_containment;
        return est;
    }
    const auto delta = playbook::mutation_delta(primitive, target, params, ctx.state.graph);
    knowledge::KnowledgeState mutated = ctx.state;
    mutated.graph = knowledge::applied(ctx.state.graph, delta);

    for (const auto& v : ctx.verdicts) {
        if (v.status == sse::FeasibilityStatus::Infeasible || !v.witness) continue;
        const auto h = std::find_if(ctx.hypotheses.begin(), ctx.hypotheses.end(),
                                    [&](const nce::Hypothesis& x) { return x.hypothesis_id == v.hypothesis_id; });
        ++est.total;
        bool cut = std::any_of(v.witness->edges.begin(), v.witness->edges.end(),
                               [&](const knowledge::Edge& e) { return mutated.graph.find_edge(e) == nullptr; });
        if (!cut && h != ctx.hypotheses.end()) {
            const auto again = sse::validate_hypothesis(*h, ctx.incident, mutated);
            cut = again.status == sse::FeasibilityStatus::Infeasible;
        }
        if (cut) ++est.cut;
    }
    est.raw = est.total == 0 ? 0.0 : static_cast<double>(est.cut) / static_cast<double>(est.total);
    const auto f = calibration.containment_factor.find(primitive);
    est.calibrated = est.raw * (f == calibration.containment_factor.end() ? 1.0 : f->second);
    return est;
}

ImpactEstimate estimate_impact(ActionPrimitive primitive, const std::string& target,
                               const std::map<std::string, knowledge::ImpactParams>& params,
                               const Calibration& calibration) {
    ImpactEstimate out;
    const double factor = playbook::primitive_info(primitive).disruption;
    if (factor == 0) return out;
    const auto it = params.find(target);
    double base;
    if (it == params.end()) {
        base = calibration.default_impact;
        out.warnings.push_back("no impact parameters for '" + target + "', using default " +
                               std::to_string(calibration.default_impact));
    } else {
        const auto& p = it->second;
        const double wsum = calibration.w_downtime + calibration.w_disruption + calibration.w_compliance;
        base = (calibration.w_downtime * p.downtime_cost + calibration.w_disruption * p.user_disruption +
                calibration.w_compliance * p.compliance_sensitivity) /
               wsum;
    }
    out.value = std::clamp(base * factor, 0.0, 1.0);
    return out;
}

std::vector<ActionCandidate> generate_candidates(const ScoringContext& ctx, const Calibration& calibration) {
    std::vector<ActionCandidate> out;
    const auto& g = ctx.state.graph;
    for (const auto& t : calibration.templates) {
        const auto target = bind_target(t.target, ctx.incident);
        if (target.empty()) continue;
        const auto* node = g.find(target);
        const auto& kinds = playbook::primitive_info(t.primitive).target_kinds;
        if (t.primitive != ActionPrimitive::MONITOR_ONLY) {
            if (!node) continue;
            if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), node->kind) == kinds.end()) continue;
        }
        ActionCandidate c;
        c.action_id = "A" + std::to_string(out.size() + 1);
        c.primitive = t.primitive;
        c.target = target;
        const auto containment = estimate_containment(c.primitive, target, c.parameters, ctx, calibration);
        c.containment = containment.calibrated;
        c.containment_raw = containment.raw;
        auto impact = estimate_impact(c.primitive, target, ctx.state.impact_params, calibration);
        c.business_impact = impact.value;
        c.warnings = std::move(impact.warnings);
        const auto cost = calibration.execution_cost.find(c.primitive);
        c.execution_cost = cost == calibration.execution_cost.end() ? 0.0 : cost->second;
        c.rationale = substitute(substitute(substitute(t.label.empty() ? playbook::to_string(t.primitive) + " " + target
                                                                       : t.label,
                                                       "$source", ctx.incident.source_host.id),
                                            "$principal", ctx.incident.user.id),
                                 "$target", ctx.incident.target_host ? ctx.incident.target_host->id : "");
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<RankedAction> rank_actions(const std::vector<ActionCandidate>& candidates, const RiskWeights& weights) {
    if (candidates.empty()) throw ValidationError("rank_actions needs at least one candidate");
    std::vector<RankedAction> out;
    for (const auto& c : candidates)
        out.push_back({0, c, composite_score(c.containment, c.business_impact, c.execution_cost, weights)});
    std::sort(out.begin(), out.end(), [](const RankedAction& a, const RankedAction& b) {
        // Scores equal to 1e-9 are ties, so rounding noise never decides the order.
        const auto ka = std::llround(a.composite * 1e9), kb = std::llround(b.composite * 1e9);
        if (ka != kb) return ka > kb;
        if (a.candidate.business_impact != b.candidate.business_impact)
            return a.candidate.business_impact < b.candidate.business_impact;
        if (a.candidate.execution_cost != b.candidate.execution_cost)
            return a.candidate.execution_cost < b.candidate.execution_cost;
        return a.candidate.action_id < b.candidate.action_id;
    });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
    return out;
}

json to_json(const ActionCandidate& c) {
    json j;
    j["action_id"] = c.action_id;
    j["primitive"] = playbook::to_string(c.primitive);
    j["target"] = c.target;
    if (!c.parameters.empty()) j["parameters"] = c.parameters;
    j["containment"] = c.containment;
    j["containment_raw"] = c.containment_raw;
    j["business_impact"] = c.business_impact;
    j["execution_cost"] = c.execution_cost;
    j["rationale"] = c.rationale;
    if (!c.warnings.empty()) j["warnings"] = c.warnings;
    return j;
}

ActionCandidate candidate_from_json(const json& j) {
    ActionCandidate c;
    c.action_id = j.at("action_id").get<std::string>();
    c.primitive = playbook::primitive_from_string(j.at("primitive").get<std::string>());
    c.target = j.at("target").get<std::string>();
    if (j.contains("parameters")) c.parameters = j.at("parameters").get<playbook::Parameters>();
    c.containment = j.at("containment").get<double>();
    c.containment_raw = j.value("containment_raw", 0.0);
    c.business_impact = j.at("business_impact").get<double>();
    c.execution_cost = j.value("execution_cost", 0.0);
    c.rationale = j.value("rationale", std::string{});
    c.warnings = j.value("warnings", std::vector<std::string>{});
    return c;
}

json to_json(const RankedAction& r) {
    json j;
    j["rank"] = r.rank;
    j["composite"] = r.composite;
    j["candidate"] = to_json(r.candidate);
    return j;
}

RankedAction ranked_from_json(const json& j) {
    return {j.at("rank").get<int>(), candidate_from_json(j.at("candidate")), j.at("composite").get<double>()};
}

}  // namespace agentsoc::rsem
