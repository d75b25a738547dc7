#include "agentsoc/sse.hpp"

#include <algorithm>

namespace agentsoc::sse {

using knowledge::EdgeKind;
using knowledge::EnterpriseGraph;
using knowledge::NodeKind;
using knowledge::Predicate;
using knowledge::PredicateKind;

namespace {

std::string bind_one(const std::string& value, const ActorState& a) {
    if (value.empty() || value[0] != '$') return value;
    if (value == "$source") return a.source;
    if (value == "$target") return a.target;
    if (value == "$actor") return a.actor;
    throw ValidationError("unknown binding '" + value + "'");
}

// The actor plus every group it belongs to, transitively.
std::set<std::string> principals_of(const EnterpriseGraph& g, const std::string& actor) {
    auto out = knowledge::group_closure(g, actor);
    out.insert(actor);
    return out;
}

bool has_edge_to(const EnterpriseGraph& g, const std::set<std::string>& froms, EdgeKind kind, const std::string& to) {
    for (const auto& f : froms)
        for (const auto& e : g.out_edges(f, kind))
            if (e.to == to) return true;
    return false;
}

std::string target_word(const std::string& host, const ActorState& a) {
    if (!a.target.empty() && host == a.target) return "target";
    if (host == a.source) return "source";
    return host;
}

}  // namespace

std::string to_string(Truth t) {
    switch (t) {
        case Truth::Satisfied: return "Satisfied";
        case Truth::Unsatisfied: return "Unsatisfied";
        case Truth::Unknown: return "Unknown";
    }
    return "?";
}

std::string to_string(FeasibilityStatus s) {
    switch (s) {
        case FeasibilityStatus::Feasible: return "Feasible";
        case FeasibilityStatus::ConditionallyFeasible: return "ConditionallyFeasible";
        case FeasibilityStatus::Infeasible: return "Infeasible";
    }
    return "?";
}

FeasibilityStatus feasibility_from_string(std::string_view s) {
    if (s == "Feasible") return FeasibilityStatus::Feasible;
    if (s == "ConditionallyFeasible") return FeasibilityStatus::ConditionallyFeasible;
    if (s == "Infeasible") return FeasibilityStatus::Infeasible;
    throw ValidationError("unknown feasibility status '" + std::string(s) + "'");
}

ActorState seed_actor(const perception::IncidentObject& incident, const EnterpriseGraph& g) {
    ActorState a;
    a.actor = incident.user.id;
    a.source = incident.source_host.id;
    if (incident.target_host) a.target = incident.target_host->id;
    const auto* user = g.find(a.actor);
    if (user) {
        for (const auto& e : g.out_edges(a.actor, EdgeKind::HasSessionOn)) a.sessions.insert(e.to);
        if (user->kind == NodeKind::User) a.tier = knowledge::privilege_tier(g, a.actor);
    }
    if (!a.source.empty()) a.sessions.insert(a.source);
    return a;
}

Predicate bind(const Predicate& p, const ActorState& actor) {
    Predicate b = p;
    b.host = bind_one(p.host, actor);
    b.src = bind_one(p.src, actor);
    b.dst = bind_one(p.dst, actor);
    return b;
}

std::optional<knowledge::GraphPath> find_attack_path(const EnterpriseGraph& g, const std::set<std::string>& sessions,
                                                     const std::string& target, const std::string& protocol) {
    g.node(target);
    std::vector<std::string> sources;
    for (const auto& s : sessions) {
        const auto* n = g.find(s);
        if (n && n->kind == NodeKind::Host) sources.push_back(s);
    }
    if (sources.empty()) return std::nullopt;
    knowledge::EdgeFilter filter;
    filter.kinds = {EdgeKind::Reachable};
    filter.protocol = protocol;
    return knowledge::shortest_path(g, sources, target, filter);
}

Check check_precondition(const Predicate& p, const ActorState& a, const EnterpriseGraph& g,
                         const std::set<std::string>& unmodeled) {
    for (const auto* field : {&p.host, &p.src, &p.dst})
        if (!field->empty() && (*field)[0] == '$') throw ValidationError("unbound predicate " + p.describe());
    if (unmodeled.count(p.category())) return {Truth::Unknown, std::nullopt};
    const auto sat = [](bool ok) { return Check{ok ? Truth::Satisfied : Truth::Unsatisfied, std::nullopt}; };

    switch (p.kind) {
        case PredicateKind::ActorHasSessionOn: return sat(a.sessions.count(p.host) > 0);
        case PredicateKind::EdgeExists: {
            if (!g.find(p.src) || !g.find(p.dst)) return sat(false);
            for (const auto& e : g.out_edges(p.src, p.edge)) {
                if (e.to != p.dst) continue;
                if (p.edge != EdgeKind::Reachable || p.protocol.empty() || p.protocol == "*" || e.protocol == p.protocol)
                    return sat(true);
            }
            return sat(false);
        }
        case PredicateKind::ActorTierAtMost: return sat(a.tier && *a.tier <= p.tier);
        case PredicateKind::CredsOnHost: {
            const auto* host = g.find(p.host);
            if (!host) return sat(false);
            const auto cached = host->attribute("cached_credential_tier");
            if (cached.empty()) return sat(false);
            try {
                return sat(std::stoi(cached) <= p.tier);
            } catch (const std::exception&) {
                throw ValidationError("non-integer cached_credential_tier on " + p.host);
            }
        }
        case PredicateKind::ActorCanAuthTo: {
            if (!g.find(a.actor) || !g.find(p.host)) return sat(false);
            const auto who = principals_of(g, a.actor);
            return sat(has_edge_to(g, who, EdgeKind::CanAuthTo, p.host) || has_edge_to(g, who, EdgeKind::AdminOf, p.host));
        }
        case PredicateKind::PathFromSession: {
            const auto* host = g.find(p.host);
            if (!host || host->kind != NodeKind::Host) return sat(false);
            auto path = find_attack_path(g, a.sessions, p.host, p.protocol.empty() ? "*" : p.protocol);
            if (!path) return sat(false);
            return {Truth::Satisfied, std::move(path)};
        }
        case PredicateKind::ServiceAssociated: {
            if (!g.find(a.actor)) return sat(false);
            const auto who = principals_of(g, a.actor);
            for (const auto& [id, n] : g.nodes()) {
                if (n.kind != NodeKind::Service || n.attribute("host") != p.host) continue;
                if (who.count(n.attribute("account"))) return sat(true);
            }
            return sat(false);
        }
        case PredicateKind::MfaNotEnforced: {
            const auto* user = g.find(a.actor);
            return sat(user && user->attribute("mfa") != "enforced");
        }
    }
    throw ValidationError("malformed predicate");
}

std::string dependency_note(const Predicate& p) {
    if (p.kind == PredicateKind::CredsOnHost)
        return "Tier-" + std::to_string(p.tier) + " creds exist on " + p.host;
    return p.describe() + " holds (" + p.category() + " facts are not modeled)";
}

std::string failure_reason(const Predicate& p, const std::string& technique_id, const ActorState& a) {
    std::string why;
    switch (p.kind) {
        case PredicateKind::ActorHasSessionOn: why = a.actor + " has no session on " + p.host; break;
        case PredicateKind::EdgeExists:
            why = "no " + knowledge::to_string(p.edge) + " edge " + p.src + " -> " + p.dst;
            break;
        case PredicateKind::ActorTierAtMost:
            why = a.actor + " is " + (a.tier ? "tier " + std::to_string(*a.tier) : std::string("of unknown tier")) +
                  ", needs tier <= " + std::to_string(p.tier);
            break;
        case PredicateKind::CredsOnHost:
            why = "no tier-" + std::to_string(p.tier) + " credentials on " + p.host;
            break;
        case PredicateKind::ActorCanAuthTo: why = a.actor + " cannot authenticate to " + p.host; break;
        case PredicateKind::PathFromSession:
            why = "no " + (p.protocol.empty() || p.protocol == "*" ? std::string("network") : p.protocol) +
                  " path from a session host to " + (p.host.empty() ? std::string("(no target)") : p.host);
            break;
        case PredicateKind::ServiceAssociated:
            why = "No service/task associated with " + a.actor + " on " + p.host;
            break;
        case PredicateKind::MfaNotEnforced: why = "MFA is enforced for " + a.actor; break;
    }
    return why + " [" + technique_id + ": " + p.describe() + "]";
}

std::string Witness::describe() const {
    std::string out;
    for (const auto& e : edges) {
        if (!out.empty()) out += "; ";
        out += e.describe();
    }
    return out;
}

FeasibilityVerdict validate_chain(const std::string& hypothesis_id, const std::vector<std::string>& chain,
                                  const perception::IncidentObject& incident, const knowledge::KnowledgeState& state) {
    const auto& g = state.graph;
    const auto& catalog = *state.catalog;
    for (const auto& id : chain) catalog.at(id);

    FeasibilityVerdict v;
    v.hypothesis_id = hypothesis_id;
    v.knowledge_version = state.version();
    auto actor = seed_actor(incident, g);

    Witness w;
    if (!actor.source.empty()) {
        knowledge::Edge session{actor.actor, actor.source, EdgeKind::HasSessionOn, {}, {}};
        if (const auto* e = g.find_edge(session)) {
            w.nodes = {actor.actor, actor.source};
            w.edges.push_back(*e);
        } else {
            w.nodes = {actor.source};
        }
    }
    const auto extend = [&](const knowledge::GraphPath& path) {
        const bool joined = !w.nodes.empty() && !path.nodes.empty() && w.nodes.back() == path.nodes.front();
        w.nodes.insert(w.nodes.end(), path.nodes.begin() + (joined ? 1 : 0), path.nodes.end());
        for (const auto& e : path.edges)
            if (std::none_of(w.edges.begin(), w.edges.end(), [&](const knowledge::Edge& x) { return x.same_identity(e); }))
                w.edges.push_back(e);
    };

    for (const auto& id : chain) {
        const auto& spec = catalog.at(id);
        std::vector<Dependency> unknowns;
        std::vector<knowledge::GraphPath> paths;
        for (const auto& raw : spec.preconditions) {
            const auto p = bind(raw, actor);
            auto check = check_precondition(p, actor, g, state.unmodeled);
            if (check.truth == Truth::Unsatisfied) {
                v.status = FeasibilityStatus::Infeasible;
                v.failed_predicate = p;
                v.failed_technique = id;
                v.reason = failure_reason(p, id, actor);
                v.dependencies.clear();
                return v;
            }
            if (check.truth == Truth::Unknown) {
                auto note = dependency_note(p);
                if (p.kind == PredicateKind::CredsOnHost) note = "Tier-" + std::to_string(p.tier) + " creds exist on " +
                                                                 target_word(p.host, actor) + " (" + p.host + ")";
                unknowns.push_back({p, id, std::move(note)});
            }
            if (check.path) paths.push_back(std::move(*check.path));
        }
        for (auto& d : unknowns) v.dependencies.push_back(std::move(d));
        for (const auto& path : paths) extend(path);
        for (const auto& eff : spec.effects) {
            if (eff.kind == knowledge::EffectKind::GainSessionOn) {
                const auto host = bind_one(eff.host, actor);
                if (!host.empty()) actor.sessions.insert(host);
            } else {
                actor.tier = actor.tier ? std::min(*actor.tier, eff.tier) : eff.tier;
            }
        }
    }
    v.status = v.dependencies.empty() ? FeasibilityStatus::Feasible : FeasibilityStatus::ConditionallyFeasible;
    v.witness = std::move(w);
    return v;
}

FeasibilityVerdict validate_hypothesis(const nce::Hypothesis& h, const perception::IncidentObject& incident,
                                       const knowledge::KnowledgeState& state) {
    return validate_chain(h.hypothesis_id, h.technique_chain, incident, state);
}

json to_json(const FeasibilityVerdict& v) {
    json j;
    j["hypothesis_id"] = v.hypothesis_id;
    j["status"] = to_string(v.status);
    json deps = json::array();
    for (const auto& d : v.dependencies)
        deps.push_back({{"predicate", knowledge::to_json(d.predicate)}, {"technique_id", d.technique_id}, {"note", d.note}});
    j["dependencies"] = deps;
    j["reason"] = v.reason;
    if (v.witness) {
        json edges = json::array();
        for (const auto& e : v.witness->edges) {
            json ej{{"from", e.from}, {"to", e.to}, {"kind", knowledge::to_string(e.kind)}};
            if (!e.protocol.empty()) ej["protocol"] = e.protocol;
            edges.push_back(ej);
        }
        j["witness"] = {{"nodes", v.witness->nodes}, {"edges", edges}};
    } else {
        j["witness"] = nullptr;
    }
    if (v.failed_predicate) j["failed_predicate"] = knowledge::to_json(*v.failed_predicate);
    if (!v.failed_technique.empty()) j["failed_technique"] = v.failed_technique;
    j["knowledge_version"] = v.knowledge_version;
    return j;
}

FeasibilityVerdict verdict_from_json(const json& j) {
    FeasibilityVerdict v;
    v.hypothesis_id = j.at("hypothesis_id").get<std::string>();
    v.status = feasibility_from_string(j.at("status").get<std::string>());
    for (const auto& d : j.value("dependencies", json::array()))
        v.dependencies.push_back({knowledge::predicate_from_json(d.at("predicate")), d.value("technique_id", std::string{}),
                                  d.value("note", std::string{})});
    v.reason = j.value("reason", std::string{});
    if (j.contains("witness") && !j.at("witness").is_null()) {
        Witness w;
        w.nodes = j.at("witness").at("nodes").get<std::vector<std::string>>();
        for (const auto& e : j.at("witness").at("edges"))
            w.edges.push_back({e.at("from").get<std::string>(), e.at("to").get<std::string>(),
                               knowledge::edge_kind_from_string(e.at("kind").get<std::string>()),
                               e.value("protocol", std::string{}), {}});
        v.witness = std::move(w);
    }
    if (j.contains("failed_predicate")) v.failed_predicate = knowledge::predicate_from_json(j.at("failed_predicate"));
    v.failed_technique = j.value("failed_technique", std::string{});
    v.knowledge_version = j.value("knowledge_version", std::uint64_t{0});
    return v;
}

}  // namespace agentsoc::sse
