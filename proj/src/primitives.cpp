#include "agentsoc/primitives.hpp"

#include <algorithm>

namespace agentsoc::playbook {

using knowledge::DeltaOp;
using knowledge::EdgeKind;
using knowledge::NodeKind;

std::string to_string(ActionPrimitive p) {
    switch (p) {
        case ActionPrimitive::REVOKE_SESSION: return "REVOKE_SESSION";
        case ActionPrimitive::RESTRICT_PRIVILEGES: return "RESTRICT_PRIVILEGES";
        case ActionPrimitive::ENABLE_MFA: return "ENABLE_MFA";
        case ActionPrimitive::QUARANTINE_ACCESS: return "QUARANTINE_ACCESS";
        case ActionPrimitive::ISOLATE_HOST: return "ISOLATE_HOST";
        case ActionPrimitive::DISABLE_USER: return "DISABLE_USER";
        case ActionPrimitive::MONITOR_ONLY: return "MONITOR_ONLY";
    }
    return "?";
}

const std::vector<ActionPrimitive>& all_primitives() {
    static const std::vector<ActionPrimitive> all{
        ActionPrimitive::REVOKE_SESSION, ActionPrimitive::RESTRICT_PRIVILEGES, ActionPrimitive::ENABLE_MFA,
        ActionPrimitive::QUARANTINE_ACCESS, ActionPrimitive::ISOLATE_HOST, ActionPrimitive::DISABLE_USER,
        ActionPrimitive::MONITOR_ONLY,
    };
    return all;
}

ActionPrimitive primitive_from_string(std::string_view s) {
    for (auto p : all_primitives())
        if (to_string(p) == s) return p;
    throw ValidationError("unknown action primitive '" + std::string(s) + "'");
}

const PrimitiveInfo& primitive_info(ActionPrimitive p) {
    static const std::map<ActionPrimitive, PrimitiveInfo> info{
        {ActionPrimitive::REVOKE_SESSION, {{NodeKind::User}, 0.3, true}},
        {ActionPrimitive::RESTRICT_PRIVILEGES, {{NodeKind::User, NodeKind::Group}, 0.5, true}},
        {ActionPrimitive::ENABLE_MFA, {{NodeKind::User}, 0.2, true}},
        {ActionPrimitive::QUARANTINE_ACCESS, {{NodeKind::Host, NodeKind::Service}, 0.8, true}},
        {ActionPrimitive::ISOLATE_HOST, {{NodeKind::Host}, 1.0, true}},
        {ActionPrimitive::DISABLE_USER, {{NodeKind::User}, 1.0, true}},
        {ActionPrimitive::MONITOR_ONLY, {{}, 0.0, false}},
    };
    return info.at(p);
}

knowledge::KnowledgeDelta mutation_delta(ActionPrimitive p, const std::string& target, const Parameters& params,
                                         const knowledge::EnterpriseGraph& g) {
    knowledge::KnowledgeDelta d;
    d.provenance = knowledge::Provenance::ExecutionOutcome;
    // Watching changes nothing, so the target need not be in the graph (unresolved principals).
    if (p == ActionPrimitive::MONITOR_ONLY) return d;
    const auto& node = g.node(target);
    const auto& kinds = primitive_info(p).target_kinds;
    if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), node.kind) == kinds.end())
        throw ValidationError(to_string(p) + " is undefined for " + knowledge::to_string(node.kind) + " '" + target + "'");

    const auto remove_all = [&](const std::vector<knowledge::Edge>& edges) {
        for (const auto& e : edges) d.ops.push_back(DeltaOp::remove_edge(e));
    };
    const auto outgoing = [&](EdgeKind kind) {
        const auto span = g.out_edges(target, kind);
        return std::vector<knowledge::Edge>(span.begin(), span.end());
    };
    const auto incoming = [&](EdgeKind kind) {
        std::vector<knowledge::Edge> in;
        for (const auto& e : g.edges_touching(target, kind))
            if (e.to == target) in.push_back(e);
        return in;
    };

    switch (p) {
        case ActionPrimitive::ISOLATE_HOST: remove_all(g.edges_touching(target, EdgeKind::Reachable)); break;
        case ActionPrimitive::DISABLE_USER:
            remove_all(outgoing(EdgeKind::HasSessionOn));
            remove_all(outgoing(EdgeKind::CanAuthTo));
            break;
        case ActionPrimitive::REVOKE_SESSION: {
            const auto sessions = outgoing(EdgeKind::HasSessionOn);
            const auto it = params.find("host");
            for (const auto& e : sessions) {
                if (it != params.end() && e.to != it->second) continue;
                d.ops.push_back(DeltaOp::remove_edge(e));
                break;
            }
            break;
        }
        case ActionPrimitive::RESTRICT_PRIVILEGES: remove_all(outgoing(EdgeKind::AdminOf)); break;
        case ActionPrimitive::ENABLE_MFA: {
            const auto it = node.attributes.find("mfa");
            std::optional<std::string> old;
            if (it != node.attributes.end()) old = it->second;
            if (old != "enforced") d.ops.push_back(DeltaOp::set_attribute(target, "mfa", old, "enforced"));
            break;
        }
        case ActionPrimitive::QUARANTINE_ACCESS:
            remove_all(incoming(EdgeKind::CanAuthTo));
            remove_all(incoming(EdgeKind::AdminOf));
            break;
        case ActionPrimitive::MONITOR_ONLY: break;
    }
    return d;
}

}  // namespace agentsoc::playbook
