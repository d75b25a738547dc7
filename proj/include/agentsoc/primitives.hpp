#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "agentsoc/knowledge.hpp"

namespace agentsoc::playbook {

enum class ActionPrimitive {
    REVOKE_SESSION,
    RESTRICT_PRIVILEGES,
    ENABLE_MFA,
    QUARANTINE_ACCESS,
    ISOLATE_HOST,
    DISABLE_USER,
    MONITOR_ONLY,
};

std::string to_string(ActionPrimitive p);
ActionPrimitive primitive_from_string(std::string_view s);
const std::vector<ActionPrimitive>& all_primitives();

struct PrimitiveInfo {
    std::vector<knowledge::NodeKind> target_kinds;  // empty = any existing entity
    double disruption = 0;                          // scales business impact
    bool mutating = true;
};

const PrimitiveInfo& primitive_info(ActionPrimitive p);

using Parameters = std::map<std::string, std::string>;

// The graph mutation the primitive performs on `target`, computed against `graph`.
// LookupError for an absent target, ValidationError when the target kind is unsupported.
//   ISOLATE_HOST        remove every Reachable edge touching the host
//   DISABLE_USER        remove the user's HasSessionOn and CanAuthTo edges
//   REVOKE_SESSION      remove one HasSessionOn edge (parameter "host", else the first)
//   RESTRICT_PRIVILEGES remove the principal's AdminOf edges
//   ENABLE_MFA          set attribute mfa=enforced on the user
//   QUARANTINE_ACCESS   remove incoming CanAuthTo/AdminOf edges of the host or service
//   MONITOR_ONLY        nothing
knowledge::KnowledgeDelta mutation_delta(ActionPrimitive p, const std::string& target, const Parameters& params,
                                         const knowledge::EnterpriseGraph& graph);

}  // namespace agentsoc::playbook
