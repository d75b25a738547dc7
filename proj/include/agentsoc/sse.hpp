#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "agentsoc/knowledge.hpp"
#include "agentsoc/nce.hpp"
#include "agentsoc/perception.hpp"

namespace agentsoc::sse {

enum class Truth { Satisfied, Unsatisfied, Unknown };
enum class FeasibilityStatus { Feasible, ConditionallyFeasible, Infeasible };

std::string to_string(Truth t);
std::string to_string(FeasibilityStatus s);
FeasibilityStatus feasibility_from_string(std::string_view s);

// Simulated attacker state; never written back to the graph.
struct ActorState {
    std::string actor;
    std::set<std::string> sessions;
    std::optional<int> tier;
    std::string source;  // binding for $source
    std::string target;  // binding for $target; empty when the incident has none
};

ActorState seed_actor(const perception::IncidentObject& incident, const knowledge::EnterpriseGraph& graph);

// Replaces $source/$target/$actor; ValidationError for any other $binding.
knowledge::Predicate bind(const knowledge::Predicate& p, const ActorState& actor);

struct Check {
    Truth truth = Truth::Unsatisfied;
    std::optional<knowledge::GraphPath> path;  // PathFromSession witness
};

// `p` must already be bound.
Check check_precondition(const knowledge::Predicate& p, const ActorState& actor, const knowledge::EnterpriseGraph& graph,
                         const std::set<std::string>& unmodeled);

std::optional<knowledge::GraphPath> find_attack_path(const knowledge::EnterpriseGraph& graph,
                                                     const std::set<std::string>& sessions, const std::string& target,
                                                     const std::string& protocol = "*");

struct Dependency {
    knowledge::Predicate predicate;  // bound
    std::string technique_id;
    std::string note;
};

struct Witness {
    std::vector<std::string> nodes;
    std::vector<knowledge::Edge> edges;
    std::string describe() const;
};

struct FeasibilityVerdict {
    std::string hypothesis_id;
    FeasibilityStatus status = FeasibilityStatus::Infeasible;
    std::vector<Dependency> dependencies;
    std::string reason;
    std::optional<Witness> witness;
    std::optional<knowledge::Predicate> failed_predicate;
    std::string failed_technique;
    std::uint64_t knowledge_version = 0;
};

std::string dependency_note(const knowledge::Predicate& p);
std::string failure_reason(const knowledge::Predicate& p, const std::string& technique_id, const ActorState& actor);

FeasibilityVerdict validate_chain(const std::string& hypothesis_id, const std::vector<std::string>& chain,
                                  const perception::IncidentObject& incident, const knowledge::KnowledgeState& state);
FeasibilityVerdict validate_hypothesis(const nce::Hypothesis& hypothesis, const perception::IncidentObject& incident,
                                       const knowledge::KnowledgeState& state);

json to_json(const FeasibilityVerdict& v);
FeasibilityVerdict verdict_from_json(const json& j);

}  // namespace agentsoc::sse
