#pragma once

#include <map>
#include <string>
#include <vector>

#include "agentsoc/knowledge.hpp"
#include "agentsoc/nce.hpp"
#include "agentsoc/perception.hpp"
#include "agentsoc/primitives.hpp"
#include "agentsoc/sse.hpp"

namespace agentsoc::rsem {

using playbook::ActionPrimitive;

struct RiskWeights {
    double alpha = 0.7;
    double beta = 0.3;
    double gamma = 0.0;
    void validate() const;  // ConfigError
};

// alpha*containment - beta*impact - gamma*cost; inputs must lie in [0,1].
double composite_score(double containment, double impact, double cost, const RiskWeights& w);

struct CandidateTemplate {
    ActionPrimitive primitive = ActionPrimitive::MONITOR_ONLY;
    std::string target;  // literal id or $source / $target / $principal
    std::string label;
};

struct Calibration {
    std::map<ActionPrimitive, double> containment_factor;
    double monitor_only_containment = 0.15;
    std::map<ActionPrimitive, double> execution_cost;
    double w_downtime = 1, w_disruption = 1, w_compliance = 1;
    double default_impact = 0.5;
    std::vector<CandidateTemplate> templates;

    static Calibration from_json(const json& j);
    static Calibration bundled();
    void validate() const;
};

struct ActionCandidate {
    std::string action_id;
    ActionPrimitive primitive = ActionPrimitive::MONITOR_ONLY;
    std::string target;
    playbook::Parameters parameters;
    double containment = 0;
    double containment_raw = 0;
    double business_impact = 0;
    double execution_cost = 0;
    std::string rationale;
    std::vector<std::string> warnings;
};

struct RankedAction {
    int rank = 0;
    ActionCandidate candidate;
    double composite = 0;
};

// Everything containment estimation needs from the reasoning stages.
struct ScoringContext {
    const perception::IncidentObject& incident;
    const knowledge::KnowledgeState& state;
    const std::vector<nce::Hypothesis>& hypotheses;
    const std::vector<sse::FeasibilityVerdict>& verdicts;
};

struct ContainmentEstimate {
    double raw = 0;         // cut witnesses / witnesses
    double calibrated = 0;  // raw * primitive factor, or the fixed MONITOR_ONLY value
    std::size_t cut = 0;
    std::size_t total = 0;
};

// A witness counts as cut when the simulated mutation removes one of its edges or when the
// hypothesis no longer validates against the mutated graph.
ContainmentEstimate estimate_containment(ActionPrimitive primitive, const std::string& target,
                                         const playbook::Parameters& params, const ScoringContext& ctx,
                                         const Calibration& calibration);

struct ImpactEstimate {
    double value = 0;
    std::vector<std::string> warnings;
};

ImpactEstimate estimate_impact(ActionPrimitive primitive, const std::string& target,
                               const std::map<std::string, knowledge::ImpactParams>& params,
                               const Calibration& calibration);

std::vector<ActionCandidate> generate_candidates(const ScoringContext& ctx, const Calibration& calibration);

// Composite desc, then lower impact, lower cost, action id.
std::vector<RankedAction> rank_actions(const std::vector<ActionCandidate>& candidates, const RiskWeights& weights);

json to_json(const ActionCandidate& c);
ActionCandidate candidate_from_json(const json& j);
json to_json(const RankedAction& r);
RankedAction ranked_from_json(const json& j);

}  // namespace agentsoc::rsem
