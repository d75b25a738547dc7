#pragma once

#include <string>
#include <vector>

#include "agentsoc/ingest.hpp"
#include "agentsoc/knowledge.hpp"
#include "agentsoc/playbook.hpp"

namespace agentsoc::monitor {

enum class Verdict { Achieved, PartiallyAchieved, Failed };
std::string to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

struct EffectCheck {
    std::size_t step_index = 0;
    std::string primitive;
    std::string target;
    std::string predicate;  // intended effect, human readable
    std::string expected;
    std::string observed;
    bool pass = false;
    std::vector<std::size_t> violating_lines;  // input lines of post events breaking the effect
};

struct OutcomeAssessment {
    std::string playbook_id;
    std::string incident_id;
    std::vector<EffectCheck> checks;
    std::vector<std::string> correlated_alerts;
    Verdict verdict = Verdict::Achieved;
    bool rollback_recommended = false;
    std::uint64_t knowledge_version = 0;
};

struct MonitorConfig {
    Timestamp correlation_window = 600;
    bool rollback_on_partial = false;
    void validate() const;
};

// Graph conditions are read from the store for Live reports and from the snapshot with the
// simulated deltas applied for DryRun reports. Events count when they fall in
// (effective_time, effective_time + correlation_window].
OutcomeAssessment assess_outcome(const playbook::ExecutionReport& report,
                                 const std::vector<ingest::AuthEvent>& post_events,
                                 const std::vector<ingest::RawAlert>& post_alerts, const knowledge::KnowledgeState& state,
                                 const MonitorConfig& config = {});

// Attribute-only delta: containment_verified on targets of passing checks, deviation on failing ones.
knowledge::KnowledgeDelta emit_feedback(const OutcomeAssessment& assessment, const knowledge::EnterpriseGraph& graph);

json to_json(const OutcomeAssessment& a);
OutcomeAssessment assessment_from_json(const json& j);

}  // namespace agentsoc::monitor
