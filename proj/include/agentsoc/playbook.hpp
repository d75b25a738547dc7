#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "agentsoc/knowledge.hpp"
#include "agentsoc/perception.hpp"
#include "agentsoc/primitives.hpp"
#include "agentsoc/rsem.hpp"
#include "agentsoc/sse.hpp"

namespace agentsoc::playbook {

enum class PlaybookStatus { Draft, Approved, AwaitingAnalyst, Rejected, Executed, RolledBack };
std::string to_string(PlaybookStatus s);
PlaybookStatus playbook_status_from_string(std::string_view s);
bool transition_allowed(PlaybookStatus from, PlaybookStatus to);

struct PlaybookStep {
    ActionPrimitive primitive = ActionPrimitive::MONITOR_ONLY;
    std::string target;
    Parameters parameters;
    std::string provenance;  // action id, or "dependency:<note>" for complementary steps
    double impact = 0;
};

class IllegalTransition : public ValidationError {
public:
    using ValidationError::ValidationError;
};

struct Playbook {
    std::string playbook_id;
    std::string incident_id;
    std::vector<PlaybookStep> steps;
    double projected_impact = 0;
    Timestamp created_at = 0;
    PlaybookStatus status = PlaybookStatus::Draft;

    // Throws IllegalTransition for undeclared transitions.
    void transition(PlaybookStatus to);
};

struct SynthesisConfig {
    bool complement_dependencies = true;
};

Playbook synthesize_playbook(const perception::IncidentObject& incident,
                             const std::vector<sse::FeasibilityVerdict>& verdicts,
                             const std::vector<rsem::RankedAction>& ranked, const knowledge::KnowledgeState& state,
                             const rsem::Calibration& calibration, const SynthesisConfig& config = {});

enum class GuardrailOutcome { AutoExecute, RequiresAnalyst, Rejected };
std::string to_string(GuardrailOutcome o);
GuardrailOutcome guardrail_outcome_from_string(std::string_view s);

inline constexpr const char* kImpactThresholdRule = "impact-threshold";

struct GuardrailDecision {
    GuardrailOutcome outcome = GuardrailOutcome::AutoExecute;
    std::vector<std::string> triggered_rules;
    std::string explanation;
};

GuardrailDecision evaluate_guardrails(const Playbook& playbook, const knowledge::KnowledgeState& state,
                                      double impact_threshold);
// Draft -> Approved / AwaitingAnalyst / Rejected.
void apply_decision(Playbook& playbook, const GuardrailDecision& decision);

// ---------------------------------------------------------------------------
// Execution

enum class ExecutionMode { DryRun, Live };
std::string to_string(ExecutionMode m);
ExecutionMode execution_mode_from_string(std::string_view s);

enum class StepStatus { Simulated, Applied, Failed, Skipped };
std::string to_string(StepStatus s);
StepStatus step_status_from_string(std::string_view s);

struct StepResult {
    std::size_t step_index = 0;
    ActionPrimitive primitive = ActionPrimitive::MONITOR_ONLY;
    std::string target;
    StepStatus status = StepStatus::Skipped;
    knowledge::KnowledgeDelta delta;  // simulated or applied
    std::string delta_id;
    std::string started_at;
    std::string ended_at;
    std::string error;
};

struct AuditEntry {
    std::string playbook_id;
    std::size_t step_index = 0;
    std::string primitive;
    std::string target;
    std::string mode;
    std::string status;
    std::string started_at;
    std::string ended_at;
    std::string delta_id;
};

struct ExecutionReport {
    std::string playbook_id;
    std::string incident_id;
    ExecutionMode mode = ExecutionMode::DryRun;
    std::vector<StepResult> steps;
    std::vector<AuditEntry> audit;
    std::vector<knowledge::KnowledgeDelta> rollback_plan;  // inverse deltas, reverse step order
    std::uint64_t version_before = 0;
    std::uint64_t version_after = 0;
    Timestamp effective_time = 0;  // dataset time the actions took effect
    bool rolled_back = false;

    bool succeeded() const;
};

// Carries out one step. The built-in SimulatedExecutor only touches the knowledge graph.
class Executor {
public:
    virtual ~Executor() = default;
    // DryRun: validate `delta` against `scratch` and return the resulting graph.
    // Live: apply `delta` to the store and return the delta id.
    virtual knowledge::EnterpriseGraph simulate(const PlaybookStep& step, const knowledge::KnowledgeDelta& delta,
                                                const knowledge::EnterpriseGraph& scratch);
    virtual std::string apply(const PlaybookStep& step, knowledge::KnowledgeDelta delta,
                              knowledge::KnowledgeStore& store);
};

class SimulatedExecutor : public Executor {};

class ExecutionError : public Error {
public:
    using Error::Error;
};

class ConflictError : public Error {
public:
    using Error::Error;
};

// Appends one JSON line per entry; safe to share between threads.
class AuditLog {
public:
    explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}
    void append(const std::vector<AuditEntry>& entries);
    void append_record(const json& record);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::mutex mu_;
};

ExecutionReport execute_playbook(Playbook& playbook, ExecutionMode mode, knowledge::KnowledgeStore& store,
                                 Executor& executor, Timestamp effective_time = 0, AuditLog* audit = nullptr);

struct RollbackResult {
    bool applied = false;
    std::vector<std::string> warnings;
    std::uint64_t version = 0;
};

// Applies the rollback plan as one atomic delta. ConflictError leaves the store untouched.
RollbackResult rollback(ExecutionReport& report, Playbook& playbook, knowledge::KnowledgeStore& store);

json to_json(const PlaybookStep& s);
json to_json(const Playbook& p);
Playbook playbook_from_json(const json& j);
json to_json(const GuardrailDecision& d);
GuardrailDecision decision_from_json(const json& j);
json to_json(const AuditEntry& a);
json to_json(const ExecutionReport& r);
ExecutionReport report_from_json(const json& j);

}  // namespace agentsoc::playbook
