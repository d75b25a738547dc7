#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "agentsoc/config.hpp"
#include "agentsoc/ingest.hpp"
#include "agentsoc/knowledge.hpp"
#include "agentsoc/monitor.hpp"
#include "agentsoc/nce.hpp"
#include "agentsoc/perception.hpp"
#include "agentsoc/playbook.hpp"
#include "agentsoc/rsem.hpp"
#include "agentsoc/sse.hpp"

namespace agentsoc::pipeline {

inline constexpr std::array<const char*, 9> kStages{"normalize", "enrich", "nce",        "sse",    "rsem",
                                                   "playbook",  "guardrails", "execute", "monitor"};

// Row labels of the timing table, same order as kStages.
inline constexpr std::array<const char*, 9> kStageLabels{"Normalization", "Enrichment", "NCE",       "SSE",       "RSEM",
                                                        "Playbook",      "Guardrails", "Execution", "Monitoring"};

struct StageTiming {
    std::string stage;
    std::int64_t micros = 0;
    bool ran = false;
};

class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

struct ApprovalRecord {
    std::string requested_at;
    std::vector<std::string> triggered_rules;
    double projected_impact = 0;
    std::string summary;
    std::optional<std::string> decision;  // Approved | Rejected
    std::optional<std::string> decided_by;
    std::optional<std::string> decided_at;
};

struct CycleResult {
    std::string cycle_id;  // equals the incident id
    playbook::ExecutionMode mode = playbook::ExecutionMode::DryRun;
    std::vector<perception::NormalizedAlert> alerts;
    perception::IncidentObject incident;
    std::string generator = "builtin";
    std::vector<std::string> generator_diagnostics;
    std::vector<nce::Hypothesis> hypotheses;
    std::vector<sse::FeasibilityVerdict> verdicts;
    rsem::RiskWeights weights;
    std::vector<rsem::RankedAction> ranked;
    playbook::Playbook playbook;
    playbook::GuardrailDecision guardrail;
    std::optional<playbook::ExecutionReport> execution;
    bool fallback = false;  // execution is the MONITOR_ONLY fallback of a rejected playbook
    std::optional<monitor::OutcomeAssessment> assessment;
    std::optional<knowledge::KnowledgeDelta> feedback;
    bool feedback_applied = false;
    std::optional<ApprovalRecord> approval;
    std::vector<StageTiming> timings;  // always all nine stages, in order
    std::int64_t total_micros = 0;
    Timestamp effective_time = 0;
    std::vector<ingest::AuthEvent> post_events;  // events inside the monitor window
    std::vector<ingest::RawAlert> post_alerts;
    std::string error;
    std::string error_stage;

    // Playbook status name, or "Failed" for a cycle that errored.
    std::string status() const;
};

json to_json(const CycleResult& c);
CycleResult cycle_from_json(const json& j);

// Durable per-run directory: run.json, state.json, cycles/<id>.json, audit.jsonl, deltas.jsonl,
// report.json, report.txt. Files are replaced atomically.
class Journal {
public:
    explicit Journal(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }
    void write_cycle(const CycleResult& c);
    void write_cycle_json(const std::string& id, const json& j);
    std::optional<json> read_cycle(const std::string& id) const;
    std::vector<std::string> cycle_ids() const;
    void write_json(const std::string& name, const json& j);
    std::optional<json> read_json(const std::string& name) const;
    void write_text(const std::string& name, const std::string& text);

    // One mutex per cycle for decision handling.
    std::mutex& cycle_mutex(const std::string& id);

    static bool valid_id(const std::string& id);

private:
    std::filesystem::path dir_;
    std::mutex mu_;
    std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

// Everything a cycle needs besides its alerts.
class Engine {
public:
    Engine(config::Config config, knowledge::KnowledgeStore& store, nce::TechniqueMapping mapping,
           rsem::Calibration calibration);

    const config::Config& config() const { return config_; }
    knowledge::KnowledgeStore& store() { return store_; }
    const nce::TechniqueMapping& mapping() const { return mapping_; }
    const rsem::Calibration& calibration() const { return calibration_; }

    void set_baseline(ingest::Baseline baseline) { baseline_ = std::move(baseline); }
    void set_context(std::vector<ingest::AuthEvent> events, std::vector<ingest::RawAlert> alerts);
    void set_executor(playbook::Executor* executor) { executor_ = executor; }
    void set_journal(Journal* journal);

    playbook::ExecutionMode mode() const;

    // Stages 1-9 for one cluster's raw alerts. StageError names the failing stage;
    // a RequiresAnalyst decision returns early with the playbook AwaitingAnalyst.
    CycleResult run_cycle(const std::vector<perception::SourceRecord>& records, const std::string& incident_id);

    // Continues a suspended cycle from the journal.
    CycleResult resume_cycle(const std::string& cycle_id, const std::string& decision, const std::string& analyst);

private:
    void execute_and_monitor(CycleResult& c);
    void run_fallback(CycleResult& c);
    void persist(const CycleResult& c);

    config::Config config_;
    knowledge::KnowledgeStore& store_;
    nce::TechniqueMapping mapping_;
    rsem::Calibration calibration_;
    ingest::Baseline baseline_;
    std::vector<ingest::AuthEvent> events_;  // sorted; source of post-execution events
    std::vector<ingest::RawAlert> alerts_;
    playbook::SimulatedExecutor default_executor_;
    playbook::Executor* executor_ = &default_executor_;
    std::unique_ptr<nce::LlmAdapter> adapter_;
    Journal* journal_ = nullptr;
    std::unique_ptr<playbook::AuditLog> audit_;
};

// Mapping/calibration next to the snapshot win over the bundled defaults; explicit config paths win over both.
nce::TechniqueMapping load_mapping(const config::Config& config, const std::filesystem::path& snapshot_path);
rsem::Calibration load_calibration(const config::Config& config, const std::filesystem::path& snapshot_path);
knowledge::KnowledgeState load_state(const std::filesystem::path& snapshot_path);

struct BatchOptions {
    std::filesystem::path events;
    std::filesystem::path snapshot;
    std::optional<std::filesystem::path> out;  // journal directory
    config::Config config;
};

struct BatchResult {
    json report;
    std::vector<CycleResult> cycles;
    std::size_t failures = 0;
    std::shared_ptr<knowledge::KnowledgeStore> store;
};

BatchResult run_batch(const BatchOptions& options);

// Report without timing and wall-clock fields, serialized compactly.
std::string canonical_report(const json& report);
// Timing table plus one summary line per cycle.
std::string render_text(const json& report);

struct Percentiles {
    double min_ms = 0, median_ms = 0, p95_ms = 0, max_ms = 0;
};
// Nearest-rank percentiles.
Percentiles percentiles(std::vector<std::int64_t> micros);
json timing_summary(const std::vector<std::vector<StageTiming>>& per_cycle, const std::vector<std::int64_t>& totals);

}  // namespace agentsoc::pipeline
