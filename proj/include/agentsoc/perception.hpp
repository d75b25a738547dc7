#pragma once

#include <atomic>
#include <compare>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "agentsoc/common.hpp"
#include "agentsoc/ingest.hpp"
#include "agentsoc/knowledge.hpp"

namespace agentsoc::perception {

// A raw alert as received from some source system.
struct SourceRecord {
    std::string schema;  // "ingest", "siem", ...
    json payload;
};

SourceRecord from_raw_alert(const ingest::RawAlert& alert);

struct NormalizedAlert {
    std::string alert_id;
    std::string source_system;
    std::string canonical_event_type;
    Timestamp timestamp = 0;  // UTC epoch seconds
    int severity = 1;
    std::string principal;
    std::string source_host;
    std::optional<std::string> dest_host;
    std::string outcome;       // Success | Failure | ?
    std::string auth_type;     // Kerberos, NTLM, ? ...
    std::string orientation;   // TGT, TGS, LogOn ...
    json raw_payload;

    bool operator==(const NormalizedAlert&) const = default;
};

class NormalizationError : public ValidationError {
public:
    NormalizationError(std::string field, const std::string& what)
        : ValidationError(what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

const std::set<std::string>& event_vocabulary();

using SchemaMapper = std::function<NormalizedAlert(const json&)>;
// Built-in schemas: "ingest" (RawAlert JSON) and "siem" (generic SIEM record).
void register_schema(const std::string& name, SchemaMapper mapper);
NormalizedAlert normalize(const SourceRecord& record);

json to_json(const NormalizedAlert& a);

struct ClusterKey {
    std::string principal;
    std::string source_host;
    std::string dest_host;  // empty when the alert has no destination
    Timestamp bucket = 0;   // start of the fixed time bucket
    auto operator<=>(const ClusterKey&) const = default;
};

struct AlertCluster {
    ClusterKey key;
    std::vector<NormalizedAlert> members;
    std::size_t representative = 0;  // index into members

    const NormalizedAlert& rep() const { return members.at(representative); }
};

struct NoiseConfig {
    Timestamp bucket_seconds = 60;
    int notable_severity = 7;
};

struct NoiseResult {
    std::vector<AlertCluster> clusters;
    std::vector<std::string> suppressed;  // alert ids folded into an earlier duplicate
};

ClusterKey cluster_key(const NormalizedAlert& a, Timestamp bucket_seconds);
NoiseResult reduce_noise(std::vector<NormalizedAlert> alerts, const NoiseConfig& config = {});

// ---------------------------------------------------------------------------

struct EntityContext {
    std::string id;
    bool resolved = false;
    std::string role;
    std::string department;
    std::optional<int> privilege_tier;
    std::optional<int> criticality;
};

struct IncidentObject {
    std::string incident_id;
    std::vector<std::string> member_alert_ids;
    EntityContext user;
    EntityContext source_host;
    std::optional<EntityContext> target_host;
    std::string historical_baseline;
    std::string event_summary;
    std::vector<std::string> event_types;  // canonical types present in the cluster
    std::vector<std::string> flags;
    std::string outcome;
    bool first_access = false;   // target never seen for this principal in the baseline
    bool baseline_empty = false; // principal has no baseline history
    int max_severity = 0;
    Timestamp created_at = 0;
    std::uint64_t knowledge_version = 0;
};

const std::vector<std::string>& flag_vocabulary();

struct EnrichConfig {
    int cross_tier_min_criticality = 8;
    int cross_tier_min_user_tier = 2;
};

class EnrichmentError : public Error {
public:
    EnrichmentError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

// Hands out INC-<source>-<nnn> ids, monotone per instance.
class IncidentIds {
public:
    explicit IncidentIds(std::string source = "POC") : source_(std::move(source)) {}
    std::string next();
    static std::string format(const std::string& source, std::size_t n);

private:
    std::string source_;
    std::atomic<std::size_t> counter_{0};
};

IncidentObject enrich(const AlertCluster& cluster, const knowledge::KnowledgeState& state,
                      const ingest::Baseline& baseline, std::string incident_id, const EnrichConfig& config = {});
// Throws EnrichmentError(retryable) when the store has no snapshot.
IncidentObject enrich(const AlertCluster& cluster, const knowledge::KnowledgeStore& store,
                      const ingest::Baseline& baseline, std::string incident_id, const EnrichConfig& config = {});

json to_json(const IncidentObject& incident);
IncidentObject incident_from_json(const json& j);

}  // namespace agentsoc::perception
