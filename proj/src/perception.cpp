#include "agentsoc/perception.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <mutex>

namespace agentsoc::perception {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string canonical_for(ingest::AlertKind kind) {
    switch (kind) {
        case ingest::AlertKind::CrossDomainAccess: return "auth.cross_domain_access";
        case ingest::AlertKind::RepeatedFailure: return "auth.repeated_failure";
        case ingest::AlertKind::GeoChange: return "auth.geo_change";
        case ingest::AlertKind::ShortIntervalLateralMove: return "auth.short_interval_lateral_move";
        case ingest::AlertKind::FirstTimeHostAccess: return "auth.first_time_host_access";
        case ingest::AlertKind::CrossTierAccess: return "auth.cross_tier_access";
    }
    return {};
}

NormalizedAlert map_ingest(const json& payload) {
    ingest::RawAlert raw;
    try {
        raw = ingest::raw_alert_from_json(payload);
    } catch (const json::exception& e) {
        throw NormalizationError("payload", std::string("malformed ingest alert: ") + e.what());
    }
    const auto& last = raw.triggering_events.back();
    NormalizedAlert a;
    a.alert_id = raw.alert_id;
    a.source_system = "ingest";
    a.canonical_event_type = canonical_for(raw.kind);
    a.timestamp = raw.detected_at;
    a.severity = raw.severity;
    a.principal = ingest::user_part(last.source_user);
    a.source_host = last.source_host;
    if (!ingest::is_unknown(last.dest_host)) a.dest_host = last.dest_host;
    a.outcome = last.outcome == ingest::Outcome::Success ? "Success" : "Failure";
    a.auth_type = last.auth_type;
    a.orientation = last.orientation;
    a.raw_payload = payload;
    return a;
}

struct SiemType {
    std::string canonical;
    std::string auth_type;
    std::string orientation;
};

const std::map<std::string, SiemType>& siem_types() {
    static const std::map<std::string, SiemType> table = [] {
        std::map<std::string, SiemType> t{
            {"kerberos tgt request", {"auth.kerberos_tgt_request", "Kerberos", "TGT"}},
            {"kerberos tgs request", {"auth.kerberos_tgs_request", "Kerberos", "TGS"}},
            {"logon", {"auth.logon", "?", "LogOn"}},
            {"failed logon", {"auth.repeated_failure", "?", "LogOn"}},
            {"powershell", {"endpoint.powershell", "?", "?"}},
            {"suspicious powershell", {"endpoint.powershell", "?", "?"}},
            {"credential dumping", {"endpoint.credential_dumping", "?", "?"}},
            {"lsass access", {"endpoint.credential_dumping", "?", "?"}},
            {"smb connection", {"network.lateral_connection", "?", "?"}},
            {"lateral movement", {"network.lateral_connection", "?", "?"}},
        };
        for (const auto& v : event_vocabulary()) t.emplace(v, SiemType{v, "?", "?"});
        return t;
    }();
    return table;
}

const json* field(const json& payload, std::initializer_list<const char*> names) {
    for (const char* n : names)
        if (payload.contains(n) && !payload.at(n).is_null()) return &payload.at(n);
    return nullptr;
}

std::string as_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

NormalizedAlert map_siem(const json& payload) {
    if (!payload.is_object()) throw NormalizationError("payload", "SIEM record is not an object");
    auto need = [&](std::initializer_list<const char*> names, const char* canonical) -> const json& {
        const json* v = field(payload, names);
        if (!v) throw NormalizationError(canonical, std::string("missing mandatory field: ") + canonical);
        return *v;
    };
    NormalizedAlert a;
    a.source_system = "siem";
    try {
        a.timestamp = parse_timestamp(as_text(need({"timestamp", "Timestamp"}, "timestamp")));
    } catch (const ValidationError& e) {
        throw NormalizationError("timestamp", e.what());
    }
    const auto type = lower(trim(as_text(need({"event_type", "EventType"}, "event_type"))));
    const auto it = siem_types().find(type);
    if (it == siem_types().end()) throw NormalizationError("event_type", "unmapped SIEM event type '" + type + "'");
    a.canonical_event_type = it->second.canonical;
    a.auth_type = it->second.auth_type;
    a.orientation = it->second.orientation;
    if (const auto* v = field(payload, {"auth_type"})) a.auth_type = as_text(*v);
    if (const auto* v = field(payload, {"orientation"})) a.orientation = as_text(*v);
    a.principal = ingest::user_part(as_text(need({"user", "SourceUser"}, "user")));
    a.source_host = as_text(need({"src_host", "SourceHost"}, "src_host"));
    if (const auto* v = field(payload, {"dst_host", "DestinationHost"})) a.dest_host = as_text(*v);
    a.outcome = "?";
    if (const auto* v = field(payload, {"outcome", "Result"})) {
        const auto o = lower(as_text(*v));
        a.outcome = o == "success" ? "Success" : (o == "fail" || o == "failure") ? "Failure" : "?";
    }
    a.severity = 5;
    if (const auto* v = field(payload, {"severity", "Severity"})) {
        if (!v->is_number_integer()) throw NormalizationError("severity", "severity must be an integer");
        a.severity = v->get<int>();
        if (a.severity < 1 || a.severity > 10) throw NormalizationError("severity", "severity outside [1,10]");
    }
    if (const auto* v = field(payload, {"id", "AlertId", "alert_id"}))
        a.alert_id = as_text(*v);
    else
        a.alert_id = "siem-" + std::to_string(a.timestamp) + "-" + a.principal;
    if (a.principal.empty()) throw NormalizationError("user", "empty user");
    if (a.source_host.empty()) throw NormalizationError("src_host", "empty src_host");
    a.raw_payload = payload;
    return a;
}

std::mutex& registry_mu() {
    static std::mutex mu;
    return mu;
}

std::map<std::string, SchemaMapper>& registry() {
    static std::map<std::string, SchemaMapper> r{{"ingest", map_ingest}, {"siem", map_siem}};
    return r;
}

std::string orientation_phrase(const std::string& o) {
    if (o == "TGT") return "TGT Request";
    if (o == "TGS") return "TGS Request";
    if (o == "LogOn") return "Logon";
    if (o == "LogOff") return "Logoff";
    if (ingest::is_unknown(o)) return "";
    return o;
}

EntityContext resolve(const knowledge::EnterpriseGraph& g, const std::string& id, bool is_user) {
    EntityContext c;
    c.id = id;
    const auto* n = g.find(id);
    if (!n) return c;
    c.resolved = true;
    c.role = n->attribute("role");
    c.department = n->attribute("department");
    c.criticality = n->criticality;
    if (is_user && n->kind == knowledge::NodeKind::User)
        c.privilege_tier = knowledge::privilege_tier(g, id);
    else
        c.privilege_tier = n->privilege_tier;
    return c;
}

json context_json(const EntityContext& c) {
    json j;
    j["id"] = c.id;
    j["resolved"] = c.resolved;
    j["role"] = c.role;
    if (!c.department.empty()) j["department"] = c.department;
    if (c.privilege_tier) j["privilege_tier"] = *c.privilege_tier;
    if (c.criticality) j["criticality"] = *c.criticality;
    return j;
}

EntityContext context_from(const json& j) {
    EntityContext c;
    c.id = j.at("id").get<std::string>();
    c.resolved = j.value("resolved", false);
    c.role = j.value("role", std::string{});
    c.department = j.value("department", std::string{});
    if (j.contains("privilege_tier")) c.privilege_tier = j.at("privilege_tier").get<int>();
    if (j.contains("criticality")) c.criticality = j.at("criticality").get<int>();
    return c;
}

}  // namespace

SourceRecord from_raw_alert(const ingest::RawAlert& alert) { return {"ingest", ingest::to_json(alert)}; }

const std::set<std::string>& event_vocabulary() {
    static const std::set<std::string> vocab{
        "auth.cross_domain_access",   "auth.repeated_failure",   "auth.geo_change",
        "auth.short_interval_lateral_move", "auth.first_time_host_access", "auth.cross_tier_access",
        "auth.kerberos_tgt_request",  "auth.kerberos_tgs_request", "auth.logon",
        "endpoint.powershell",        "endpoint.credential_dumping", "network.lateral_connection",
    };
    return vocab;
}

void register_schema(const std::string& name, SchemaMapper mapper) {
    std::lock_guard lock(registry_mu());
    registry()[name] = std::move(mapper);
}

NormalizedAlert normalize(const SourceRecord& record) {
    SchemaMapper mapper;
    {
        std::lock_guard lock(registry_mu());
        const auto it = registry().find(record.schema);
        if (it == registry().end())
            throw NormalizationError("schema", "unregistered source schema '" + record.schema + "'");
        mapper = it->second;
    }
    auto a = mapper(record.payload);
    if (!event_vocabulary().count(a.canonical_event_type))
        throw NormalizationError("event_type", "non-canonical event type '" + a.canonical_event_type + "'");
    if (a.severity < 1 || a.severity > 10) throw NormalizationError("severity", "severity outside [1,10]");
    return a;
}

json to_json(const NormalizedAlert& a) {
    json j;
    j["alert_id"] = a.alert_id;
    j["source_system"] = a.source_system;
    j["canonical_event_type"] = a.canonical_event_type;
    j["timestamp"] = format_utc(a.timestamp);
    j["severity"] = a.severity;
    j["principal"] = a.principal;
    j["source_host"] = a.source_host;
    j["dest_host"] = a.dest_host ? json(*a.dest_host) : json(nullptr);
    j["outcome"] = a.outcome;
    j["auth_type"] = a.auth_type;
    j["orientation"] = a.orientation;
    j["raw_payload"] = a.raw_payload;
    return j;
}

ClusterKey cluster_key(const NormalizedAlert& a, Timestamp bucket_seconds) {
    Timestamp bucket = a.timestamp - ((a.timestamp % bucket_seconds) + bucket_seconds) % bucket_seconds;
    return {a.principal, a.source_host, a.dest_host.value_or(""), bucket};
}

NoiseResult reduce_noise(std::vector<NormalizedAlert> alerts, const NoiseConfig& config) {
    if (config.bucket_seconds <= 0) throw ConfigError("perception.bucket_seconds must be > 0");
    std::stable_sort(alerts.begin(), alerts.end(), [](const NormalizedAlert& a, const NormalizedAlert& b) {
        return std::tie(a.timestamp, a.alert_id) < std::tie(b.timestamp, b.alert_id);
    });
    std::map<ClusterKey, AlertCluster> by_key;
    NoiseResult result;
    for (auto& a : alerts) {
        const auto key = cluster_key(a, config.bucket_seconds);
        auto& cluster = by_key[key];
        cluster.key = key;
        const bool duplicate = std::any_of(cluster.members.begin(), cluster.members.end(), [&](const NormalizedAlert& m) {
            return m.canonical_event_type == a.canonical_event_type;
        });
        if (duplicate && a.severity < config.notable_severity) {
            result.suppressed.push_back(a.alert_id);
            continue;
        }
        cluster.members.push_back(std::move(a));
    }
    for (auto& [key, cluster] : by_key) {
        std::size_t rep = 0;
        for (std::size_t i = 1; i < cluster.members.size(); ++i) {
            const auto& m = cluster.members[i];
            const auto& r = cluster.members[rep];
            if (std::make_tuple(-m.severity, m.timestamp, m.alert_id) < std::make_tuple(-r.severity, r.timestamp, r.alert_id))
                rep = i;
        }
        cluster.representative = rep;
        result.clusters.push_back(std::move(cluster));
    }
    std::sort(result.clusters.begin(), result.clusters.end(), [](const AlertCluster& a, const AlertCluster& b) {
        return std::tie(a.rep().timestamp, a.rep().alert_id) < std::tie(b.rep().timestamp, b.rep().alert_id);
    });
    return result;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& flag_vocabulary() {
    static const std::vector<std::string> flags{"unusual-TGT-request", "cross-tier-access", "unknown-entity",
                                                "repeated-failure",    "lateral-burst",     "cross-domain",
                                                "geo-change"};
    return flags;
}

std::string IncidentIds::format(const std::string& source, std::size_t n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", n);
    return "INC-" + source + "-" + buf;
}

std::string IncidentIds::next() { return format(source_, ++counter_); }

IncidentObject enrich(const AlertCluster& cluster, const knowledge::KnowledgeState& state,
                      const ingest::Baseline& baseline, std::string incident_id, const EnrichConfig& config) {
    if (cluster.members.empty()) throw ValidationError("cannot enrich an empty cluster");
    const auto& g = state.graph;
    const auto& rep = cluster.rep();

    IncidentObject inc;
    inc.incident_id = std::move(incident_id);
    inc.knowledge_version = state.version();
    inc.created_at = rep.timestamp;
    inc.outcome = rep.outcome;
    std::set<std::string> types;
    for (const auto& m : cluster.members) {
        inc.member_alert_ids.push_back(m.alert_id);
        types.insert(m.canonical_event_type);
        inc.max_severity = std::max(inc.max_severity, m.severity);
    }
    inc.event_types.assign(types.begin(), types.end());

    inc.user = resolve(g, rep.principal, true);
    inc.source_host = resolve(g, rep.source_host, false);
    if (rep.dest_host) inc.target_host = resolve(g, *rep.dest_host, false);

    const auto* history = baseline.history(rep.principal);
    inc.baseline_empty = history == nullptr;
    if (rep.dest_host) inc.first_access = !baseline.seen(rep.principal, *rep.dest_host);

    if (inc.baseline_empty)
        inc.historical_baseline = "No baseline history for " + rep.principal;
    else if (!rep.dest_host)
        inc.historical_baseline = std::to_string(history->seen_hosts.size()) + " hosts in baseline";
    else if (inc.first_access)
        inc.historical_baseline = "No prior access to " + *rep.dest_host;
    else
        inc.historical_baseline =
            "Prior access to " + *rep.dest_host + " since " + format_utc(*baseline.first_seen(rep.principal, *rep.dest_host));

    const std::string auth = ingest::is_unknown(rep.auth_type) ? "Authentication" : rep.auth_type;
    const auto phrase = orientation_phrase(rep.orientation);
    inc.event_summary = auth + (phrase.empty() ? "" : " " + phrase) + " (" + rep.outcome + ")";

    std::set<std::string> flags;
    const bool tgt = std::any_of(cluster.members.begin(), cluster.members.end(), [](const NormalizedAlert& m) {
        return m.orientation == "TGT" || m.canonical_event_type == "auth.kerberos_tgt_request";
    });
    if (tgt && rep.dest_host && inc.first_access) flags.insert("unusual-TGT-request");
    if (inc.target_host && inc.target_host->criticality && inc.user.privilege_tier &&
        *inc.target_host->criticality >= config.cross_tier_min_criticality &&
        *inc.user.privilege_tier >= config.cross_tier_min_user_tier)
        flags.insert("cross-tier-access");
    if (!inc.user.resolved || !inc.source_host.resolved || (inc.target_host && !inc.target_host->resolved))
        flags.insert("unknown-entity");
    if (types.count("auth.repeated_failure")) flags.insert("repeated-failure");
    if (types.count("auth.short_interval_lateral_move")) flags.insert("lateral-burst");
    if (types.count("auth.cross_domain_access")) flags.insert("cross-domain");
    if (types.count("auth.geo_change")) flags.insert("geo-change");
    for (const auto& f : flag_vocabulary())
        if (flags.count(f)) inc.flags.push_back(f);
    return inc;
}

IncidentObject enrich(const AlertCluster& cluster, const knowledge::KnowledgeStore& store,
                      const ingest::Baseline& baseline, std::string incident_id, const EnrichConfig& config) {
    std::shared_ptr<const knowledge::KnowledgeState> state;
    try {
        state = store.snapshot();
    } catch (const knowledge::StoreUnavailable& e) {
        throw EnrichmentError(e.what(), true);
    }
    return enrich(cluster, *state, baseline, std::move(incident_id), config);
}

json to_json(const IncidentObject& inc) {
    json j;
    j["incident_id"] = inc.incident_id;
    j["user"] = context_json(inc.user);
    j["source_host"] = context_json(inc.source_host);
    j["target_host"] = inc.target_host ? context_json(*inc.target_host) : json(nullptr);
    j["historical_baseline"] = inc.historical_baseline;
    j["event_type"] = inc.event_summary;
    j["flags"] = inc.flags;
    j["event_types"] = inc.event_types;
    j["member_alert_ids"] = inc.member_alert_ids;
    j["outcome"] = inc.outcome;
    j["first_access"] = inc.first_access;
    j["baseline_empty"] = inc.baseline_empty;
    j["max_severity"] = inc.max_severity;
    j["created_at"] = format_utc(inc.created_at);
    j["created_at_epoch"] = inc.created_at;
    j["knowledge_version"] = inc.knowledge_version;
    return j;
}

IncidentObject incident_from_json(const json& j) {
    IncidentObject inc;
    inc.incident_id = j.at("incident_id").get<std::string>();
    inc.user = context_from(j.at("user"));
    inc.source_host = context_from(j.at("source_host"));
    if (!j.at("target_host").is_null()) inc.target_host = context_from(j.at("target_host"));
    inc.historical_baseline = j.value("historical_baseline", std::string{});
    inc.event_summary = j.value("event_type", std::string{});
    inc.flags = j.value("flags", std::vector<std::string>{});
    inc.event_types = j.value("event_types", std::vector<std::string>{});
    inc.member_alert_ids = j.value("member_alert_ids", std::vector<std::string>{});
    inc.outcome = j.value("outcome", std::string{});
    inc.first_access = j.value("first_access", false);
    inc.baseline_empty = j.value("baseline_empty", false);
    inc.max_severity = j.value("max_severity", 0);
    inc.created_at = j.value("created_at_epoch", Timestamp{0});
    inc.knowledge_version = j.value("knowledge_version", std::uint64_t{0});
    return inc;
}

}  // namespace agentsoc::perception
