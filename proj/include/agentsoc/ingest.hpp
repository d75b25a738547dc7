#pragma once

#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "agentsoc/common.hpp"

namespace agentsoc::ingest {

enum class Outcome { Success, Failure };

struct AuthEvent {
    Timestamp time = 0;
    std::string source_user;  // user@domain
    std::string dest_user;
    std::string source_host;
    std::string dest_host;
    std::string auth_type;    // Kerberos, NTLM, "?" ...
    std::string logon_type;
    std::string orientation;  // LogOn, LogOff, TGT, TGS, AuthMap
    Outcome outcome = Outcome::Success;
    // Optional tenth field; LANL data never carries it.
    std::optional<std::string> location;
    std::size_t line = 0;

    bool operator==(const AuthEvent&) const = default;
};

// "user@domain" -> "user"; strings without '@' are returned unchanged.
std::string user_part(std::string_view principal);
std::string domain_part(std::string_view principal);
bool is_unknown(std::string_view token);

struct ParseResult {
    std::vector<AuthEvent> events;
    std::vector<ParseError> skipped;
};

// Strict mode throws the first ParseError; lenient mode collects them.
ParseResult parse_auth_events(std::istream& in, bool strict = true);
ParseResult parse_auth_events(std::string_view text, bool strict = true);
AuthEvent parse_auth_line(std::string_view line, std::size_t line_no);
std::string serialize_event(const AuthEvent& e);

// Per-user behavioural memory built from a training stream.
struct UserHistory {
    std::set<std::string> seen_hosts;
    std::deque<Timestamp> recent_failures;
    std::size_t failure_count = 0;  // total failures observed
    Timestamp last_time = 0;
    std::string last_source_host;
    std::optional<std::string> last_location;
    Timestamp last_location_time = 0;
};

class Baseline {
public:
    explicit Baseline(Timestamp failure_window = 300) : failure_window_(failure_window) {}

    void observe(const AuthEvent& e);
    // Associative: set union, counter max, earliest first-seen.
    void merge(const Baseline& other);

    bool has_user(const std::string& user) const { return users_.count(user) != 0; }
    bool seen(const std::string& user, const std::string& host) const;
    const std::set<std::string>& seen_hosts(const std::string& user) const;
    const UserHistory* history(const std::string& user) const;
    std::optional<Timestamp> first_seen(const std::string& user, const std::string& host) const;
    Timestamp failure_window() const { return failure_window_; }
    bool empty() const { return users_.empty(); }
    const std::map<std::string, UserHistory>& users() const { return users_; }

private:
    Timestamp failure_window_;
    std::map<std::string, UserHistory> users_;
    std::map<std::pair<std::string, std::string>, Timestamp> first_seen_;
};

// Keys are user identities without the domain part.
Baseline build_baseline(std::vector<AuthEvent> events, Timestamp failure_window = 300);

// Stable sort by time; ties keep input order.
void sort_events(std::vector<AuthEvent>& events);

enum class AlertKind {
    CrossDomainAccess,
    RepeatedFailure,
    GeoChange,
    ShortIntervalLateralMove,
    FirstTimeHostAccess,
    CrossTierAccess,
};

std::string to_string(AlertKind kind);
AlertKind alert_kind_from_string(std::string_view s);

struct RawAlert {
    std::string alert_id;
    AlertKind kind = AlertKind::FirstTimeHostAccess;
    std::vector<AuthEvent> triggering_events;
    int severity = 1;
    Timestamp detected_at = 0;

    bool operator==(const RawAlert&) const = default;
};

struct DetectionConfig {
    int failure_threshold = 5;        // N
    Timestamp failure_window = 300;   // W seconds
    int lateral_hosts = 3;            // k
    Timestamp lateral_window = 300;   // T seconds
    Timestamp geo_window = 3600;      // location change inside this interval is suspicious
    std::map<AlertKind, int> severity{
        {AlertKind::FirstTimeHostAccess, 6},      {AlertKind::CrossTierAccess, 8},
        {AlertKind::RepeatedFailure, 5},          {AlertKind::ShortIntervalLateralMove, 7},
        {AlertKind::CrossDomainAccess, 5},        {AlertKind::GeoChange, 6},
    };
    // Tier annotations; CrossTierAccess is evaluated only for annotated pairs.
    std::map<std::string, int> host_criticality;
    std::map<std::string, int> user_tier;
    int cross_tier_min_criticality = 8;
    int cross_tier_min_user_tier = 2;
    std::string alert_prefix = "ALR";

    void validate() const;
};

std::vector<RawAlert> detect_anomalies(const std::vector<AuthEvent>& events, const Baseline& baseline,
                                       const DetectionConfig& config);

json to_json(const AuthEvent& e);
AuthEvent auth_event_from_json(const json& j);
json to_json(const RawAlert& a);
RawAlert raw_alert_from_json(const json& j);
// One compact JSON object per line.
std::string alerts_to_jsonl(const std::vector<RawAlert>& alerts);

}  // namespace agentsoc::ingest
