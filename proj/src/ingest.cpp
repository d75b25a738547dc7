#include "agentsoc/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace agentsoc::ingest {

std::string user_part(std::string_view principal) {
    const auto at = principal.find('@');
    return std::string(at == std::string_view::npos ? principal : principal.substr(0, at));
}

std::string domain_part(std::string_view principal) {
    const auto at = principal.find('@');
    return at == std::string_view::npos ? std::string("?") : std::string(principal.substr(at + 1));
}

bool is_unknown(std::string_view token) { return token.empty() || token == "?"; }

AuthEvent parse_auth_line(std::string_view raw, std::size_t line_no) {
    std::string line = trim(raw);
    auto fields = split(line, ',');
    if (fields.size() != 9 && fields.size() != 10)
        throw ParseError(line_no, "expected 9 fields, got " + std::to_string(fields.size()));
    for (auto& f : fields) f = trim(f);

    AuthEvent e;
    e.line = line_no;
    const std::string& t = fields[0];
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), e.time);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
        throw ParseError(line_no, "non-integer time '" + t + "'");
    if (e.time < 0) throw ParseError(line_no, "negative time");
    e.source_user = fields[1];
    e.dest_user = fields[2];
    e.source_host = fields[3];
    e.dest_host = fields[4];
    e.auth_type = fields[5];
    e.logon_type = fields[6];
    e.orientation = fields[7];
    if (fields[8] == "Success")
        e.outcome = Outcome::Success;
    else if (fields[8] == "Fail" || fields[8] == "Failure")
        e.outcome = Outcome::Failure;
    else
        throw ParseError(line_no, "unknown outcome '" + fields[8] + "'");
    if (e.source_user.empty() || e.source_host.empty())
        throw ParseError(line_no, "empty source user or host");
    if (fields.size() == 10 && !is_unknown(fields[9])) e.location = fields[9];
    return e;
}

ParseResult parse_auth_events(std::istream& in, bool strict) {
    ParseResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            result.events.push_back(parse_auth_line(line, line_no));
        } catch (const ParseError& err) {
            if (strict) throw;
            result.skipped.push_back(err);
        }
    }
    return result;
}

ParseResult parse_auth_events(std::string_view text, bool strict) {
    std::istringstream in{std::string(text)};
    return parse_auth_events(in, strict);
}

std::string serialize_event(const AuthEvent& e) {
    std::string out = std::to_string(e.time);
    for (const auto* f : {&e.source_user, &e.dest_user, &e.source_host, &e.dest_host, &e.auth_type,
                          &e.logon_type, &e.orientation}) {
        out += ',';
        out += *f;
    }
    out += e.outcome == Outcome::Success ? ",Success" : ",Fail";
    if (e.location) out += "," + *e.location;
    return out;
}

void Baseline::observe(const AuthEvent& e) {
    const std::string user = user_part(e.source_user);
    auto& h = users_[user];
    if (!is_unknown(e.dest_host) && e.dest_host != e.source_host) {
        h.seen_hosts.insert(e.dest_host);
        first_seen_.try_emplace({user, e.dest_host}, e.time);
    }
    if (e.outcome == Outcome::Failure) {
        ++h.failure_count;
        h.recent_failures.push_back(e.time);
    }
    while (!h.recent_failures.empty() && e.time - h.recent_failures.front() > failure_window_)
        h.recent_failures.pop_front();
    h.last_time = std::max(h.last_time, e.time);
    h.last_source_host = e.source_host;
    if (e.location) {
        h.last_location = e.location;
        h.last_location_time = e.time;
    }
}

void Baseline::merge(const Baseline& other) {
    failure_window_ = std::max(failure_window_, other.failure_window_);
    for (const auto& [user, theirs] : other.users_) {
        auto& mine = users_[user];
        mine.seen_hosts.insert(theirs.seen_hosts.begin(), theirs.seen_hosts.end());
        mine.failure_count = std::max(mine.failure_count, theirs.failure_count);
        std::deque<Timestamp> joined;
        std::merge(mine.recent_failures.begin(), mine.recent_failures.end(), theirs.recent_failures.begin(),
                   theirs.recent_failures.end(), std::back_inserter(joined));
        mine.recent_failures = std::move(joined);
        if (theirs.last_time > mine.last_time) {
            mine.last_time = theirs.last_time;
            mine.last_source_host = theirs.last_source_host;
        }
        if (theirs.last_location && (!mine.last_location || theirs.last_location_time > mine.last_location_time)) {
            mine.last_location = theirs.last_location;
            mine.last_location_time = theirs.last_location_time;
        }
    }
    for (const auto& [key, t] : other.first_seen_) {
        auto [it, inserted] = first_seen_.try_emplace(key, t);
        if (!inserted) it->second = std::min(it->second, t);
    }
}

bool Baseline::seen(const std::string& user, const std::string& host) const {
    const auto it = users_.find(user);
    return it != users_.end() && it->second.seen_hosts.count(host) != 0;
}

const std::set<std::string>& Baseline::seen_hosts(const std::string& user) const {
    static const std::set<std::string> empty;
    const auto it = users_.find(user);
    return it == users_.end() ? empty : it->second.seen_hosts;
}

const UserHistory* Baseline::history(const std::string& user) const {
    const auto it = users_.find(user);
    return it == users_.end() ? nullptr : &it->second;
}

std::optional<Timestamp> Baseline::first_seen(const std::string& user, const std::string& host) const {
    const auto it = first_seen_.find({user, host});
    if (it == first_seen_.end()) return std::nullopt;
    return it->second;
}

void sort_events(std::vector<AuthEvent>& events) {
    std::stable_sort(events.begin(), events.end(),
                     [](const AuthEvent& a, const AuthEvent& b) { return a.time < b.time; });
}

Baseline build_baseline(std::vector<AuthEvent> events, Timestamp failure_window) {
    sort_events(events);
    Baseline b(failure_window);
    for (const auto& e : events) b.observe(e);
    return b;
}

std::string to_string(AlertKind kind) {
    switch (kind) {
        case AlertKind::CrossDomainAccess: return "CrossDomainAccess";
        case AlertKind::RepeatedFailure: return "RepeatedFailure";
        case AlertKind::GeoChange: return "GeoChange";
        case AlertKind::ShortIntervalLateralMove: return "ShortIntervalLateralMove";
        case AlertKind::FirstTimeHostAccess: return "FirstTimeHostAccess";
        case AlertKind::CrossTierAccess: return "CrossTierAccess";
    }
    return "?";
}

AlertKind alert_kind_from_string(std::string_view s) {
    for (auto k : {AlertKind::CrossDomainAccess, AlertKind::RepeatedFailure, AlertKind::GeoChange,
                   AlertKind::ShortIntervalLateralMove, AlertKind::FirstTimeHostAccess, AlertKind::CrossTierAccess})
        if (to_string(k) == s) return k;
    throw ValidationError("unknown alert kind '" + std::string(s) + "'");
}

void DetectionConfig::validate() const {
    if (failure_threshold < 1) throw ConfigError("ingest.failure_threshold must be >= 1");
    if (failure_window <= 0) throw ConfigError("ingest.failure_window must be > 0");
    if (lateral_hosts < 2) throw ConfigError("ingest.lateral_hosts must be >= 2");
    if (lateral_window <= 0) throw ConfigError("ingest.lateral_window must be > 0");
    if (geo_window <= 0) throw ConfigError("ingest.geo_window must be > 0");
    for (const auto& [kind, sev] : severity)
        if (sev < 1 || sev > 10) throw ConfigError("severity for " + to_string(kind) + " outside [1,10]");
}

namespace {

struct DetectorState {
    std::deque<AuthEvent> failures;  // failure events since the last RepeatedFailure alert
    std::deque<Timestamp> seeded_failures;
    std::deque<AuthEvent> moves;     // successful remote authentications inside T
};

}  // namespace

std::vector<RawAlert> detect_anomalies(const std::vector<AuthEvent>& input, const Baseline& baseline,
                                       const DetectionConfig& config) {
    config.validate();
    std::vector<AuthEvent> events = input;
    sort_events(events);

    Baseline state = baseline;
    std::map<std::string, DetectorState> detectors;
    for (const auto& [user, hist] : baseline.users())
        detectors[user].seeded_failures = hist.recent_failures;

    std::vector<RawAlert> alerts;
    auto emit = [&](AlertKind kind, std::vector<AuthEvent> trigger, Timestamp at) {
        char id[48];
        std::snprintf(id, sizeof id, "%s-%06zu", config.alert_prefix.c_str(), alerts.size() + 1);
        RawAlert a;
        a.alert_id = id;
        a.kind = kind;
        a.triggering_events = std::move(trigger);
        a.severity = config.severity.count(kind) ? config.severity.at(kind) : 5;
        a.detected_at = at;
        alerts.push_back(std::move(a));
    };

    for (const auto& e : events) {
        const std::string user = user_part(e.source_user);
        auto& det = detectors[user];
        const bool remote = !is_unknown(e.dest_host) && e.dest_host != e.source_host;

        if (!is_unknown(e.dest_user)) {
            const auto src_dom = domain_part(e.source_user);
            const auto dst_dom = domain_part(e.dest_user);
            if (!is_unknown(src_dom) && !is_unknown(dst_dom) && src_dom != dst_dom)
                emit(AlertKind::CrossDomainAccess, {e}, e.time);
        }

        if (e.outcome == Outcome::Failure) {
            det.failures.push_back(e);
            while (!det.failures.empty() && e.time - det.failures.front().time > config.failure_window)
                det.failures.pop_front();
            while (!det.seeded_failures.empty() && e.time - det.seeded_failures.front() > config.failure_window)
                det.seeded_failures.pop_front();
            if (det.failures.size() + det.seeded_failures.size() >= std::size_t(config.failure_threshold)) {
                emit(AlertKind::RepeatedFailure, {det.failures.begin(), det.failures.end()}, e.time);
                det.failures.clear();
                det.seeded_failures.clear();
            }
        }

        if (e.location) {
            const UserHistory* h = state.history(user);
            if (h && h->last_location && *h->last_location != *e.location &&
                e.time - h->last_location_time <= config.geo_window)
                emit(AlertKind::GeoChange, {e}, e.time);
        }

        if (remote && e.outcome == Outcome::Success) {
            det.moves.push_back(e);
            while (!det.moves.empty() && e.time - det.moves.front().time > config.lateral_window)
                det.moves.pop_front();
            std::set<std::string> hosts;
            for (const auto& m : det.moves) hosts.insert(m.dest_host);
            if (hosts.size() >= std::size_t(config.lateral_hosts)) {
                emit(AlertKind::ShortIntervalLateralMove, {det.moves.begin(), det.moves.end()}, e.time);
                det.moves.clear();
            }
        }

        if (remote && !state.seen(user, e.dest_host)) emit(AlertKind::FirstTimeHostAccess, {e}, e.time);

        if (remote && e.outcome == Outcome::Success) {
            const auto crit = config.host_criticality.find(e.dest_host);
            const auto tier = config.user_tier.find(user);
            if (crit != config.host_criticality.end() && tier != config.user_tier.end() &&
                crit->second >= config.cross_tier_min_criticality && tier->second >= config.cross_tier_min_user_tier)
                emit(AlertKind::CrossTierAccess, {e}, e.time);
        }

        state.observe(e);
    }
    return alerts;
}

json to_json(const AuthEvent& e) {
    json j;
    j["line"] = e.line;
    j["time"] = e.time;
    j["source_user"] = e.source_user;
    j["dest_user"] = e.dest_user;
    j["source_host"] = e.source_host;
    j["dest_host"] = e.dest_host;
    j["auth_type"] = e.auth_type;
    j["logon_type"] = e.logon_type;
    j["orientation"] = e.orientation;
    j["outcome"] = e.outcome == Outcome::Success ? "Success" : "Failure";
    if (e.location) j["location"] = *e.location;
    return j;
}

AuthEvent auth_event_from_json(const json& j) {
    AuthEvent e;
    e.line = j.value("line", std::size_t{0});
    e.time = j.at("time").get<Timestamp>();
    e.source_user = j.at("source_user").get<std::string>();
    e.dest_user = j.value("dest_user", std::string("?"));
    e.source_host = j.at("source_host").get<std::string>();
    e.dest_host = j.value("dest_host", std::string("?"));
    e.auth_type = j.value("auth_type", std::string("?"));
    e.logon_type = j.value("logon_type", std::string("?"));
    e.orientation = j.value("orientation", std::string("?"));
    const auto outcome = j.value("outcome", std::string("Success"));
    e.outcome = outcome == "Success" ? Outcome::Success : Outcome::Failure;
    if (j.contains("location")) e.location = j.at("location").get<std::string>();
    return e;
}

json to_json(const RawAlert& a) {
    json j;
    j["alert_id"] = a.alert_id;
    j["kind"] = to_string(a.kind);
    j["severity"] = a.severity;
    j["detected_at"] = a.detected_at;
    j["triggering_events"] = json::array();
    for (const auto& e : a.triggering_events) j["triggering_events"].push_back(to_json(e));
    return j;
}

RawAlert raw_alert_from_json(const json& j) {
    RawAlert a;
    a.alert_id = j.at("alert_id").get<std::string>();
    a.kind = alert_kind_from_string(j.at("kind").get<std::string>());
    a.severity = j.at("severity").get<int>();
    a.detected_at = j.at("detected_at").get<Timestamp>();
    for (const auto& e : j.at("triggering_events")) a.triggering_events.push_back(auth_event_from_json(e));
    if (a.triggering_events.empty()) throw ValidationError("alert " + a.alert_id + " has no triggering events");
    return a;
}

std::string alerts_to_jsonl(const std::vector<RawAlert>& alerts) {
    std::string out;
    for (const auto& a : alerts) {
        out += to_json(a).dump();
        out += '\n';
    }
    return out;
}

}  // namespace agentsoc::ingest
