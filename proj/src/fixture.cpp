#include "agentsoc/fixture.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "agentsoc/bundled_data.hpp"

namespace agentsoc::fixture {

using knowledge::Edge;
using knowledge::EdgeKind;
using knowledge::EntityNode;
using knowledge::NodeKind;

namespace {

constexpr const char* kDomain = "CORP";

struct HostDef {
    const char* id;
    const char* role;
    const char* department;
    int criticality;
    int tier;  // 0 = none
    const char* tags;
};

const std::vector<HostDef>& host_defs() {
    static const std::vector<HostDef> defs{
        {"ws-fin-27", "Finance workstation", "Finance", 4, 0, ""},
        {"ws-fin-12", "Finance workstation", "Finance", 4, 0, ""},
        {"ws-fin-31", "Finance workstation", "Finance", 4, 0, ""},
        {"ws-hr-04", "HR workstation", "HR", 3, 0, ""},
        {"ws-hr-09", "HR workstation", "HR", 3, 0, ""},
        {"ws-eng-15", "Engineering workstation", "Engineering", 4, 0, ""},
        {"ws-eng-22", "Engineering workstation", "Engineering", 4, 0, ""},
        {"ws-eng-40", "Engineering workstation", "Engineering", 4, 0, ""},
        {"ws-sales-11", "Sales laptop", "Sales", 3, 0, ""},
        {"ws-sales-19", "Sales laptop", "Sales", 3, 0, ""},
        {"ws-it-02", "Admin workstation", "IT", 6, 0, ""},
        {"ws-it-07", "Admin workstation", "IT", 6, 0, ""},
        {"srv-fin-03", "Finance DB", "Finance", 9, 0, "crown-jewel"},
        {"srv-fin-08", "Finance reporting", "Finance", 7, 0, ""},
        {"srv-hr-01", "HR records", "HR", 8, 0, "crown-jewel"},
        {"srv-eng-05", "Build server", "Engineering", 6, 0, ""},
        {"fs-01", "File server", "IT", 5, 0, ""},
        {"web-01", "Intranet web", "IT", 6, 0, ""},
        {"mail-01", "Mail gateway", "IT", 7, 0, ""},
        {"jump-01", "Admin jump host", "IT", 8, 1, "admin"},
        {"dc-01", "Domain controller", "IT", 10, 1, "tier0-critical"},
        {"dc-02", "Domain controller", "IT", 10, 1, "tier0-critical"},
    };
    return defs;
}

struct UserDef {
    const char* id;
    const char* department;
    const char* role;
    int tier;
    const char* group;
    const char* session_host;
    const char* mfa;
};

const std::vector<UserDef>& user_defs() {
    static const std::vector<UserDef> defs{
        {"user123", "Finance", "Finance analyst", 2, "grp-finance", "ws-fin-27", "not-enforced"},
        {"user204", "Finance", "Finance analyst", 2, "grp-finance", "ws-fin-12", "enforced"},
        {"user311", "Finance", "Accountant", 2, "grp-finance", "ws-fin-31", "enforced"},
        {"user118", "HR", "HR specialist", 2, "grp-hr", "ws-hr-04", "enforced"},
        {"user402", "HR", "HR specialist", 2, "grp-hr", "ws-hr-09", "enforced"},
        {"user640", "HR", "Recruiter", 3, "grp-hr", "ws-hr-09", "not-enforced"},
        {"user150", "Engineering", "Engineer", 2, "grp-eng", "ws-eng-15", "enforced"},
        {"user233", "Engineering", "Engineer", 2, "grp-eng", "ws-eng-22", "enforced"},
        {"user287", "Engineering", "Engineer", 2, "grp-eng", "ws-eng-40", "enforced"},
        {"user512", "Engineering", "Contractor", 3, "grp-eng", "ws-eng-40", "not-enforced"},
        {"user330", "Sales", "Account manager", 3, "grp-sales", "ws-sales-11", "enforced"},
        {"user355", "Sales", "Account manager", 3, "grp-sales", "ws-sales-19", "enforced"},
        {"user777", "Sales", "Sales intern", 3, "grp-sales", "ws-sales-19", "not-enforced"},
        {"adm-it-01", "IT", "IT administrator", 1, "grp-it-admins", "ws-it-02", "enforced"},
        {"adm-it-02", "IT", "IT administrator", 1, "grp-it-admins", "ws-it-07", "enforced"},
        {"da-01", "IT", "Domain administrator", 1, "grp-domain-admins", "ws-it-02", "enforced"},
        {"svc-backup", "IT", "Backup service account", 1, "", "fs-01", "exempt"},
        {"svc-sql", "Finance", "SQL service account", 1, "", "srv-fin-08", "exempt"},
    };
    return defs;
}

// Remote destinations each principal touches during routine work. Tier>=2 users stay
// below criticality 8 so only deliberate accesses trip the cross-tier rule.
std::vector<std::string> routine_destinations(const UserDef& u, std::mt19937_64& rng) {
    const std::string id = u.id;
    if (id == "user123") return {"fs-01", "mail-01"};
    if (id == "svc-sql") return {"srv-fin-03"};
    if (id == "svc-backup") return {"srv-fin-08"};
    if (id == "adm-it-01" || id == "adm-it-02") return {"jump-01", "fs-01"};
    if (id == "da-01") return {"jump-01", "dc-01"};
    std::vector<std::string> pool;
    const std::string dept = u.department;
    if (dept == "Finance") pool = {"fs-01", "srv-fin-08", "mail-01", "web-01"};
    if (dept == "HR") pool = {"fs-01", "mail-01", "web-01"};
    if (dept == "Engineering") pool = {"srv-eng-05", "fs-01", "web-01"};
    if (dept == "Sales") pool = {"web-01", "mail-01"};
    std::vector<std::string> out;
    while (out.size() < 2 && !pool.empty()) {
        const auto i = rng() % pool.size();
        out.push_back(pool[i]);
        pool.erase(pool.begin() + static_cast<long>(i));
    }
    std::sort(out.begin(), out.end());
    return out;
}

EntityNode make_node(std::string id, NodeKind kind, knowledge::Attributes attrs, std::optional<int> crit,
                     std::optional<int> tier) {
    EntityNode n;
    n.id = std::move(id);
    n.kind = kind;
    n.attributes = std::move(attrs);
    n.criticality = crit;
    n.privilege_tier = tier;
    return n;
}

Edge edge(std::string from, std::string to, EdgeKind kind, std::string protocol = {}) {
    Edge e;
    e.from = std::move(from);
    e.to = std::move(to);
    e.kind = kind;
    e.protocol = std::move(protocol);
    return e;
}

double step(std::mt19937_64& rng, int lo, int hi) {
    // multiples of 0.05 in [lo/20, hi/20]
    return static_cast<double>(lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1))) / 20.0;
}

struct Activity {
    std::string user;
    std::string source_host;
    std::string dest_host;
};

std::vector<Activity> routine_plan(std::mt19937_64& rng) {
    std::vector<Activity> plan;
    for (const auto& u : user_defs()) {
        plan.push_back({u.id, u.session_host, u.session_host});
        for (const auto& d : routine_destinations(u, rng)) plan.push_back({u.id, u.session_host, d});
    }
    return plan;
}

ingest::AuthEvent activity_event(const Activity& a, Timestamp t, bool fail, std::mt19937_64& rng) {
    ingest::AuthEvent e;
    e.time = t;
    e.source_user = a.user + "@" + kDomain;
    e.dest_user = e.source_user;
    e.source_host = a.source_host;
    e.dest_host = a.dest_host;
    if (a.source_host == a.dest_host) {
        e.auth_type = rng() % 4 == 0 ? "?" : "Negotiate";
        e.logon_type = "Interactive";
        e.orientation = rng() % 5 == 0 ? "LogOff" : "LogOn";
    } else {
        e.auth_type = rng() % 8 == 0 ? "NTLM" : "Kerberos";
        e.logon_type = "Network";
        e.orientation = e.auth_type == "Kerberos" && rng() % 3 == 0 ? "TGS" : "LogOn";
    }
    e.outcome = fail ? ingest::Outcome::Failure : ingest::Outcome::Success;
    return e;
}

// Walks the plan in rounds; every round visits each activity once in shuffled order.
// The first round is all successes so the training half sees every routine pair.
class RoutineStream {
public:
    RoutineStream(std::vector<Activity> plan, std::mt19937_64& rng) : plan_(std::move(plan)), rng_(rng) {
        reshuffle();
    }

    ingest::AuthEvent next(Timestamp t, unsigned failure_per_mille) {
        if (pos_ == order_.size()) {
            ++round_;
            reshuffle();
        }
        const auto& a = plan_[order_[pos_++]];
        const bool fail = round_ > 0 && rng_() % 1000 < failure_per_mille;
        return activity_event(a, t, fail, rng_);
    }

private:
    void reshuffle() {
        order_.resize(plan_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
        pos_ = 0;
    }

    std::vector<Activity> plan_;
    std::mt19937_64& rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::size_t round_ = 0;
};

void number_lines(std::vector<ingest::AuthEvent>& events) {
    for (std::size_t i = 0; i < events.size(); ++i) events[i].line = i + 1;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

}  // namespace

knowledge::KnowledgeState poc_snapshot(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    knowledge::KnowledgeState s;
    auto& g = s.graph;

    for (const auto& h : host_defs()) {
        int crit = h.criticality;
        // filler workstations vary a little between seeds
        const std::string id = h.id;
        if (id.rfind("ws-", 0) == 0 && id != "ws-fin-27" && id.rfind("ws-it", 0) != 0)
            crit = 2 + static_cast<int>(rng() % 4);
        knowledge::Attributes attrs{{"role", h.role}, {"department", h.department}};
        if (*h.tags) attrs["tags"] = h.tags;
        if (id == "srv-fin-03" || id == "srv-hr-01") attrs["data_classification"] = "regulated";
        g.add_node(make_node(id, NodeKind::Host, std::move(attrs), crit,
                             h.tier ? std::optional<int>(h.tier) : std::nullopt));
    }
    const std::vector<std::pair<const char*, int>> groups{{"grp-finance", 2},   {"grp-hr", 2},
                                                          {"grp-eng", 2},       {"grp-sales", 3},
                                                          {"grp-it-admins", 1}, {"grp-domain-admins", 1}};
    for (const auto& [id, tier] : groups) g.add_node(make_node(id, NodeKind::Group, {}, std::nullopt, tier));
    for (const auto& u : user_defs())
        g.add_node(make_node(u.id, NodeKind::User,
                             {{"role", u.role}, {"department", u.department}, {"mfa", u.mfa}, {"domain", kDomain}},
                             std::nullopt, u.tier));

    struct ServiceDef {
        const char* id;
        const char* role;
        const char* host;
        const char* account;
        int crit;
    };
    const std::vector<ServiceDef> services{
        {"svc-findb-sql", "Finance SQL instance", "srv-fin-03", "svc-sql", 9},
        {"svc-backup-agent", "Backup agent", "fs-01", "svc-backup", 5},
        {"svc-hr-portal", "HR portal", "srv-hr-01", "svc-sql", 8},
        {"svc-build-agent", "CI build agent", "srv-eng-05", "user150", 6},
    };
    for (const auto& sv : services)
        g.add_node(make_node(sv.id, NodeKind::Service, {{"role", sv.role}, {"host", sv.host}, {"account", sv.account}},
                             sv.crit, std::nullopt));

    for (const auto& u : user_defs()) {
        if (*u.group) g.add_edge(edge(u.id, u.group, EdgeKind::MemberOf));
        g.add_edge(edge(u.id, u.session_host, EdgeKind::HasSessionOn));
    }
    g.add_edge(edge("grp-domain-admins", "grp-it-admins", EdgeKind::MemberOf));
    g.add_edge(edge("svc-sql", "srv-fin-03", EdgeKind::HasSessionOn));

    const std::vector<std::pair<const char*, std::vector<const char*>>> can_auth{
        {"grp-finance", {"srv-fin-03", "srv-fin-08", "fs-01", "web-01", "mail-01"}},
        {"grp-hr", {"srv-hr-01", "fs-01", "web-01", "mail-01"}},
        {"grp-eng", {"srv-eng-05", "fs-01", "web-01", "mail-01"}},
        {"grp-sales", {"web-01", "mail-01"}},
        {"svc-sql", {"srv-fin-03", "srv-fin-08", "srv-hr-01"}},
        {"svc-backup", {"fs-01", "srv-fin-08"}},
    };
    for (const auto& [from, tos] : can_auth)
        for (const auto* to : tos) g.add_edge(edge(from, to, EdgeKind::CanAuthTo));
    const std::vector<std::pair<const char*, std::vector<const char*>>> admin_of{
        {"grp-it-admins", {"jump-01", "fs-01", "web-01", "mail-01", "srv-eng-05"}},
        {"grp-domain-admins", {"dc-01", "dc-02"}},
        {"svc-backup", {"fs-01"}},
    };
    for (const auto& [from, tos] : admin_of)
        for (const auto* to : tos) g.add_edge(edge(from, to, EdgeKind::AdminOf));

    const std::vector<const char*> servers{"srv-fin-03", "srv-fin-08", "srv-hr-01", "srv-eng-05",
                                           "fs-01",      "web-01",     "mail-01"};
    for (const auto& h : host_defs()) {
        const std::string id = h.id;
        if (id.rfind("ws-", 0) != 0) continue;
        g.add_edge(edge(id, "fs-01", EdgeKind::Reachable, "SMB"));
        g.add_edge(edge(id, "web-01", EdgeKind::Reachable, "HTTPS"));
        g.add_edge(edge(id, "mail-01", EdgeKind::Reachable, "HTTPS"));
        g.add_edge(edge(id, "dc-01", EdgeKind::Reachable, "Kerberos"));
        g.add_edge(edge(id, "dc-02", EdgeKind::Reachable, "Kerberos"));
        const std::string dept = h.department;
        if (dept == "Finance") {
            g.add_edge(edge(id, "srv-fin-03", EdgeKind::Reachable, "SMB"));
            g.add_edge(edge(id, "srv-fin-08", EdgeKind::Reachable, "SMB"));
        } else if (dept == "HR") {
            g.add_edge(edge(id, "srv-hr-01", EdgeKind::Reachable, "SMB"));
        } else if (dept == "Engineering") {
            g.add_edge(edge(id, "srv-eng-05", EdgeKind::Reachable, "SMB"));
            g.add_edge(edge(id, "srv-eng-05", EdgeKind::Reachable, "SSH"));
        } else if (dept == "IT") {
            g.add_edge(edge(id, "jump-01", EdgeKind::Reachable, "RDP"));
        }
    }
    for (const auto* srv : servers) {
        g.add_edge(edge("jump-01", srv, EdgeKind::Reachable, "RDP"));
        g.add_edge(edge(srv, "dc-01", EdgeKind::Reachable, "Kerberos"));
        g.add_edge(edge(srv, "dc-02", EdgeKind::Reachable, "Kerberos"));
    }
    g.add_edge(edge("jump-01", "dc-01", EdgeKind::Reachable, "RDP"));
    g.add_edge(edge("jump-01", "dc-02", EdgeKind::Reachable, "RDP"));
    g.add_edge(edge("jump-01", "dc-01", EdgeKind::Reachable, "Kerberos"));
    g.add_edge(edge("jump-01", "dc-02", EdgeKind::Reachable, "Kerberos"));
    g.add_edge(edge("srv-fin-08", "srv-fin-03", EdgeKind::Reachable, "SQL"));
    g.add_edge(edge("dc-01", "dc-02", EdgeKind::Reachable, "LDAP"));
    g.add_edge(edge("dc-02", "dc-01", EdgeKind::Reachable, "LDAP"));

    for (const auto& [id, node] : g.nodes()) {
        if (node.kind == NodeKind::Group) continue;
        knowledge::ImpactParams p{step(rng, 2, 16), step(rng, 2, 16), step(rng, 2, 16)};
        s.impact_params[id] = p;
    }
    s.impact_params["ws-fin-27"] = {0.10, 0.20, 0.15};
    s.impact_params["user123"] = {0.20, 0.45, 0.25};

    knowledge::PolicyConstraint tier0;
    tier0.id = "pol-tier0-no-isolation";
    tier0.effect = knowledge::PolicyEffect::Forbid;
    tier0.description = "Domain controllers stay online";
    tier0.primitives = {"ISOLATE_HOST", "QUARANTINE_ACCESS"};
    tier0.target_tag = "tier0-critical";
    s.policies.push_back(tier0);

    knowledge::PolicyConstraint priv;
    priv.id = "pol-privileged-account-approval";
    priv.effect = knowledge::PolicyEffect::RequireApproval;
    priv.description = "Changes to tier-1 accounts need an analyst";
    priv.primitives = {"DISABLE_USER", "RESTRICT_PRIVILEGES", "REVOKE_SESSION"};
    priv.target_kinds = {NodeKind::User};
    priv.max_privilege_tier = 1;
    s.policies.push_back(priv);

    knowledge::PolicyConstraint crown;
    crown.id = "pol-crown-jewel-approval";
    crown.effect = knowledge::PolicyEffect::RequireApproval;
    crown.description = "Isolating crown-jewel servers needs an analyst";
    crown.primitives = {"ISOLATE_HOST", "QUARANTINE_ACCESS"};
    crown.min_criticality = 9;
    s.policies.push_back(crown);

    s.catalog = std::make_shared<knowledge::TechniqueCatalog>(knowledge::bundled_catalog());
    s.unmodeled = {"credentials"};
    g.set_version(1);
    s.validate();
    return s;
}

std::vector<ingest::AuthEvent> poc_events(const knowledge::KnowledgeState& snapshot, std::uint64_t seed) {
    (void)snapshot;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    RoutineStream stream(routine_plan(rng), rng);
    std::vector<ingest::AuthEvent> events;
    for (Timestamp t = kPocStart; t < kPocAttackTime - 600; t += 301 + static_cast<Timestamp>(rng() % 300))
        events.push_back(stream.next(t, 20));

    ingest::AuthEvent attack;
    attack.time = kPocAttackTime;
    attack.source_user = "user123@CORP";
    attack.dest_user = "user123@CORP";
    attack.source_host = "ws-fin-27";
    attack.dest_host = "srv-fin-03";
    attack.auth_type = "Kerberos";
    attack.logon_type = "Network";
    attack.orientation = "TGT";
    attack.outcome = ingest::Outcome::Success;
    events.push_back(attack);
    number_lines(events);
    return events;
}

std::vector<ingest::AuthEvent> lanl_sample(const knowledge::KnowledgeState& snapshot, std::uint64_t seed,
                                           std::size_t count) {
    std::mt19937_64 rng(seed * 6364136223846793005ULL + 1442695040888963407ULL);
    std::vector<std::string> hosts;
    std::vector<std::string> users;
    for (const auto& [id, node] : snapshot.graph.nodes()) {
        if (node.kind == NodeKind::Host) hosts.push_back(id);
        if (node.kind == NodeKind::User && id.rfind("user", 0) == 0) users.push_back(id);
    }
    const auto session_of = [&](const std::string& user) {
        const auto sessions = snapshot.graph.out_edges(user, EdgeKind::HasSessionOn);
        return sessions.empty() ? hosts.front() : sessions.front().to;
    };

    std::vector<ingest::AuthEvent> anomalies;
    const auto remote_event = [&](const std::string& user, const std::string& src, const std::string& dst, Timestamp t,
                                  bool fail) {
        Activity a{user, src, dst};
        auto e = activity_event(a, t, fail, rng);
        return e;
    };
    // Rough length of the routine stream; anomalies land in its later half.
    const Timestamp span = static_cast<Timestamp>(count) * 9 / 2;
    const auto anomaly_time = [&]() { return span * 3 / 5 + static_cast<Timestamp>(rng() % std::uint64_t(span / 3)); };
    const std::size_t budget = count / 50;
    while (anomalies.size() < budget) {
        const auto& user = users[rng() % users.size()];
        const auto src = session_of(user);
        const Timestamp t = anomaly_time();
        switch (rng() % 5) {
            case 0:  // lateral burst over three hosts
                for (int i = 0; i < 3; ++i) {
                    std::string dst;
                    do dst = hosts[rng() % hosts.size()];
                    while (dst == src);
                    anomalies.push_back(remote_event(user, src, dst, t + i * 20, false));
                }
                break;
            case 1: {  // password spraying against one server
                const auto dst = hosts[rng() % hosts.size()];
                for (int i = 0; i < 6; ++i) anomalies.push_back(remote_event(user, src, dst, t + i * 15, true));
                break;
            }
            case 2: {  // first-time access, often to a high-value host
                std::string dst;
                do dst = hosts[rng() % hosts.size()];
                while (dst == src);
                auto e = remote_event(user, src, dst, t, false);
                if (rng() % 2 == 0) {
                    e.auth_type = "Kerberos";
                    e.orientation = "TGT";
                }
                anomalies.push_back(e);
                break;
            }
            case 3: {  // cross-domain authentication
                auto e = remote_event(user, src, "fs-01", t, false);
                e.dest_user = user + "@PARTNER";
                anomalies.push_back(e);
                break;
            }
            default: {  // principal the knowledge graph has never heard of
                const auto ghost = "U" + std::to_string(9000 + rng() % 900);
                const auto ghost_host = "C" + std::to_string(17000 + rng() % 900);
                anomalies.push_back(remote_event(ghost, ghost_host, hosts[rng() % hosts.size()], t, false));
                break;
            }
        }
    }
    if (anomalies.size() > count) anomalies.resize(count);

    RoutineStream stream(routine_plan(rng), rng);
    std::vector<ingest::AuthEvent> events;
    Timestamp t = 1;
    while (events.size() + anomalies.size() < count) {
        events.push_back(stream.next(t, 10));
        t += static_cast<Timestamp>(rng() % 10);
    }
    events.insert(events.end(), anomalies.begin(), anomalies.end());
    ingest::sort_events(events);
    number_lines(events);
    return events;
}

std::string events_text(const std::vector<ingest::AuthEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += ingest::serialize_event(e);
        out += '\n';
    }
    return out;
}

void write_fixture(const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    const auto snapshot = poc_snapshot(seed);
    knowledge::save_snapshot(snapshot, dir / "snapshot.json");
    write_text(dir / "poc_events.txt", events_text(poc_events(snapshot, seed)));
    write_text(dir / "lanl_sample.txt", events_text(lanl_sample(snapshot, seed)));
    write_text(dir / "techniques.json", bundled::techniques_json());
    write_text(dir / "technique_mapping.json", bundled::technique_mapping_json());
    write_text(dir / "rsem_calibration.json", bundled::rsem_calibration_json());
}

}  // namespace agentsoc::fixture
