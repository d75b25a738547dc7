#pragma once

// Shared helpers for the test binaries: temp dirs, random generators and brute-force oracles.
// The oracles work on a plain edge list and never call the library's query code.

#include <algorithm>
#include <atomic>
#include <climits>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "agentsoc/fixture.hpp"
#include "agentsoc/knowledge.hpp"
#include "agentsoc/nce.hpp"
#include "agentsoc/perception.hpp"
#include "agentsoc/pipeline.hpp"
#include "agentsoc/primitives.hpp"
#include "agentsoc/rsem.hpp"
#include "agentsoc/sse.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace agentsoc;
using knowledge::EdgeKind;
using knowledge::NodeKind;
using knowledge::PredicateKind;

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("agentsoc-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline bool same_content(const knowledge::EnterpriseGraph& a, const knowledge::EnterpriseGraph& b) {
    return a.nodes() == b.nodes() && a.edges() == b.edges();
}

inline std::size_t count_lines(const fs::path& p) {
    const auto text = read_file(p);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// Shared across test cases; the fixture is deterministic so building it once is fine.
inline const knowledge::KnowledgeState& poc_state() {
    static const auto s = fixture::poc_snapshot();
    return s;
}

inline perception::EntityContext entity(const std::string& id) {
    perception::EntityContext e;
    e.id = id;
    e.resolved = true;
    return e;
}

inline perception::IncidentObject make_incident(const std::string& user, const std::string& source,
                                                const std::optional<std::string>& target) {
    perception::IncidentObject inc;
    inc.incident_id = "INC-T-001";
    inc.user = entity(user);
    inc.source_host = entity(source);
    if (target) inc.target_host = entity(*target);
    return inc;
}

// The incident of the reference scenario as the pipeline builds it.
inline perception::IncidentObject poc_incident() {
    auto inc = make_incident("user123", "ws-fin-27", std::string("srv-fin-03"));
    inc.incident_id = "INC-POC-001";
    inc.user.privilege_tier = 2;
    inc.source_host.criticality = 4;
    inc.target_host->criticality = 9;
    inc.event_types = {"auth.cross_tier_access", "auth.first_time_host_access"};
    inc.flags = {"unusual-TGT-request", "cross-tier-access"};
    inc.first_access = true;
    inc.outcome = "Success";
    inc.created_at = fixture::kPocAttackTime;
    inc.knowledge_version = 1;
    return inc;
}

// Fixture files written once per test binary.
struct FixtureFiles {
    TempDir dir{"fixture"};
    fs::path snapshot, poc, lanl;
    FixtureFiles() {
        fixture::write_fixture(dir.path());
        snapshot = dir / "snapshot.json";
        poc = dir / "poc_events.txt";
        lanl = dir / "lanl_sample.txt";
    }
};

inline const FixtureFiles& fixture_files() {
    static const FixtureFiles f;
    return f;
}

inline config::Config quiet_config(int workers = 2) {
    config::Config c;
    c.pipeline.workers = workers;
    c.validate();
    return c;
}

inline pipeline::BatchResult run_fixture(const fs::path& events, std::optional<fs::path> out = std::nullopt,
                                         config::Config cfg = quiet_config()) {
    pipeline::BatchOptions o;
    o.events = events;
    o.snapshot = fixture_files().snapshot;
    o.out = std::move(out);
    o.config = std::move(cfg);
    return pipeline::run_batch(o);
}

// ---------------------------------------------------------------------------
// Random small graphs

struct RandomWorld {
    knowledge::KnowledgeState state;
    std::vector<std::string> hosts, users, groups, services;
};

inline const std::vector<std::string>& protocols() {
    static const std::vector<std::string> p{"RDP", "SMB", "SSH"};
    return p;
}

// At most `max_nodes` nodes (>= 5), bundled catalog, random unmodeled categories.
inline RandomWorld random_world(std::mt19937_64& rng, int max_nodes = 12) {
    RandomWorld w;
    auto& g = w.state.graph;
    const int nh = 2 + static_cast<int>(rng() % 5);           // 2..6
    const int nu = 1 + static_cast<int>(rng() % 3);           // 1..3
    int rest = max_nodes - nh - nu;
    const int ng = std::min(rest, static_cast<int>(rng() % 3));
    rest -= ng;
    const int ns = std::min(rest, static_cast<int>(rng() % 3));

    const auto maybe_tier = [&](knowledge::EntityNode& n) {
        if (rng() % 2) n.privilege_tier = 1 + static_cast<int>(rng() % 3);
    };
    for (int i = 0; i < nh; ++i) {
        knowledge::EntityNode n{"h" + std::to_string(i), NodeKind::Host, {}, static_cast<int>(rng() % 11), {}};
        if (rng() % 2) n.attributes["cached_credential_tier"] = std::to_string(rng() % 4);
        maybe_tier(n);
        g.add_node(n);
        w.hosts.push_back(n.id);
    }
    for (int i = 0; i < nu; ++i) {
        knowledge::EntityNode n{"u" + std::to_string(i), NodeKind::User, {}, {}, {}};
        const auto m = rng() % 3;
        if (m == 0) n.attributes["mfa"] = "enforced";
        if (m == 1) n.attributes["mfa"] = "none";
        n.privilege_tier = 1 + static_cast<int>(rng() % 3);
        g.add_node(n);
        w.users.push_back(n.id);
    }
    for (int i = 0; i < ng; ++i) {
        knowledge::EntityNode n{"g" + std::to_string(i), NodeKind::Group, {}, {}, {}};
        maybe_tier(n);
        g.add_node(n);
        w.groups.push_back(n.id);
    }
    std::vector<std::string> principals = w.users;
    principals.insert(principals.end(), w.groups.begin(), w.groups.end());
    for (int i = 0; i < ns; ++i) {
        knowledge::EntityNode n{"s" + std::to_string(i), NodeKind::Service, {}, static_cast<int>(rng() % 11), {}};
        n.attributes["host"] = w.hosts[rng() % w.hosts.size()];
        n.attributes["account"] = principals[rng() % principals.size()];
        g.add_node(n);
        w.services.push_back(n.id);
    }

    const auto add = [&](knowledge::Edge e) {
        if (!g.find_edge(e)) g.add_edge(std::move(e));
    };
    for (const auto& a : w.hosts)
        for (const auto& b : w.hosts) {
            if (a == b || rng() % 100 >= 35) continue;
            add({a, b, EdgeKind::Reachable, protocols()[rng() % 3], {}});
            if (rng() % 10 == 0) add({a, b, EdgeKind::Reachable, protocols()[rng() % 3], {}});
        }
    for (const auto& u : w.users)
        for (const auto& h : w.hosts)
            if (rng() % 100 < 25) add({u, h, EdgeKind::HasSessionOn, "", {}});
    for (const auto& p : principals) {
        for (const auto& h : w.hosts) {
            if (rng() % 100 < 20) add({p, h, EdgeKind::CanAuthTo, "", {}});
            if (rng() % 100 < 10) add({p, h, EdgeKind::AdminOf, "", {}});
        }
        for (const auto& grp : w.groups)
            if (p != grp && rng() % 100 < 35) add({p, grp, EdgeKind::MemberOf, "", {}});
    }
    w.state.catalog = std::make_shared<knowledge::TechniqueCatalog>(knowledge::bundled_catalog());
    if (rng() % 2) w.state.unmodeled.insert("credentials");
    if (rng() % 4 == 0) w.state.unmodeled.insert("services");
    w.state.graph.set_version(1);
    return w;
}

inline perception::IncidentObject random_incident(std::mt19937_64& rng, const RandomWorld& w) {
    std::optional<std::string> target;
    if (rng() % 5 != 0) target = w.hosts[rng() % w.hosts.size()];
    return make_incident(w.users[rng() % w.users.size()], w.hosts[rng() % w.hosts.size()], target);
}

inline std::vector<std::string> random_chain(std::mt19937_64& rng, const knowledge::TechniqueCatalog& catalog) {
    std::vector<std::string> ids;
    for (const auto& [id, _] : catalog.techniques()) ids.push_back(id);
    std::vector<std::string> chain;
    const auto len = 1 + rng() % 4;
    for (std::size_t i = 0; i < len; ++i) chain.push_back(ids[rng() % ids.size()]);
    return chain;
}

// ---------------------------------------------------------------------------
// Oracles

namespace oracle {

struct OEdge {
    std::string from, to;
    EdgeKind kind;
    std::string protocol;
    bool operator==(const OEdge&) const = default;
    auto tie() const { return std::tie(from, to, kind, protocol); }
};

struct ONode {
    NodeKind kind;
    std::map<std::string, std::string> attrs;
    std::optional<int> tier;
};

struct OGraph {
    std::map<std::string, ONode> nodes;
    std::vector<OEdge> edges;

    bool has(const std::string& id) const { return nodes.count(id) != 0; }
    bool has_edge(const OEdge& e) const { return std::find(edges.begin(), edges.end(), e) != edges.end(); }
    std::string attr(const std::string& id, const std::string& key) const {
        const auto it = nodes.find(id);
        if (it == nodes.end()) return {};
        const auto a = it->second.attrs.find(key);
        return a == it->second.attrs.end() ? std::string{} : a->second;
    }
};

inline OGraph from(const knowledge::EnterpriseGraph& g) {
    OGraph o;
    for (const auto& [id, n] : g.nodes()) o.nodes[id] = {n.kind, n.attributes, n.privilege_tier};
    for (const auto& e : g.edges()) o.edges.push_back({e.from, e.to, e.kind, e.protocol});
    return o;
}

inline bool protocol_ok(const OEdge& e, const std::string& protocol) {
    return protocol.empty() || protocol == "*" || e.protocol == protocol;
}

struct OPath {
    std::vector<std::string> nodes;
    std::vector<OEdge> edges;
};

// Enumerates every simple Reachable path from each source; keeps the shortest, then the
// lexicographically smallest node sequence, using the smallest protocol among parallel edges.
inline std::optional<OPath> shortest(const OGraph& g, const std::vector<std::string>& sources, const std::string& target,
                                     const std::string& protocol) {
    if (std::find(sources.begin(), sources.end(), target) != sources.end()) return OPath{{target}, {}};
    std::optional<std::vector<std::string>> best;
    std::vector<std::string> stack;
    std::set<std::string> on_path;
    std::function<void(const std::string&)> dfs = [&](const std::string& cur) {
        if (cur == target) {
            if (!best || stack.size() < best->size() || (stack.size() == best->size() && stack < *best)) best = stack;
            return;
        }
        for (const auto& e : g.edges) {
            if (e.from != cur || e.kind != EdgeKind::Reachable || !protocol_ok(e, protocol) || on_path.count(e.to)) continue;
            stack.push_back(e.to);
            on_path.insert(e.to);
            dfs(e.to);
            on_path.erase(e.to);
            stack.pop_back();
        }
    };
    for (const auto& s : sources) {
        stack = {s};
        on_path = {s};
        dfs(s);
    }
    if (!best) return std::nullopt;
    OPath p;
    p.nodes = *best;
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
        std::optional<OEdge> pick;
        for (const auto& e : g.edges)
            if (e.from == p.nodes[i] && e.to == p.nodes[i + 1] && e.kind == EdgeKind::Reachable && protocol_ok(e, protocol))
                if (!pick || e.protocol < pick->protocol) pick = e;
        p.edges.push_back(*pick);
    }
    return p;
}

inline std::set<std::string> closure(const OGraph& g, const std::string& who) {
    std::set<std::string> out;
    bool grew = true;
    std::set<std::string> frontier{who};
    while (grew) {
        grew = false;
        for (const auto& e : g.edges)
            if (e.kind == EdgeKind::MemberOf && (frontier.count(e.from) || out.count(e.from)) && out.insert(e.to).second)
                grew = true;
    }
    return out;
}

inline int tier_of(const OGraph& g, const std::string& user) {
    int t = g.nodes.at(user).tier.value_or(INT_MAX);
    auto holders = closure(g, user);
    for (const auto& grp : holders)
        if (g.nodes.at(grp).tier) t = std::min(t, *g.nodes.at(grp).tier);
    holders.insert(user);
    for (const auto& e : g.edges)
        if (e.kind == EdgeKind::AdminOf && holders.count(e.from) && g.nodes.at(e.to).tier)
            t = std::min(t, *g.nodes.at(e.to).tier);
    return t;
}

enum class Status { Feasible, Conditional, Infeasible };

struct OVerdict {
    Status status = Status::Infeasible;
    std::string failed_technique;
    std::optional<PredicateKind> failed_kind;
    std::vector<std::string> dependency_techniques;
    std::vector<std::string> witness_nodes;
    std::vector<OEdge> witness_edges;
};

inline sse::FeasibilityStatus to_lib(Status s) {
    switch (s) {
        case Status::Feasible: return sse::FeasibilityStatus::Feasible;
        case Status::Conditional: return sse::FeasibilityStatus::ConditionallyFeasible;
        case Status::Infeasible: break;
    }
    return sse::FeasibilityStatus::Infeasible;
}

inline std::string category_of(PredicateKind k) {
    switch (k) {
        case PredicateKind::ActorHasSessionOn: return "sessions";
        case PredicateKind::CredsOnHost: return "credentials";
        case PredicateKind::ServiceAssociated: return "services";
        case PredicateKind::EdgeExists:
        case PredicateKind::PathFromSession: return "topology";
        default: return "identity";
    }
}

// Forward simulation of a technique chain, written from the predicate semantics alone.
inline OVerdict validate(const OGraph& g, const std::vector<std::string>& chain, const perception::IncidentObject& inc,
                         const knowledge::TechniqueCatalog& catalog, const std::set<std::string>& unmodeled) {
    const std::string actor = inc.user.id;
    const std::string source = inc.source_host.id;
    const std::string target = inc.target_host ? inc.target_host->id : std::string{};
    std::set<std::string> sessions{source};
    for (const auto& e : g.edges)
        if (e.kind == EdgeKind::HasSessionOn && e.from == actor) sessions.insert(e.to);
    std::optional<int> tier;
    if (g.has(actor) && g.nodes.at(actor).kind == NodeKind::User) tier = tier_of(g, actor);
    auto who = closure(g, actor);
    who.insert(actor);
    const auto resolve = [&](const std::string& v) {
        if (v == "$source") return source;
        if (v == "$target") return target;
        if (v == "$actor") return actor;
        return v;
    };

    OVerdict out;
    const OEdge session_edge{actor, source, EdgeKind::HasSessionOn, ""};
    if (g.has_edge(session_edge)) {
        out.witness_nodes = {actor, source};
        out.witness_edges = {session_edge};
    } else {
        out.witness_nodes = {source};
    }

    for (const auto& id : chain) {
        const auto& spec = catalog.at(id);
        std::vector<OPath> paths;
        for (const auto& p : spec.preconditions) {
            const auto host = resolve(p.host);
            if (unmodeled.count(category_of(p.kind))) {
                out.dependency_techniques.push_back(id);
                continue;
            }
            bool ok = false;
            switch (p.kind) {
                case PredicateKind::ActorHasSessionOn: ok = sessions.count(host) > 0; break;
                case PredicateKind::EdgeExists: {
                    const auto s = resolve(p.src), d = resolve(p.dst);
                    for (const auto& e : g.edges)
                        if (e.from == s && e.to == d && e.kind == p.edge &&
                            (p.edge != EdgeKind::Reachable || protocol_ok(e, p.protocol)))
                            ok = true;
                    break;
                }
                case PredicateKind::ActorTierAtMost: ok = tier && *tier <= p.tier; break;
                case PredicateKind::CredsOnHost: {
                    const auto c = g.attr(host, "cached_credential_tier");
                    ok = !c.empty() && std::stoi(c) <= p.tier;
                    break;
                }
                case PredicateKind::ActorCanAuthTo:
                    for (const auto& e : g.edges)
                        if ((e.kind == EdgeKind::CanAuthTo || e.kind == EdgeKind::AdminOf) && e.to == host && who.count(e.from))
                            ok = true;
                    break;
                case PredicateKind::PathFromSession: {
                    if (!g.has(host) || g.nodes.at(host).kind != NodeKind::Host) break;
                    std::vector<std::string> srcs;
                    for (const auto& s : sessions)
                        if (g.has(s) && g.nodes.at(s).kind == NodeKind::Host) srcs.push_back(s);
                    auto path = shortest(g, srcs, host, p.protocol);
                    if (path) {
                        ok = true;
                        paths.push_back(*path);
                    }
                    break;
                }
                case PredicateKind::ServiceAssociated:
                    for (const auto& [nid, n] : g.nodes)
                        if (n.kind == NodeKind::Service && g.attr(nid, "host") == host && who.count(g.attr(nid, "account")))
                            ok = true;
                    break;
                case PredicateKind::MfaNotEnforced: ok = g.has(actor) && g.attr(actor, "mfa") != "enforced"; break;
            }
            if (!ok) {
                out.status = Status::Infeasible;
                out.failed_technique = id;
                out.failed_kind = p.kind;
                out.dependency_techniques.clear();
                out.witness_nodes.clear();
                out.witness_edges.clear();
                return out;
            }
        }
        for (const auto& path : paths) {
            const bool joined = !out.witness_nodes.empty() && out.witness_nodes.back() == path.nodes.front();
            out.witness_nodes.insert(out.witness_nodes.end(), path.nodes.begin() + (joined ? 1 : 0), path.nodes.end());
            for (const auto& e : path.edges)
                if (!std::count(out.witness_edges.begin(), out.witness_edges.end(), e)) out.witness_edges.push_back(e);
        }
        for (const auto& eff : spec.effects) {
            if (eff.kind == knowledge::EffectKind::GainSessionOn) {
                const auto h = resolve(eff.host);
                if (!h.empty()) sessions.insert(h);
            } else {
                tier = tier ? std::min(*tier, eff.tier) : eff.tier;
            }
        }
    }
    out.status = out.dependency_techniques.empty() ? Status::Feasible : Status::Conditional;
    return out;
}

// Primitive semantics applied to the plain edge list.
inline OGraph mutate(OGraph g, playbook::ActionPrimitive p, const std::string& target, const std::string& host_param = {}) {
    using playbook::ActionPrimitive;
    const auto drop = [&](auto pred) { std::erase_if(g.edges, pred); };
    switch (p) {
        case ActionPrimitive::ISOLATE_HOST:
            drop([&](const OEdge& e) { return e.kind == EdgeKind::Reachable && (e.from == target || e.to == target); });
            break;
        case ActionPrimitive::DISABLE_USER:
            drop([&](const OEdge& e) {
                return e.from == target && (e.kind == EdgeKind::HasSessionOn || e.kind == EdgeKind::CanAuthTo);
            });
            break;
        case ActionPrimitive::REVOKE_SESSION: {
            std::optional<OEdge> victim;
            for (const auto& e : g.edges)
                if (e.from == target && e.kind == EdgeKind::HasSessionOn && (host_param.empty() || e.to == host_param))
                    if (!victim || e.to < victim->to) victim = e;
            if (victim) drop([&](const OEdge& e) { return e == *victim; });
            break;
        }
        case ActionPrimitive::RESTRICT_PRIVILEGES:
            drop([&](const OEdge& e) { return e.from == target && e.kind == EdgeKind::AdminOf; });
            break;
        case ActionPrimitive::ENABLE_MFA: g.nodes.at(target).attrs["mfa"] = "enforced"; break;
        case ActionPrimitive::QUARANTINE_ACCESS:
            drop([&](const OEdge& e) {
                return e.to == target && (e.kind == EdgeKind::CanAuthTo || e.kind == EdgeKind::AdminOf);
            });
            break;
        case ActionPrimitive::MONITOR_ONLY: break;
    }
    return g;
}

struct OCut {
    std::size_t cut = 0, total = 0;
};

// Counts viable attack paths before the action and how many of them the action breaks.
inline OCut containment(const OGraph& before, playbook::ActionPrimitive p, const std::string& target,
                        const std::vector<std::vector<std::string>>& chains, const perception::IncidentObject& inc,
                        const knowledge::TechniqueCatalog& catalog, const std::set<std::string>& unmodeled,
                        const std::string& host_param = {}) {
    OCut c;
    const auto after = mutate(before, p, target, host_param);
    for (const auto& chain : chains) {
        const auto v0 = validate(before, chain, inc, catalog, unmodeled);
        if (v0.status == Status::Infeasible) continue;
        ++c.total;
        bool cut = std::any_of(v0.witness_edges.begin(), v0.witness_edges.end(),
                               [&](const OEdge& e) { return !after.has_edge(e); });
        if (!cut) cut = validate(after, chain, inc, catalog, unmodeled).status == Status::Infeasible;
        if (cut) ++c.cut;
    }
    return c;
}

}  // namespace oracle

inline std::vector<oracle::OEdge> to_oedges(const std::vector<knowledge::Edge>& edges) {
    std::vector<oracle::OEdge> out;
    for (const auto& e : edges) out.push_back({e.from, e.to, e.kind, e.protocol});
    return out;
}

// Valid random target for a primitive, or empty when the world has none.
inline std::string random_target(std::mt19937_64& rng, const RandomWorld& w, playbook::ActionPrimitive p) {
    using playbook::ActionPrimitive;
    std::vector<std::string> pool;
    switch (p) {
        case ActionPrimitive::ISOLATE_HOST: pool = w.hosts; break;
        case ActionPrimitive::QUARANTINE_ACCESS:
            pool = w.hosts;
            pool.insert(pool.end(), w.services.begin(), w.services.end());
            break;
        case ActionPrimitive::RESTRICT_PRIVILEGES:
            pool = w.users;
            pool.insert(pool.end(), w.groups.begin(), w.groups.end());
            break;
        default: pool = w.users; break;
    }
    return pool.empty() ? std::string{} : pool[rng() % pool.size()];
}

}  // namespace testsupport
