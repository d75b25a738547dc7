#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentsoc/common.hpp"

namespace agentsoc::knowledge {

enum class NodeKind { Host, User, Group, Service };
enum class EdgeKind { Reachable, MemberOf, AdminOf, HasSessionOn, CanAuthTo, TrustedBy };

std::string to_string(NodeKind k);
std::string to_string(EdgeKind k);
NodeKind node_kind_from_string(std::string_view s);
EdgeKind edge_kind_from_string(std::string_view s);

using Attributes = std::map<std::string, std::string>;

struct EntityNode {
    std::string id;
    NodeKind kind = NodeKind::Host;
    Attributes attributes;
    std::optional<int> criticality;     // hosts and services, 0..10
    std::optional<int> privilege_tier;  // lower = more privileged; groups/hosts grant it

    std::string attribute(const std::string& key, const std::string& fallback = {}) const;
    bool has_tag(std::string_view tag) const;  // comma-separated "tags" attribute
    bool operator==(const EntityNode&) const = default;
};

struct Edge {
    std::string from;
    std::string to;
    EdgeKind kind = EdgeKind::Reachable;
    std::string protocol;  // Reachable edges only
    Attributes attributes;

    // Identity ignores attributes.
    auto key() const { return std::tie(from, kind, to, protocol); }
    bool same_identity(const Edge& o) const { return key() == o.key(); }
    bool operator==(const Edge&) const = default;
    std::string describe() const;
};

bool edge_identity_less(const Edge& a, const Edge& b);

// Typed entity graph. Copies share adjacency lists until one side mutates them.
class EnterpriseGraph {
public:
    const EntityNode* find(const std::string& id) const;
    const EntityNode& node(const std::string& id) const;  // LookupError when absent
    const std::map<std::string, EntityNode>& nodes() const { return nodes_; }
    std::span<const Edge> out_edges(const std::string& from, EdgeKind kind) const;
    std::vector<Edge> edges() const;  // canonical order
    std::vector<Edge> edges_touching(const std::string& id, EdgeKind kind) const;
    const Edge* find_edge(const Edge& identity) const;
    std::size_t edge_count() const;

    std::uint64_t version() const { return version_; }
    void set_version(std::uint64_t v) { version_ = v; }

    // Low-level mutators; all throw ValidationError on integrity violations.
    void add_node(EntityNode node);
    void remove_node(const std::string& id);
    void add_edge(Edge edge);
    void remove_edge(const Edge& identity);
    void set_node_attribute(const std::string& id, const std::string& key, const std::optional<std::string>& value);

    // Full referential/type audit.
    void validate() const;

    bool operator==(const EnterpriseGraph& other) const;

private:
    using AdjKey = std::pair<std::string, EdgeKind>;
    std::map<std::string, EntityNode> nodes_;
    std::map<AdjKey, std::shared_ptr<const std::vector<Edge>>> adjacency_;
    std::uint64_t version_ = 0;
};

void validate_edge_endpoints(const Edge& e, const EntityNode& from, const EntityNode& to);

// ---------------------------------------------------------------------------
// Technique semantics

enum class PredicateKind {
    ActorHasSessionOn,  // host
    EdgeExists,         // edge kind, src, dst, protocol
    ActorTierAtMost,    // tier
    CredsOnHost,        // tier, host    (fact category "credentials")
    ActorCanAuthTo,     // host: actor or one of its groups holds CanAuthTo/AdminOf
    PathFromSession,    // host, protocol: Reachable path from a session host
    ServiceAssociated,  // host: a service/task on host runs as the actor ("services")
    MfaNotEnforced,     // actor attribute mfa != enforced
};

std::string to_string(PredicateKind k);
PredicateKind predicate_kind_from_string(std::string_view s);

// Host/src/dst fields may hold the bindings "$source" or "$target".
struct Predicate {
    PredicateKind kind = PredicateKind::ActorHasSessionOn;
    std::string host;
    std::string src;
    std::string dst;
    EdgeKind edge = EdgeKind::Reachable;
    std::string protocol;
    int tier = 0;

    std::string category() const;
    std::string describe() const;
    bool operator==(const Predicate&) const = default;
};

json to_json(const Predicate& p);
Predicate predicate_from_json(const json& j);

enum class EffectKind { GainSessionOn, GainTier };

struct Effect {
    EffectKind kind = EffectKind::GainSessionOn;
    std::string host;
    int tier = 0;
    bool operator==(const Effect&) const = default;
};

json to_json(const Effect& e);
Effect effect_from_json(const json& j);

struct TechniqueSpec {
    std::string technique_id;
    std::string name;
    std::string tactic;
    std::vector<Predicate> preconditions;
    std::vector<Effect> effects;
    std::vector<std::string> supported_by;  // evidence features this technique aligns with
    bool benign = false;                    // explanation entry rather than an attacker technique
};

struct Transition {
    std::string to;
    double weight = 0;
    bool operator==(const Transition&) const = default;
};

class TechniqueCatalog {
public:
    void add(TechniqueSpec spec);
    void add_transition(const std::string& from, Transition t);
    const TechniqueSpec* find(const std::string& id) const;
    const TechniqueSpec& at(const std::string& id) const;  // LookupError
    bool contains(const std::string& id) const { return find(id) != nullptr; }
    const std::map<std::string, TechniqueSpec>& techniques() const { return techniques_; }
    const std::map<std::string, std::vector<Transition>>& transitions() const { return transitions_; }
    bool connected(const std::string& from, const std::string& to) const;
    void validate() const;

private:
    std::map<std::string, TechniqueSpec> techniques_;
    std::map<std::string, std::vector<Transition>> transitions_;
};

// Descending weight, ties by id. LookupError for unknown ids.
std::vector<Transition> technique_successors(const TechniqueCatalog& table, const std::string& technique_id);

json techniques_to_json(const TechniqueCatalog& c);
json transitions_to_json(const TechniqueCatalog& c);
TechniqueCatalog catalog_from_json(const json& techniques, const json& transitions);
// Catalog bundled with the library (data/techniques.json).
TechniqueCatalog bundled_catalog();

// ---------------------------------------------------------------------------
// Business context

struct ImpactParams {
    double downtime_cost = 0;
    double user_disruption = 0;
    double compliance_sensitivity = 0;
    bool operator==(const ImpactParams&) const = default;
};

enum class PolicyEffect { Forbid, RequireApproval };

// Matches when every populated field matches; an empty constraint matches everything.
struct PolicyConstraint {
    std::string id;
    PolicyEffect effect = PolicyEffect::RequireApproval;
    std::string description;
    std::vector<std::string> primitives;
    std::vector<std::string> target_ids;
    std::vector<NodeKind> target_kinds;
    std::string target_tag;
    std::optional<int> min_criticality;
    std::optional<int> max_privilege_tier;

    bool matches(std::string_view primitive, const std::string& target_id, const EntityNode* target) const;
};

std::string to_string(PolicyEffect e);

struct KnowledgeState {
    EnterpriseGraph graph;
    std::shared_ptr<const TechniqueCatalog> catalog = std::make_shared<TechniqueCatalog>();
    std::map<std::string, ImpactParams> impact_params;
    std::vector<PolicyConstraint> policies;
    std::set<std::string> unmodeled;  // fact categories absent from this snapshot

    std::uint64_t version() const { return graph.version(); }
    void validate() const;
};

json to_json(const KnowledgeState& s);
KnowledgeState state_from_json(const json& j);
std::string canonical_dump(const KnowledgeState& s);
KnowledgeState load_snapshot(const std::filesystem::path& path);
void save_snapshot(const KnowledgeState& s, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Mutations

enum class DeltaOpKind { AddNode, RemoveNode, AddEdge, RemoveEdge, SetAttribute };
enum class Provenance { ExecutionOutcome, MonitorObservation, ManualLoad };

std::string to_string(Provenance p);

struct DeltaOp {
    DeltaOpKind kind = DeltaOpKind::AddEdge;
    std::optional<EntityNode> node;
    std::optional<Edge> edge;
    std::string entity;
    std::string key;
    std::optional<std::string> old_value;
    std::optional<std::string> new_value;

    static DeltaOp add_node(EntityNode n);
    static DeltaOp remove_node(EntityNode n);
    static DeltaOp add_edge(Edge e);
    static DeltaOp remove_edge(Edge e);
    static DeltaOp set_attribute(std::string entity, std::string key, std::optional<std::string> old_value,
                                 std::optional<std::string> new_value);
    DeltaOp inverse() const;
    bool operator==(const DeltaOp&) const = default;
};

struct KnowledgeDelta {
    std::string delta_id;
    std::vector<DeltaOp> ops;
    Provenance provenance = Provenance::ManualLoad;
    Timestamp timestamp = 0;

    bool empty() const { return ops.empty(); }
    KnowledgeDelta inverse() const;
};

json to_json(const DeltaOp& op);
DeltaOp delta_op_from_json(const json& j);
json to_json(const KnowledgeDelta& d);
KnowledgeDelta delta_from_json(const json& j);

// Applies ops in order to a copy; throws ValidationError leaving `graph` untouched.
EnterpriseGraph applied(const EnterpriseGraph& graph, const KnowledgeDelta& delta);

class StoreUnavailable : public Error {
public:
    using Error::Error;
};

struct ApplyResult {
    std::uint64_t version = 0;
    std::string delta_id;
    KnowledgeDelta inverse;
};

// Versioned store: readers take immutable snapshots, one writer publishes new versions.
class KnowledgeStore {
public:
    KnowledgeStore() = default;
    explicit KnowledgeStore(KnowledgeState initial);
    KnowledgeStore(const KnowledgeStore&) = delete;
    KnowledgeStore& operator=(const KnowledgeStore&) = delete;

    std::shared_ptr<const KnowledgeState> snapshot() const;  // StoreUnavailable when empty
    bool loaded() const;
    std::uint64_t version() const { return snapshot()->version(); }

    // All-or-nothing; version += 1. ValidationError leaves the store unchanged.
    ApplyResult apply_delta(KnowledgeDelta delta);
    void reset(KnowledgeState state);

    // Optional append-only JSON-lines log of applied deltas.
    void set_delta_log(std::filesystem::path path);

private:
    mutable std::mutex read_mu_;
    std::mutex write_mu_;
    std::shared_ptr<const KnowledgeState> current_;
    std::optional<std::filesystem::path> delta_log_;
};

// ---------------------------------------------------------------------------
// Queries

struct EdgeFilter {
    std::set<EdgeKind> kinds{EdgeKind::Reachable};
    std::string protocol;  // empty or "*" = any
    bool accepts(const Edge& e) const;
};

struct GraphPath {
    std::vector<std::string> nodes;
    std::vector<Edge> edges;  // edges[i] joins nodes[i] -> nodes[i+1]
    bool operator==(const GraphPath&) const = default;
};

// Shortest path from any source to target; ties by lexicographically smallest node sequence,
// parallel edges by smallest protocol. Unknown ids throw LookupError.
std::optional<GraphPath> shortest_path(const EnterpriseGraph& g, const std::vector<std::string>& sources,
                                       const std::string& target, const EdgeFilter& filter);

std::optional<std::vector<std::string>> reachable_path(const EnterpriseGraph& g, const std::string& src,
                                                       const std::string& dst, const std::string& protocol = {});

// Groups reachable through MemberOf from `principal` (users and nested groups).
std::set<std::string> group_closure(const EnterpriseGraph& g, const std::string& principal);

// min(own tier, tiers of groups in the membership closure, tiers of hosts administered).
int privilege_tier(const EnterpriseGraph& g, const std::string& user);

}  // namespace agentsoc::knowledge
