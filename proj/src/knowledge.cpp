#include "agentsoc/knowledge.hpp"

#include "agentsoc/bundled_data.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

namespace agentsoc::knowledge {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<Enum, N>& all, const char* what) {
    for (auto v : all)
        if (to_string(v) == s) return v;
    throw ValidationError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr std::array kAllNodeKinds{NodeKind::Host, NodeKind::User, NodeKind::Group, NodeKind::Service};
constexpr std::array kAllEdgeKinds{EdgeKind::Reachable,    EdgeKind::MemberOf,  EdgeKind::AdminOf,
                                   EdgeKind::HasSessionOn, EdgeKind::CanAuthTo, EdgeKind::TrustedBy};
constexpr std::array kAllPredicateKinds{
    PredicateKind::ActorHasSessionOn, PredicateKind::EdgeExists,      PredicateKind::ActorTierAtMost,
    PredicateKind::CredsOnHost,       PredicateKind::ActorCanAuthTo,  PredicateKind::PathFromSession,
    PredicateKind::ServiceAssociated, PredicateKind::MfaNotEnforced};

bool edge_less(const Edge& a, const Edge& b) { return std::tie(a.to, a.protocol) < std::tie(b.to, b.protocol); }

json attributes_json(const Attributes& a) {
    json j = json::object();
    for (const auto& [k, v] : a) j[k] = v;
    return j;
}

Attributes attributes_from(const json& j) {
    Attributes a;
    if (j.is_object())
        for (auto it = j.begin(); it != j.end(); ++it) a[it.key()] = it.value().get<std::string>();
    return a;
}

json node_json(const EntityNode& n) {
    json j;
    j["id"] = n.id;
    j["kind"] = to_string(n.kind);
    if (n.criticality) j["criticality"] = *n.criticality;
    if (n.privilege_tier) j["privilege_tier"] = *n.privilege_tier;
    j["attributes"] = attributes_json(n.attributes);
    return j;
}

EntityNode node_from(const json& j) {
    EntityNode n;
    n.id = j.at("id").get<std::string>();
    n.kind = node_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("criticality")) n.criticality = j.at("criticality").get<int>();
    if (j.contains("privilege_tier")) n.privilege_tier = j.at("privilege_tier").get<int>();
    if (j.contains("attributes")) n.attributes = attributes_from(j.at("attributes"));
    return n;
}

json edge_json(const Edge& e) {
    json j;
    j["from"] = e.from;
    j["to"] = e.to;
    j["kind"] = to_string(e.kind);
    if (!e.protocol.empty()) j["protocol"] = e.protocol;
    if (!e.attributes.empty()) j["attributes"] = attributes_json(e.attributes);
    return j;
}

Edge edge_from(const json& j) {
    Edge e;
    e.from = j.at("from").get<std::string>();
    e.to = j.at("to").get<std::string>();
    e.kind = edge_kind_from_string(j.at("kind").get<std::string>());
    e.protocol = j.value("protocol", std::string{});
    if (j.contains("attributes")) e.attributes = attributes_from(j.at("attributes"));
    return e;
}

void validate_node(const EntityNode& n) {
    if (n.id.empty()) throw ValidationError("node with empty id");
    if (n.criticality && (*n.criticality < 0 || *n.criticality > 10))
        throw ValidationError("node " + n.id + ": criticality outside [0,10]");
    if (n.privilege_tier && *n.privilege_tier < 1) throw ValidationError("node " + n.id + ": privilege_tier < 1");
    if (n.kind == NodeKind::User && !n.privilege_tier)
        throw ValidationError("user " + n.id + " has no privilege_tier");
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Host: return "Host";
        case NodeKind::User: return "User";
        case NodeKind::Group: return "Group";
        case NodeKind::Service: return "Service";
    }
    return "?";
}

std::string to_string(EdgeKind k) {
    switch (k) {
        case EdgeKind::Reachable: return "Reachable";
        case EdgeKind::MemberOf: return "MemberOf";
        case EdgeKind::AdminOf: return "AdminOf";
        case EdgeKind::HasSessionOn: return "HasSessionOn";
        case EdgeKind::CanAuthTo: return "CanAuthTo";
        case EdgeKind::TrustedBy: return "TrustedBy";
    }
    return "?";
}

NodeKind node_kind_from_string(std::string_view s) { return parse_enum(s, kAllNodeKinds, "node kind"); }
EdgeKind edge_kind_from_string(std::string_view s) { return parse_enum(s, kAllEdgeKinds, "edge kind"); }

std::string EntityNode::attribute(const std::string& key, const std::string& fallback) const {
    const auto it = attributes.find(key);
    return it == attributes.end() ? fallback : it->second;
}

bool EntityNode::has_tag(std::string_view tag) const {
    const auto it = attributes.find("tags");
    if (it == attributes.end()) return false;
    for (const auto& t : split(it->second, ','))
        if (trim(t) == tag) return true;
    return false;
}

std::string Edge::describe() const {
    std::string k = to_string(kind);
    if (!protocol.empty()) k += "/" + protocol;
    return k + "(" + from + " -> " + to + ")";
}

bool edge_identity_less(const Edge& a, const Edge& b) { return a.key() < b.key(); }

void validate_edge_endpoints(const Edge& e, const EntityNode& from, const EntityNode& to) {
    auto fail = [&](const char* rule) { throw ValidationError("edge " + e.describe() + ": " + rule); };
    if (e.from == e.to) fail("self-loop");
    const bool principal = from.kind == NodeKind::User || from.kind == NodeKind::Group;
    switch (e.kind) {
        case EdgeKind::Reachable:
            if (from.kind != NodeKind::Host || to.kind != NodeKind::Host) fail("Reachable must join Host->Host");
            if (e.protocol.empty()) fail("Reachable needs a protocol");
            break;
        case EdgeKind::MemberOf:
            if (!principal || to.kind != NodeKind::Group) fail("MemberOf must join User|Group->Group");
            break;
        case EdgeKind::AdminOf:
            if (!principal || to.kind != NodeKind::Host) fail("AdminOf must join User|Group->Host");
            break;
        case EdgeKind::HasSessionOn:
            if (from.kind != NodeKind::User || to.kind != NodeKind::Host) fail("HasSessionOn must join User->Host");
            break;
        case EdgeKind::CanAuthTo:
            if (!principal || (to.kind != NodeKind::Host && to.kind != NodeKind::Service))
                fail("CanAuthTo must join User|Group->Host|Service");
            break;
        case EdgeKind::TrustedBy: break;
    }
    if (e.kind != EdgeKind::Reachable && !e.protocol.empty()) fail("only Reachable edges carry a protocol");
}

// ---------------------------------------------------------------------------

const EntityNode* EnterpriseGraph::find(const std::string& id) const {
    const auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
}

const EntityNode& EnterpriseGraph::node(const std::string& id) const {
    const auto* n = find(id);
    if (!n) throw LookupError("unknown node '" + id + "'");
    return *n;
}

std::span<const Edge> EnterpriseGraph::out_edges(const std::string& from, EdgeKind kind) const {
    const auto it = adjacency_.find({from, kind});
    if (it == adjacency_.end()) return {};
    return {it->second->data(), it->second->size()};
}

std::vector<Edge> EnterpriseGraph::edges() const {
    std::vector<Edge> out;
    for (const auto& [key, list] : adjacency_) out.insert(out.end(), list->begin(), list->end());
    return out;
}

std::vector<Edge> EnterpriseGraph::edges_touching(const std::string& id, EdgeKind kind) const {
    std::vector<Edge> out;
    for (const auto& [key, list] : adjacency_) {
        if (key.second != kind) continue;
        for (const auto& e : *list)
            if (e.from == id || e.to == id) out.push_back(e);
    }
    return out;
}

const Edge* EnterpriseGraph::find_edge(const Edge& identity) const {
    const auto it = adjacency_.find({identity.from, identity.kind});
    if (it == adjacency_.end()) return nullptr;
    for (const auto& e : *it->second)
        if (e.same_identity(identity)) return &e;
    return nullptr;
}

std::size_t EnterpriseGraph::edge_count() const {
    std::size_t n = 0;
    for (const auto& [key, list] : adjacency_) n += list->size();
    return n;
}

void EnterpriseGraph::add_node(EntityNode node) {
    validate_node(node);
    if (nodes_.count(node.id)) throw ValidationError("duplicate node id '" + node.id + "'");
    auto id = node.id;
    nodes_.emplace(std::move(id), std::move(node));
}

void EnterpriseGraph::remove_node(const std::string& id) {
    if (!nodes_.count(id)) throw ValidationError("cannot remove absent node '" + id + "'");
    for (const auto& [key, list] : adjacency_)
        for (const auto& e : *list)
            if (e.from == id || e.to == id)
                throw ValidationError("cannot remove node '" + id + "' while edge " + e.describe() + " exists");
    nodes_.erase(id);
}

void EnterpriseGraph::add_edge(Edge edge) {
    const auto* from = find(edge.from);
    const auto* to = find(edge.to);
    if (!from || !to) throw ValidationError("edge " + edge.describe() + " references an absent node");
    validate_edge_endpoints(edge, *from, *to);
    if (find_edge(edge)) throw ValidationError("duplicate edge " + edge.describe());
    auto& slot = adjacency_[{edge.from, edge.kind}];
    auto list = slot ? std::make_shared<std::vector<Edge>>(*slot) : std::make_shared<std::vector<Edge>>();
    list->insert(std::lower_bound(list->begin(), list->end(), edge, edge_less), std::move(edge));
    slot = std::move(list);
}

void EnterpriseGraph::remove_edge(const Edge& identity) {
    const auto it = adjacency_.find({identity.from, identity.kind});
    const Edge* existing = find_edge(identity);
    if (!existing) throw ValidationError("cannot remove absent edge " + identity.describe());
    if (!(*existing == identity)) throw ValidationError("edge " + identity.describe() + " changed since recorded");
    auto list = std::make_shared<std::vector<Edge>>(*it->second);
    list->erase(std::find_if(list->begin(), list->end(), [&](const Edge& e) { return e.same_identity(identity); }));
    if (list->empty())
        adjacency_.erase(it);
    else
        it->second = std::move(list);
}

void EnterpriseGraph::set_node_attribute(const std::string& id, const std::string& key,
                                         const std::optional<std::string>& value) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw ValidationError("attribute update on absent node '" + id + "'");
    if (value)
        it->second.attributes[key] = *value;
    else
        it->second.attributes.erase(key);
}

void EnterpriseGraph::validate() const {
    for (const auto& [id, n] : nodes_) {
        if (id != n.id) throw ValidationError("node key mismatch for '" + n.id + "'");
        validate_node(n);
    }
    for (const auto& [key, list] : adjacency_) {
        if (list->empty()) throw ValidationError("empty adjacency list retained");
        if (!std::is_sorted(list->begin(), list->end(), edge_less))
            throw ValidationError("adjacency list out of order");
        for (const auto& e : *list) {
            if (e.from != key.first || e.kind != key.second) throw ValidationError("edge filed under wrong key");
            const auto* from = find(e.from);
            const auto* to = find(e.to);
            if (!from || !to) throw ValidationError("dangling edge " + e.describe());
            validate_edge_endpoints(e, *from, *to);
        }
        for (std::size_t i = 1; i < list->size(); ++i)
            if ((*list)[i - 1].same_identity((*list)[i])) throw ValidationError("duplicate edge " + (*list)[i].describe());
    }
}

bool EnterpriseGraph::operator==(const EnterpriseGraph& other) const {
    if (version_ != other.version_ || nodes_ != other.nodes_ || adjacency_.size() != other.adjacency_.size())
        return false;
    auto a = adjacency_.begin();
    auto b = other.adjacency_.begin();
    for (; a != adjacency_.end(); ++a, ++b)
        if (a->first != b->first || *a->second != *b->second) return false;
    return true;
}

// ---------------------------------------------------------------------------

std::string to_string(PredicateKind k) {
    switch (k) {
        case PredicateKind::ActorHasSessionOn: return "ActorHasSessionOn";
        case PredicateKind::EdgeExists: return "EdgeExists";
        case PredicateKind::ActorTierAtMost: return "ActorTierAtMost";
        case PredicateKind::CredsOnHost: return "CredsOnHost";
        case PredicateKind::ActorCanAuthTo: return "ActorCanAuthTo";
        case PredicateKind::PathFromSession: return "PathFromSession";
        case PredicateKind::ServiceAssociated: return "ServiceAssociated";
        case PredicateKind::MfaNotEnforced: return "MfaNotEnforced";
    }
    return "?";
}

PredicateKind predicate_kind_from_string(std::string_view s) {
    return parse_enum(s, kAllPredicateKinds, "predicate kind");
}

std::string Predicate::category() const {
    switch (kind) {
        case PredicateKind::ActorHasSessionOn: return "sessions";
        case PredicateKind::EdgeExists:
        case PredicateKind::PathFromSession: return "topology";
        case PredicateKind::ActorTierAtMost:
        case PredicateKind::ActorCanAuthTo:
        case PredicateKind::MfaNotEnforced: return "identity";
        case PredicateKind::CredsOnHost: return "credentials";
        case PredicateKind::ServiceAssociated: return "services";
    }
    return "?";
}

std::string Predicate::describe() const {
    const std::string proto = protocol.empty() ? "*" : protocol;
    switch (kind) {
        case PredicateKind::ActorHasSessionOn: return "ActorHasSessionOn(" + host + ")";
        case PredicateKind::EdgeExists:
            return "EdgeExists(" + to_string(edge) + (edge == EdgeKind::Reachable ? "/" + proto : "") + ", " + src +
                   ", " + dst + ")";
        case PredicateKind::ActorTierAtMost: return "ActorTier<=" + std::to_string(tier);
        case PredicateKind::CredsOnHost: return "CredsOnHost(tier-" + std::to_string(tier) + ", " + host + ")";
        case PredicateKind::ActorCanAuthTo: return "ActorCanAuthTo(" + host + ")";
        case PredicateKind::PathFromSession: return "PathFromSession(" + host + ", " + proto + ")";
        case PredicateKind::ServiceAssociated: return "ServiceAssociated(" + host + ")";
        case PredicateKind::MfaNotEnforced: return "MfaNotEnforced()";
    }
    return "?";
}

json to_json(const Predicate& p) {
    json j;
    j["kind"] = to_string(p.kind);
    switch (p.kind) {
        case PredicateKind::EdgeExists:
            j["edge"] = to_string(p.edge);
            j["src"] = p.src;
            j["dst"] = p.dst;
            if (!p.protocol.empty()) j["protocol"] = p.protocol;
            break;
        case PredicateKind::ActorTierAtMost: j["tier"] = p.tier; break;
        case PredicateKind::CredsOnHost:
            j["tier"] = p.tier;
            j["host"] = p.host;
            break;
        case PredicateKind::PathFromSession:
            j["host"] = p.host;
            if (!p.protocol.empty()) j["protocol"] = p.protocol;
            break;
        case PredicateKind::MfaNotEnforced: break;
        default: j["host"] = p.host;
    }
    return j;
}

Predicate predicate_from_json(const json& j) {
    Predicate p;
    p.kind = predicate_kind_from_string(j.at("kind").get<std::string>());
    p.host = j.value("host", std::string{});
    p.src = j.value("src", std::string{});
    p.dst = j.value("dst", std::string{});
    p.protocol = j.value("protocol", std::string{});
    p.tier = j.value("tier", 0);
    if (j.contains("edge")) p.edge = edge_kind_from_string(j.at("edge").get<std::string>());
    auto need = [&](bool ok, const char* field) {
        if (!ok) throw ValidationError("predicate " + to_string(p.kind) + " requires '" + field + "'");
    };
    switch (p.kind) {
        case PredicateKind::EdgeExists:
            need(!p.src.empty(), "src");
            need(!p.dst.empty(), "dst");
            break;
        case PredicateKind::ActorTierAtMost: need(p.tier >= 1, "tier"); break;
        case PredicateKind::CredsOnHost:
            need(p.tier >= 1, "tier");
            need(!p.host.empty(), "host");
            break;
        case PredicateKind::MfaNotEnforced: break;
        default: need(!p.host.empty(), "host");
    }
    return p;
}

json to_json(const Effect& e) {
    json j;
    j["kind"] = e.kind == EffectKind::GainSessionOn ? "GainSessionOn" : "GainTier";
    if (e.kind == EffectKind::GainSessionOn)
        j["host"] = e.host;
    else
        j["tier"] = e.tier;
    return j;
}

Effect effect_from_json(const json& j) {
    Effect e;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "GainSessionOn") {
        e.kind = EffectKind::GainSessionOn;
        e.host = j.at("host").get<std::string>();
    } else if (kind == "GainTier") {
        e.kind = EffectKind::GainTier;
        e.tier = j.at("tier").get<int>();
        if (e.tier < 1) throw ValidationError("GainTier requires tier >= 1");
    } else {
        throw ValidationError("unknown effect kind '" + kind + "'");
    }
    return e;
}

void TechniqueCatalog::add(TechniqueSpec spec) {
    if (spec.technique_id.empty()) throw ValidationError("technique with empty id");
    if (techniques_.count(spec.technique_id)) throw ValidationError("duplicate technique '" + spec.technique_id + "'");
    auto id = spec.technique_id;
    techniques_.emplace(std::move(id), std::move(spec));
}

void TechniqueCatalog::add_transition(const std::string& from, Transition t) {
    if (from == t.to) throw ValidationError("self-loop transition on " + from);
    if (!(t.weight > 0 && t.weight <= 1)) throw ValidationError("transition weight outside (0,1] on " + from);
    auto& list = transitions_[from];
    for (const auto& existing : list)
        if (existing.to == t.to) throw ValidationError("duplicate transition " + from + " -> " + t.to);
    list.push_back(std::move(t));
}

const TechniqueSpec* TechniqueCatalog::find(const std::string& id) const {
    const auto it = techniques_.find(id);
    return it == techniques_.end() ? nullptr : &it->second;
}

const TechniqueSpec& TechniqueCatalog::at(const std::string& id) const {
    const auto* t = find(id);
    if (!t) throw LookupError("unknown technique '" + id + "'");
    return *t;
}

bool TechniqueCatalog::connected(const std::string& from, const std::string& to) const {
    const auto it = transitions_.find(from);
    if (it == transitions_.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(), [&](const Transition& t) { return t.to == to; });
}

void TechniqueCatalog::validate() const {
    for (const auto& [from, list] : transitions_) {
        if (!contains(from)) throw ValidationError("transition from unknown technique '" + from + "'");
        for (const auto& t : list) {
            if (!contains(t.to)) throw ValidationError("transition to unknown technique '" + t.to + "'");
            if (t.to == from) throw ValidationError("self-loop transition on " + from);
            if (!(t.weight > 0 && t.weight <= 1)) throw ValidationError("transition weight outside (0,1]");
        }
    }
}

std::vector<Transition> technique_successors(const TechniqueCatalog& table, const std::string& technique_id) {
    table.at(technique_id);
    const auto it = table.transitions().find(technique_id);
    if (it == table.transitions().end()) return {};
    auto out = it->second;
    std::sort(out.begin(), out.end(), [](const Transition& a, const Transition& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.to < b.to;
    });
    return out;
}

json techniques_to_json(const TechniqueCatalog& c) {
    json arr = json::array();
    for (const auto& [id, t] : c.techniques()) {
        json j;
        j["technique_id"] = t.technique_id;
        j["name"] = t.name;
        j["tactic"] = t.tactic;
        if (t.benign) j["benign"] = true;
        j["preconditions"] = json::array();
        for (const auto& p : t.preconditions) j["preconditions"].push_back(to_json(p));
        j["effects"] = json::array();
        for (const auto& e : t.effects) j["effects"].push_back(to_json(e));
        j["supported_by"] = t.supported_by;
        arr.push_back(std::move(j));
    }
    return arr;
}

json transitions_to_json(const TechniqueCatalog& c) {
    json arr = json::array();
    for (const auto& [from, list] : c.transitions()) {
        auto sorted = list;
        std::sort(sorted.begin(), sorted.end(), [](const Transition& a, const Transition& b) { return a.to < b.to; });
        for (const auto& t : sorted) arr.push_back(json{{"from", from}, {"to", t.to}, {"weight", t.weight}});
    }
    return arr;
}

TechniqueCatalog catalog_from_json(const json& techniques, const json& transitions) {
    TechniqueCatalog c;
    for (const auto& j : techniques) {
        TechniqueSpec t;
        t.technique_id = j.at("technique_id").get<std::string>();
        t.name = j.value("name", std::string{});
        t.tactic = j.value("tactic", std::string{});
        t.benign = j.value("benign", false);
        for (const auto& p : j.value("preconditions", json::array())) t.preconditions.push_back(predicate_from_json(p));
        for (const auto& e : j.value("effects", json::array())) t.effects.push_back(effect_from_json(e));
        t.supported_by = j.value("supported_by", std::vector<std::string>{});
        c.add(std::move(t));
    }
    for (const auto& j : transitions)
        c.add_transition(j.at("from").get<std::string>(),
                         Transition{j.at("to").get<std::string>(), j.at("weight").get<double>()});
    c.validate();
    return c;
}

TechniqueCatalog bundled_catalog() {
    const auto j = json::parse(bundled::techniques_json());
    return catalog_from_json(j.at("techniques"), j.at("transitions"));
}

// ---------------------------------------------------------------------------

std::string to_string(PolicyEffect e) { return e == PolicyEffect::Forbid ? "Forbid" : "RequireApproval"; }

bool PolicyConstraint::matches(std::string_view primitive, const std::string& target_id,
                               const EntityNode* target) const {
    if (!primitives.empty() && std::find(primitives.begin(), primitives.end(), primitive) == primitives.end())
        return false;
    if (!target_ids.empty() && std::find(target_ids.begin(), target_ids.end(), target_id) == target_ids.end())
        return false;
    const bool needs_node = !target_kinds.empty() || !target_tag.empty() || min_criticality || max_privilege_tier;
    if (!needs_node) return true;
    if (!target) return false;
    if (!target_kinds.empty() && std::find(target_kinds.begin(), target_kinds.end(), target->kind) == target_kinds.end())
        return false;
    if (!target_tag.empty() && !target->has_tag(target_tag)) return false;
    if (min_criticality && (!target->criticality || *target->criticality < *min_criticality)) return false;
    if (max_privilege_tier && (!target->privilege_tier || *target->privilege_tier > *max_privilege_tier)) return false;
    return true;
}

namespace {

json policy_json(const PolicyConstraint& p) {
    json j;
    j["id"] = p.id;
    j["effect"] = to_string(p.effect);
    j["description"] = p.description;
    if (!p.primitives.empty()) j["primitives"] = p.primitives;
    if (!p.target_ids.empty()) j["target_ids"] = p.target_ids;
    if (!p.target_kinds.empty()) {
        j["target_kinds"] = json::array();
        for (auto k : p.target_kinds) j["target_kinds"].push_back(to_string(k));
    }
    if (!p.target_tag.empty()) j["target_tag"] = p.target_tag;
    if (p.min_criticality) j["min_criticality"] = *p.min_criticality;
    if (p.max_privilege_tier) j["max_privilege_tier"] = *p.max_privilege_tier;
    return j;
}

PolicyConstraint policy_from(const json& j) {
    PolicyConstraint p;
    p.id = j.at("id").get<std::string>();
    const auto effect = j.at("effect").get<std::string>();
    if (effect == "Forbid")
        p.effect = PolicyEffect::Forbid;
    else if (effect == "RequireApproval")
        p.effect = PolicyEffect::RequireApproval;
    else
        throw ValidationError("policy " + p.id + ": unknown effect '" + effect + "'");
    p.description = j.value("description", std::string{});
    p.primitives = j.value("primitives", std::vector<std::string>{});
    p.target_ids = j.value("target_ids", std::vector<std::string>{});
    for (const auto& k : j.value("target_kinds", std::vector<std::string>{}))
        p.target_kinds.push_back(node_kind_from_string(k));
    p.target_tag = j.value("target_tag", std::string{});
    if (j.contains("min_criticality")) p.min_criticality = j.at("min_criticality").get<int>();
    if (j.contains("max_privilege_tier")) p.max_privilege_tier = j.at("max_privilege_tier").get<int>();
    return p;
}

void check_unit(double v, const std::string& what) {
    if (!(v >= 0 && v <= 1)) throw ValidationError(what + " outside [0,1]");
}

}  // namespace

void KnowledgeState::validate() const {
    graph.validate();
    catalog->validate();
    for (const auto& [id, p] : impact_params) {
        check_unit(p.downtime_cost, "impact_params " + id + ".downtime_cost");
        check_unit(p.user_disruption, "impact_params " + id + ".user_disruption");
        check_unit(p.compliance_sensitivity, "impact_params " + id + ".compliance_sensitivity");
    }
    std::set<std::string> ids;
    for (const auto& p : policies)
        if (!ids.insert(p.id).second) throw ValidationError("duplicate policy id '" + p.id + "'");
}

json to_json(const KnowledgeState& s) {
    json j;
    j["version"] = s.version();
    j["unmodeled"] = s.unmodeled;
    j["nodes"] = json::array();
    for (const auto& [id, n] : s.graph.nodes()) j["nodes"].push_back(node_json(n));
    j["edges"] = json::array();
    for (const auto& e : s.graph.edges()) j["edges"].push_back(edge_json(e));
    j["techniques"] = techniques_to_json(*s.catalog);
    j["transitions"] = transitions_to_json(*s.catalog);
    j["impact_params"] = json::array();
    for (const auto& [id, p] : s.impact_params)
        j["impact_params"].push_back(json{{"entity", id},
                                          {"downtime_cost", p.downtime_cost},
                                          {"user_disruption", p.user_disruption},
                                          {"compliance_sensitivity", p.compliance_sensitivity}});
    j["policies"] = json::array();
    for (const auto& p : s.policies) j["policies"].push_back(policy_json(p));
    return j;
}

KnowledgeState state_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("snapshot is not a JSON object");
    if (!j.contains("version")) throw ValidationError("snapshot missing required 'version'");
    KnowledgeState s;
    for (const auto& n : j.value("nodes", json::array())) {
        auto node = node_from(n);
        try {
            s.graph.add_node(node);
        } catch (const ValidationError& e) {
            throw ValidationError(std::string("node record: ") + e.what());
        }
    }
    for (const auto& e : j.value("edges", json::array())) {
        auto edge = edge_from(e);
        try {
            s.graph.add_edge(edge);
        } catch (const ValidationError& err) {
            throw ValidationError(std::string("edge record: ") + err.what());
        }
    }
    s.graph.set_version(j.at("version").get<std::uint64_t>());
    s.catalog = std::make_shared<TechniqueCatalog>(
        catalog_from_json(j.value("techniques", json::array()), j.value("transitions", json::array())));
    for (const auto& p : j.value("impact_params", json::array())) {
        const auto id = p.at("entity").get<std::string>();
        ImpactParams ip{p.value("downtime_cost", 0.0), p.value("user_disruption", 0.0),
                        p.value("compliance_sensitivity", 0.0)};
        if (!s.impact_params.emplace(id, ip).second) throw ValidationError("duplicate impact_params for '" + id + "'");
    }
    for (const auto& p : j.value("policies", json::array())) s.policies.push_back(policy_from(p));
    for (const auto& u : j.value("unmodeled", json::array())) s.unmodeled.insert(u.get<std::string>());
    s.validate();
    return s;
}

std::string canonical_dump(const KnowledgeState& s) { return to_json(s).dump(2) + "\n"; }

KnowledgeState load_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LookupError("cannot open snapshot '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("snapshot '" + path.string() + "' is not valid JSON: " + e.what());
    }
    try {
        return state_from_json(j);
    } catch (const json::exception& e) {
        throw ValidationError("snapshot '" + path.string() + "': " + e.what());
    }
}

void save_snapshot(const KnowledgeState& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write snapshot '" + path.string() + "'");
    out << canonical_dump(s);
}

// ---------------------------------------------------------------------------

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::ExecutionOutcome: return "ExecutionOutcome";
        case Provenance::MonitorObservation: return "MonitorObservation";
        case Provenance::ManualLoad: return "ManualLoad";
    }
    return "?";
}

DeltaOp DeltaOp::add_node(EntityNode n) {
    DeltaOp op;
    op.kind = DeltaOpKind::AddNode;
    op.node = std::move(n);
    return op;
}

DeltaOp DeltaOp::remove_node(EntityNode n) {
    DeltaOp op;
    op.kind = DeltaOpKind::RemoveNode;
    op.node = std::move(n);
    return op;
}

DeltaOp DeltaOp::add_edge(Edge e) {
    DeltaOp op;
    op.kind = DeltaOpKind::AddEdge;
    op.edge = std::move(e);
    return op;
}

DeltaOp DeltaOp::remove_edge(Edge e) {
    DeltaOp op;
    op.kind = DeltaOpKind::RemoveEdge;
    op.edge = std::move(e);
    return op;
}

DeltaOp DeltaOp::set_attribute(std::string entity, std::string key, std::optional<std::string> old_value,
                               std::optional<std::string> new_value) {
    DeltaOp op;
    op.kind = DeltaOpKind::SetAttribute;
    op.entity = std::move(entity);
    op.key = std::move(key);
    op.old_value = std::move(old_value);
    op.new_value = std::move(new_value);
    return op;
}

DeltaOp DeltaOp::inverse() const {
    switch (kind) {
        case DeltaOpKind::AddNode: return remove_node(*node);
        case DeltaOpKind::RemoveNode: return add_node(*node);
        case DeltaOpKind::AddEdge: return remove_edge(*edge);
        case DeltaOpKind::RemoveEdge: return add_edge(*edge);
        case DeltaOpKind::SetAttribute: return set_attribute(entity, key, new_value, old_value);
    }
    return *this;
}

KnowledgeDelta KnowledgeDelta::inverse() const {
    KnowledgeDelta inv;
    inv.delta_id = delta_id.empty() ? std::string{} : delta_id + "-inverse";
    inv.provenance = provenance;
    inv.timestamp = timestamp;
    for (auto it = ops.rbegin(); it != ops.rend(); ++it) inv.ops.push_back(it->inverse());
    return inv;
}

json to_json(const DeltaOp& op) {
    json j;
    switch (op.kind) {
        case DeltaOpKind::AddNode:
            j["op"] = "AddNode";
            j["node"] = node_json(*op.node);
            break;
        case DeltaOpKind::RemoveNode:
            j["op"] = "RemoveNode";
            j["node"] = node_json(*op.node);
            break;
        case DeltaOpKind::AddEdge:
            j["op"] = "AddEdge";
            j["edge"] = edge_json(*op.edge);
            break;
        case DeltaOpKind::RemoveEdge:
            j["op"] = "RemoveEdge";
            j["edge"] = edge_json(*op.edge);
            break;
        case DeltaOpKind::SetAttribute:
            j["op"] = "SetAttribute";
            j["entity"] = op.entity;
            j["key"] = op.key;
            j["old"] = op.old_value ? json(*op.old_value) : json(nullptr);
            j["new"] = op.new_value ? json(*op.new_value) : json(nullptr);
            break;
    }
    return j;
}

DeltaOp delta_op_from_json(const json& j) {
    const auto op = j.at("op").get<std::string>();
    if (op == "AddNode") return DeltaOp::add_node(node_from(j.at("node")));
    if (op == "RemoveNode") return DeltaOp::remove_node(node_from(j.at("node")));
    if (op == "AddEdge") return DeltaOp::add_edge(edge_from(j.at("edge")));
    if (op == "RemoveEdge") return DeltaOp::remove_edge(edge_from(j.at("edge")));
    if (op == "SetAttribute") {
        auto opt = [&](const char* k) -> std::optional<std::string> {
            if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
            return j.at(k).get<std::string>();
        };
        return DeltaOp::set_attribute(j.at("entity").get<std::string>(), j.at("key").get<std::string>(), opt("old"),
                                      opt("new"));
    }
    throw ValidationError("unknown delta op '" + op + "'");
}

json to_json(const KnowledgeDelta& d) {
    json j;
    j["delta_id"] = d.delta_id;
    j["provenance"] = to_string(d.provenance);
    j["timestamp"] = d.timestamp;
    j["ops"] = json::array();
    for (const auto& op : d.ops) j["ops"].push_back(to_json(op));
    return j;
}

KnowledgeDelta delta_from_json(const json& j) {
    KnowledgeDelta d;
    d.delta_id = j.value("delta_id", std::string{});
    const auto prov = j.value("provenance", std::string("ManualLoad"));
    if (prov == "ExecutionOutcome")
        d.provenance = Provenance::ExecutionOutcome;
    else if (prov == "MonitorObservation")
        d.provenance = Provenance::MonitorObservation;
    else
        d.provenance = Provenance::ManualLoad;
    d.timestamp = j.value("timestamp", Timestamp{0});
    for (const auto& op : j.at("ops")) d.ops.push_back(delta_op_from_json(op));
    return d;
}

EnterpriseGraph applied(const EnterpriseGraph& graph, const KnowledgeDelta& delta) {
    EnterpriseGraph next = graph;
    for (std::size_t i = 0; i < delta.ops.size(); ++i) {
        const auto& op = delta.ops[i];
        try {
            switch (op.kind) {
                case DeltaOpKind::AddNode: next.add_node(*op.node); break;
                case DeltaOpKind::RemoveNode: {
                    const auto* current = next.find(op.node->id);
                    if (current && !(*current == *op.node))
                        throw ValidationError("node '" + op.node->id + "' changed since recorded");
                    next.remove_node(op.node->id);
                    break;
                }
                case DeltaOpKind::AddEdge: next.add_edge(*op.edge); break;
                case DeltaOpKind::RemoveEdge: next.remove_edge(*op.edge); break;
                case DeltaOpKind::SetAttribute: {
                    const auto* n = next.find(op.entity);
                    if (!n) throw ValidationError("attribute update on absent node '" + op.entity + "'");
                    const auto it = n->attributes.find(op.key);
                    const std::optional<std::string> current =
                        it == n->attributes.end() ? std::nullopt : std::optional<std::string>(it->second);
                    if (current != op.old_value)
                        throw ValidationError("attribute " + op.entity + "." + op.key + " changed since recorded");
                    next.set_node_attribute(op.entity, op.key, op.new_value);
                    break;
                }
            }
        } catch (const ValidationError& e) {
            throw ValidationError("delta " + (delta.delta_id.empty() ? std::string("<unnamed>") : delta.delta_id) +
                                  " op " + std::to_string(i) + ": " + e.what());
        }
    }
    return next;
}

// ---------------------------------------------------------------------------

KnowledgeStore::KnowledgeStore(KnowledgeState initial) { reset(std::move(initial)); }

std::shared_ptr<const KnowledgeState> KnowledgeStore::snapshot() const {
    std::lock_guard lock(read_mu_);
    if (!current_) throw StoreUnavailable("knowledge store has no snapshot loaded");
    return current_;
}

bool KnowledgeStore::loaded() const {
    std::lock_guard lock(read_mu_);
    return current_ != nullptr;
}

void KnowledgeStore::reset(KnowledgeState state) {
    state.validate();
    auto next = std::make_shared<const KnowledgeState>(std::move(state));
    std::lock_guard w(write_mu_);
    std::lock_guard r(read_mu_);
    current_ = std::move(next);
}

void KnowledgeStore::set_delta_log(std::filesystem::path path) {
    std::lock_guard w(write_mu_);
    delta_log_ = std::move(path);
}

ApplyResult KnowledgeStore::apply_delta(KnowledgeDelta delta) {
    std::lock_guard w(write_mu_);
    const auto current = snapshot();
    auto next = std::make_shared<KnowledgeState>(*current);
    next->graph = applied(current->graph, delta);
    const auto version = current->version() + 1;
    next->graph.set_version(version);
    if (delta.delta_id.empty()) delta.delta_id = "delta-" + std::to_string(version);
    {
        std::lock_guard r(read_mu_);
        current_ = std::move(next);
    }
    if (delta_log_) {
        std::ofstream log(*delta_log_, std::ios::app);
        json entry = to_json(delta);
        entry["version"] = version;
        log << entry.dump() << '\n';
    }
    return ApplyResult{version, delta.delta_id, delta.inverse()};
}

// ---------------------------------------------------------------------------

bool EdgeFilter::accepts(const Edge& e) const {
    if (!kinds.count(e.kind)) return false;
    if (e.kind != EdgeKind::Reachable || protocol.empty() || protocol == "*") return true;
    return e.protocol == protocol;
}

std::optional<GraphPath> shortest_path(const EnterpriseGraph& g, const std::vector<std::string>& sources,
                                       const std::string& target, const EdgeFilter& filter) {
    g.node(target);
    for (const auto& s : sources) g.node(s);
    if (std::find(sources.begin(), sources.end(), target) != sources.end()) return GraphPath{{target}, {}};

    std::map<std::string, std::vector<std::string>> reverse;
    for (const auto& e : g.edges())
        if (filter.accepts(e)) reverse[e.to].push_back(e.from);

    constexpr auto kInf = std::numeric_limits<std::size_t>::max();
    std::map<std::string, std::size_t> dist;
    std::deque<std::string> queue{target};
    dist[target] = 0;
    while (!queue.empty()) {
        const auto cur = queue.front();
        queue.pop_front();
        for (const auto& prev : reverse[cur])
            if (dist.emplace(prev, dist[cur] + 1).second) queue.push_back(prev);
    }
    auto distance = [&](const std::string& id) {
        const auto it = dist.find(id);
        return it == dist.end() ? kInf : it->second;
    };

    std::string start;
    std::size_t best = kInf;
    for (const auto& s : sources) {
        const auto d = distance(s);
        if (d < best || (d == best && d != kInf && s < start)) {
            best = d;
            start = s;
        }
    }
    if (best == kInf) return std::nullopt;

    GraphPath path;
    path.nodes.push_back(start);
    std::string cur = start;
    while (cur != target) {
        const Edge* chosen = nullptr;
        for (auto kind : filter.kinds)
            for (const auto& e : g.out_edges(cur, kind)) {
                if (!filter.accepts(e) || distance(e.to) + 1 != distance(cur)) continue;
                if (!chosen || std::tie(e.to, e.kind, e.protocol) < std::tie(chosen->to, chosen->kind, chosen->protocol))
                    chosen = &e;
            }
        path.edges.push_back(*chosen);
        cur = chosen->to;
        path.nodes.push_back(cur);
    }
    return path;
}

std::optional<std::vector<std::string>> reachable_path(const EnterpriseGraph& g, const std::string& src,
                                                       const std::string& dst, const std::string& protocol) {
    for (const auto* id : {&src, &dst})
        if (g.node(*id).kind != NodeKind::Host) throw ValidationError("'" + *id + "' is not a Host");
    auto p = shortest_path(g, {src}, dst, EdgeFilter{{EdgeKind::Reachable}, protocol});
    if (!p) return std::nullopt;
    return p->nodes;
}

std::set<std::string> group_closure(const EnterpriseGraph& g, const std::string& principal) {
    std::set<std::string> groups;
    std::deque<std::string> queue{principal};
    while (!queue.empty()) {
        const auto cur = queue.front();
        queue.pop_front();
        for (const auto& e : g.out_edges(cur, EdgeKind::MemberOf))
            if (groups.insert(e.to).second) queue.push_back(e.to);
    }
    return groups;
}

int privilege_tier(const EnterpriseGraph& g, const std::string& user) {
    const auto& u = g.node(user);
    if (u.kind != NodeKind::User) throw LookupError("'" + user + "' is not a User");
    int tier = u.privilege_tier.value_or(std::numeric_limits<int>::max());
    auto holders = group_closure(g, user);
    for (const auto& gid : holders)
        if (const auto* grp = g.find(gid); grp && grp->privilege_tier) tier = std::min(tier, *grp->privilege_tier);
    holders.insert(user);
    for (const auto& h : holders)
        for (const auto& e : g.out_edges(h, EdgeKind::AdminOf))
            if (const auto* host = g.find(e.to); host && host->privilege_tier) tier = std::min(tier, *host->privilege_tier);
    return tier;
}

}  // namespace agentsoc::knowledge
