#include "agentsoc/nce.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>

#include <httplib.h>

#include "agentsoc/bundled_data.hpp"

namespace agentsoc::nce {

namespace {

using knowledge::TechniqueCatalog;

std::string tactic_phrase(const knowledge::TechniqueSpec& t) {
    if (t.name.find("Kerberos") != std::string::npos) return "kerberos ticket abuse";
    if (t.tactic == "initial-access") return "credential misuse";
    if (t.tactic.empty()) return t.name;
    std::string p = t.tactic;
    std::replace(p.begin(), p.end(), '-', ' ');
    return p;
}

std::vector<std::string> missing_context(const perception::IncidentObject& inc) {
    std::vector<std::string> notes;
    if (std::find(inc.flags.begin(), inc.flags.end(), "unknown-entity") != inc.flags.end()) {
        if (!inc.user.resolved) notes.push_back("User " + inc.user.id + " is not in the knowledge graph");
        if (!inc.source_host.resolved) notes.push_back("Host " + inc.source_host.id + " is not in the knowledge graph");
        if (inc.target_host && !inc.target_host->resolved)
            notes.push_back("Host " + inc.target_host->id + " is not in the knowledge graph");
    }
    if (inc.baseline_empty) notes.push_back("No behavioral baseline for " + inc.user.id);
    return notes;
}

Hypothesis benign_hypothesis(const TechniqueCatalog& catalog, double confidence, std::vector<std::string> notes) {
    Hypothesis h;
    h.kind = HypothesisKind::Benign;
    h.confidence = confidence;
    h.missing_context = std::move(notes);
    for (const auto& [id, spec] : catalog.techniques()) {
        if (!spec.benign) continue;
        h.technique_chain = {id};
        h.description = "Benign: " + spec.name;
        return h;
    }
    h.description = "Benign: legitimate but unusual activity";
    return h;
}

bool chain_connected(const std::vector<std::string>& chain, const TechniqueCatalog& catalog) {
    for (std::size_t i = 0; i + 1 < chain.size(); ++i)
        if (!catalog.connected(chain[i], chain[i + 1])) return false;
    return true;
}

}  // namespace

std::string to_string(HypothesisKind k) { return k == HypothesisKind::Benign ? "Benign" : "Malicious"; }

json to_json(const Hypothesis& h) {
    json j;
    j["hypothesis_id"] = h.hypothesis_id;
    j["description"] = h.description;
    j["technique_chain"] = h.technique_chain;
    j["confidence"] = h.confidence;
    json ev = json::array();
    for (const auto& e : h.evidence) ev.push_back({{"feature", e.feature}, {"weight", e.weight}});
    j["evidence"] = ev;
    j["missing_context"] = h.missing_context;
    j["kind"] = to_string(h.kind);
    return j;
}

Hypothesis hypothesis_from_json(const json& j) {
    Hypothesis h;
    h.hypothesis_id = j.value("hypothesis_id", std::string{});
    h.description = j.at("description").get<std::string>();
    h.technique_chain = j.at("technique_chain").get<std::vector<std::string>>();
    h.confidence = j.at("confidence").get<double>();
    for (const auto& e : j.value("evidence", json::array()))
        h.evidence.push_back({e.at("feature").get<std::string>(), e.value("weight", 0.0)});
    h.missing_context = j.value("missing_context", std::vector<std::string>{});
    const auto kind = j.value("kind", std::string("Malicious"));
    if (kind != "Malicious" && kind != "Benign") throw ValidationError("unknown hypothesis kind '" + kind + "'");
    h.kind = kind == "Benign" ? HypothesisKind::Benign : HypothesisKind::Malicious;
    return h;
}

const std::map<std::string, double>& default_feature_weights() {
    static const std::map<std::string, double> w{
        {"flag:unusual-TGT-request", 0.20}, {"flag:cross-tier-access", 0.30}, {"flag:unknown-entity", 0.0},
        {"flag:repeated-failure", 0.25},    {"flag:lateral-burst", 0.30},     {"flag:cross-domain", 0.15},
        {"flag:geo-change", 0.20},          {"baseline:first-access", 0.25},  {"outcome:success", 0.10},
        {"outcome:failure", 0.05},          {"event:kerberos-tgs", 0.20},     {"event:credential-dumping", 0.40},
        {"event:powershell", 0.15},         {"feedback:deviation", 0.30},
    };
    return w;
}

void GeneratorConfig::validate() const {
    if (max_hypotheses < 1) throw ConfigError("nce.max_hypotheses must be >= 1");
    if (max_chain_length < 1) throw ConfigError("nce.max_chain_length must be >= 1");
    if (!(min_confidence_floor >= 0 && min_confidence_floor <= 1))
        throw ConfigError("nce.min_confidence_floor must lie in [0,1]");
    if (!(benign_prior > 0 && benign_prior < 1)) throw ConfigError("nce.benign_prior must lie in (0,1)");
    for (const auto& [feature, w] : feature_weights) {
        if (!default_feature_weights().count(feature)) throw ConfigError("unknown evidence feature '" + feature + "'");
        if (!std::isfinite(w) || w < 0) throw ConfigError("weight for '" + feature + "' must be finite and >= 0");
    }
}

TechniqueMapping TechniqueMapping::from_json(const json& j) {
    TechniqueMapping m;
    for (const auto& r : j.at("rules")) {
        MappingRule rule;
        rule.event_type = r.value("event_type", std::string{});
        rule.flag = r.value("flag", std::string{});
        rule.seeds = r.at("seeds").get<std::vector<std::string>>();
        if (rule.event_type.empty() && rule.flag.empty())
            throw ValidationError("mapping rule needs an event_type or flag condition");
        m.rules.push_back(std::move(rule));
    }
    return m;
}

TechniqueMapping TechniqueMapping::bundled() { return from_json(json::parse(bundled::technique_mapping_json())); }

void TechniqueMapping::validate(const TechniqueCatalog& catalog) const {
    for (const auto& r : rules)
        for (const auto& s : r.seeds)
            if (!catalog.contains(s)) throw ValidationError("mapping references unknown technique '" + s + "'");
}

std::vector<std::string> map_alert_to_techniques(const perception::IncidentObject& incident,
                                                 const TechniqueCatalog& catalog, const TechniqueMapping& mapping) {
    std::vector<std::string> seeds;
    const auto has = [](const std::vector<std::string>& v, const std::string& x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };
    for (const auto& rule : mapping.rules) {
        if (!rule.event_type.empty() && !has(incident.event_types, rule.event_type)) continue;
        if (!rule.flag.empty() && !has(incident.flags, rule.flag)) continue;
        for (const auto& s : rule.seeds)
            if (catalog.contains(s) && !has(seeds, s)) seeds.push_back(s);
    }
    return seeds;
}

std::vector<std::string> evidence_features(const perception::IncidentObject& inc, const knowledge::EnterpriseGraph& g) {
    std::set<std::string> present;
    for (const auto& f : inc.flags) present.insert("flag:" + f);
    if (inc.first_access) present.insert("baseline:first-access");
    if (inc.outcome == "Success") present.insert("outcome:success");
    if (inc.outcome == "Failure") present.insert("outcome:failure");
    for (const auto& t : inc.event_types) {
        if (t == "auth.kerberos_tgs_request") present.insert("event:kerberos-tgs");
        if (t == "endpoint.credential_dumping") present.insert("event:credential-dumping");
        if (t == "endpoint.powershell") present.insert("event:powershell");
    }
    std::vector<std::string> ids{inc.user.id, inc.source_host.id};
    if (inc.target_host) ids.push_back(inc.target_host->id);
    for (const auto& id : ids) {
        const auto* n = g.find(id);
        if (n && !n->attribute("deviation").empty()) present.insert("feedback:deviation");
    }
    std::vector<std::string> out;
    for (const auto& [feature, w] : default_feature_weights())
        if (present.count(feature)) out.push_back(feature);
    return out;
}

std::vector<ScoredChain> expand_chains(const TechniqueCatalog& catalog, const std::string& seed, int max_chain_length,
                                       std::size_t limit) {
    catalog.at(seed);
    struct Partial {
        double weight;
        std::vector<std::string> chain;
    };
    // Highest weight first; equal weights pop the lexicographically smaller chain.
    const auto worse = [](const Partial& a, const Partial& b) {
        if (a.weight != b.weight) return a.weight < b.weight;
        return a.chain > b.chain;
    };
    std::priority_queue<Partial, std::vector<Partial>, decltype(worse)> open(worse);
    open.push({1.0, {seed}});
    std::vector<ScoredChain> out;
    while (!open.empty() && out.size() < limit) {
        auto p = open.top();
        open.pop();
        bool extended = false;
        if (static_cast<int>(p.chain.size()) < max_chain_length) {
            for (const auto& t : technique_successors(catalog, p.chain.back())) {
                if (std::find(p.chain.begin(), p.chain.end(), t.to) != p.chain.end()) continue;
                auto next = p.chain;
                next.push_back(t.to);
                open.push({p.weight * t.weight, std::move(next)});
                extended = true;
            }
        }
        if (!extended) out.push_back({std::move(p.chain), p.weight});
    }
    return out;
}

double chain_confidence(const std::vector<std::string>& chain, const std::vector<std::string>& present,
                        const TechniqueCatalog& catalog, const std::map<std::string, double>& weights,
                        std::vector<EvidenceItem>* evidence) {
    std::set<std::string> supported;
    for (const auto& id : chain)
        for (const auto& f : catalog.at(id).supported_by) supported.insert(f);
    double sum = 0;
    for (const auto& f : present) {
        if (!supported.count(f)) continue;
        const auto it = weights.find(f);
        const double w = it == weights.end() ? 0.0 : it->second;
        if (w <= 0) continue;
        sum += w;
        if (evidence) evidence->push_back({f, w});
    }
    return 1.0 - std::exp(-sum);
}

std::string describe_chain(const std::vector<std::string>& chain, const TechniqueCatalog& catalog) {
    std::vector<std::string> phrases;
    for (const auto& id : chain) {
        auto p = tactic_phrase(catalog.at(id));
        if (phrases.empty() || phrases.back() != p) phrases.push_back(std::move(p));
    }
    std::string out;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        if (i) out += " -> ";
        out += phrases[i];
    }
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
}

void rank_hypotheses(std::vector<Hypothesis>& hs) {
    std::stable_sort(hs.begin(), hs.end(), [](const Hypothesis& a, const Hypothesis& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.description != b.description) return a.description < b.description;
        return a.technique_chain < b.technique_chain;
    });
    for (std::size_t i = 0; i < hs.size(); ++i) hs[i].hypothesis_id = "H" + std::to_string(i + 1);
}

std::vector<Hypothesis> generate_hypotheses(const perception::IncidentObject& incident,
                                            const knowledge::KnowledgeState& state, const GeneratorConfig& config,
                                            const TechniqueMapping& mapping) {
    config.validate();
    const auto& catalog = *state.catalog;
    const auto seeds = map_alert_to_techniques(incident, catalog, mapping);
    const auto present = evidence_features(incident, state.graph);
    const auto notes = missing_context(incident);
    const std::size_t slots = static_cast<std::size_t>(config.max_hypotheses - 1);

    std::vector<std::vector<ScoredChain>> per_seed;
    for (const auto& s : seeds) per_seed.push_back(expand_chains(catalog, s, config.max_chain_length, slots));

    std::vector<Hypothesis> out;
    std::set<std::vector<std::string>> taken;
    for (std::size_t round = 0; out.size() < slots; ++round) {
        bool any = false;
        for (const auto& chains : per_seed) {
            if (round >= chains.size() || out.size() >= slots) continue;
            any = true;
            const auto& chain = chains[round].chain;
            if (!taken.insert(chain).second) continue;
            Hypothesis h;
            h.kind = HypothesisKind::Malicious;
            h.technique_chain = chain;
            h.confidence = chain_confidence(chain, present, catalog, config.feature_weights, &h.evidence);
            if (h.evidence.empty() || h.confidence < config.min_confidence_floor) continue;
            h.description = describe_chain(chain, catalog);
            h.missing_context = notes;
            out.push_back(std::move(h));
        }
        if (!any) break;
    }
    double top = 0;
    for (const auto& h : out) top = std::max(top, h.confidence);
    out.push_back(benign_hypothesis(catalog, config.benign_prior * (1.0 - top), notes));
    rank_hypotheses(out);
    return out;
}

std::vector<Hypothesis> generate_hypotheses(const perception::IncidentObject& incident,
                                            const knowledge::KnowledgeStore& store, const GeneratorConfig& config,
                                            const TechniqueMapping& mapping) {
    return generate_hypotheses(incident, *store.snapshot(), config, mapping);
}

// ---------------------------------------------------------------------------

std::string render_prompt(const perception::IncidentObject& incident, const knowledge::KnowledgeState& state,
                          const TechniqueMapping& mapping) {
    const auto& catalog = *state.catalog;
    std::ostringstream p;
    p << "You are assisting a security operations analyst.\n"
      << "Propose plausible attack progressions for the incident below, anchored to MITRE ATT&CK technique ids\n"
      << "from the candidate list, plus one benign explanation.\n\n";
    p << "## Incident\n" << to_json(incident).dump(2) << "\n\n";
    p << "## Candidate seed techniques\n";
    const auto seeds = map_alert_to_techniques(incident, catalog, mapping);
    if (seeds.empty()) p << "(none)\n";
    for (const auto& s : seeds) p << "- " << s << " " << catalog.at(s).name << "\n";
    p << "\n## Known transitions\n";
    for (const auto& [from, list] : catalog.transitions())
        for (const auto& t : technique_successors(catalog, from)) p << "- " << from << " -> " << t.to << "\n";
    const auto notes = missing_context(incident);
    if (!notes.empty()) {
        p << "\n## Missing context\n";
        for (const auto& n : notes) p << "- " << n << "\n";
    }
    p << "\n## Output schema (" << kSchemaVersion << ")\n"
      << "Respond with JSON only:\n"
      << "{\"hypotheses\": [{\"description\": string, \"technique_chain\": [technique_id, ...],\n"
      << "  \"confidence\": number in [0,1], \"kind\": \"Malicious\" | \"Benign\",\n"
      << "  \"evidence\": [{\"feature\": string, \"weight\": number}], \"missing_context\": [string]}]}\n";
    return p.str();
}

ParsedResponse parse_llm_response(const std::string& text, const TechniqueCatalog& catalog) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw AdapterError(std::string("response is not JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("hypotheses") || !doc.at("hypotheses").is_array())
        throw AdapterError("response lacks a 'hypotheses' array");
    ParsedResponse out;
    std::size_t index = 0;
    for (const auto& item : doc.at("hypotheses")) {
        const auto where = "hypothesis[" + std::to_string(index++) + "]: ";
        Hypothesis h;
        try {
            if (!item.is_object()) throw ValidationError("not an object");
            h = hypothesis_from_json(item);
        } catch (const std::exception& e) {
            out.diagnostics.push_back(where + "schema violation: " + e.what());
            continue;
        }
        if (!std::isfinite(h.confidence)) {
            out.diagnostics.push_back(where + "non-finite confidence");
            continue;
        }
        h.confidence = std::clamp(h.confidence, 0.0, 1.0);
        if (h.kind == HypothesisKind::Malicious && h.technique_chain.empty()) {
            out.diagnostics.push_back(where + "malicious hypothesis with empty chain");
            continue;
        }
        const auto unknown = std::find_if(h.technique_chain.begin(), h.technique_chain.end(),
                                          [&](const std::string& id) { return !catalog.contains(id); });
        if (unknown != h.technique_chain.end()) {
            out.diagnostics.push_back(where + "unknown technique '" + *unknown + "'");
            continue;
        }
        if (!chain_connected(h.technique_chain, catalog)) {
            out.diagnostics.push_back(where + "chain steps are not connected by known transitions");
            continue;
        }
        std::erase_if(h.evidence, [&](const EvidenceItem& e) {
            const bool bad = !default_feature_weights().count(e.feature);
            if (bad) out.diagnostics.push_back(where + "dropped unknown evidence feature '" + e.feature + "'");
            return bad;
        });
        out.hypotheses.push_back(std::move(h));
    }
    return out;
}

LlmAdapter::LlmAdapter(AdapterConfig config) : config_(std::move(config)) {
    if (config_.max_inflight < 1) throw ConfigError("nce.llm_max_inflight must be >= 1");
    if (!(config_.timeout_seconds > 0)) throw ConfigError("nce.llm_timeout must be > 0");
    std::string rest = config_.endpoint;
    const std::string scheme = "http://";
    if (rest.rfind(scheme, 0) != 0) throw ConfigError("nce.llm_endpoint must start with http://");
    rest = rest.substr(scheme.size());
    const auto slash = rest.find('/');
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    auto hostport = rest.substr(0, slash);
    const auto colon = hostport.find(':');
    host_ = hostport.substr(0, colon);
    if (colon != std::string::npos) {
        try {
            port_ = std::stoi(hostport.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad port in nce.llm_endpoint");
        }
    }
    if (host_.empty()) throw ConfigError("nce.llm_endpoint has no host");
}

std::string LlmAdapter::complete(const std::string& prompt) {
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return inflight_ < config_.max_inflight; });
        ++inflight_;
    }
    struct Release {
        LlmAdapter* self;
        ~Release() {
            std::lock_guard lock(self->mu_);
            --self->inflight_;
            self->cv_.notify_one();
        }
    } release{this};

    httplib::Client client(host_, port_);
    const auto secs = static_cast<time_t>(config_.timeout_seconds);
    const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const json body{{"prompt", prompt}, {"schema_version", kSchemaVersion}};
    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) throw AdapterError("LLM endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw AdapterError("LLM endpoint returned HTTP " + std::to_string(res->status));
    return res->body;
}

GenerationResult generate(const perception::IncidentObject& incident, const knowledge::KnowledgeState& state,
                          const GeneratorConfig& config, const TechniqueMapping& mapping, LlmAdapter* adapter) {
    GenerationResult result;
    if (adapter) {
        try {
            auto parsed = parse_llm_response(adapter->complete(render_prompt(incident, state, mapping)), *state.catalog);
            result.diagnostics = std::move(parsed.diagnostics);
            auto& hs = parsed.hypotheses;
            const auto malicious = std::count_if(hs.begin(), hs.end(),
                                                 [](const Hypothesis& h) { return h.kind == HypothesisKind::Malicious; });
            if (malicious == 0) throw AdapterError("no valid malicious hypotheses in response");
            // Keep exactly one Benign: the most confident one, or a built-in one when absent.
            std::stable_sort(hs.begin(), hs.end(),
                             [](const Hypothesis& a, const Hypothesis& b) { return a.confidence > b.confidence; });
            bool seen_benign = false;
            std::erase_if(hs, [&](const Hypothesis& h) {
                if (h.kind != HypothesisKind::Benign) return false;
                if (seen_benign) return true;
                seen_benign = true;
                return false;
            });
            if (!seen_benign) {
                double top = 0;
                for (const auto& h : hs) top = std::max(top, h.confidence);
                hs.push_back(benign_hypothesis(*state.catalog, config.benign_prior * (1.0 - top), missing_context(incident)));
            }
            rank_hypotheses(hs);
            result.hypotheses = std::move(hs);
            result.generator = "llm";
            return result;
        } catch (const AdapterError& e) {
            result.diagnostics.push_back(std::string("adapter fallback: ") + e.what());
            result.fell_back = true;
        }
    }
    result.hypotheses = generate_hypotheses(incident, state, config, mapping);
    result.generator = "builtin";
    return result;
}

}  // namespace agentsoc::nce
