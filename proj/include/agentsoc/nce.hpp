#pragma once

#include <condition_variable>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "agentsoc/common.hpp"
#include "agentsoc/knowledge.hpp"
#include "agentsoc/perception.hpp"

namespace agentsoc::nce {

enum class HypothesisKind { Malicious, Benign };
std::string to_string(HypothesisKind k);

struct EvidenceItem {
    std::string feature;  // e.g. flag:cross-tier-access
    double weight = 0;
    bool operator==(const EvidenceItem&) const = default;
};

struct Hypothesis {
    std::string hypothesis_id;
    std::string description;
    std::vector<std::string> technique_chain;
    double confidence = 0;
    std::vector<EvidenceItem> evidence;
    std::vector<std::string> missing_context;
    HypothesisKind kind = HypothesisKind::Malicious;
    bool operator==(const Hypothesis&) const = default;
};

json to_json(const Hypothesis& h);
Hypothesis hypothesis_from_json(const json& j);

const std::map<std::string, double>& default_feature_weights();

struct GeneratorConfig {
    int max_hypotheses = 3;  // includes the Benign hypothesis
    int max_chain_length = 4;
    double min_confidence_floor = 0.0;
    double benign_prior = 0.5;
    std::map<std::string, double> feature_weights = default_feature_weights();

    void validate() const;  // ConfigError
};

struct MappingRule {
    std::string event_type;  // empty = no condition
    std::string flag;        // empty = no condition
    std::vector<std::string> seeds;
};

struct TechniqueMapping {
    std::vector<MappingRule> rules;

    static TechniqueMapping from_json(const json& j);
    static TechniqueMapping bundled();
    void validate(const knowledge::TechniqueCatalog& catalog) const;
};

std::vector<std::string> map_alert_to_techniques(const perception::IncidentObject& incident,
                                                 const knowledge::TechniqueCatalog& catalog,
                                                 const TechniqueMapping& mapping);

// Evidence features present for the incident, in vocabulary order.
std::vector<std::string> evidence_features(const perception::IncidentObject& incident,
                                           const knowledge::EnterpriseGraph& graph);

// Best complete chains starting at `seed`, by weight product then lexicographic order.
struct ScoredChain {
    std::vector<std::string> chain;
    double weight = 1;
};
std::vector<ScoredChain> expand_chains(const knowledge::TechniqueCatalog& catalog, const std::string& seed,
                                       int max_chain_length, std::size_t limit);

// 1 - exp(-sum of weights of distinct present features supported by the chain).
double chain_confidence(const std::vector<std::string>& chain, const std::vector<std::string>& present,
                        const knowledge::TechniqueCatalog& catalog, const std::map<std::string, double>& weights,
                        std::vector<EvidenceItem>* evidence = nullptr);

std::string describe_chain(const std::vector<std::string>& chain, const knowledge::TechniqueCatalog& catalog);

// Sorts by confidence (desc) then description and assigns H1, H2, ...
void rank_hypotheses(std::vector<Hypothesis>& hypotheses);

std::vector<Hypothesis> generate_hypotheses(const perception::IncidentObject& incident,
                                            const knowledge::KnowledgeState& state, const GeneratorConfig& config,
                                            const TechniqueMapping& mapping);
std::vector<Hypothesis> generate_hypotheses(const perception::IncidentObject& incident,
                                            const knowledge::KnowledgeStore& store, const GeneratorConfig& config,
                                            const TechniqueMapping& mapping);

// ---------------------------------------------------------------------------
// External generator adapter

inline constexpr const char* kSchemaVersion = "agentsoc.hypotheses/1";

std::string render_prompt(const perception::IncidentObject& incident, const knowledge::KnowledgeState& state,
                          const TechniqueMapping& mapping);

class AdapterError : public Error {
public:
    using Error::Error;
};

struct ParsedResponse {
    std::vector<Hypothesis> hypotheses;
    std::vector<std::string> diagnostics;
};

ParsedResponse parse_llm_response(const std::string& text, const knowledge::TechniqueCatalog& catalog);

struct AdapterConfig {
    bool enabled = false;
    std::string endpoint;  // http://host:port/path
    double timeout_seconds = 5.0;
    int max_inflight = 2;
};

class LlmAdapter {
public:
    explicit LlmAdapter(AdapterConfig config);
    // POSTs {prompt, schema_version}; AdapterError on transport failure or non-200.
    std::string complete(const std::string& prompt);
    const AdapterConfig& config() const { return config_; }

private:
    AdapterConfig config_;
    std::string host_;
    int port_ = 80;
    std::string path_;
    std::mutex mu_;
    std::condition_variable cv_;
    int inflight_ = 0;
};

struct GenerationResult {
    std::vector<Hypothesis> hypotheses;
    std::string generator;  // "builtin" or "llm"
    bool fell_back = false;
    std::vector<std::string> diagnostics;
};

// Uses the adapter when given, falling back to the built-in generator on any failure.
GenerationResult generate(const perception::IncidentObject& incident, const knowledge::KnowledgeState& state,
                          const GeneratorConfig& config, const TechniqueMapping& mapping, LlmAdapter* adapter);

}  // namespace agentsoc::nce
