#include "agentsoc/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

namespace agentsoc::config {

namespace {

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(Config&, const std::string& key, const std::string& value)>;

#define INT_KEY(expr) [](Config& c, const std::string& k, const std::string& v) { expr = static_cast<decltype(expr)>(to_int(k, v)); }
#define DBL_KEY(expr) [](Config& c, const std::string& k, const std::string& v) { expr = to_double(k, v); }
#define BOOL_KEY(expr) [](Config& c, const std::string& k, const std::string& v) { expr = to_bool(k, v); }
#define STR_KEY(expr) [](Config& c, const std::string&, const std::string& v) { expr = v; }

const std::map<std::string, Setter>& registry() {
    static const std::map<std::string, Setter> keys = [] {
        std::map<std::string, Setter> m{
            {"ingest.failure_threshold", INT_KEY(c.ingest.detection.failure_threshold)},
            {"ingest.failure_window", INT_KEY(c.ingest.detection.failure_window)},
            {"ingest.lateral_hosts", INT_KEY(c.ingest.detection.lateral_hosts)},
            {"ingest.lateral_window", INT_KEY(c.ingest.detection.lateral_window)},
            {"ingest.geo_window", INT_KEY(c.ingest.detection.geo_window)},
            {"ingest.cross_tier_min_criticality", INT_KEY(c.ingest.detection.cross_tier_min_criticality)},
            {"ingest.cross_tier_min_user_tier", INT_KEY(c.ingest.detection.cross_tier_min_user_tier)},
            {"ingest.baseline_fraction", DBL_KEY(c.ingest.baseline_fraction)},
            {"ingest.strict", BOOL_KEY(c.ingest.strict)},
            {"perception.bucket_seconds", INT_KEY(c.perception.noise.bucket_seconds)},
            {"perception.notable_severity", INT_KEY(c.perception.noise.notable_severity)},
            {"perception.cross_tier_min_criticality", INT_KEY(c.perception.enrich.cross_tier_min_criticality)},
            {"perception.cross_tier_min_user_tier", INT_KEY(c.perception.enrich.cross_tier_min_user_tier)},
            {"perception.incident_source", STR_KEY(c.perception.incident_source)},
            {"nce.max_hypotheses", INT_KEY(c.nce.generator.max_hypotheses)},
            {"nce.max_chain_length", INT_KEY(c.nce.generator.max_chain_length)},
            {"nce.min_confidence_floor", DBL_KEY(c.nce.generator.min_confidence_floor)},
            {"nce.benign_prior", DBL_KEY(c.nce.generator.benign_prior)},
            {"nce.technique_mapping", STR_KEY(c.nce.technique_mapping)},
            {"nce.llm_enabled", BOOL_KEY(c.nce.llm.enabled)},
            {"nce.llm_endpoint", STR_KEY(c.nce.llm.endpoint)},
            {"nce.llm_timeout", DBL_KEY(c.nce.llm.timeout_seconds)},
            {"nce.llm_max_inflight", INT_KEY(c.nce.llm.max_inflight)},
            {"rsem.alpha", DBL_KEY(c.rsem.weights.alpha)},
            {"rsem.beta", DBL_KEY(c.rsem.weights.beta)},
            {"rsem.gamma", DBL_KEY(c.rsem.weights.gamma)},
            {"rsem.calibration", STR_KEY(c.rsem.calibration)},
            {"playbook.impact_threshold", DBL_KEY(c.playbook.impact_threshold)},
            {"playbook.complement_dependencies", BOOL_KEY(c.playbook.complement_dependencies)},
            {"monitor.correlation_window", INT_KEY(c.monitor.correlation_window)},
            {"monitor.rollback_on_partial", BOOL_KEY(c.monitor.rollback_on_partial)},
            {"pipeline.workers", INT_KEY(c.pipeline.workers)},
            {"pipeline.enrichment_retries", INT_KEY(c.pipeline.enrichment_retries)},
            {"pipeline.retry_backoff_ms", INT_KEY(c.pipeline.retry_backoff_ms)},
            {"pipeline.live", BOOL_KEY(c.pipeline.live)},
            {"api.bind", STR_KEY(c.api.bind)},
            {"api.port", INT_KEY(c.api.port)},
            {"api.token", STR_KEY(c.api.token)},
            {"api.journal", STR_KEY(c.api.journal)},
        };
        // nce.weight.<feature> overrides one evidence weight
        for (const auto& [feature, w] : nce::default_feature_weights()) {
            (void)w;
            const std::string f = feature;
            m["nce.weight." + feature] = [f](Config& c, const std::string& k, const std::string& v) {
                c.nce.generator.feature_weights[f] = to_double(k, v);
            };
        }
        return m;
    }();
    return keys;
}

#undef INT_KEY
#undef DBL_KEY
#undef BOOL_KEY
#undef STR_KEY

std::string unquote(const std::string& v, std::size_t line) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'')) {
        if (v.back() != v.front()) throw ConfigError("line " + std::to_string(line) + ": unterminated string");
        return v.substr(1, v.size() - 2);
    }
    return v;
}

// Drops a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quote) {
            if (ch == quote) quote = 0;
        } else if (ch == '"' || ch == '\'') {
            quote = ch;
        } else if (ch == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

std::string env_name(const std::string& key) {
    std::string out = "AGENTSOC_";
    for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return out;
}

}  // namespace

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : registry()) out.push_back(k);
    return out;
}

Overrides parse_config_text(std::string_view text) {
    Overrides out;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = trim(strip_comment(raw));
        if (line.empty()) continue;
        const auto where = "line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            const bool known = std::any_of(registry().begin(), registry().end(),
                                           [&](const auto& kv) { return kv.first.rfind(section + ".", 0) == 0; });
            if (!known) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of any section");
        auto key = unquote(trim(line.substr(0, eq)), line_no);
        const auto full = section + "." + key;
        if (!registry().count(full)) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
        out[full] = unquote(trim(line.substr(eq + 1)), line_no);
    }
    return out;
}

Overrides read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Overrides env_overrides() {
    Overrides out;
    for (const auto& [key, _] : registry())
        if (const char* v = std::getenv(env_name(key).c_str())) out[key] = v;
    return out;
}

void apply(Config& config, const Overrides& overrides) {
    for (const auto& [key, value] : overrides) {
        const auto it = registry().find(key);
        if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(config, key, value);
    }
}

void Config::validate() const {
    ingest.detection.validate();
    if (!(ingest.baseline_fraction >= 0 && ingest.baseline_fraction < 1))
        throw ConfigError("ingest.baseline_fraction must be in [0,1)");
    if (perception.noise.bucket_seconds <= 0) throw ConfigError("perception.bucket_seconds must be > 0");
    if (perception.noise.notable_severity < 1 || perception.noise.notable_severity > 10)
        throw ConfigError("perception.notable_severity must be in [1,10]");
    if (perception.incident_source.empty()) throw ConfigError("perception.incident_source must not be empty");
    nce.generator.validate();
    if (nce.llm.enabled) {
        if (nce.llm.endpoint.rfind("http://", 0) != 0) throw ConfigError("nce.llm_endpoint must be an http:// URL");
        if (nce.llm.timeout_seconds <= 0) throw ConfigError("nce.llm_timeout must be > 0");
        if (nce.llm.max_inflight < 1) throw ConfigError("nce.llm_max_inflight must be >= 1");
    }
    rsem.weights.validate();
    if (!(playbook.impact_threshold >= 0 && playbook.impact_threshold <= 1))
        throw ConfigError("playbook.impact_threshold must be in [0,1]");
    monitor.validate();
    if (pipeline.workers < 0) throw ConfigError("pipeline.workers must be >= 0");
    if (pipeline.enrichment_retries < 0) throw ConfigError("pipeline.enrichment_retries must be >= 0");
    if (pipeline.retry_backoff_ms < 0) throw ConfigError("pipeline.retry_backoff_ms must be >= 0");
    if (api.port < 0 || api.port > 65535) throw ConfigError("api.port must be in [0,65535]");
}

int Config::effective_workers() const {
    if (pipeline.workers > 0) return pipeline.workers;
    return std::max(1u, std::thread::hardware_concurrency());
}

Config load(const std::filesystem::path& file, const Overrides& flags) {
    Config c;
    if (!file.empty()) {
        const auto from_file = read_config_file(file);
        try {
            config::apply(c, from_file);
        } catch (const ConfigError& e) {
            throw ConfigError(file.string() + ": " + e.what());
        }
    }
    config::apply(c, env_overrides());
    config::apply(c, flags);
    c.validate();
    return c;
}

json to_json(const Config& c) {
    json j;
    const auto& d = c.ingest.detection;
    j["ingest"] = {{"failure_threshold", d.failure_threshold},
                   {"failure_window", d.failure_window},
                   {"lateral_hosts", d.lateral_hosts},
                   {"lateral_window", d.lateral_window},
                   {"geo_window", d.geo_window},
                   {"cross_tier_min_criticality", d.cross_tier_min_criticality},
                   {"cross_tier_min_user_tier", d.cross_tier_min_user_tier},
                   {"baseline_fraction", c.ingest.baseline_fraction},
                   {"strict", c.ingest.strict}};
    j["perception"] = {{"bucket_seconds", c.perception.noise.bucket_seconds},
                       {"notable_severity", c.perception.noise.notable_severity},
                       {"cross_tier_min_criticality", c.perception.enrich.cross_tier_min_criticality},
                       {"cross_tier_min_user_tier", c.perception.enrich.cross_tier_min_user_tier},
                       {"incident_source", c.perception.incident_source}};
    json weights = json::object();
    for (const auto& [f, w] : c.nce.generator.feature_weights) weights[f] = w;
    j["nce"] = {{"max_hypotheses", c.nce.generator.max_hypotheses},
                {"max_chain_length", c.nce.generator.max_chain_length},
                {"min_confidence_floor", c.nce.generator.min_confidence_floor},
                {"benign_prior", c.nce.generator.benign_prior},
                {"technique_mapping", c.nce.technique_mapping},
                {"llm_enabled", c.nce.llm.enabled},
                {"llm_endpoint", c.nce.llm.endpoint},
                {"llm_timeout", c.nce.llm.timeout_seconds},
                {"llm_max_inflight", c.nce.llm.max_inflight},
                {"weights", weights}};
    j["rsem"] = {{"alpha", c.rsem.weights.alpha},
                 {"beta", c.rsem.weights.beta},
                 {"gamma", c.rsem.weights.gamma},
                 {"calibration", c.rsem.calibration}};
    j["playbook"] = {{"impact_threshold", c.playbook.impact_threshold},
                     {"complement_dependencies", c.playbook.complement_dependencies}};
    j["monitor"] = {{"correlation_window", c.monitor.correlation_window},
                    {"rollback_on_partial", c.monitor.rollback_on_partial}};
    j["pipeline"] = {{"workers", c.pipeline.workers},
                     {"enrichment_retries", c.pipeline.enrichment_retries},
                     {"retry_backoff_ms", c.pipeline.retry_backoff_ms},
                     {"live", c.pipeline.live}};
    j["api"] = {{"bind", c.api.bind}, {"port", c.api.port}, {"journal", c.api.journal}};
    return j;
}

Config config_from_json(const json& j) {
    Overrides o;
    const auto scalar = [](const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
        if (v.is_number_integer()) return std::to_string(v.get<long long>());
        std::ostringstream ss;
        ss.precision(17);
        ss << v.get<double>();
        return ss.str();
    };
    for (const auto& [section, body] : j.items()) {
        for (const auto& [key, value] : body.items()) {
            if (section == "nce" && key == "weights") {
                for (const auto& [f, w] : value.items()) o["nce.weight." + f] = scalar(w);
                continue;
            }
            o[section + "." + key] = scalar(value);
        }
    }
    Config c;
    config::apply(c, o);
    c.validate();
    return c;
}

}  // namespace agentsoc::config
