#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "support.hpp"

using namespace testsupport;
using nce::HypothesisKind;

namespace {

// Minimal HTTP endpoint standing in for a hosted model.
class StubServer {
public:
    explicit StubServer(httplib::Server::Handler handler) {
        server_.Post("/v1/hypotheses", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/hypotheses"; }
    int port() const { return port_; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

nce::AdapterConfig adapter_config(const std::string& endpoint) {
    nce::AdapterConfig c;
    c.enabled = true;
    c.endpoint = endpoint;
    c.timeout_seconds = 2.0;
    return c;
}

const std::string kGoodResponse = R"({"hypotheses": [
  {"description": "Kerberos abuse", "technique_chain": ["T1558", "T1550.003"], "confidence": 0.7,
   "kind": "Malicious", "evidence": [{"feature": "flag:unusual-TGT-request", "weight": 0.2}]},
  {"description": "Credential misuse", "technique_chain": ["T1078"], "confidence": 0.6, "kind": "Malicious"},
  {"description": "Admin maintenance", "technique_chain": ["BENIGN-MISCONFIG"], "confidence": 0.2, "kind": "Benign"},
  {"description": "Second benign", "technique_chain": [], "confidence": 0.1, "kind": "Benign"}
]})";

// All complete simple chains from `seed`: length limit reached or no unused successor left.
void enumerate_chains(const knowledge::TechniqueCatalog& c, std::vector<std::string>& path, double w, int max_len,
                      std::vector<nce::ScoredChain>& out) {
    bool extended = false;
    if (static_cast<int>(path.size()) < max_len) {
        const auto it = c.transitions().find(path.back());
        if (it != c.transitions().end()) {
            for (const auto& t : it->second) {
                if (std::find(path.begin(), path.end(), t.to) != path.end()) continue;
                extended = true;
                path.push_back(t.to);
                enumerate_chains(c, path, w * t.weight, max_len, out);
                path.pop_back();
            }
        }
    }
    if (!extended) out.push_back({path, w});
}

knowledge::TechniqueCatalog random_catalog(std::mt19937_64& rng) {
    knowledge::TechniqueCatalog c;
    const auto n = 2 + rng() % 6;
    for (std::size_t i = 0; i < n; ++i) {
        knowledge::TechniqueSpec s;
        s.technique_id = "T" + std::to_string(100 + i);
        s.name = "technique " + std::to_string(i);
        s.tactic = "execution";
        c.add(s);
    }
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            if (a != b && rng() % 3 == 0)
                c.add_transition("T" + std::to_string(100 + a),
                                 {"T" + std::to_string(100 + b), static_cast<double>(1 + rng() % 9) / 10.0});
    return c;
}

}  // namespace

TEST_CASE("reference incident: credential misuse chain on top, benign last") {
    const auto& s = poc_state();
    const auto hs = nce::generate_hypotheses(poc_incident(), s, nce::GeneratorConfig{}, nce::TechniqueMapping::bundled());
    REQUIRE(hs.size() >= 3);
    CHECK(hs[0].hypothesis_id == "H1");
    CHECK(hs[0].kind == HypothesisKind::Malicious);
    CHECK(hs[0].technique_chain == std::vector<std::string>{"T1078", "T1021.002"});
    CHECK(hs[0].description == "Credential misuse -> lateral movement");
    // cross-tier 0.30 + first access 0.25 + success 0.10
    CHECK(hs[0].confidence == doctest::Approx(1 - std::exp(-0.65)).epsilon(1e-12));
    CHECK(hs[1].technique_chain == std::vector<std::string>{"T1558", "T1550.003", "T1078.002"});
    // TGT 0.20 + success 0.10 + first access 0.25
    CHECK(hs[1].confidence == doctest::Approx(1 - std::exp(-0.55)).epsilon(1e-12));
    CHECK(hs.back().kind == HypothesisKind::Benign);
    CHECK(hs.back().technique_chain == std::vector<std::string>{"BENIGN-MISCONFIG"});
    CHECK(hs.back().confidence == doctest::Approx(0.5 * std::exp(-0.65)).epsilon(1e-12));
    CHECK(hs[0].confidence == doctest::Approx(0.478).epsilon(1e-3));
}

TEST_CASE("seed mapping and evidence features for the reference incident") {
    const auto& s = poc_state();
    const auto inc = poc_incident();
    CHECK(nce::map_alert_to_techniques(inc, *s.catalog, nce::TechniqueMapping::bundled()) ==
          std::vector<std::string>{"T1078", "T1558"});
    CHECK(nce::evidence_features(inc, s.graph) ==
          std::vector<std::string>{"baseline:first-access", "flag:cross-tier-access", "flag:unusual-TGT-request",
                                   "outcome:success"});
    auto other = inc;
    other.event_types = {"auth.repeated_failure"};
    other.flags = {};
    CHECK(nce::map_alert_to_techniques(other, *s.catalog, nce::TechniqueMapping::bundled()) ==
          std::vector<std::string>{"T1110"});
}

TEST_CASE("chain confidence matches a hand sum over random feature sets") {
    const auto catalog = knowledge::bundled_catalog();
    const auto& weights = nce::default_feature_weights();
    std::vector<std::string> features;
    for (const auto& [f, _] : weights) features.push_back(f);
    std::mt19937_64 rng(21);
    for (int i = 0; i < 500; ++i) {
        const auto chain = random_chain(rng, catalog);
        std::vector<std::string> present;
        for (const auto& f : features)
            if (rng() % 2) present.push_back(f);
        double sum = 0;
        for (const auto& f : present) {
            bool supported = false;
            for (const auto& id : chain) {
                const auto& sb = catalog.at(id).supported_by;
                supported = supported || std::find(sb.begin(), sb.end(), f) != sb.end();
            }
            if (supported) sum += weights.at(f);
        }
        std::vector<nce::EvidenceItem> ev;
        const double c = nce::chain_confidence(chain, present, catalog, weights, &ev);
        CHECK(c == doctest::Approx(1 - std::exp(-sum)).epsilon(1e-12));
        double evsum = 0;
        for (const auto& e : ev) evsum += e.weight;
        CHECK(evsum == doctest::Approx(sum).epsilon(1e-12));
        CHECK(c >= 0);
        CHECK(c < 1);
    }
}

TEST_CASE("chain expansion matches exhaustive enumeration") {
    std::mt19937_64 rng(5);
    for (int g = 0; g < 300; ++g) {
        const auto c = random_catalog(rng);
        const auto seed = "T" + std::to_string(100 + rng() % c.techniques().size());
        const int max_len = 1 + static_cast<int>(rng() % 4);
        const std::size_t limit = 1 + rng() % 6;
        std::vector<nce::ScoredChain> all;
        std::vector<std::string> path{seed};
        enumerate_chains(c, path, 1.0, max_len, all);
        std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            if (a.weight != b.weight) return a.weight > b.weight;
            return a.chain < b.chain;
        });
        if (all.size() > limit) all.resize(limit);
        const auto got = nce::expand_chains(c, seed, max_len, limit);
        REQUIRE(got.size() == all.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].chain == all[i].chain);
            CHECK(got[i].weight == all[i].weight);
        }
    }
}

TEST_CASE("chain descriptions collapse repeated tactics") {
    const auto catalog = knowledge::bundled_catalog();
    CHECK(nce::describe_chain({"T1078", "T1021.002"}, catalog) == "Credential misuse -> lateral movement");
    CHECK(nce::describe_chain({"T1021.002", "T1021.001"}, catalog) == "Lateral movement");
    CHECK(nce::describe_chain({"T1558"}, catalog).rfind("Kerberos", 0) == 0);
    CHECK_THROWS_AS(nce::describe_chain({"T9999"}, catalog), LookupError);
}

TEST_CASE("ranking breaks confidence ties by description") {
    std::vector<nce::Hypothesis> hs(3);
    hs[0].description = "b";
    hs[0].confidence = 0.4;
    hs[1].description = "a";
    hs[1].confidence = 0.4;
    hs[2].description = "c";
    hs[2].confidence = 0.9;
    nce::rank_hypotheses(hs);
    CHECK(hs[0].description == "c");
    CHECK(hs[1].description == "a");
    CHECK(hs[2].description == "b");
    CHECK(hs[2].hypothesis_id == "H3");
}

TEST_CASE("generator config limits") {
    const auto& s = poc_state();
    const auto mapping = nce::TechniqueMapping::bundled();
    nce::GeneratorConfig cfg;
    cfg.max_hypotheses = 1;
    auto hs = nce::generate_hypotheses(poc_incident(), s, cfg, mapping);
    REQUIRE(hs.size() == 1);
    CHECK(hs[0].kind == HypothesisKind::Benign);
    CHECK(hs[0].confidence == doctest::Approx(0.5));

    cfg = {};
    cfg.min_confidence_floor = 0.45;
    hs = nce::generate_hypotheses(poc_incident(), s, cfg, mapping);
    // Below-floor chains are skipped and later rounds fill the slots.
    REQUIRE(hs.size() == 3);
    for (std::size_t i = 0; i + 1 < hs.size(); ++i) {
        CHECK(hs[i].confidence >= 0.45);
        CHECK(hs[i].technique_chain.front() == "T1078");
    }

    cfg = {};
    cfg.max_hypotheses = 6;
    hs = nce::generate_hypotheses(poc_incident(), s, cfg, mapping);
    CHECK(hs.size() <= 6);
    std::set<std::vector<std::string>> chains;
    for (const auto& h : hs) chains.insert(h.technique_chain);
    CHECK(chains.size() == hs.size());
    for (std::size_t i = 1; i < hs.size(); ++i) CHECK(hs[i - 1].confidence >= hs[i].confidence);

    const auto bad = [](auto mutate) {
        nce::GeneratorConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    bad([](auto& c) { c.max_hypotheses = 0; });
    bad([](auto& c) { c.max_chain_length = 0; });
    bad([](auto& c) { c.min_confidence_floor = 1.5; });
    bad([](auto& c) { c.benign_prior = 1.0; });
    bad([](auto& c) { c.feature_weights["flag:made-up"] = 0.1; });
    bad([](auto& c) { c.feature_weights["outcome:success"] = -1; });
    bad([](auto& c) { c.feature_weights["outcome:success"] = std::nan(""); });
}

TEST_CASE("missing context is reported for unknown entities") {
    const auto& s = poc_state();
    auto inc = poc_incident();
    inc.user.resolved = false;
    inc.user.id = "ghost";
    inc.flags.push_back("unknown-entity");
    inc.baseline_empty = true;
    const auto hs = nce::generate_hypotheses(inc, s, nce::GeneratorConfig{}, nce::TechniqueMapping::bundled());
    REQUIRE_FALSE(hs.empty());
    const auto& notes = hs.back().missing_context;
    CHECK(std::find(notes.begin(), notes.end(), "User ghost is not in the knowledge graph") != notes.end());
    CHECK(std::find(notes.begin(), notes.end(), "No behavioral baseline for ghost") != notes.end());
}

TEST_CASE("technique mapping validation") {
    const auto catalog = knowledge::bundled_catalog();
    CHECK_NOTHROW(nce::TechniqueMapping::bundled().validate(catalog));
    CHECK_THROWS_AS(nce::TechniqueMapping::from_json(json::parse(R"({"rules":[{"seeds":["T1078"]}]})")),
                    ValidationError);
    const auto m = nce::TechniqueMapping::from_json(json::parse(R"({"rules":[{"flag":"x","seeds":["T0"]}]})"));
    CHECK_THROWS_AS(m.validate(catalog), ValidationError);
}

TEST_CASE("hypothesis JSON round-trips") {
    const auto hs = nce::generate_hypotheses(poc_incident(), poc_state(), nce::GeneratorConfig{},
                                             nce::TechniqueMapping::bundled());
    for (const auto& h : hs) CHECK(nce::hypothesis_from_json(nce::to_json(h)) == h);
    auto j = nce::to_json(hs[0]);
    j["kind"] = "Neutral";
    CHECK_THROWS_AS(nce::hypothesis_from_json(j), ValidationError);
}

TEST_CASE("parsing model responses") {
    const auto catalog = knowledge::bundled_catalog();
    const auto ok = nce::parse_llm_response(kGoodResponse, catalog);
    CHECK(ok.hypotheses.size() == 4);
    CHECK(ok.diagnostics.empty());

    CHECK_THROWS_AS(nce::parse_llm_response("not json", catalog), nce::AdapterError);
    CHECK_THROWS_AS(nce::parse_llm_response("[]", catalog), nce::AdapterError);
    CHECK_THROWS_AS(nce::parse_llm_response(R"({"hypotheses": 3})", catalog), nce::AdapterError);

    const auto r = nce::parse_llm_response(R"({"hypotheses": [
      7,
      {"technique_chain": ["T1078"], "confidence": 0.5},
      {"description": "x", "technique_chain": [], "confidence": 0.5},
      {"description": "x", "technique_chain": ["T0000"], "confidence": 0.5},
      {"description": "x", "technique_chain": ["T1078", "T1110"], "confidence": 0.5},
      {"description": "x", "technique_chain": ["T1078"], "confidence": 4.0,
       "evidence": [{"feature": "vibes", "weight": 1}, {"feature": "outcome:success", "weight": 0.1}]}
    ]})",
                                           catalog);
    REQUIRE(r.hypotheses.size() == 1);
    CHECK(r.hypotheses[0].confidence == 1.0);
    REQUIRE(r.hypotheses[0].evidence.size() == 1);
    CHECK(r.hypotheses[0].evidence[0].feature == "outcome:success");
    REQUIRE(r.diagnostics.size() == 6);
    CHECK(r.diagnostics[0].find("hypothesis[0]: schema violation") == 0);
    CHECK(r.diagnostics[1].find("hypothesis[1]: schema violation") == 0);
    CHECK(r.diagnostics[2] == "hypothesis[2]: malicious hypothesis with empty chain");
    CHECK(r.diagnostics[3] == "hypothesis[3]: unknown technique 'T0000'");
    CHECK(r.diagnostics[4] == "hypothesis[4]: chain steps are not connected by known transitions");
    CHECK(r.diagnostics[5] == "hypothesis[5]: dropped unknown evidence feature 'vibes'");
}

TEST_CASE("mangled responses never escape as anything but adapter errors") {
    const auto catalog = knowledge::bundled_catalog();
    std::mt19937_64 rng(99);
    const std::string alphabet = "{}[]\":,0123456789.eE-+ abcTtrufalsnHKB\\";
    int parsed = 0, rejected = 0;
    for (int i = 0; i < 3000; ++i) {
        auto text = kGoodResponse;
        const auto edits = 1 + rng() % 4;
        for (std::size_t e = 0; e < edits && !text.empty(); ++e) {
            const auto pos = rng() % text.size();
            switch (rng() % 3) {
                case 0: text.erase(pos, 1 + rng() % 8); break;
                case 1: text.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
                default: text[pos] = alphabet[rng() % alphabet.size()];
            }
        }
        try {
            const auto r = nce::parse_llm_response(text, catalog);
            ++parsed;
            for (const auto& h : r.hypotheses) {
                CHECK(std::isfinite(h.confidence));
                CHECK(h.confidence >= 0);
                CHECK(h.confidence <= 1);
            }
        } catch (const nce::AdapterError&) {
            ++rejected;
        } catch (const std::exception& e) {
            FAIL("unexpected exception: " << e.what() << " for input " << text);
        }
    }
    CHECK(parsed > 0);
    CHECK(rejected > 0);
}

TEST_CASE("prompt carries the incident, seeds and schema") {
    const auto p = nce::render_prompt(poc_incident(), poc_state(), nce::TechniqueMapping::bundled());
    CHECK(p.find("INC-POC-001") != std::string::npos);
    CHECK(p.find("- T1078 ") != std::string::npos);
    CHECK(p.find("- T1558 ") != std::string::npos);
    CHECK(p.find("T1078 -> T1021.002") != std::string::npos);
    CHECK(p.find(nce::kSchemaVersion) != std::string::npos);
}

TEST_CASE("adapter configuration is validated") {
    CHECK_THROWS_AS(nce::LlmAdapter(adapter_config("https://x/y")), ConfigError);
    CHECK_THROWS_AS(nce::LlmAdapter(adapter_config("http://:80/y")), ConfigError);
    CHECK_THROWS_AS(nce::LlmAdapter(adapter_config("http://h:port/y")), ConfigError);
    auto c = adapter_config("http://h/y");
    c.max_inflight = 0;
    CHECK_THROWS_AS(nce::LlmAdapter{c}, ConfigError);
    c = adapter_config("http://h/y");
    c.timeout_seconds = 0;
    CHECK_THROWS_AS(nce::LlmAdapter{c}, ConfigError);
}

TEST_CASE("adapter output replaces the built-in generator when valid") {
    std::string seen_body;
    std::mutex mu;
    StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(mu);
        seen_body = req.body;
        res.set_content(kGoodResponse, "application/json");
    });
    nce::LlmAdapter adapter(adapter_config(stub.endpoint()));
    const auto r = nce::generate(poc_incident(), poc_state(), nce::GeneratorConfig{}, nce::TechniqueMapping::bundled(),
                                 &adapter);
    CHECK(r.generator == "llm");
    CHECK_FALSE(r.fell_back);
    REQUIRE(r.hypotheses.size() == 3);
    CHECK(r.hypotheses[0].technique_chain == std::vector<std::string>{"T1558", "T1550.003"});
    CHECK(r.hypotheses[0].hypothesis_id == "H1");
    const auto benign = std::count_if(r.hypotheses.begin(), r.hypotheses.end(),
                                      [](const auto& h) { return h.kind == HypothesisKind::Benign; });
    CHECK(benign == 1);
    std::lock_guard lock(mu);
    const auto body = json::parse(seen_body);
    CHECK(body.at("schema_version") == nce::kSchemaVersion);
    CHECK(body.at("prompt").get<std::string>().find("INC-POC-001") != std::string::npos);
}

TEST_CASE("adapter failures fall back to the built-in generator") {
    const auto builtin = nce::generate_hypotheses(poc_incident(), poc_state(), nce::GeneratorConfig{},
                                                  nce::TechniqueMapping::bundled());
    const auto run = [&](nce::LlmAdapter& a) {
        return nce::generate(poc_incident(), poc_state(), nce::GeneratorConfig{}, nce::TechniqueMapping::bundled(), &a);
    };
    SUBCASE("server error") {
        StubServer stub([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
        nce::LlmAdapter a(adapter_config(stub.endpoint()));
        const auto r = run(a);
        CHECK(r.generator == "builtin");
        CHECK(r.fell_back);
        CHECK(r.hypotheses == builtin);
        REQUIRE_FALSE(r.diagnostics.empty());
        CHECK(r.diagnostics.back() == "adapter fallback: LLM endpoint returned HTTP 500");
    }
    SUBCASE("no malicious hypothesis survives validation") {
        StubServer stub([](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"hypotheses":[{"description":"x","technique_chain":["T0"],"confidence":1}]})",
                            "application/json");
        });
        nce::LlmAdapter a(adapter_config(stub.endpoint()));
        const auto r = run(a);
        CHECK(r.generator == "builtin");
        CHECK(r.hypotheses == builtin);
        CHECK(r.diagnostics.size() == 2);
    }
    SUBCASE("unreachable endpoint") {
        int port = 0;
        {
            StubServer stub([](const httplib::Request&, httplib::Response&) {});
            port = stub.port();
        }
        nce::LlmAdapter a(adapter_config("http://127.0.0.1:" + std::to_string(port) + "/v1/hypotheses"));
        const auto r = run(a);
        CHECK(r.generator == "builtin");
        CHECK(r.fell_back);
    }
    SUBCASE("slow endpoint times out") {
        StubServer stub([](const httplib::Request&, httplib::Response& res) {
            std::this_thread::sleep_for(std::chrono::milliseconds(800));
            res.set_content(kGoodResponse, "application/json");
        });
        auto cfg = adapter_config(stub.endpoint());
        cfg.timeout_seconds = 0.2;
        nce::LlmAdapter a(cfg);
        const auto r = run(a);
        CHECK(r.generator == "builtin");
    }
}

TEST_CASE("adapter bounds the number of requests in flight") {
    std::atomic<int> current{0}, peak{0}, total{0};
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
        const int now = ++current;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(40));
        --current;
        ++total;
        res.set_content(kGoodResponse, "application/json");
    });
    auto cfg = adapter_config(stub.endpoint());
    cfg.max_inflight = 2;
    nce::LlmAdapter adapter(cfg);
    std::vector<std::thread> threads;
    for (int i = 0; i < 6; ++i)
        threads.emplace_back([&] {
            try {
                adapter.complete("p");
            } catch (const nce::AdapterError&) {
            }
        });
    for (auto& t : threads) t.join();
    CHECK(total == 6);
    CHECK(peak <= 2);
    CHECK(peak >= 1);
}
