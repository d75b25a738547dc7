// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit when any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "properties.hpp"

using namespace testsupport;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

int failed = 0;

void report(int n, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << detail << std::endl;
    if (!ok) ++failed;
}

// Runs a criterion, turning an escaped exception into a failure line.
template <class F>
void criterion(int n, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report(n, false, std::string("exception: ") + e.what());
    }
}

// Drops wall-clock and timing fields, recursively.
json strip_clock(json j) {
    static const std::set<std::string> drop{"timings",    "total_micros", "wall_time_ms", "generated_at",
                                            "started_at", "ended_at",     "requested_at", "decided_at"};
    if (j.is_object()) {
        json out = json::object();
        for (auto& [k, v] : j.items())
            if (!drop.count(k)) out[k] = strip_clock(v);
        return out;
    }
    if (j.is_array())
        for (auto& v : j) v = strip_clock(v);
    return j;
}

// Journal contents with clock fields removed. Audit lines from concurrent cycles interleave in
// completion order, so they are grouped by playbook keeping each playbook's step order.
std::map<std::string, std::string> journal_view(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto name = fs::relative(e.path(), dir).string();
        const auto text = read_file(e.path());
        if (e.path().extension() == ".json") {
            out[name] = strip_clock(json::parse(text)).dump();
        } else if (e.path().extension() == ".jsonl") {
            std::vector<json> lines;
            std::istringstream in(text);
            for (std::string line; std::getline(in, line);)
                if (!line.empty()) lines.push_back(strip_clock(json::parse(line)));
            std::stable_sort(lines.begin(), lines.end(), [](const json& a, const json& b) {
                return a.value("playbook_id", std::string{}) < b.value("playbook_id", std::string{});
            });
            std::string joined;
            for (const auto& l : lines) joined += l.dump() + "\n";
            out[name] = joined;
        } else {
            out[name] = text;  // report.txt carries timings; compared separately through report.json
        }
    }
    out.erase("report.txt");
    return out;
}

std::string describe_diff(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b) {
    for (const auto& [k, v] : a) {
        const auto it = b.find(k);
        if (it == b.end()) return k + " missing in rerun";
        if (it->second != v) return k + " differs";
    }
    for (const auto& [k, v] : b)
        if (!a.count(k)) return k + " only in rerun";
    return "";
}

struct Shell {
    int code = -1;
    std::string out, err;
};

Shell shell(const std::string& cmd, const fs::path& tmp) {
    const auto o = tmp / "stdout", e = tmp / "stderr";
    const int status = std::system((cmd + " >'" + o.string() + "' 2>'" + e.string() + "'").c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(o), read_file(e)};
}

}  // namespace

int main() {
    const auto& files = fixture_files();

    criterion(1, [] {
        const auto t = Clock::now();
        const rsem::RiskWeights w{0.7, 0.3, 0};
        const std::vector<std::tuple<double, double, double>> table{{0.92, 0.15, 0.599}, {0.84, 0.30, 0.498},
                                                                    {0.15, 0.0, 0.105}};
        bool ok = true;
        std::string got;
        for (const auto& [c, i, want] : table) {
            const auto s = rsem::composite_score(c, i, 0, w);
            ok = ok && std::abs(s - want) <= 1e-9;
            got += (got.empty() ? "" : ", ") + fmt(s, 12);
        }
        const auto secs = seconds_since(t);
        report(1, ok && secs < 1.0, "composite scores " + got + " in " + fmt(secs * 1000) + " ms");
    });

    criterion(2, [] {
        const auto& s = poc_state();
        const auto inc = poc_incident();
        const auto hyp = [](std::string id, std::vector<std::string> chain) {
            nce::Hypothesis h;
            h.hypothesis_id = std::move(id);
            h.technique_chain = std::move(chain);
            return h;
        };
        const auto t = Clock::now();
        const auto h1 = sse::validate_hypothesis(hyp("H1", {"T1078", "T1021.002"}), inc, s);
        const auto h2 = sse::validate_hypothesis(hyp("H2", {"T1558", "T1550.003", "T1078.002"}), inc, s);
        auto h3h = hyp("H3", {"BENIGN-MISCONFIG"});
        h3h.kind = nce::HypothesisKind::Benign;
        const auto h3 = sse::validate_hypothesis(h3h, inc, s);
        const auto secs = seconds_since(t);
        const bool nodes = s.graph.nodes().size() == 50;
        const bool v1 = h1.status == sse::FeasibilityStatus::Feasible;
        const bool v2 = h2.status == sse::FeasibilityStatus::ConditionallyFeasible && h2.dependencies.size() == 1 &&
                        h2.dependencies[0].predicate.category() == "credentials";
        const bool v3 = h3.status == sse::FeasibilityStatus::Infeasible && h3.failed_predicate &&
                        h3.failed_predicate->kind == PredicateKind::ServiceAssociated;
        report(2, nodes && v1 && v2 && v3 && secs < 1.0,
               std::to_string(s.graph.nodes().size()) + " nodes; H1 " + sse::to_string(h1.status) + ", H2 " +
                   sse::to_string(h2.status) + " (" + (h2.dependencies.empty() ? "-" : h2.dependencies[0].note) +
                   "), H3 " + sse::to_string(h3.status) + " (" + h3.reason + ") in " + fmt(secs * 1000) + " ms");
    });

    criterion(3, [&] {
        TempDir tmp("acc-cli");
        const auto t = Clock::now();
        const auto r = shell(std::string(AGENTSOC_CLI) + " run --json --events '" + files.poc.string() +
                                 "' --snapshot '" + files.snapshot.string() + "' --out '" + (tmp / "run").string() + "'",
                             tmp.path());
        const auto secs = seconds_since(t);
        if (r.code != 0) return report(3, false, "agentsoc run exited " + std::to_string(r.code) + ": " + r.err);
        const auto rep = json::parse(r.out);
        const auto& c = rep.at("cycles").at(0);
        const auto top = c.at("ranked").at(0).at("action").get<std::string>();
        const auto impact = c.at("playbook").at("projected_impact").get<double>();
        const auto guard = c.at("guardrail").at("outcome").get<std::string>();
        const bool ok = top == "ISOLATE_HOST(ws-fin-27)" && rep.at("mode") == "DryRun" && guard == "AutoExecute" &&
                        c.at("status") == "Executed" && std::abs(impact - 0.15) < 1e-9 && impact < 0.5 && secs < 5.0;
        report(3, ok,
               "top " + top + ", guardrail " + guard + ", status " + c.at("status").get<std::string>() + " (" +
                   rep.at("mode").get<std::string>() + "), impact " + fmt(impact) + " < 0.5, " + fmt(secs) + " s");
    });

    criterion(4, [] {
        const auto hs = nce::generate_hypotheses(poc_incident(), poc_state(), nce::GeneratorConfig{},
                                                 nce::TechniqueMapping::bundled());
        const auto& cat = *poc_state().catalog;
        bool ok = hs.size() >= 3 && hs.front().kind == nce::HypothesisKind::Malicious &&
                  hs.back().kind == nce::HypothesisKind::Benign;
        std::string chain;
        if (!hs.empty()) {
            const auto& top = hs.front().technique_chain;
            bool creds = !top.empty() && (top.front() == "T1078" || cat.at(top.front()).tactic == "credential-access");
            bool lateral = std::any_of(top.begin(), top.end(),
                                       [&](const auto& id) { return cat.at(id).tactic == "lateral-movement"; });
            ok = ok && creds && lateral;
            for (const auto& id : top) chain += (chain.empty() ? "" : " -> ") + id;
        }
        report(4, ok,
               std::to_string(hs.size()) + " hypotheses; top " + chain + " (" +
                   (hs.empty() ? "" : fmt(hs.front().confidence)) + "), last " +
                   (hs.empty() ? "" : nce::to_string(hs.back().kind)));
    });

    // One LANL run feeds criteria 5 and 6.
    TempDir lanl_a("acc-lanl-a"), lanl_b("acc-lanl-b");
    std::optional<pipeline::BatchResult> first;
    double lanl_secs = 0;
    try {
        config::Config cfg;
        const auto t = Clock::now();
        first = run_fixture(files.lanl, lanl_a.path(), cfg);
        lanl_secs = seconds_since(t);
    } catch (const std::exception& e) {
        report(5, false, std::string("LANL run failed: ") + e.what());
        report(6, false, std::string("LANL run failed: ") + e.what());
    }

    if (first) criterion(5, [&] {
        const auto poc = run_fixture(files.poc, std::nullopt, config::Config{});
        const auto& nl = first->report.at("timings").at("non_llm");
        const auto median = nl.at("median_ms").get<double>();
        const auto poc_median = poc.report.at("timings").at("non_llm").at("median_ms").get<double>();
        report(5, median <= 100.0 && poc_median <= 100.0,
               "normalize+enrich+SSE+RSEM median " + fmt(median) + " ms over " +
                   std::to_string(nl.at("cycles").get<std::size_t>()) + " LANL cycles, " + fmt(poc_median) +
                   " ms on the reference incident (limit 100 ms)");
    });

    if (first) criterion(6, [&] {
        const auto second = run_fixture(files.lanl, lanl_b.path(), config::Config{});
        const auto& rep = first->report;
        const bool same = pipeline::canonical_report(rep) == pipeline::canonical_report(second.report) &&
                          pipeline::canonical_report(json::parse(read_file(lanl_a / "report.json"))) ==
                              pipeline::canonical_report(json::parse(read_file(lanl_b / "report.json")));
        std::string counts;
        for (const auto& [k, v] : rep.at("status_counts").items())
            counts += (counts.empty() ? "" : ", ") + k + " " + std::to_string(v.get<int>());
        report(6, rep.at("events").at("total") == 5000 && rep.at("mode") == "DryRun" && lanl_secs <= 10.0 && same,
               std::to_string(rep.at("events").at("total").get<int>()) + " events, " +
                   std::to_string(rep.at("clusters").get<int>()) + " incidents (" + counts + ") in " + fmt(lanl_secs) +
                   " s; rerun report " + (same ? "identical" : "DIFFERS"));
    });

    criterion(7, [] {
        const auto t = Clock::now();
        const auto r = check_graph_oracles(20240601, 1000);
        report(7, r.ok() && r.cases >= 1000,
               std::to_string(r.cases) + " random graphs (<=12 nodes), " + std::to_string(r.failures) +
                   " disagreements with brute force" + (r.first_failure.empty() ? "" : "; first: " + r.first_failure) +
                   " [" + fmt(seconds_since(t)) + " s]");
    });

    criterion(8, [] {
        const auto r = check_scoring(20240602, 10000);
        report(8, r.ok() && r.cases >= 10000,
               std::to_string(r.cases) + " scoring cases, " + std::to_string(r.failures) + " violations" +
                   (r.first_failure.empty() ? "" : "; first: " + r.first_failure));
    });

    criterion(9, [] {
        const auto r = check_safety(20240603, 1000);
        report(9, r.ok() && r.cases >= 1000,
               std::to_string(r.cases) + " random playbooks, " + std::to_string(r.failures) + " violations" +
                   (r.first_failure.empty() ? "" : "; first: " + r.first_failure));
    });

    criterion(10, [&] {
        std::string diff;
        std::size_t compared = 0;
        for (const auto& events : {files.poc, files.lanl}) {
            TempDir a("acc-det-a"), b("acc-det-b");
            const auto ra = run_fixture(events, a.path(), config::Config{});
            const auto rb = run_fixture(events, b.path(), config::Config{});
            if (pipeline::canonical_report(ra.report) != pipeline::canonical_report(rb.report))
                diff = events.filename().string() + ": report differs";
            const auto va = journal_view(a.path()), vb = journal_view(b.path());
            if (diff.empty()) {
                const auto d = describe_diff(va, vb);
                if (!d.empty()) diff = events.filename().string() + ": " + d;
            }
            compared += va.size();
        }
        report(10, diff.empty(),
               "POC and LANL batches rerun: " + std::to_string(compared) +
                   " journal files compared with timing and clock fields removed; " +
                   (diff.empty() ? "identical" : diff));
    });

    std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed"))
              << std::endl;
    return failed ? 1 : 0;
}
