#pragma once

// Randomised property checks shared by the unit tests (small counts) and the acceptance runner.

#include <cmath>
#include <random>
#include <string>

#include "agentsoc/playbook.hpp"
#include "support.hpp"

namespace testsupport {

struct PropertyResult {
    std::size_t cases = 0;
    std::size_t failures = 0;
    std::string first_failure;

    void fail(const std::string& what) {
        if (failures++ == 0) first_failure = what;
    }
    bool ok() const { return failures == 0 && cases > 0; }
};

inline std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
    return out;
}

// reachable_path, find_attack_path, validate_hypothesis and estimate_containment against the oracles.
inline PropertyResult check_graph_oracles(std::uint64_t seed, std::size_t graphs) {
    PropertyResult r;
    std::mt19937_64 rng(seed);
    const auto calibration = rsem::Calibration::bundled();
    for (std::size_t gi = 0; gi < graphs; ++gi) {
        const auto w = random_world(rng);
        const auto& g = w.state.graph;
        const auto og = oracle::from(g);
        const auto tag = "graph " + std::to_string(gi) + ": ";
        if (g.nodes().size() > 12) r.fail(tag + "generator produced more than 12 nodes");

        // reachable_path over every host pair and protocol
        for (const auto& a : w.hosts)
            for (const auto& b : w.hosts)
                for (const std::string proto : {"", "SMB", "RDP", "SSH"}) {
                    const auto got = knowledge::reachable_path(g, a, b, proto);
                    const auto want = oracle::shortest(og, {a}, b, proto);
                    if (got.has_value() != want.has_value() || (got && *got != want->nodes))
                        r.fail(tag + "reachable_path " + a + "->" + b + " " + proto);
                }

        // find_attack_path from random session sets (users mixed in are ignored)
        for (int k = 0; k < 4; ++k) {
            std::set<std::string> sessions;
            for (const auto& h : w.hosts)
                if (rng() % 3 == 0) sessions.insert(h);
            if (rng() % 2) sessions.insert(w.users[0]);
            const auto target = w.hosts[rng() % w.hosts.size()];
            const std::string proto = rng() % 2 ? "*" : protocols()[rng() % 3];
            const auto got = sse::find_attack_path(g, sessions, target, proto);
            std::vector<std::string> srcs;
            for (const auto& s : sessions)
                if (og.nodes.at(s).kind == NodeKind::Host) srcs.push_back(s);
            const auto want = srcs.empty() ? std::nullopt : oracle::shortest(og, srcs, target, proto);
            if (got.has_value() != want.has_value() ||
                (got && (got->nodes != want->nodes || to_oedges(got->edges) != want->edges)))
                r.fail(tag + "find_attack_path to " + target + " from {" +
                       join({sessions.begin(), sessions.end()}) + "} " + proto);
        }

        // validate_hypothesis on random chains
        const auto incident = random_incident(rng, w);
        std::vector<nce::Hypothesis> hyps;
        std::vector<std::vector<std::string>> chains;
        std::vector<sse::FeasibilityVerdict> verdicts;
        const auto nh = 1 + rng() % 3;
        for (std::size_t i = 0; i < nh; ++i) {
            nce::Hypothesis h;
            h.hypothesis_id = "H" + std::to_string(i + 1);
            h.technique_chain = random_chain(rng, *w.state.catalog);
            const auto got = sse::validate_hypothesis(h, incident, w.state);
            const auto want = oracle::validate(og, h.technique_chain, incident, *w.state.catalog, w.state.unmodeled);
            std::vector<std::string> dep_techniques;
            for (const auto& d : got.dependencies) dep_techniques.push_back(d.technique_id);
            bool same = got.status == oracle::to_lib(want.status) && got.failed_technique == want.failed_technique &&
                        dep_techniques == want.dependency_techniques;
            if (same && want.failed_kind) same = got.failed_predicate && got.failed_predicate->kind == *want.failed_kind;
            if (same && want.status != oracle::Status::Infeasible)
                same = got.witness && got.witness->nodes == want.witness_nodes &&
                       to_oedges(got.witness->edges) == want.witness_edges;
            if (same && want.status == oracle::Status::Infeasible) same = !got.witness;
            if (!same)
                r.fail(tag + "validate_hypothesis [" + join(h.technique_chain) + "] " + incident.user.id + "@" +
                       incident.source_host.id + " got " + sse::to_string(got.status) + " want " +
                       sse::to_string(oracle::to_lib(want.status)));
            hyps.push_back(h);
            chains.push_back(h.technique_chain);
            verdicts.push_back(got);
        }

        // estimate_containment raw fraction against before/after path counting
        const rsem::ScoringContext ctx{incident, w.state, hyps, verdicts};
        for (auto p : playbook::all_primitives()) {
            if (p == playbook::ActionPrimitive::MONITOR_ONLY) continue;
            const auto target = random_target(rng, w, p);
            if (target.empty()) continue;
            playbook::Parameters params;
            std::string host_param;
            if (p == playbook::ActionPrimitive::REVOKE_SESSION && rng() % 2) {
                host_param = w.hosts[rng() % w.hosts.size()];
                params["host"] = host_param;
            }
            const auto got = rsem::estimate_containment(p, target, params, ctx, calibration);
            const auto want =
                oracle::containment(og, p, target, chains, incident, *w.state.catalog, w.state.unmodeled, host_param);
            const double want_raw = want.total == 0 ? 0.0 : static_cast<double>(want.cut) / want.total;
            if (got.cut != want.cut || got.total != want.total || got.raw != want_raw)
                r.fail(tag + "containment " + playbook::to_string(p) + "(" + target + ") got " + std::to_string(got.cut) +
                       "/" + std::to_string(got.total) + " want " + std::to_string(want.cut) + "/" +
                       std::to_string(want.total));
        }
        ++r.cases;
    }
    return r;
}

// Values on a 0.05 grid so that exact ties occur.
inline double grid(std::mt19937_64& rng) { return static_cast<double>(rng() % 21) / 20.0; }

inline double dbl(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng() % 1000001) / 1000000.0;
}

inline std::vector<std::string> order_of(const std::vector<rsem::RankedAction>& ranked) {
    std::vector<std::string> ids;
    for (const auto& a : ranked) ids.push_back(a.candidate.action_id);
    return ids;
}

// Monotonicity, ranking invariance under positive weight scaling, gamma=0 reduction.
inline PropertyResult check_scoring(std::uint64_t seed, std::size_t cases) {
    PropertyResult r;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < cases; ++i) {
        rsem::RiskWeights w{dbl(rng, 0.01, 1.0), dbl(rng, 0.0, 1.0), rng() % 3 ? dbl(rng, 0.0, 1.0) : 0.0};
        const auto tag = "case " + std::to_string(i) + ": ";
        const double c1 = grid(rng), c2 = grid(rng), i1 = grid(rng), i2 = grid(rng), k = grid(rng);
        const auto s = [&](double c, double im) { return rsem::composite_score(c, im, k, w); };
        if (c1 < c2 && !(s(c1, i1) < s(c2, i1))) r.fail(tag + "score not increasing in containment");
        if (i1 < i2 && !(s(c1, i1) >= s(c1, i2))) r.fail(tag + "score not decreasing in impact");
        if (w.beta > 0 && i1 < i2 && !(s(c1, i1) > s(c1, i2))) r.fail(tag + "score not strictly decreasing in impact");

        // gamma = 0 is exactly alpha*C - beta*I
        rsem::RiskWeights w0 = w;
        w0.gamma = 0;
        if (rsem::composite_score(c1, i1, k, w0) != w.alpha * c1 - w.beta * i1) r.fail(tag + "gamma=0 reduction");

        std::vector<rsem::ActionCandidate> cands;
        const auto n = 2 + rng() % 5;
        for (std::size_t j = 0; j < n; ++j) {
            rsem::ActionCandidate c;
            c.action_id = "A" + std::to_string(j + 1);
            c.containment = grid(rng);
            c.business_impact = grid(rng);
            c.execution_cost = grid(rng);
            cands.push_back(c);
        }
        const double scale = dbl(rng, 0.5, 4.0);
        const rsem::RiskWeights ws{w.alpha * scale, w.beta * scale, w.gamma * scale};
        const auto base = rsem::rank_actions(cands, w);
        if (order_of(base) != order_of(rsem::rank_actions(cands, ws)))
            r.fail(tag + "ranking changed under weight scaling by " + std::to_string(scale));
        for (std::size_t j = 0; j + 1 < base.size(); ++j)
            if (base[j].composite + 1e-9 < base[j + 1].composite) r.fail(tag + "ranking not descending");
        ++r.cases;
    }
    return r;
}

// Independent reading of the policy matching rules.
inline bool oracle_policy_match(const knowledge::PolicyConstraint& p, const std::string& primitive,
                                const std::string& target, const knowledge::EnterpriseGraph& g) {
    if (!p.primitives.empty() && !std::count(p.primitives.begin(), p.primitives.end(), primitive)) return false;
    if (!p.target_ids.empty() && !std::count(p.target_ids.begin(), p.target_ids.end(), target)) return false;
    const auto* n = g.find(target);
    if (!p.target_kinds.empty() && (!n || !std::count(p.target_kinds.begin(), p.target_kinds.end(), n->kind))) return false;
    if (!p.target_tag.empty()) {
        if (!n) return false;
        const auto tags = split(n->attribute("tags"), ',');
        bool found = false;
        for (const auto& t : tags) found = found || trim(t) == p.target_tag;
        if (!found) return false;
    }
    if (p.min_criticality && (!n || !n->criticality || *n->criticality < *p.min_criticality)) return false;
    if (p.max_privilege_tier && (!n || !n->privilege_tier || *n->privilege_tier > *p.max_privilege_tier)) return false;
    return true;
}

// Dry-run purity, rollback inversion, guardrail soundness and audit completeness on the fixture.
inline PropertyResult check_safety(std::uint64_t seed, std::size_t playbooks) {
    PropertyResult r;
    std::mt19937_64 rng(seed);
    const auto& base = poc_state();
    std::map<knowledge::NodeKind, std::vector<std::string>> by_kind;
    for (const auto& [id, n] : base.graph.nodes()) by_kind[n.kind].push_back(id);
    const auto canonical = knowledge::canonical_dump(base);
    TempDir dir("safety");
    playbook::SimulatedExecutor executor;
    const double threshold = 0.5;

    for (std::size_t i = 0; i < playbooks; ++i) {
        const auto tag = "playbook " + std::to_string(i) + ": ";
        playbook::Playbook pb;
        pb.playbook_id = "PB-R" + std::to_string(i);
        pb.incident_id = "INC-R-" + std::to_string(i);
        const auto nsteps = 1 + rng() % 4;
        for (std::size_t s = 0; s < nsteps; ++s) {
            const auto& prims = playbook::all_primitives();
            const auto p = prims[rng() % prims.size()];
            auto kinds = playbook::primitive_info(p).target_kinds;
            if (kinds.empty()) kinds = {knowledge::NodeKind::User};
            const auto& pool = by_kind[kinds[rng() % kinds.size()]];
            playbook::PlaybookStep step;
            step.primitive = p;
            step.target = pool[rng() % pool.size()];
            step.provenance = "A" + std::to_string(s + 1);
            step.impact = grid(rng);
            pb.steps.push_back(step);
            pb.projected_impact = std::max(pb.projected_impact, step.impact);
        }

        // Guardrail soundness
        const auto decision = playbook::evaluate_guardrails(pb, base, threshold);
        bool forbid = false, approval = false;
        for (const auto& policy : base.policies)
            for (const auto& s : pb.steps)
                if (oracle_policy_match(policy, playbook::to_string(s.primitive), s.target, base.graph))
                    (policy.effect == knowledge::PolicyEffect::Forbid ? forbid : approval) = true;
        const bool over = pb.projected_impact >= threshold;
        const auto expected = forbid ? playbook::GuardrailOutcome::Rejected
                              : (approval || over) ? playbook::GuardrailOutcome::RequiresAnalyst
                                                   : playbook::GuardrailOutcome::AutoExecute;
        if (decision.outcome != expected)
            r.fail(tag + "guardrail " + playbook::to_string(decision.outcome) + " want " + playbook::to_string(expected));

        // Dry-run purity: the draft runs against a scratch copy only.
        {
            knowledge::KnowledgeStore store(base);
            auto draft = pb;
            const auto rep = playbook::execute_playbook(draft, playbook::ExecutionMode::DryRun, store, executor);
            if (store.version() != base.version() || knowledge::canonical_dump(*store.snapshot()) != canonical)
                r.fail(tag + "dry-run changed the store");
            for (const auto& st : rep.steps)
                if (st.status == playbook::StepStatus::Applied) r.fail(tag + "dry-run step reported Applied");
        }

        playbook::apply_decision(pb, decision);
        const bool analyst_approves = rng() % 2 == 0;
        if (pb.status == playbook::PlaybookStatus::AwaitingAnalyst && analyst_approves)
            pb.transition(playbook::PlaybookStatus::Approved);

        knowledge::KnowledgeStore store(base);
        playbook::AuditLog audit(dir / ("audit-" + std::to_string(i) + ".jsonl"));
        if (pb.status != playbook::PlaybookStatus::Approved) {
            // Nothing unapproved may run live.
            bool threw = false;
            try {
                playbook::execute_playbook(pb, playbook::ExecutionMode::Live, store, executor, 0, &audit);
            } catch (const playbook::ExecutionError&) {
                threw = true;
            }
            if (!threw || store.version() != base.version()) r.fail(tag + "unapproved playbook executed live");
            ++r.cases;
            continue;
        }
        if (forbid) r.fail(tag + "Forbid-matched playbook reached Approved");
        if ((approval || over) && decision.outcome == playbook::GuardrailOutcome::AutoExecute)
            r.fail(tag + "high-impact playbook auto-approved");

        auto rep = playbook::execute_playbook(pb, playbook::ExecutionMode::Live, store, executor, 0, &audit);

        // Audit completeness: one record per attempted step, in the report and on disk.
        std::size_t attempted = 0;
        for (const auto& st : rep.steps) {
            if (st.status == playbook::StepStatus::Skipped) continue;
            ++attempted;
            const bool logged = std::any_of(rep.audit.begin(), rep.audit.end(), [&](const playbook::AuditEntry& a) {
                return a.step_index == st.step_index && a.status == playbook::to_string(st.status) &&
                       a.delta_id == st.delta_id && a.playbook_id == pb.playbook_id;
            });
            if (!logged) r.fail(tag + "step " + std::to_string(st.step_index) + " missing from audit");
            if (st.status == playbook::StepStatus::Applied && !st.delta.empty() && st.delta_id.empty())
                r.fail(tag + "applied mutation without delta id");
        }
        if (rep.audit.size() != attempted || count_lines(audit.path()) != attempted)
            r.fail(tag + "audit record count mismatch");

        // Rollback inversion
        playbook::rollback(rep, pb, store);
        if (!same_content(store.snapshot()->graph, base.graph)) r.fail(tag + "rollback did not restore the graph");
        ++r.cases;
    }
    return r;
}

}  // namespace testsupport
