#include <doctest.h>

#include "properties.hpp"

using namespace testsupport;

// Smaller corpora than the acceptance runner; different seeds so the two widen coverage.

TEST_CASE("graph queries and feasibility agree with brute-force enumeration") {
    const auto r = check_graph_oracles(7, 300);
    INFO(r.first_failure);
    CHECK(r.failures == 0);
    CHECK(r.cases == 300);
}

TEST_CASE("scoring is monotone, scale invariant and reduces to alpha*C - beta*I") {
    const auto r = check_scoring(11, 3000);
    INFO(r.first_failure);
    CHECK(r.failures == 0);
}

TEST_CASE("random playbooks respect dry-run purity, rollback, guardrails and audit") {
    const auto r = check_safety(13, 200);
    INFO(r.first_failure);
    CHECK(r.failures == 0);
}

TEST_CASE("oracle shortest path handles the trivial cases") {
    oracle::OGraph g;
    g.nodes["a"] = {NodeKind::Host, {}, {}};
    g.nodes["b"] = {NodeKind::Host, {}, {}};
    g.nodes["c"] = {NodeKind::Host, {}, {}};
    g.edges = {{"a", "b", EdgeKind::Reachable, "SMB"}, {"a", "b", EdgeKind::Reachable, "RDP"},
               {"b", "c", EdgeKind::Reachable, "SMB"}};
    const auto p = oracle::shortest(g, {"a"}, "c", "*");
    REQUIRE(p);
    CHECK(p->nodes == std::vector<std::string>{"a", "b", "c"});
    CHECK(p->edges[0].protocol == "RDP");
    CHECK(!oracle::shortest(g, {"a"}, "c", "RDP"));
    CHECK(oracle::shortest(g, {"c"}, "c", "*")->nodes.size() == 1);
}
