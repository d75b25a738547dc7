#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "agentsoc/ingest.hpp"
#include "agentsoc/knowledge.hpp"

// Deterministic synthetic enterprise used by the reference scenario and the tests.
namespace agentsoc::fixture {

inline constexpr Timestamp kPocStart = 1699833600;       // 2023-11-13T00:00:00Z
inline constexpr Timestamp kPocAttackTime = 1699968161;  // 2023-11-14T13:22:41Z
inline constexpr std::uint64_t kDefaultSeed = 42;

// 50 nodes: 22 hosts, 18 users, 6 groups, 4 services.
knowledge::KnowledgeState poc_snapshot(std::uint64_t seed = kDefaultSeed);

// Routine traffic that stays inside every user's baseline, ending with the
// user123 TGT request from ws-fin-27 to srv-fin-03.
std::vector<ingest::AuthEvent> poc_events(const knowledge::KnowledgeState& snapshot, std::uint64_t seed = kDefaultSeed);

// LANL-format stream over the same topology with injected anomalies.
std::vector<ingest::AuthEvent> lanl_sample(const knowledge::KnowledgeState& snapshot, std::uint64_t seed = kDefaultSeed,
                                           std::size_t count = 5000);

std::string events_text(const std::vector<ingest::AuthEvent>& events);

// Writes snapshot.json, poc_events.txt, lanl_sample.txt, techniques.json,
// technique_mapping.json and rsem_calibration.json into `dir`.
void write_fixture(const std::filesystem::path& dir, std::uint64_t seed = kDefaultSeed);

}  // namespace agentsoc::fixture
