#include "agentsoc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace agentsoc::pipeline {

using playbook::ExecutionMode;
using playbook::PlaybookStatus;

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t micros_since(Clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start).count();
}

std::vector<StageTiming> empty_timings() {
    std::vector<StageTiming> t;
    for (const auto* s : kStages) t.push_back({s, 0, false});
    return t;
}

template <class F>
void timed(CycleResult& c, std::size_t stage, F&& f) {
    const auto start = Clock::now();
    try {
        f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        c.timings[stage] = {kStages[stage], micros_since(start), true};
        throw StageError(kStages[stage], e.what());
    }
    c.timings[stage] = {kStages[stage], micros_since(start), true};
}

std::string read_file(const std::filesystem::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + what + " " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string step_label(playbook::ActionPrimitive p, const std::string& target) {
    return playbook::to_string(p) + "(" + target + ")";
}

json approval_json(const ApprovalRecord& a) {
    json j;
    j["requested_at"] = a.requested_at;
    j["triggered_rules"] = a.triggered_rules;
    j["projected_impact"] = a.projected_impact;
    j["summary"] = a.summary;
    j["decision"] = a.decision ? json(*a.decision) : json(nullptr);
    j["decided_by"] = a.decided_by ? json(*a.decided_by) : json(nullptr);
    j["decided_at"] = a.decided_at ? json(*a.decided_at) : json(nullptr);
    return j;
}

ApprovalRecord approval_from_json(const json& j) {
    ApprovalRecord a;
    a.requested_at = j.value("requested_at", std::string{});
    a.triggered_rules = j.value("triggered_rules", std::vector<std::string>{});
    a.projected_impact = j.value("projected_impact", 0.0);
    a.summary = j.value("summary", std::string{});
    const auto opt = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<std::string>();
    };
    a.decision = opt("decision");
    a.decided_by = opt("decided_by");
    a.decided_at = opt("decided_at");
    return a;
}

std::string normalize_decision(const std::string& d) {
    std::string lower;
    for (char ch : d) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (lower == "approved" || lower == "approve") return "Approved";
    if (lower == "rejected" || lower == "reject") return "Rejected";
    throw ValidationError("decision must be Approved or Rejected, got '" + d + "'");
}

json cycle_summary(const CycleResult& c) {
    json j;
    j["cycle_id"] = c.cycle_id;
    j["status"] = c.status();
    if (!c.error.empty()) {
        j["error_stage"] = c.error_stage;
        j["error"] = c.error;
        return j;
    }
    const auto& inc = c.incident;
    j["user"] = inc.user.id;
    j["source_host"] = inc.source_host.id;
    j["target_host"] = inc.target_host ? json(inc.target_host->id) : json(nullptr);
    j["event_summary"] = inc.event_summary;
    j["flags"] = inc.flags;
    j["alerts"] = inc.member_alert_ids.size();
    j["max_severity"] = inc.max_severity;
    j["hypotheses"] = json::array();
    for (const auto& h : c.hypotheses)
        j["hypotheses"].push_back({{"id", h.hypothesis_id},
                                   {"kind", nce::to_string(h.kind)},
                                   {"description", h.description},
                                   {"chain", h.technique_chain},
                                   {"confidence", h.confidence}});
    j["verdicts"] = json::array();
    for (const auto& v : c.verdicts) {
        std::vector<std::string> deps;
        for (const auto& d : v.dependencies) deps.push_back(d.note);
        j["verdicts"].push_back({{"hypothesis_id", v.hypothesis_id},
                                 {"status", sse::to_string(v.status)},
                                 {"reason", v.reason},
                                 {"dependencies", deps}});
    }
    j["ranked"] = json::array();
    for (const auto& r : c.ranked)
        j["ranked"].push_back({{"rank", r.rank},
                               {"action_id", r.candidate.action_id},
                               {"action", step_label(r.candidate.primitive, r.candidate.target)},
                               {"containment", r.candidate.containment},
                               {"business_impact", r.candidate.business_impact},
                               {"composite", r.composite}});
    j["recommendation"] = c.ranked.empty() ? json(nullptr)
                                           : json(step_label(c.ranked.front().candidate.primitive,
                                                             c.ranked.front().candidate.target));
    std::vector<std::string> steps;
    for (const auto& s : c.playbook.steps) steps.push_back(step_label(s.primitive, s.target));
    j["playbook"] = {{"playbook_id", c.playbook.playbook_id},
                     {"steps", steps},
                     {"projected_impact", c.playbook.projected_impact},
                     {"status", playbook::to_string(c.playbook.status)}};
    j["guardrail"] = {{"outcome", playbook::to_string(c.guardrail.outcome)},
                      {"triggered_rules", c.guardrail.triggered_rules}};
    j["fallback"] = c.fallback;
    j["assessment"] = c.assessment ? json(monitor::to_string(c.assessment->verdict)) : json(nullptr);
    return j;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string CycleResult::status() const {
    if (!error.empty()) return "Failed";
    return playbook::to_string(playbook.status);
}

json to_json(const CycleResult& c) {
    json j;
    j["cycle_id"] = c.cycle_id;
    j["status"] = c.status();
    j["mode"] = playbook::to_string(c.mode);
    j["error"] = c.error;
    j["error_stage"] = c.error_stage;
    j["incident"] = perception::to_json(c.incident);
    j["alerts"] = json::array();
    for (const auto& a : c.alerts) j["alerts"].push_back(perception::to_json(a));
    j["generator"] = c.generator;
    j["generator_diagnostics"] = c.generator_diagnostics;
    j["hypotheses"] = json::array();
    for (const auto& h : c.hypotheses) j["hypotheses"].push_back(nce::to_json(h));
    j["verdicts"] = json::array();
    for (const auto& v : c.verdicts) j["verdicts"].push_back(sse::to_json(v));
    j["weights"] = {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma}};
    j["ranked"] = json::array();
    for (const auto& r : c.ranked) j["ranked"].push_back(rsem::to_json(r));
    j["playbook"] = c.error.empty() || !c.playbook.playbook_id.empty() ? playbook::to_json(c.playbook) : json(nullptr);
    j["guardrail"] = playbook::to_json(c.guardrail);
    j["execution"] = c.execution ? playbook::to_json(*c.execution) : json(nullptr);
    j["fallback"] = c.fallback;
    j["assessment"] = c.assessment ? monitor::to_json(*c.assessment) : json(nullptr);
    j["feedback"] = c.feedback ? knowledge::to_json(*c.feedback) : json(nullptr);
    j["feedback_applied"] = c.feedback_applied;
    j["approval"] = c.approval ? approval_json(*c.approval) : json(nullptr);
    j["timings"] = json::array();
    for (const auto& t : c.timings) j["timings"].push_back({{"stage", t.stage}, {"micros", t.micros}, {"ran", t.ran}});
    j["total_micros"] = c.total_micros;
    j["effective_time"] = c.effective_time;
    j["post_events"] = json::array();
    for (const auto& e : c.post_events) j["post_events"].push_back(ingest::to_json(e));
    j["post_alerts"] = json::array();
    for (const auto& a : c.post_alerts) j["post_alerts"].push_back(ingest::to_json(a));
    return j;
}

CycleResult cycle_from_json(const json& j) {
    CycleResult c;
    c.cycle_id = j.at("cycle_id").get<std::string>();
    c.mode = playbook::execution_mode_from_string(j.value("mode", std::string("DryRun")));
    c.error = j.value("error", std::string{});
    c.error_stage = j.value("error_stage", std::string{});
    if (j.contains("incident") && !j.at("incident").is_null()) c.incident = perception::incident_from_json(j.at("incident"));
    for (const auto& a : j.value("alerts", json::array()))
        c.alerts.push_back(perception::normalize({a.at("source_system").get<std::string>(), a.at("raw_payload")}));
    c.generator = j.value("generator", std::string("builtin"));
    c.generator_diagnostics = j.value("generator_diagnostics", std::vector<std::string>{});
    for (const auto& h : j.value("hypotheses", json::array())) c.hypotheses.push_back(nce::hypothesis_from_json(h));
    for (const auto& v : j.value("verdicts", json::array())) c.verdicts.push_back(sse::verdict_from_json(v));
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        c.weights = {w.at("alpha").get<double>(), w.at("beta").get<double>(), w.at("gamma").get<double>()};
    }
    for (const auto& r : j.value("ranked", json::array())) c.ranked.push_back(rsem::ranked_from_json(r));
    if (j.contains("playbook") && !j.at("playbook").is_null()) c.playbook = playbook::playbook_from_json(j.at("playbook"));
    if (j.contains("guardrail") && !j.at("guardrail").is_null())
        c.guardrail = playbook::decision_from_json(j.at("guardrail"));
    if (j.contains("execution") && !j.at("execution").is_null())
        c.execution = playbook::report_from_json(j.at("execution"));
    c.fallback = j.value("fallback", false);
    if (j.contains("assessment") && !j.at("assessment").is_null())
        c.assessment = monitor::assessment_from_json(j.at("assessment"));
    if (j.contains("feedback") && !j.at("feedback").is_null()) c.feedback = knowledge::delta_from_json(j.at("feedback"));
    c.feedback_applied = j.value("feedback_applied", false);
    if (j.contains("approval") && !j.at("approval").is_null()) c.approval = approval_from_json(j.at("approval"));
    c.timings = empty_timings();
    const auto timings = j.value("timings", json::array());
    for (std::size_t i = 0; i < timings.size() && i < c.timings.size(); ++i) {
        c.timings[i].micros = timings[i].value("micros", std::int64_t{0});
        c.timings[i].ran = timings[i].value("ran", false);
    }
    c.total_micros = j.value("total_micros", std::int64_t{0});
    c.effective_time = j.value("effective_time", Timestamp{0});
    for (const auto& e : j.value("post_events", json::array())) c.post_events.push_back(ingest::auth_event_from_json(e));
    for (const auto& a : j.value("post_alerts", json::array())) c.post_alerts.push_back(ingest::raw_alert_from_json(a));
    return c;
}

// ---------------------------------------------------------------------------

Journal::Journal(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_ / "cycles", ec);
    if (ec) throw Error("cannot create journal directory " + dir_.string() + ": " + ec.message());
}

bool Journal::valid_id(const std::string& id) {
    if (id.empty() || id.size() > 128) return false;
    return std::all_of(id.begin(), id.end(), [](char ch) {
        return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    }) && id != "." && id != "..";
}

void Journal::write_text(const std::string& name, const std::string& text) {
    const auto path = dir_ / name;
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << text;
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void Journal::write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }

std::optional<json> Journal::read_json(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    if (!in) return std::nullopt;
    return json::parse(in);
}

void Journal::write_cycle_json(const std::string& id, const json& j) {
    if (!valid_id(id)) throw ValidationError("invalid cycle id '" + id + "'");
    write_json("cycles/" + id + ".json", j);
}

void Journal::write_cycle(const CycleResult& c) { write_cycle_json(c.cycle_id, to_json(c)); }

std::optional<json> Journal::read_cycle(const std::string& id) const {
    if (!valid_id(id)) return std::nullopt;
    return read_json("cycles/" + id + ".json");
}

std::vector<std::string> Journal::cycle_ids() const {
    std::vector<std::string> ids;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir_ / "cycles", ec)) {
        const auto p = entry.path();
        if (p.extension() == ".json") ids.push_back(p.stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::mutex& Journal::cycle_mutex(const std::string& id) {
    std::lock_guard lock(mu_);
    auto& slot = locks_[id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

// ---------------------------------------------------------------------------

Engine::Engine(config::Config config, knowledge::KnowledgeStore& store, nce::TechniqueMapping mapping,
               rsem::Calibration calibration)
    : config_(std::move(config)), store_(store), mapping_(std::move(mapping)), calibration_(std::move(calibration)),
      baseline_(config_.ingest.detection.failure_window) {
    config_.validate();
    calibration_.validate();
    if (config_.nce.llm.enabled) adapter_ = std::make_unique<nce::LlmAdapter>(config_.nce.llm);
}

void Engine::set_context(std::vector<ingest::AuthEvent> events, std::vector<ingest::RawAlert> alerts) {
    ingest::sort_events(events);
    events_ = std::move(events);
    alerts_ = std::move(alerts);
}

void Engine::set_journal(Journal* journal) {
    journal_ = journal;
    audit_ = journal ? std::make_unique<playbook::AuditLog>(journal->dir() / "audit.jsonl") : nullptr;
}

ExecutionMode Engine::mode() const { return config_.pipeline.live ? ExecutionMode::Live : ExecutionMode::DryRun; }

void Engine::persist(const CycleResult& c) {
    if (!journal_) return;
    journal_->write_cycle(c);
    if (c.mode == ExecutionMode::Live) journal_->write_json("state.json", knowledge::to_json(*store_.snapshot()));
}

CycleResult Engine::run_cycle(const std::vector<perception::SourceRecord>& records, const std::string& incident_id) {
    if (records.empty()) throw ValidationError("no alerts");
    const auto start = Clock::now();
    CycleResult c;
    c.cycle_id = incident_id;
    c.mode = mode();
    c.weights = config_.rsem.weights;
    c.timings = empty_timings();

    perception::AlertCluster cluster;
    timed(c, 0, [&] {
        std::vector<perception::NormalizedAlert> normalized;
        for (const auto& r : records) normalized.push_back(perception::normalize(r));
        auto noise = perception::reduce_noise(std::move(normalized), config_.perception.noise);
        if (noise.clusters.size() != 1)
            throw ValidationError("alerts of one cycle span " + std::to_string(noise.clusters.size()) + " clusters");
        cluster = std::move(noise.clusters.front());
        c.alerts = cluster.members;
        for (const auto& a : c.alerts) c.effective_time = std::max(c.effective_time, a.timestamp);
    });

    std::shared_ptr<const knowledge::KnowledgeState> state;
    timed(c, 1, [&] {
        for (int attempt = 0;; ++attempt) {
            try {
                c.incident = perception::enrich(cluster, store_, baseline_, incident_id, config_.perception.enrich);
                state = store_.snapshot();
                break;
            } catch (const perception::EnrichmentError& e) {
                if (!e.retryable() || attempt >= config_.pipeline.enrichment_retries) throw;
            } catch (const knowledge::StoreUnavailable& e) {
                if (attempt >= config_.pipeline.enrichment_retries) throw;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(config_.pipeline.retry_backoff_ms * (attempt + 1)));
        }
    });

    timed(c, 2, [&] {
        auto g = nce::generate(c.incident, *state, config_.nce.generator, mapping_, adapter_.get());
        c.hypotheses = std::move(g.hypotheses);
        c.generator = g.generator;
        c.generator_diagnostics = std::move(g.diagnostics);
    });

    timed(c, 3, [&] {
        for (const auto& h : c.hypotheses) c.verdicts.push_back(sse::validate_hypothesis(h, c.incident, *state));
    });

    timed(c, 4, [&] {
        rsem::ScoringContext ctx{c.incident, *state, c.hypotheses, c.verdicts};
        c.ranked = rsem::rank_actions(rsem::generate_candidates(ctx, calibration_), c.weights);
    });

    timed(c, 5, [&] {
        c.playbook = playbook::synthesize_playbook(c.incident, c.verdicts, c.ranked, *state, calibration_,
                                                   {config_.playbook.complement_dependencies});
    });

    timed(c, 6, [&] {
        c.guardrail = playbook::evaluate_guardrails(c.playbook, *state, config_.playbook.impact_threshold);
        playbook::apply_decision(c.playbook, c.guardrail);
    });

    const auto lo = std::upper_bound(events_.begin(), events_.end(), c.effective_time,
                                     [](Timestamp t, const ingest::AuthEvent& e) { return t < e.time; });
    const auto hi = std::upper_bound(events_.begin(), events_.end(), c.effective_time + config_.monitor.correlation_window,
                                     [](Timestamp t, const ingest::AuthEvent& e) { return t < e.time; });
    c.post_events.assign(lo, hi);
    for (const auto& a : alerts_)
        if (a.detected_at > c.effective_time && a.detected_at <= c.effective_time + config_.monitor.correlation_window)
            c.post_alerts.push_back(a);

    switch (c.playbook.status) {
        case PlaybookStatus::AwaitingAnalyst: {
            ApprovalRecord a;
            a.requested_at = now_utc();
            a.triggered_rules = c.guardrail.triggered_rules;
            a.projected_impact = c.playbook.projected_impact;
            std::string summary;
            for (const auto& s : c.playbook.steps) summary += (summary.empty() ? "" : ", ") + step_label(s.primitive, s.target);
            a.summary = summary;
            c.approval = a;
            break;
        }
        case PlaybookStatus::Rejected:
            run_fallback(c);
            break;
        default:
            execute_and_monitor(c);
    }
    c.total_micros = micros_since(start);
    persist(c);
    return c;
}

void Engine::execute_and_monitor(CycleResult& c) {
    timed(c, 7, [&] {
        c.execution = playbook::execute_playbook(c.playbook, c.mode, store_, *executor_, c.effective_time, audit_.get());
    });
    timed(c, 8, [&] {
        const auto state = store_.snapshot();
        c.assessment = monitor::assess_outcome(*c.execution, c.post_events, c.post_alerts, *state, config_.monitor);
        auto fb = monitor::emit_feedback(*c.assessment, state->graph);
        fb.timestamp = c.effective_time;
        if (!fb.empty()) {
            // Dry runs never write to the store; the delta is only reported.
            if (c.mode == ExecutionMode::Live) {
                store_.apply_delta(fb);
                c.feedback_applied = true;
            }
            c.feedback = std::move(fb);
        }
        if (c.mode == ExecutionMode::Live && c.assessment->rollback_recommended && !c.fallback &&
            c.playbook.status == PlaybookStatus::Executed)
            playbook::rollback(*c.execution, c.playbook, store_);
    });
}

void Engine::run_fallback(CycleResult& c) {
    // The original playbook stays Rejected; a monitoring step runs in its place.
    playbook::Playbook fb;
    fb.playbook_id = c.playbook.playbook_id + "-fallback";
    fb.incident_id = c.playbook.incident_id;
    fb.created_at = c.playbook.created_at;
    fb.steps.push_back({playbook::ActionPrimitive::MONITOR_ONLY, c.incident.user.id, {}, "fallback:playbook-rejected", 0});
    fb.transition(PlaybookStatus::Approved);
    c.fallback = true;
    timed(c, 7, [&] {
        c.execution = playbook::execute_playbook(fb, c.mode, store_, *executor_, c.effective_time, audit_.get());
    });
    timed(c, 8, [&] {
        const auto state = store_.snapshot();
        c.assessment = monitor::assess_outcome(*c.execution, c.post_events, c.post_alerts, *state, config_.monitor);
    });
}

CycleResult Engine::resume_cycle(const std::string& cycle_id, const std::string& decision, const std::string& analyst) {
    if (!journal_) throw Error("resume needs a run journal");
    const auto verdict = normalize_decision(decision);
    std::lock_guard lock(journal_->cycle_mutex(cycle_id));
    const auto j = journal_->read_cycle(cycle_id);
    if (!j) throw LookupError("unknown cycle id '" + cycle_id + "'");
    auto c = cycle_from_json(*j);
    if (!c.error.empty() || c.playbook.status != PlaybookStatus::AwaitingAnalyst)
        throw playbook::ConflictError("cycle " + cycle_id + " is not awaiting approval (status " + c.status() + ")");
    if (!c.approval) c.approval = ApprovalRecord{};
    c.approval->decision = verdict;
    c.approval->decided_by = analyst.empty() ? "analyst" : analyst;
    c.approval->decided_at = now_utc();

    const auto start = Clock::now();
    try {
        if (verdict == "Approved") {
            c.playbook.transition(PlaybookStatus::Approved);
            execute_and_monitor(c);
        } else {
            c.playbook.transition(PlaybookStatus::Rejected);
            run_fallback(c);
        }
    } catch (const StageError& e) {
        c.error = e.what();
        c.error_stage = e.stage();
    }
    c.total_micros += micros_since(start);
    persist(c);
    if (!c.error.empty()) throw StageError(c.error_stage, c.error);
    return c;
}

// ---------------------------------------------------------------------------

knowledge::KnowledgeState load_state(const std::filesystem::path& snapshot_path) {
    if (!std::filesystem::exists(snapshot_path)) throw Error("snapshot file not found: " + snapshot_path.string());
    auto state = knowledge::load_snapshot(snapshot_path);
    if (state.catalog->techniques().empty())
        state.catalog = std::make_shared<knowledge::TechniqueCatalog>(knowledge::bundled_catalog());
    return state;
}

nce::TechniqueMapping load_mapping(const config::Config& config, const std::filesystem::path& snapshot_path) {
    if (!config.nce.technique_mapping.empty())
        return nce::TechniqueMapping::from_json(
            json::parse(read_file(config.nce.technique_mapping, "technique mapping")));
    const auto beside = snapshot_path.parent_path() / "technique_mapping.json";
    if (!snapshot_path.empty() && std::filesystem::exists(beside))
        return nce::TechniqueMapping::from_json(json::parse(read_file(beside, "technique mapping")));
    return nce::TechniqueMapping::bundled();
}

rsem::Calibration load_calibration(const config::Config& config, const std::filesystem::path& snapshot_path) {
    if (!config.rsem.calibration.empty())
        return rsem::Calibration::from_json(json::parse(read_file(config.rsem.calibration, "calibration")));
    const auto beside = snapshot_path.parent_path() / "rsem_calibration.json";
    if (!snapshot_path.empty() && std::filesystem::exists(beside))
        return rsem::Calibration::from_json(json::parse(read_file(beside, "calibration")));
    return rsem::Calibration::bundled();
}

Percentiles percentiles(std::vector<std::int64_t> micros) {
    Percentiles p;
    if (micros.empty()) return p;
    std::sort(micros.begin(), micros.end());
    const auto rank = [&](double q) {
        auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(micros.size())));
        return micros[std::clamp<std::size_t>(r, 1, micros.size()) - 1] / 1000.0;
    };
    p.min_ms = micros.front() / 1000.0;
    p.median_ms = rank(0.5);
    p.p95_ms = rank(0.95);
    p.max_ms = micros.back() / 1000.0;
    return p;
}

json timing_summary(const std::vector<std::vector<StageTiming>>& per_cycle, const std::vector<std::int64_t>& totals) {
    const auto pj = [](const Percentiles& p, std::size_t n) {
        return json{{"cycles", n}, {"min_ms", p.min_ms}, {"median_ms", p.median_ms}, {"p95_ms", p.p95_ms}, {"max_ms", p.max_ms}};
    };
    json j;
    j["stages"] = json::array();
    for (std::size_t s = 0; s < kStages.size(); ++s) {
        std::vector<std::int64_t> xs;
        for (const auto& t : per_cycle)
            if (s < t.size() && t[s].ran) xs.push_back(t[s].micros);
        auto row = pj(percentiles(xs), xs.size());
        row["stage"] = kStages[s];
        row["label"] = kStageLabels[s];
        j["stages"].push_back(row);
    }
    // normalize + enrich + sse + rsem: the stages that never call out to an external model
    std::vector<std::int64_t> non_llm;
    for (const auto& t : per_cycle)
        if (t.size() == kStages.size() && t[0].ran && t[1].ran && t[3].ran && t[4].ran)
            non_llm.push_back(t[0].micros + t[1].micros + t[3].micros + t[4].micros);
    j["non_llm"] = pj(percentiles(non_llm), non_llm.size());
    j["total"] = pj(percentiles(totals), totals.size());
    return j;
}

BatchResult run_batch(const BatchOptions& options) {
    const auto wall = Clock::now();
    const auto& cfg = options.config;
    cfg.validate();

    if (!std::filesystem::exists(options.events)) throw Error("events file not found: " + options.events.string());
    const auto text = read_file(options.events, "events file");
    auto state = load_state(options.snapshot);
    auto mapping = load_mapping(cfg, options.snapshot);
    mapping.validate(*state.catalog);
    auto calibration = load_calibration(cfg, options.snapshot);

    BatchResult result;
    result.store = std::make_shared<knowledge::KnowledgeStore>(state);
    auto& store = *result.store;
    const auto version_start = store.version();

    std::unique_ptr<Journal> journal;
    if (options.out) {
        journal = std::make_unique<Journal>(*options.out);
        for (const auto* stale : {"audit.jsonl", "deltas.jsonl"}) std::filesystem::remove(*options.out / stale);
        for (const auto& id : journal->cycle_ids()) std::filesystem::remove(*options.out / "cycles" / (id + ".json"));
        json run;
        run["events"] = std::filesystem::absolute(options.events).string();
        run["snapshot"] = std::filesystem::absolute(options.snapshot).string();
        run["mode"] = cfg.pipeline.live ? "Live" : "DryRun";
        run["config"] = config::to_json(cfg);
        journal->write_json("run.json", run);
        journal->write_json("state.json", knowledge::to_json(*store.snapshot()));
        if (cfg.pipeline.live) store.set_delta_log(*options.out / "deltas.jsonl");
    }

    auto parsed = ingest::parse_auth_events(std::string_view(text), cfg.ingest.strict);
    auto events = std::move(parsed.events);
    ingest::sort_events(events);
    const auto n_base = static_cast<std::size_t>(std::floor(cfg.ingest.baseline_fraction * static_cast<double>(events.size())));
    const std::vector<ingest::AuthEvent> training(events.begin(), events.begin() + static_cast<long>(n_base));
    const std::vector<ingest::AuthEvent> evaluated(events.begin() + static_cast<long>(n_base), events.end());
    auto baseline = ingest::build_baseline(training, cfg.ingest.detection.failure_window);

    auto detection = cfg.ingest.detection;
    const auto snap = store.snapshot();
    for (const auto& [id, node] : snap->graph.nodes()) {
        if (node.kind == knowledge::NodeKind::Host && node.criticality) detection.host_criticality[id] = *node.criticality;
        if (node.kind == knowledge::NodeKind::User) detection.user_tier[id] = knowledge::privilege_tier(snap->graph, id);
    }
    const auto alerts = ingest::detect_anomalies(evaluated, baseline, detection);

    std::vector<perception::NormalizedAlert> normalized;
    std::vector<std::string> normalization_errors;
    for (const auto& a : alerts) {
        try {
            normalized.push_back(perception::normalize(perception::from_raw_alert(a)));
        } catch (const perception::NormalizationError& e) {
            normalization_errors.push_back(a.alert_id + ": " + e.what());
        }
    }
    auto noise = perception::reduce_noise(std::move(normalized), cfg.perception.noise);

    Engine engine(cfg, store, std::move(mapping), std::move(calibration));
    engine.set_baseline(std::move(baseline));
    engine.set_context(events, alerts);
    engine.set_journal(journal.get());

    const auto n = noise.clusters.size();
    std::vector<CycleResult> cycles(n);
    const auto run_one = [&](std::size_t i) {
        const auto id = perception::IncidentIds::format(cfg.perception.incident_source, i + 1);
        std::vector<perception::SourceRecord> records;
        for (const auto& m : noise.clusters[i].members) records.push_back({m.source_system, m.raw_payload});
        try {
            cycles[i] = engine.run_cycle(records, id);
        } catch (const std::exception& e) {
            CycleResult failed;
            failed.cycle_id = id;
            failed.mode = engine.mode();
            failed.timings = empty_timings();
            failed.error = e.what();
            const auto* se = dynamic_cast<const StageError*>(&e);
            failed.error_stage = se ? se->stage() : "cycle";
            if (journal) journal->write_cycle(failed);
            cycles[i] = std::move(failed);
        }
    };
    if (cfg.pipeline.live || n < 2) {
        // Live cycles read each other's writes, so they run in order.
        for (std::size_t i = 0; i < n; ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.effective_workers()), n);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) run_one(i);
            });
        for (auto& t : pool) t.join();
    }

    json report;
    report["mode"] = cfg.pipeline.live ? "Live" : "DryRun";
    json skipped = json::array();
    for (const auto& e : parsed.skipped) skipped.push_back({{"line", e.line()}, {"error", e.what()}});
    report["events"] = {{"total", events.size()},
                        {"baseline", n_base},
                        {"evaluated", evaluated.size()},
                        {"skipped_lines", parsed.skipped.size()},
                        {"skipped", skipped}};
    report["knowledge_version"] = version_start;
    report["raw_alerts"] = alerts.size();
    json kinds = json::object();
    for (const auto& a : alerts) {
        const auto k = ingest::to_string(a.kind);
        kinds[k] = kinds.value(k, 0) + 1;
    }
    report["alert_kinds"] = kinds;
    report["normalization_errors"] = normalization_errors;
    report["clusters"] = n;
    report["suppressed_duplicates"] = noise.suppressed.size();
    report["reduction_ratio"] = alerts.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(alerts.size());

    json summaries = json::array();
    std::map<std::string, int> status_counts;
    std::vector<std::vector<StageTiming>> timings;
    std::vector<std::int64_t> totals;
    for (const auto& c : cycles) {
        summaries.push_back(cycle_summary(c));
        ++status_counts[c.status()];
        if (c.error.empty()) {
            timings.push_back(c.timings);
            totals.push_back(c.total_micros);
        } else {
            ++result.failures;
        }
    }
    report["cycles"] = summaries;
    report["status_counts"] = status_counts;
    report["failures"] = result.failures;
    report["knowledge_version_end"] = store.version();
    report["timings"] = timing_summary(timings, totals);
    report["wall_time_ms"] = static_cast<double>(micros_since(wall)) / 1000.0;
    report["generated_at"] = now_utc();

    if (journal) {
        journal->write_json("report.json", report);
        journal->write_text("report.txt", render_text(report));
        journal->write_json("state.json", knowledge::to_json(*store.snapshot()));
    }
    result.report = std::move(report);
    result.cycles = std::move(cycles);
    return result;
}

std::string canonical_report(const json& report) {
    auto j = report;
    for (const auto* key : {"timings", "wall_time_ms", "generated_at"}) j.erase(key);
    return j.dump();
}

std::string render_text(const json& report) {
    std::ostringstream out;
    const auto& ev = report.at("events");
    out << "Run report (" << report.value("mode", std::string("DryRun")) << ")\n";
    out << "events " << ev.value("total", 0) << " (baseline " << ev.value("baseline", 0) << ", skipped "
        << ev.value("skipped_lines", 0) << ")  raw alerts " << report.value("raw_alerts", 0) << "  clusters "
        << report.value("clusters", 0) << "  reduction " << fixed(report.value("reduction_ratio", 0.0), 3)
        << "  failures " << report.value("failures", 0) << "\n\n";

    char line[160];
    std::snprintf(line, sizeof line, "%-16s %8s %10s %8s %8s %7s\n", "Stage", "min ms", "median ms", "p95 ms", "max ms",
                  "cycles");
    out << line;
    const auto row = [&](const std::string& label, const json& r) {
        std::snprintf(line, sizeof line, "%-16s %8.3f %10.3f %8.3f %8.3f %7zu\n", label.c_str(), r.value("min_ms", 0.0),
                      r.value("median_ms", 0.0), r.value("p95_ms", 0.0), r.value("max_ms", 0.0),
                      r.value("cycles", std::size_t{0}));
        out << line;
    };
    if (report.contains("timings")) {
        const auto& t = report.at("timings");
        for (const auto& r : t.at("stages")) row(r.value("label", r.value("stage", std::string{})), r);
        row("Non-LLM subtotal", t.at("non_llm"));
        row("Total", t.at("total"));
    }

    for (const auto& c : report.value("cycles", json::array())) {
        out << "\n" << c.value("cycle_id", std::string{}) << "  " << c.value("status", std::string{});
        if (c.contains("error")) {
            out << "  [" << c.value("error_stage", std::string{}) << "] " << c.value("error", std::string{}) << "\n";
            continue;
        }
        out << "  " << c.value("user", std::string{}) << " " << c.value("source_host", std::string{});
        if (c.contains("target_host") && !c.at("target_host").is_null())
            out << " -> " << c.at("target_host").get<std::string>();
        std::string flags;
        for (const auto& f : c.value("flags", json::array())) flags += (flags.empty() ? "" : ", ") + f.get<std::string>();
        out << "  [" << flags << "]\n";
        for (const auto& h : c.value("hypotheses", json::array())) {
            std::string status = "-";
            for (const auto& v : c.value("verdicts", json::array()))
                if (v.value("hypothesis_id", std::string{}) == h.value("id", std::string{}))
                    status = v.value("status", std::string{});
            out << "  " << h.value("id", std::string{}) << "  " << fixed(h.value("confidence", 0.0), 3) << "  " << status
                << "  " << h.value("description", std::string{}) << "\n";
        }
        for (const auto& r : c.value("ranked", json::array()))
            out << "  " << r.value("action_id", std::string{}) << "  " << r.value("action", std::string{}) << "  C="
                << fixed(r.value("containment", 0.0), 2) << " I=" << fixed(r.value("business_impact", 0.0), 2)
                << " score=" << fixed(r.value("composite", 0.0), 3) << "\n";
        const auto& pb = c.at("playbook");
        std::string steps;
        for (const auto& s : pb.value("steps", json::array())) steps += (steps.empty() ? "" : ", ") + s.get<std::string>();
        out << "  playbook: " << steps << "  impact " << fixed(pb.value("projected_impact", 0.0), 2) << "  guardrail "
            << c.at("guardrail").value("outcome", std::string{});
        if (c.value("fallback", false)) out << "  (monitoring fallback)";
        if (c.contains("assessment") && !c.at("assessment").is_null())
            out << "  monitor " << c.at("assessment").get<std::string>();
        out << "\n";
    }
    return out.str();
}

}  // namespace agentsoc::pipeline
