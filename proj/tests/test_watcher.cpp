#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "carm/agent_store.hpp"
#include "carm/error.hpp"
#include "carm/metrics.hpp"
#include "carm/scenario.hpp"
#include "carm/simulator.hpp"
#include "carm/watcher.hpp"

using namespace carm;
using nlohmann::json;

namespace {

Scenario one_service_scenario() {
    return Scenario::from_json(json::parse(R"json({
      "nodes": [
        {"name": "n1", "cpu_capacity": 4.0, "mem_capacity": 8589934592, "role": "worker"}
      ],
      "deployments": [
        {"name": "web", "namespace": "apps", "node": "n1", "replicas": 1,
         "cpu_demand": 1.0, "mem_demand": 1073741824, "base_latency": 10.0}
      ],
      "sim": {"noise_epsilon": 0.0, "oom_penalty": 3.0, "migration_penalty": 1.5}
    })json"), "one-service");
}

Scenario three_node_scenario() {
    return Scenario::from_json(json::parse(R"json({
      "nodes": [
        {"name": "n1", "cpu_capacity": 4.0, "mem_capacity": 8589934592, "role": "worker"},
        {"name": "n2", "cpu_capacity": 4.0, "mem_capacity": 8589934592, "role": "worker"},
        {"name": "n3", "cpu_capacity": 4.0, "mem_capacity": 8589934592, "role": "control-plane"}
      ],
      "deployments": [
        {"name": "web", "namespace": "apps", "node": "n1", "replicas": 1,
         "cpu_demand": 1.0, "mem_demand": 1073741824, "base_latency": 10.0},
        {"name": "filler", "namespace": "apps", "node": "n2", "replicas": 1,
         "cpu_demand": 2.0, "mem_demand": 1073741824, "base_latency": 10.0}
      ],
      "sim": {"noise_epsilon": 0.0, "oom_penalty": 3.0, "migration_penalty": 1.5}
    })json"), "three-node");
}

// Test rig wiring the reconciliation loop's collaborators together.
struct Rig {
    Simulator sim;
    MetricsStore metrics;
    AgentStore store;
    Watcher watcher;
    std::vector<SimEvent> since_last;

    explicit Rig(const Scenario& scenario, WatcherConfig config = {}) : sim(scenario, 1), watcher(config) {}

    void step(int ticks = 1) {
        for (int i = 0; i < ticks; ++i) {
            auto result = sim.tick();
            for (const auto& sample : result.samples) metrics.record(sample);
            since_last.insert(since_last.end(), result.events.begin(), result.events.end());
        }
    }

    std::vector<ReconcileReport> reconcile() {
        auto reports = watcher.reconcile_once(store, sim, metrics, since_last);
        since_last.clear();
        return reports;
    }

    AgentStatus status(std::uint64_t id) { return store.get(id).spec.status; }
    int restarts(std::uint64_t id) { return store.get(id).spec.restart_count; }
    std::optional<double> cpu_limit(const std::string& dep) {
        return sim.state().find_deployment(dep)->cpu_limit;
    }
};

json dep_doc(const std::string& target, double cpu_factor) {
    return json{{"scope", "deployment"}, {"target", target}, {"cpu_factor", cpu_factor}};
}

} // namespace

TEST_CASE("enforcement freezes the baseline and activates the agent") {
    Rig rig(one_service_scenario());
    rig.step(3);
    std::uint64_t id = rig.store.create(dep_doc("web", 0.8), 3);

    auto reports = rig.reconcile();
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].enforced_targets == std::vector<std::string>{"web"});
    CHECK(reports[0].conflict == ConflictClass::None);
    CHECK(rig.status(id) == AgentStatus::Active);
    CHECK(rig.store.get(id).spec.last_applied_at == 3);

    const Baseline* base = rig.watcher.baseline(id, "web");
    REQUIRE(base != nullptr);
    CHECK(base->cpu_usage == 1.0); // noise-free pre-enforcement usage
    CHECK(base->latency == 10.0);
    CHECK(base->frozen_at == 3);
    CHECK(base->cpu_alloc == 1.0); // no limit existed: allocation = usage

    CHECK(rig.cpu_limit("web") == 0.8);
    rig.step();
    CHECK(rig.metrics.series("web")->back().cpu_usage == 0.8); // capped

    // The intent is anchored to the frozen baseline, not the throttled usage.
    auto [cpu, mem] = rig.watcher.intended_limits(rig.store.get(id).spec, "web", rig.metrics, 4);
    CHECK(cpu == 0.8);
    CHECK(!mem.has_value());
}

TEST_CASE("an agent without observations stays pending until data arrives") {
    Rig rig(one_service_scenario());
    std::uint64_t id = rig.store.create(dep_doc("web", 0.8), 0);

    auto reports = rig.reconcile(); // tick 0: no samples recorded yet
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].note.find("NoBaseline") != std::string::npos);
    CHECK(rig.status(id) == AgentStatus::Pending);
    CHECK(rig.watcher.baseline(id, "web") == nullptr);

    rig.step();
    rig.reconcile();
    CHECK(rig.status(id) == AgentStatus::Active);
}

TEST_CASE("a target outside the cluster is reported, not fatal") {
    Rig rig(one_service_scenario());
    std::uint64_t id = rig.store.create(dep_doc("ghost", 0.8), 0);
    rig.step();
    auto reports = rig.reconcile();
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].note.find("UnknownTarget") != std::string::npos);
    CHECK(rig.status(id) == AgentStatus::Pending);
}

TEST_CASE("external drift is reapplied and counted, then forgiven on stability") {
    WatcherConfig config;
    config.latency_degradation_factor = 1000.0; // isolate the drift mechanics
    Rig rig(one_service_scenario(), config);
    rig.step(2);
    std::uint64_t id = rig.store.create(dep_doc("web", 0.8), 2);
    rig.reconcile();
    CHECK(rig.status(id) == AgentStatus::Active);

    // Somebody else rewrites the limit behind the agent's back.
    rig.sim.apply_limit("web", 1.5, std::nullopt);
    rig.step();
    auto reports = rig.reconcile();
    CHECK(reports[0].reapplied_targets == std::vector<std::string>{"web"});
    CHECK(rig.restarts(id) == 1);
    CHECK(rig.cpu_limit("web") == 0.8);

    // Within tolerance is not drift: 1% of 0.8.
    rig.sim.apply_limit("web", 0.8 + 0.001, std::nullopt);
    rig.step();
    reports = rig.reconcile();
    CHECK(reports[0].reapplied_targets.empty());
    CHECK(rig.restarts(id) == 0); // stable cycle resets the counter
}

TEST_CASE("competing agents alternate, conflict, and settle on the newest intent") {
    WatcherConfig config;
    config.baseline_window = 1;
    config.latency_degradation_factor = 1000.0; // spec conflicts only
    Rig rig(one_service_scenario(), config);

    rig.step(2);
    std::uint64_t a = rig.store.create(dep_doc("web", 0.5), 2);
    rig.reconcile(); // cycle 0: A enforces 1.0 * 0.5
    CHECK(rig.cpu_limit("web") == 0.5);

    rig.step(); // usage now capped at 0.5
    std::uint64_t b =
        rig.store.create(json{{"scope", "node"}, {"target", "n1"}, {"cpu_factor", 0.9}}, 3);
    rig.reconcile(); // cycle 1: B freezes against throttled usage, enforces 0.45
    CHECK(rig.cpu_limit("web") == 0.5 * 0.9);

    // Cycles 2..3: each agent undoes the other; restart counts climb in step.
    for (int round = 1; round <= 2; ++round) {
        rig.step();
        auto reports = rig.reconcile();
        CHECK(rig.restarts(a) == round);
        CHECK(rig.restarts(b) == round);
        for (const auto& report : reports) {
            CHECK(report.conflict == ConflictClass::None);
            CHECK(report.reapplied_targets == std::vector<std::string>{"web"});
        }
    }

    // Cycle 4: third consecutive reapplication trips the threshold for both.
    rig.step();
    auto reports = rig.reconcile();
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].agent_id == a);
    CHECK(reports[0].conflict == ConflictClass::Specification);
    CHECK(reports[1].agent_id == b);
    CHECK(reports[1].conflict == ConflictClass::Specification);
    CHECK(rig.status(a) == AgentStatus::Conflicting);
    CHECK(rig.status(b) == AgentStatus::Conflicting);
    CHECK(rig.watcher.conflict_class(a) == ConflictClass::Specification);

    // Latest wins: A yields the cpu dimension on web to the newer B, so the
    // next cycle sees both intents satisfied and nobody escalates.
    rig.step();
    reports = rig.reconcile();
    for (const auto& report : reports) {
        CHECK(!report.escalated);
        CHECK(report.note.empty());
    }
    CHECK(rig.watcher.take_requests().empty());
    CHECK(rig.cpu_limit("web") == 0.5 * 0.9); // B's intent, bit for bit
    CHECK(rig.status(a) == AgentStatus::Conflicting); // parked, no longer counting
    CHECK(rig.restarts(a) == 0);
    CHECK(rig.restarts(b) == 0);

    // And it stays settled.
    for (int i = 0; i < 3; ++i) {
        rig.step();
        rig.reconcile();
    }
    CHECK(rig.cpu_limit("web") == 0.5 * 0.9);
    CHECK(rig.watcher.take_requests().empty());
}

TEST_CASE("post-enforcement degradation becomes an optimization conflict and escalates") {
    Rig rig(one_service_scenario()); // default 1.30 degradation factor
    rig.step(3);
    std::uint64_t id = rig.store.create(dep_doc("web", 0.5), 3);
    rig.reconcile(); // enforce 0.5: latency doubles from here on

    rig.step(); // tick 4: window {10,10,10,20} averages 12.5, inside the bound
    auto reports = rig.reconcile();
    CHECK(reports[0].conflict == ConflictClass::None);
    CHECK(rig.status(id) == AgentStatus::Active);

    rig.step(); // tick 5: window {10,10,10,20,20} averages 14 > 13
    reports = rig.reconcile();
    CHECK(reports[0].conflict == ConflictClass::Optimization);
    CHECK(rig.status(id) == AgentStatus::Conflicting);
    CHECK(rig.watcher.take_requests().empty()); // marking is not yet escalation

    rig.step(); // still degraded one cycle later
    reports = rig.reconcile();
    CHECK(reports[0].escalated);
    CHECK(reports[0].conflict == ConflictClass::Optimization);
    CHECK(rig.status(id) == AgentStatus::Escalated);

    auto requests = rig.watcher.take_requests();
    REQUIRE(requests.size() == 1);
    CHECK(requests[0].agent_id == id);
    CHECK(requests[0].conflict == ConflictClass::Optimization);
    REQUIRE(requests[0].targets.size() == 1);
    const DrlTargetPayload& payload = requests[0].targets[0];
    CHECK(payload.deployment == "web");
    CHECK(payload.before.latency == 10.0); // frozen pre-enforcement baseline
    CHECK(payload.before.cpu_usage == 1.0);
    CHECK(payload.after.cpu_alloc == 0.5); // current limit x replicas
    CHECK(*payload.after.latency > 13.0);

    // While escalated, every cycle re-emits a fresh payload for retries.
    rig.step();
    rig.reconcile();
    CHECK(rig.watcher.take_requests().size() == 1);
}

namespace {

// Drives a rig to the Escalated state via an over-tight quota.
std::uint64_t escalate_web(Rig& rig, double factor = 0.5) {
    rig.step(3);
    std::uint64_t id = rig.store.create(dep_doc("web", factor), 3);
    rig.reconcile();
    while (rig.store.get(id).spec.status != AgentStatus::Escalated) {
        rig.step();
        rig.reconcile();
    }
    rig.watcher.take_requests();
    return id;
}

} // namespace

TEST_CASE("resolutions require an escalated agent") {
    Rig rig(one_service_scenario());
    rig.step(2);
    std::uint64_t id = rig.store.create(dep_doc("web", 0.9), 2);
    rig.reconcile(); // Active, perfectly healthy
    try {
        rig.watcher.apply_resolution(rig.store, id, Action::Optimize, rig.sim);
        FAIL("expected IllegalTransition");
    } catch (const Error& e) {
        CHECK(e.code() == Err::IllegalTransition);
    }
}

TEST_CASE("an optimize resolution closes the loop and reactivates the agent") {
    Rig rig(one_service_scenario());
    std::uint64_t id = escalate_web(rig);
    CHECK(rig.watcher.apply_resolution(rig.store, id, Action::Optimize, rig.sim));
    CHECK(rig.status(id) == AgentStatus::Resolved);
    CHECK(rig.watcher.conflict_class(id) == ConflictClass::None);

    rig.step();
    rig.reconcile();
    CHECK(rig.status(id) == AgentStatus::Active);
    CHECK(rig.restarts(id) == 0);
}

TEST_CASE("scale resolutions change replica counts but never drop below one") {
    Rig rig(one_service_scenario());
    std::uint64_t id = escalate_web(rig);
    CHECK(rig.watcher.apply_resolution(rig.store, id, Action::ScaleUp, rig.sim));
    const DeploymentState* web = rig.sim.state().find_deployment("web");
    CHECK(web->replicas == 2);
    CHECK(web->total_cpu_demand() == 1.0); // demand redistributed, not duplicated

    Rig rig2(one_service_scenario());
    std::uint64_t id2 = escalate_web(rig2);
    CHECK(rig2.watcher.apply_resolution(rig2.store, id2, Action::ScaleDown, rig2.sim));
    CHECK(rig2.sim.state().find_deployment("web")->replicas == 1); // floor absorbed
    CHECK(rig2.status(id2) == AgentStatus::Resolved);
}

TEST_CASE("migration picks the least utilized worker and skips control-plane nodes") {
    Rig rig(three_node_scenario());
    std::uint64_t id = escalate_web(rig);

    // Candidates: n2 (busy worker) and n3 (idle but control-plane). The mover
    // may also stay on n1 when it is the least utilized feasible worker.
    CHECK(rig.watcher.apply_resolution(rig.store, id, Action::Migrate, rig.sim));
    // n1 carries only web now capped at 0.5 -> utilization 0.125; n2 carries
    // 2.0/4.0 -> 0.5. Staying put wins; n3 is never considered.
    CHECK(rig.sim.state().find_deployment("web")->node == "n1");
    CHECK(rig.status(id) == AgentStatus::Resolved);
}

TEST_CASE("an infeasible migration keeps the agent escalated for a retry") {
    Scenario scenario = three_node_scenario();
    // Overcommit web's own node and fill the other worker so no worker
    // (including staying put) has residual capacity for web's 3.5 cores.
    scenario.deployments[0].cpu_demand = 3.5;
    scenario.deployments[1].cpu_demand = 3.5;
    scenario.nodes[0].cpu_capacity = 3.0;
    Rig rig(scenario, WatcherConfig{});
    std::uint64_t id = escalate_web(rig);

    CHECK(!rig.watcher.apply_resolution(rig.store, id, Action::Migrate, rig.sim));
    CHECK(rig.status(id) == AgentStatus::Escalated);

    rig.step();
    rig.reconcile();
    CHECK(rig.watcher.take_requests().size() == 1); // retry payload queued
}

TEST_CASE("a resolution suppresses stale degradation samples from re-flagging") {
    Rig rig(one_service_scenario());
    std::uint64_t id = escalate_web(rig);

    // ScaleUp halves per-replica demand: per-replica 0.5 fits the 0.5 limit,
    // so latency returns to base from the next tick.
    CHECK(rig.watcher.apply_resolution(rig.store, id, Action::ScaleUp, rig.sim));

    // The metrics window still holds the degraded samples; without the
    // resolution cut-off these would re-mark the agent immediately.
    for (int cycle = 0; cycle < 4; ++cycle) {
        rig.step();
        auto reports = rig.reconcile();
        for (const auto& report : reports) {
            CHECK(report.conflict == ConflictClass::None);
            CHECK(!report.escalated);
        }
    }
    CHECK(rig.status(id) == AgentStatus::Active);
    CHECK(rig.metrics.series("web")->back().latency == 10.0);
}

TEST_CASE("quota caps bound the factor-derived intent") {
    Rig rig(one_service_scenario());
    rig.step(2);

    AgentSpec capped;
    capped.id = 77;
    capped.scope = Scope::Deployment;
    capped.target = "web";
    capped.quota.cpu_factor = 0.9;
    capped.quota.cpu_cap = 0.6; // tighter than 1.0 * 0.9
    capped.quota.mem_cap = 2e9; // cap-only dimension
    auto [cpu, mem] = rig.watcher.intended_limits(capped, "web", rig.metrics, 2);
    CHECK(cpu == 0.6);
    CHECK(mem == 2e9);

    AgentSpec loose = capped;
    loose.id = 78;
    loose.quota.cpu_cap = 3.0; // above the factor-derived limit
    auto [cpu2, mem2] = rig.watcher.intended_limits(loose, "web", rig.metrics, 2);
    CHECK(cpu2 == 0.9);
    CHECK(mem2 == 2e9);

    AgentSpec early = capped;
    early.id = 79;
    try {
        Rig empty(one_service_scenario());
        empty.watcher.intended_limits(early, "web", empty.metrics, 0);
        FAIL("expected NoBaseline");
    } catch (const Error& e) {
        CHECK(e.code() == Err::NoBaseline);
    }
}
