#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "carm/agent_store.hpp"
#include "carm/drl.hpp"
#include "carm/metrics.hpp"
#include "carm/simulator.hpp"

namespace carm {

struct WatcherConfig {
    long interval_ticks = 1;
    int spec_conflict_threshold = 3;       // consecutive reapplications before a conflict
    double latency_degradation_factor = 1.30;
    long baseline_window = 5;              // ticks
    double tolerance = 0.01;               // relative deviation allowed on limits
};

struct ReconcileReport {
    long tick = 0;
    std::uint64_t agent_id = 0;
    std::vector<std::string> enforced_targets;  // first-time enforcements this cycle
    std::vector<std::string> reapplied_targets; // drift corrections this cycle
    ConflictClass conflict = ConflictClass::None;
    bool escalated = false;
    std::string note; // anomaly description when the agent could not be processed
};

// Feature payload handed to the decision engine when an agent escalates.
struct DrlTargetPayload {
    std::string deployment;
    StateSnapshot before; // frozen pre-enforcement baseline
    StateSnapshot after;  // current observation window
};

struct DrlRequest {
    std::uint64_t agent_id = 0;
    long tick = 0;
    ConflictClass conflict = ConflictClass::None;
    std::vector<DrlTargetPayload> targets;
};

// Pre-enforcement observation of one target, frozen the first time an agent
// computes limits for it. Totals are deployment-level window averages.
struct Baseline {
    long frozen_at = 0;
    int replicas = 1;
    double cpu_usage = 0.0;
    double mem_usage = 0.0;
    double latency = 0.0;
    double cpu_alloc = 0.0;
    double mem_alloc = 0.0;
};

// Periodic reconciliation: enforces agent quotas, reapplies on drift, counts
// consecutive reapplications into specification conflicts, flags
// post-enforcement degradation as optimization conflicts, and escalates
// unresolved cases to the decision engine.
class Watcher {
public:
    explicit Watcher(WatcherConfig config = {}) : config_(config) {}

    // One cycle over all live agents in creation order. `events_since_last`
    // are the simulator events emitted since the previous cycle (OomKill
    // detection). Escalations and retries are queued; drain with
    // take_requests().
    std::vector<ReconcileReport> reconcile_once(AgentStore& store, Simulator& sim,
                                                const MetricsStore& metrics,
                                                const std::vector<SimEvent>& events_since_last);

    std::vector<DrlRequest> take_requests();

    // Applies the engine's decision for an Escalated agent. Returns true when
    // the agent reached Resolved; false when no feasible placement existed and
    // the agent stays Escalated for a retry next cycle.
    bool apply_resolution(AgentStore& store, std::uint64_t agent_id, Action action, Simulator& sim);

    // Per-replica (cpu_limit, mem_limit) the agent intends for a deployment;
    // freezes the baseline on first use. Throws NoBaseline when the metrics
    // window is empty.
    std::pair<std::optional<double>, std::optional<double>> intended_limits(const AgentSpec& agent,
                                                                            const std::string& deployment,
                                                                            const MetricsStore& metrics,
                                                                            long tick);

    // True iff the deployment's current limits match the agent's intent
    // within the relative tolerance (closed interval). Dimensions yielded to
    // a later agent are skipped.
    bool check_enforced(const AgentSpec& agent, const std::string& deployment, const ClusterState& cluster,
                        const MetricsStore& metrics, long tick);

    // Builds the before/after payload for every target and marks the agent
    // Escalated. Throws NoBaseline when a target has no observations.
    DrlRequest escalate(AgentStore& store, std::uint64_t agent_id, const ClusterState& cluster,
                        const MetricsStore& metrics, long tick);

    const WatcherConfig& config() const { return config_; }
    const Baseline* baseline(std::uint64_t agent_id, const std::string& deployment) const;
    ConflictClass conflict_class(std::uint64_t agent_id) const;

private:
    struct DimYield {
        std::uint64_t winner = 0; // later-created agent that owns the dimension
    };
    using YieldKey = std::tuple<std::uint64_t, std::string, bool>; // (loser, deployment, is_cpu)

    StateSnapshot window_snapshot(const std::string& deployment, const ClusterState& cluster,
                                  const MetricsStore& metrics, long tick) const;
    bool dimension_yielded(std::uint64_t agent_id, const std::string& deployment, bool cpu) const;
    void prune_yields(const std::vector<AgentStoreEntry>& live, const ClusterState& cluster);
    void record_latest_wins(const AgentSpec& loser, const std::vector<AgentStoreEntry>& live,
                            const ClusterState& cluster);
    void enforce_targets(AgentStore& store, const AgentSpec& agent, const std::set<std::string>& targets,
                         Simulator& sim, const MetricsStore& metrics, long tick, bool reapply,
                         const std::vector<std::string>& only);
    bool optimization_breach(const AgentSpec& agent, const std::set<std::string>& targets,
                             const MetricsStore& metrics, const std::vector<SimEvent>& events,
                             long tick) const;

    DrlRequest build_request(const AgentSpec& agent, const ClusterState& cluster,
                             const MetricsStore& metrics, long tick) const;

    WatcherConfig config_;
    std::map<std::pair<std::uint64_t, std::string>, Baseline> baselines_;
    std::map<YieldKey, DimYield> yields_;
    std::map<std::uint64_t, ConflictClass> conflict_class_;
    std::map<std::uint64_t, long> conflicting_since_; // cycle index of the marking
    std::map<std::uint64_t, long> resolved_at_;       // tick of the last applied resolution
    std::vector<DrlRequest> pending_requests_;
    long cycle_index_ = 0;
};

} // namespace carm
