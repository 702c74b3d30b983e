#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "carm/cluster.hpp"
#include "carm/metrics.hpp"
#include "carm/scenario.hpp"

namespace carm {

// Deterministic discrete-tick cluster simulator. All mutating operations
// (apply_limit, migrate, scale) happen between ticks; their events are
// queued and emitted with the next tick. Identical (scenario, seed) pairs
// produce bit-identical event and sample streams.
class Simulator {
public:
    Simulator(const Scenario& scenario, std::uint64_t seed);

    struct TickResult {
        long tick = 0;
        std::vector<SimEvent> events;
        std::vector<MetricsSample> samples;
    };

    // Advances the clock one step: draws demand noise per deployment
    // (cpu draw then mem draw, in stored deployment order), computes
    // usage/latency, emits queued and OomKill events.
    TickResult tick();

    // Replaces both limits of a deployment (per replica). Queues a
    // LimitApplied event for the next tick.
    void apply_limit(const std::string& deployment, std::optional<double> cpu_limit,
                     std::optional<double> mem_limit);

    // Moves a deployment to another node if the destination has residual
    // CPU capacity for its total demand. Queues a Migrated event and a
    // one-tick latency penalty.
    void migrate(const std::string& deployment, const std::string& to_node);

    // Adds or removes one replica; per-replica demands are redistributed
    // so total demand is conserved. Queues a Scaled event.
    void scale(const std::string& deployment, int delta);

    // Expected (noise-free) CPU utilization of a node: sum of
    // min(demand, limit) * replicas over its deployments / capacity.
    double node_utilization(const std::string& node) const;

    const ClusterState& state() const { return state_; }
    const SimParams& params() const { return params_; }

    // base * max(1, demand / limit) when a limit exists, else base.
    static double latency_model(double base, double cpu_demand, std::optional<double> cpu_limit);

private:
    double uniform01();   // [0, 1)
    double noise_draw();  // uniform in [1 - eps, 1 + eps]; exactly 1.0 at eps = 0

    const DeploymentState& require_deployment(const std::string& name) const;

    ClusterState state_;
    SimParams params_;
    std::mt19937_64 rng_;
    std::vector<SimEvent> queued_events_;
    std::map<std::string, double> one_tick_latency_factor_;
};

} // namespace carm
