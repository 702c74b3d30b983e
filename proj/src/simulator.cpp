#include "carm/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "carm/error.hpp"
#include "carm/num_text.hpp"

namespace carm {

Simulator::Simulator(const Scenario& scenario, std::uint64_t seed) : rng_(seed) {
    state_.tick = 0;
    state_.nodes = scenario.nodes;
    state_.deployments = scenario.deployments;
    state_.rng_seed = seed;
    params_ = scenario.sim;
}

double Simulator::uniform01() {
    // 53-bit mantissa draw; stable across platforms.
    return double(rng_() >> 11) * 0x1.0p-53;
}

double Simulator::noise_draw() {
    double u = uniform01();
    if (params_.noise_epsilon == 0.0) return 1.0;
    return 1.0 - params_.noise_epsilon + 2.0 * params_.noise_epsilon * u;
}

double Simulator::latency_model(double base, double cpu_demand, std::optional<double> cpu_limit) {
    if (!cpu_limit) return base;
    return base * std::max(1.0, cpu_demand / *cpu_limit);
}

const DeploymentState& Simulator::require_deployment(const std::string& name) const {
    const DeploymentState* d = state_.find_deployment(name);
    if (!d) throw Error(Err::UnknownDeployment, "no deployment named '" + name + "'");
    return *d;
}

Simulator::TickResult Simulator::tick() {
    state_.tick += 1;

    TickResult result;
    result.tick = state_.tick;

    // Operations performed since the previous tick surface now.
    for (SimEvent& event : queued_events_) {
        event.tick = state_.tick;
        result.events.push_back(std::move(event));
    }
    queued_events_.clear();

    for (DeploymentState& d : state_.deployments) {
        double cpu_noise = noise_draw();
        double mem_noise = noise_draw();

        double cpu_per_replica = d.cpu_demand * cpu_noise;
        if (d.cpu_limit) cpu_per_replica = std::min(cpu_per_replica, *d.cpu_limit);
        double mem_per_replica = d.mem_demand * mem_noise;

        double latency = latency_model(d.base_latency, d.cpu_demand * cpu_noise, d.cpu_limit);

        bool oom = d.mem_limit && d.mem_demand * mem_noise > *d.mem_limit;
        if (oom) {
            latency *= params_.oom_penalty;
            result.events.push_back({state_.tick, SimEventKind::OomKill, d.name,
                                     "per-replica mem demand " + format_double(d.mem_demand * mem_noise) +
                                         " > mem_limit " + format_double(*d.mem_limit)});
        }

        if (auto it = one_tick_latency_factor_.find(d.name); it != one_tick_latency_factor_.end()) {
            latency *= it->second;
            one_tick_latency_factor_.erase(it);
        }

        MetricsSample sample;
        sample.tick = state_.tick;
        sample.deployment = d.name;
        sample.cpu_usage = cpu_per_replica * d.replicas;
        sample.mem_usage = mem_per_replica * d.replicas;
        sample.latency = latency;
        sample.cpu_limit = d.cpu_limit;
        sample.mem_limit = d.mem_limit;
        sample.replicas = d.replicas;
        result.samples.push_back(std::move(sample));
    }

    return result;
}

void Simulator::apply_limit(const std::string& deployment, std::optional<double> cpu_limit,
                            std::optional<double> mem_limit) {
    DeploymentState* d = state_.find_deployment(deployment);
    if (!d) throw Error(Err::UnknownDeployment, "no deployment named '" + deployment + "'");
    d->cpu_limit = cpu_limit;
    d->mem_limit = mem_limit;
    queued_events_.push_back({0, SimEventKind::LimitApplied, deployment,
                              "cpu_limit=" + (cpu_limit ? format_double(*cpu_limit) : "unset") +
                                  " mem_limit=" + (mem_limit ? format_double(*mem_limit) : "unset")});
}

void Simulator::migrate(const std::string& deployment, const std::string& to_node) {
    DeploymentState* d = state_.find_deployment(deployment);
    if (!d) throw Error(Err::UnknownDeployment, "no deployment named '" + deployment + "'");
    if (!state_.find_node(to_node)) throw Error(Err::UnknownNode, "no node named '" + to_node + "'");

    double placed = 0.0;
    for (const DeploymentState& other : state_.deployments) {
        if (other.node == to_node && other.name != d->name) placed += other.total_cpu_demand();
    }
    double residual = state_.find_node(to_node)->cpu_capacity - placed;
    if (residual < d->total_cpu_demand()) {
        throw Error(Err::InsufficientCapacity, "node '" + to_node + "' has " + format_double(residual) +
                                                   " residual cores; '" + deployment + "' needs " +
                                                   format_double(d->total_cpu_demand()));
    }

    std::string from = d->node;
    d->node = to_node;
    queued_events_.push_back({0, SimEventKind::Migrated, deployment, from + " -> " + to_node});
    one_tick_latency_factor_[deployment] = params_.migration_penalty;
}

void Simulator::scale(const std::string& deployment, int delta) {
    DeploymentState* d = state_.find_deployment(deployment);
    if (!d) throw Error(Err::UnknownDeployment, "no deployment named '" + deployment + "'");
    int replicas = d->replicas + delta;
    if (replicas < 1) {
        throw Error(Err::ScaleBelowOne, "'" + deployment + "' cannot scale below one replica");
    }

    // Total demand is conserved; per-replica share is redistributed for
    // both dimensions so scaling out genuinely relieves per-replica
    // pressure (and scaling in concentrates it).
    double total_cpu = d->total_cpu_demand();
    double total_mem = d->total_mem_demand();
    int old_replicas = d->replicas;
    d->replicas = replicas;
    d->cpu_demand = total_cpu / replicas;
    d->mem_demand = total_mem / replicas;
    queued_events_.push_back({0, SimEventKind::Scaled, deployment,
                              "replicas " + std::to_string(old_replicas) + " -> " + std::to_string(replicas)});
}

double Simulator::node_utilization(const std::string& node) const {
    const NodeSpec* n = state_.find_node(node);
    if (!n) throw Error(Err::UnknownNode, "no node named '" + node + "'");
    double used = 0.0;
    for (const DeploymentState& d : state_.deployments) {
        if (d.node != node) continue;
        double per_replica = d.cpu_limit ? std::min(d.cpu_demand, *d.cpu_limit) : d.cpu_demand;
        used += per_replica * d.replicas;
    }
    return used / n->cpu_capacity;
}

} // namespace carm
