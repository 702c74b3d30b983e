#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace carm {

enum class NodeRole { ControlPlane, Worker };

struct NodeSpec {
    std::string name;
    double cpu_capacity = 0.0; // cores
    double mem_capacity = 0.0; // bytes
    NodeRole role = NodeRole::Worker;
};

// One managed service. Demands and limits are per replica; the metrics
// pipeline reports deployment-level usage (replicas * per-replica usage).
struct DeploymentState {
    std::string name;
    std::string ns;
    std::string node;
    int replicas = 1;
    double cpu_demand = 0.0; // cores per replica
    double mem_demand = 0.0; // bytes per replica
    std::optional<double> cpu_limit; // cores per replica
    std::optional<double> mem_limit; // bytes per replica
    double base_latency = 0.0; // seconds when unthrottled

    double total_cpu_demand() const { return cpu_demand * replicas; }
    double total_mem_demand() const { return mem_demand * replicas; }
};

enum class SimEventKind { OomKill, Migrated, Scaled, LimitApplied };

const char* to_string(SimEventKind kind);

struct SimEvent {
    long tick = 0;
    SimEventKind kind = SimEventKind::LimitApplied;
    std::string deployment;
    std::string detail;
};

struct SimParams {
    double noise_epsilon = 0.02;   // multiplicative demand noise, uniform [1-eps, 1+eps]
    double oom_penalty = 3.0;      // latency factor on an OomKill tick
    double migration_penalty = 1.5; // latency factor on the migration tick
};

struct ClusterState {
    long tick = 0;
    std::vector<NodeSpec> nodes;
    std::vector<DeploymentState> deployments;
    std::uint64_t rng_seed = 0;

    const NodeSpec* find_node(const std::string& name) const;
    const DeploymentState* find_deployment(const std::string& name) const;
    DeploymentState* find_deployment(const std::string& name);
};

} // namespace carm
