#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"

#include "carm/cluster.hpp"

namespace carm {

enum class Scope { Node, Namespace, Deployment };

enum class AgentStatus { Pending, Active, Conflicting, Escalated, Resolved, Deleted };

enum class ConflictClass { None, Specification, Optimization };

const char* to_string(Scope scope);
const char* to_string(AgentStatus status);
const char* to_string(ConflictClass cls);
std::optional<Scope> scope_from_string(const std::string& s);
std::optional<AgentStatus> status_from_string(const std::string& s);

// Multipliers on observed usage that produce the enforced limits. A dimension
// is enforced only when its factor or cap is present; absent dimensions are
// left untouched on the target.
struct ResourceQuota {
    std::optional<double> cpu_factor;
    std::optional<double> mem_factor;
    std::optional<double> cpu_cap; // cores, per replica
    std::optional<double> mem_cap; // bytes, per replica

    bool enforces_cpu() const { return cpu_factor.has_value() || cpu_cap.has_value(); }
    bool enforces_mem() const { return mem_factor.has_value() || mem_cap.has_value(); }
};

struct AgentSpec {
    std::uint64_t id = 0;
    Scope scope = Scope::Deployment;
    std::string target;
    ResourceQuota quota;
    AgentStatus status = AgentStatus::Pending;
    int restart_count = 0;
    long created_at = 0;
    std::optional<long> last_applied_at;
};

// Lifecycle: Pending->Active, Active->Conflicting, Conflicting->Escalated,
// Escalated->Resolved, Resolved->Active, and any->Deleted.
bool legal_transition(AgentStatus from, AgentStatus to);

// Parses and validates a raw spec document (flat key/value JSON). Accepted
// keys: scope, target, cpu_factor, mem_factor, cpu_cap, mem_cap. Unknown keys
// are rejected. Returns a Pending spec with restart_count 0; id/created_at are
// assigned by the store.
AgentSpec validate_spec(const nlohmann::json& raw);

// The wire form accepted by validate_spec (scope/target/quota only).
nlohmann::ordered_json to_document(const AgentSpec& spec);

// Full serialized agent, as returned by the controller.
nlohmann::ordered_json to_json(const AgentSpec& spec);

// Deployments the spec applies to. Node scope: everything placed on the node;
// namespace scope: everything in the namespace; deployment scope: singleton.
std::set<std::string> scope_targets(const AgentSpec& spec, const ClusterState& cluster);

// True iff the two specs share at least one target deployment.
bool overlaps(const AgentSpec& a, const AgentSpec& b, const ClusterState& cluster);

} // namespace carm
