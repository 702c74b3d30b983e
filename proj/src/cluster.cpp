#include "carm/cluster.hpp"

#include <algorithm>

namespace carm {

const char* to_string(SimEventKind kind) {
    switch (kind) {
        case SimEventKind::OomKill: return "OomKill";
        case SimEventKind::Migrated: return "Migrated";
        case SimEventKind::Scaled: return "Scaled";
        case SimEventKind::LimitApplied: return "LimitApplied";
    }
    return "?";
}

const NodeSpec* ClusterState::find_node(const std::string& name) const {
    auto it = std::find_if(nodes.begin(), nodes.end(),
                           [&](const NodeSpec& n) { return n.name == name; });
    return it == nodes.end() ? nullptr : &*it;
}

const DeploymentState* ClusterState::find_deployment(const std::string& name) const {
    auto it = std::find_if(deployments.begin(), deployments.end(),
                           [&](const DeploymentState& d) { return d.name == name; });
    return it == deployments.end() ? nullptr : &*it;
}

DeploymentState* ClusterState::find_deployment(const std::string& name) {
    auto it = std::find_if(deployments.begin(), deployments.end(),
                           [&](const DeploymentState& d) { return d.name == name; });
    return it == deployments.end() ? nullptr : &*it;
}

} // namespace carm
