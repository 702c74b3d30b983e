#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "carm/cluster.hpp"

namespace carm {

// An agent spec the harness submits to the controller at a given tick.
struct ScheduledAgent {
    long at_tick = 0;
    nlohmann::json spec; // wire-form document, shape-validated on load
};

struct Scenario {
    std::string name;
    std::vector<NodeSpec> nodes;
    std::vector<DeploymentState> deployments;
    std::vector<ScheduledAgent> agents;
    SimParams sim;

    // Throws Err::MalformedScenario with a path to the offending field.
    static Scenario from_json(const nlohmann::json& doc, const std::string& name = "scenario");
    // Throws Err::IoFailure if unreadable, Err::MalformedScenario otherwise.
    static Scenario load_file(const std::string& path);
};

} // namespace carm
