#include "carm/scenario.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "carm/agent_spec.hpp"
#include "carm/error.hpp"

namespace carm {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw Error(Err::MalformedScenario, where + ": " + what);
}

const json& object_at(const json& parent, const char* key, const std::string& where) {
    auto it = parent.find(key);
    if (it == parent.end()) bad(where + "." + key, "missing field");
    return *it;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) bad(where, "expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) { known = true; break; }
        }
        if (!known) bad(where + "." + key, "unknown field");
    }
}

double number_field(const json& obj, const char* key, const std::string& where, bool strictly_positive) {
    auto it = obj.find(key);
    if (it == obj.end()) bad(where + "." + key, "missing field");
    if (!it->is_number()) bad(where + "." + key, "expected a number");
    double v = it->get<double>();
    if (!std::isfinite(v)) bad(where + "." + key, "must be finite");
    if (strictly_positive && v <= 0.0) bad(where + "." + key, "must be > 0");
    if (!strictly_positive && v < 0.0) bad(where + "." + key, "must be >= 0");
    return v;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) bad(where + "." + key, "missing field");
    if (!it->is_string() || it->get<std::string>().empty()) bad(where + "." + key, "expected a non-empty string");
    return it->get<std::string>();
}

long integer_field(const json& obj, const char* key, const std::string& where, long min_value) {
    auto it = obj.find(key);
    if (it == obj.end()) bad(where + "." + key, "missing field");
    if (!it->is_number_integer()) bad(where + "." + key, "expected an integer");
    long v = it->get<long>();
    if (v < min_value) bad(where + "." + key, "must be >= " + std::to_string(min_value));
    return v;
}

NodeSpec parse_node(const json& j, const std::string& where) {
    check_keys(j, {"name", "cpu_capacity", "mem_capacity", "role"}, where);
    NodeSpec node;
    node.name = string_field(j, "name", where);
    node.cpu_capacity = number_field(j, "cpu_capacity", where, /*strictly_positive=*/true);
    node.mem_capacity = number_field(j, "mem_capacity", where, /*strictly_positive=*/true);
    std::string role = string_field(j, "role", where);
    if (role == "control-plane") {
        node.role = NodeRole::ControlPlane;
    } else if (role == "worker") {
        node.role = NodeRole::Worker;
    } else {
        bad(where + ".role", "expected 'control-plane' or 'worker', got '" + role + "'");
    }
    return node;
}

DeploymentState parse_deployment(const json& j, const std::string& where) {
    check_keys(j,
               {"name", "namespace", "node", "replicas", "cpu_demand", "mem_demand", "base_latency",
                "cpu_limit", "mem_limit"},
               where);
    DeploymentState d;
    d.name = string_field(j, "name", where);
    d.ns = string_field(j, "namespace", where);
    d.node = string_field(j, "node", where);
    d.replicas = int(integer_field(j, "replicas", where, /*min_value=*/1));
    d.cpu_demand = number_field(j, "cpu_demand", where, /*strictly_positive=*/true);
    d.mem_demand = number_field(j, "mem_demand", where, /*strictly_positive=*/true);
    d.base_latency = number_field(j, "base_latency", where, /*strictly_positive=*/true);
    if (j.contains("cpu_limit")) d.cpu_limit = number_field(j, "cpu_limit", where, /*strictly_positive=*/true);
    if (j.contains("mem_limit")) d.mem_limit = number_field(j, "mem_limit", where, /*strictly_positive=*/true);
    return d;
}

} // namespace

Scenario Scenario::from_json(const json& doc, const std::string& name) {
    check_keys(doc, {"nodes", "deployments", "agents", "sim"}, name);

    Scenario scenario;
    scenario.name = name;

    const json& nodes = object_at(doc, "nodes", name);
    if (!nodes.is_array()) bad(name + ".nodes", "expected an array");
    std::set<std::string> node_names;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        std::string where = name + ".nodes[" + std::to_string(i) + "]";
        NodeSpec node = parse_node(nodes[i], where);
        if (!node_names.insert(node.name).second) bad(where + ".name", "duplicate node name '" + node.name + "'");
        scenario.nodes.push_back(std::move(node));
    }

    if (doc.contains("deployments")) {
        const json& deployments = doc["deployments"];
        if (!deployments.is_array()) bad(name + ".deployments", "expected an array");
        std::set<std::string> deployment_names;
        for (std::size_t i = 0; i < deployments.size(); ++i) {
            std::string where = name + ".deployments[" + std::to_string(i) + "]";
            DeploymentState d = parse_deployment(deployments[i], where);
            if (!deployment_names.insert(d.name).second) {
                bad(where + ".name", "duplicate deployment name '" + d.name + "'");
            }
            if (!node_names.count(d.node)) bad(where + ".node", "no node named '" + d.node + "'");
            scenario.deployments.push_back(std::move(d));
        }
    }

    if (doc.contains("agents")) {
        const json& agents = doc["agents"];
        if (!agents.is_array()) bad(name + ".agents", "expected an array");
        for (std::size_t i = 0; i < agents.size(); ++i) {
            std::string where = name + ".agents[" + std::to_string(i) + "]";
            check_keys(agents[i], {"at_tick", "spec"}, where);
            ScheduledAgent entry;
            entry.at_tick = integer_field(agents[i], "at_tick", where, /*min_value=*/0);
            entry.spec = object_at(agents[i], "spec", where);
            try {
                validate_spec(entry.spec);
            } catch (const Error& e) {
                bad(where + ".spec", e.what());
            }
            scenario.agents.push_back(std::move(entry));
        }
    }

    if (doc.contains("sim")) {
        const json& sim = doc["sim"];
        std::string where = name + ".sim";
        check_keys(sim, {"noise_epsilon", "oom_penalty", "migration_penalty"}, where);
        if (sim.contains("noise_epsilon")) {
            scenario.sim.noise_epsilon = number_field(sim, "noise_epsilon", where, /*strictly_positive=*/false);
            if (scenario.sim.noise_epsilon >= 1.0) bad(where + ".noise_epsilon", "must be < 1");
        }
        if (sim.contains("oom_penalty")) {
            scenario.sim.oom_penalty = number_field(sim, "oom_penalty", where, /*strictly_positive=*/true);
        }
        if (sim.contains("migration_penalty")) {
            scenario.sim.migration_penalty = number_field(sim, "migration_penalty", where, /*strictly_positive=*/true);
        }
    }

    return scenario;
}

Scenario Scenario::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Err::IoFailure, "cannot open scenario file '" + path + "'");
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw Error(Err::MalformedScenario, path + ": not valid JSON");
    return from_json(doc, std::filesystem::path(path).stem().string());
}

} // namespace carm
