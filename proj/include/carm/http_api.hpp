#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "carm/agent_store.hpp"
#include "carm/drl.hpp"

namespace httplib {
class Server;
} // namespace httplib

namespace carm {

// HTTP surface of the controller plus the decision-engine endpoints:
//   POST   /agents            create (upsert on scope/target), 201 + agent
//   GET    /agents            list, filters ?status= and ?scope=
//   GET    /agents/{id}       fetch one agent with its transition history
//   PATCH  /agents/{id}       partial spec update, resets to Pending
//   DELETE /agents/{id}       mark Deleted
//   GET    /healthz           liveness
//   POST   /optimize          {deployment, before, after} -> {action_code, q_values}
//   POST   /feedback          FeedbackRecord -> specialized model update
class ControllerServer {
public:
    // `tick_source` supplies the logical clock stamped onto store mutations.
    // When `registry_dir` is set, every accepted feedback persists the
    // registry there.
    ControllerServer(AgentStore& store, ModelRegistry& registry, std::function<long()> tick_source,
                     std::string registry_dir = "");
    ~ControllerServer();

    ControllerServer(const ControllerServer&) = delete;
    ControllerServer& operator=(const ControllerServer&) = delete;

    // Binds to an OS-assigned port on `host` and serves from a background
    // thread. Returns the bound port.
    int start(const std::string& host);

    // Blocking serve on a fixed address (used by the service subcommand).
    bool listen(const std::string& host, int port);

    void stop();

private:
    void install_routes();

    AgentStore& store_;
    ModelRegistry& registry_;
    std::function<long()> tick_source_;
    std::string registry_dir_;
    std::unique_ptr<httplib::Server> server_;
    std::thread serve_thread_;
    std::atomic<bool> running_{false};
};

// Parses "host:port" or "http://host:port"; throws ConnectionFailure on a
// malformed address.
std::pair<std::string, int> split_listen_address(const std::string& address);

} // namespace carm
