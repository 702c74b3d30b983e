#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "json.hpp"

#include "carm/agent_spec.hpp"

namespace carm {

struct AgentStoreEntry {
    AgentSpec spec;
    std::vector<std::pair<long, AgentStatus>> history; // (tick, status), append-only
};

// Shared cluster-state store for agents. All operations are atomic
// read-modify-writes guarded by one mutex; reads return snapshots.
// At most one non-Deleted agent exists per (scope, target).
class AgentStore {
public:
    // Validates and stores a new Pending agent. An existing live agent with
    // the same (scope, target) is displaced to Deleted (upsert semantics).
    std::uint64_t create(const nlohmann::json& document, long tick);

    // Merges the patch into the stored wire form, re-validates, resets the
    // agent to Pending with restart_count 0. Throws UnknownAgent for missing
    // or Deleted agents.
    void update(std::uint64_t id, const nlohmann::json& patch, long tick);

    // Marks Deleted. Throws UnknownAgent if missing or already Deleted.
    void remove(std::uint64_t id, long tick);

    AgentStoreEntry get(std::uint64_t id) const; // throws UnknownAgent

    // Snapshots ordered by created_at (then id). Deleted agents are excluded
    // unless explicitly requested via the status filter.
    std::vector<AgentStoreEntry> list(std::optional<AgentStatus> status = std::nullopt,
                                      std::optional<Scope> scope = std::nullopt) const;

    // Watcher-side lifecycle transitions; validates the transition graph and
    // appends one history entry. Throws IllegalTransition.
    void set_status(std::uint64_t id, AgentStatus to, long tick);

    void note_applied(std::uint64_t id, long tick, bool reapplied); // ++restart_count when reapplied
    void reset_restarts(std::uint64_t id);

    std::size_t size() const; // live (non-Deleted) agents

private:
    AgentStoreEntry& entry_at(std::uint64_t id); // caller holds lock
    void displace_same_target(const AgentSpec& incoming, long tick);

    mutable std::mutex mutex_;
    std::vector<AgentStoreEntry> entries_;
    std::uint64_t next_id_ = 1;
};

} // namespace carm
