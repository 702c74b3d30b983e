#include "carm/agent_store.hpp"

#include <algorithm>

#include "carm/error.hpp"

namespace carm {

namespace {

void push_history(AgentStoreEntry& entry, long tick, AgentStatus status) {
    if (!entry.history.empty() && tick < entry.history.back().first) {
        tick = entry.history.back().first; // history stays tick-ascending
    }
    entry.history.emplace_back(tick, status);
}

} // namespace

AgentStoreEntry& AgentStore::entry_at(std::uint64_t id) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [id](const AgentStoreEntry& e) { return e.spec.id == id; });
    if (it == entries_.end()) throw Error(Err::UnknownAgent, "no agent with id " + std::to_string(id));
    return *it;
}

void AgentStore::displace_same_target(const AgentSpec& incoming, long tick) {
    for (AgentStoreEntry& entry : entries_) {
        if (entry.spec.id == incoming.id) continue;
        if (entry.spec.status == AgentStatus::Deleted) continue;
        if (entry.spec.scope == incoming.scope && entry.spec.target == incoming.target) {
            entry.spec.status = AgentStatus::Deleted;
            push_history(entry, tick, AgentStatus::Deleted);
        }
    }
}

std::uint64_t AgentStore::create(const nlohmann::json& document, long tick) {
    AgentSpec spec = validate_spec(document); // throws the 400-class errors
    std::lock_guard<std::mutex> lock(mutex_);
    spec.id = next_id_++;
    spec.created_at = tick;
    displace_same_target(spec, tick);
    AgentStoreEntry entry;
    entry.spec = spec;
    push_history(entry, tick, AgentStatus::Pending);
    entries_.push_back(std::move(entry));
    return spec.id;
}

void AgentStore::update(std::uint64_t id, const nlohmann::json& patch, long tick) {
    if (!patch.is_object()) throw Error(Err::UnknownField, "patch must be an object");
    std::lock_guard<std::mutex> lock(mutex_);
    AgentStoreEntry& entry = entry_at(id);
    if (entry.spec.status == AgentStatus::Deleted) {
        throw Error(Err::UnknownAgent, "agent " + std::to_string(id) + " is deleted");
    }
    nlohmann::json merged = to_document(entry.spec);
    for (const auto& [key, value] : patch.items()) merged[key] = value;
    AgentSpec revalidated = validate_spec(merged);
    revalidated.id = entry.spec.id;
    revalidated.created_at = entry.spec.created_at;
    entry.spec = revalidated; // Pending, restart_count 0
    displace_same_target(entry.spec, tick);
    push_history(entry, tick, AgentStatus::Pending);
}

void AgentStore::remove(std::uint64_t id, long tick) {
    std::lock_guard<std::mutex> lock(mutex_);
    AgentStoreEntry& entry = entry_at(id);
    if (entry.spec.status == AgentStatus::Deleted) {
        throw Error(Err::UnknownAgent, "agent " + std::to_string(id) + " is already deleted");
    }
    entry.spec.status = AgentStatus::Deleted;
    push_history(entry, tick, AgentStatus::Deleted);
}

AgentStoreEntry AgentStore::get(std::uint64_t id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return const_cast<AgentStore*>(this)->entry_at(id);
}

std::vector<AgentStoreEntry> AgentStore::list(std::optional<AgentStatus> status,
                                              std::optional<Scope> scope) const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<AgentStoreEntry> out;
    for (const AgentStoreEntry& entry : entries_) {
        if (status) {
            if (entry.spec.status != *status) continue;
        } else if (entry.spec.status == AgentStatus::Deleted) {
            continue;
        }
        if (scope && entry.spec.scope != *scope) continue;
        out.push_back(entry);
    }
    std::stable_sort(out.begin(), out.end(), [](const AgentStoreEntry& a, const AgentStoreEntry& b) {
        if (a.spec.created_at != b.spec.created_at) return a.spec.created_at < b.spec.created_at;
        return a.spec.id < b.spec.id;
    });
    return out;
}

void AgentStore::set_status(std::uint64_t id, AgentStatus to, long tick) {
    std::lock_guard<std::mutex> lock(mutex_);
    AgentStoreEntry& entry = entry_at(id);
    if (!legal_transition(entry.spec.status, to)) {
        throw Error(Err::IllegalTransition, std::string("agent ") + std::to_string(id) + ": " +
                                                to_string(entry.spec.status) + " -> " + to_string(to));
    }
    entry.spec.status = to;
    push_history(entry, tick, to);
}

void AgentStore::note_applied(std::uint64_t id, long tick, bool reapplied) {
    std::lock_guard<std::mutex> lock(mutex_);
    AgentStoreEntry& entry = entry_at(id);
    entry.spec.last_applied_at = tick;
    if (reapplied) entry.spec.restart_count += 1;
}

void AgentStore::reset_restarts(std::uint64_t id) {
    std::lock_guard<std::mutex> lock(mutex_);
    entry_at(id).spec.restart_count = 0;
}

std::size_t AgentStore::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::size_t n = 0;
    for (const AgentStoreEntry& entry : entries_) {
        if (entry.spec.status != AgentStatus::Deleted) ++n;
    }
    return n;
}

} // namespace carm
