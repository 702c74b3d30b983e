#include "carm/watcher.hpp"

#include <algorithm>
#include <cmath>

#include "carm/error.hpp"

namespace carm {

const Baseline* Watcher::baseline(std::uint64_t agent_id, const std::string& deployment) const {
    auto it = baselines_.find({agent_id, deployment});
    return it == baselines_.end() ? nullptr : &it->second;
}

ConflictClass Watcher::conflict_class(std::uint64_t agent_id) const {
    auto it = conflict_class_.find(agent_id);
    return it == conflict_class_.end() ? ConflictClass::None : it->second;
}

bool Watcher::dimension_yielded(std::uint64_t agent_id, const std::string& deployment, bool cpu) const {
    return yields_.count({agent_id, deployment, cpu}) > 0;
}

std::pair<std::optional<double>, std::optional<double>>
Watcher::intended_limits(const AgentSpec& agent, const std::string& deployment, const MetricsStore& metrics,
                         long tick) {
    auto key = std::make_pair(agent.id, deployment);
    auto it = baselines_.find(key);
    if (it == baselines_.end()) {
        long from = std::max(1L, tick - config_.baseline_window + 1);
        auto cpu = metrics.window_avg(deployment, "cpu_usage", from, tick);
        if (!cpu) {
            throw Error(Err::NoBaseline, "no samples for '" + deployment + "' in ticks [" +
                                             std::to_string(from) + ", " + std::to_string(tick) + "]");
        }
        auto mem = metrics.window_avg(deployment, "mem_usage", from, tick);
        auto lat = metrics.window_avg(deployment, "latency", from, tick);
        auto replica_points = metrics.query_range(deployment, "replicas", from, tick);

        Baseline b;
        b.frozen_at = tick;
        b.replicas = replica_points.empty() ? 1 : int(std::llround(replica_points.back().second));
        if (b.replicas < 1) b.replicas = 1;
        b.cpu_usage = *cpu;
        b.mem_usage = mem.value_or(0.0);
        b.latency = lat.value_or(0.0);
        auto cpu_limits = metrics.query_range(deployment, "cpu_limit", from, tick);
        auto mem_limits = metrics.query_range(deployment, "mem_limit", from, tick);
        b.cpu_alloc = cpu_limits.empty() ? b.cpu_usage : cpu_limits.back().second * b.replicas;
        b.mem_alloc = mem_limits.empty() ? b.mem_usage : mem_limits.back().second * b.replicas;
        it = baselines_.emplace(key, b).first;
    }

    const Baseline& base = it->second;
    const ResourceQuota& quota = agent.quota;

    auto intend = [&](const std::optional<double>& factor, const std::optional<double>& cap,
                      double usage_total) -> std::optional<double> {
        double per_replica = usage_total / double(base.replicas);
        if (factor) {
            double limit = per_replica * *factor;
            if (cap && *cap < limit) limit = *cap;
            return limit;
        }
        if (cap) return *cap; // cap-only quota pins the limit at the cap
        return std::nullopt;
    };

    return {intend(quota.cpu_factor, quota.cpu_cap, base.cpu_usage),
            intend(quota.mem_factor, quota.mem_cap, base.mem_usage)};
}

bool Watcher::check_enforced(const AgentSpec& agent, const std::string& deployment,
                             const ClusterState& cluster, const MetricsStore& metrics, long tick) {
    auto [cpu_intended, mem_intended] = intended_limits(agent, deployment, metrics, tick);
    const DeploymentState* d = cluster.find_deployment(deployment);
    if (!d) throw Error(Err::UnknownDeployment, "no deployment named '" + deployment + "'");

    auto dim_ok = [&](const std::optional<double>& intended, const std::optional<double>& current,
                      bool is_cpu) {
        if (!intended) return true;
        if (dimension_yielded(agent.id, deployment, is_cpu)) return true;
        if (!current) return false;
        return std::abs(*current - *intended) <= config_.tolerance * *intended;
    };
    return dim_ok(cpu_intended, d->cpu_limit, true) && dim_ok(mem_intended, d->mem_limit, false);
}

void Watcher::enforce_targets(AgentStore& store, const AgentSpec& agent,
                              const std::set<std::string>& targets, Simulator& sim,
                              const MetricsStore& metrics, long tick, bool reapply,
                              const std::vector<std::string>& only) {
    (void)store;
    (void)reapply;
    for (const std::string& target : targets) {
        if (!only.empty() && std::find(only.begin(), only.end(), target) == only.end()) continue;
        auto [cpu_intended, mem_intended] = intended_limits(agent, target, metrics, tick);
        const DeploymentState* d = sim.state().find_deployment(target);
        if (!d) continue;
        std::optional<double> new_cpu = d->cpu_limit;
        std::optional<double> new_mem = d->mem_limit;
        bool owns_any = false;
        if (cpu_intended && !dimension_yielded(agent.id, target, true)) {
            new_cpu = cpu_intended;
            owns_any = true;
        }
        if (mem_intended && !dimension_yielded(agent.id, target, false)) {
            new_mem = mem_intended;
            owns_any = true;
        }
        if (owns_any) sim.apply_limit(target, new_cpu, new_mem);
    }
}

bool Watcher::optimization_breach(const AgentSpec& agent, const std::set<std::string>& targets,
                                  const MetricsStore& metrics, const std::vector<SimEvent>& events,
                                  long tick) const {
    for (const std::string& target : targets) {
        for (const SimEvent& event : events) {
            if (event.kind == SimEventKind::OomKill && event.deployment == target) return true;
        }
        const Baseline* base = baseline(agent.id, target);
        if (!base || base->latency <= 0.0) continue;
        long from = std::max(1L, tick - config_.baseline_window + 1);
        auto resolved = resolved_at_.find(agent.id);
        if (resolved != resolved_at_.end()) {
            // Samples older than the applied resolution would re-flag the
            // degradation it just cured; judge only fresh observations, and
            // only once two are available so a one-tick migration transient
            // cannot flag on its own.
            from = std::max(from, resolved->second + 1);
            if (metrics.query_range(target, "latency", from, tick).size() < 2) continue;
        }
        auto lat = metrics.window_avg(target, "latency", from, tick);
        if (lat && *lat > config_.latency_degradation_factor * base->latency) return true;
    }
    return false;
}

StateSnapshot Watcher::window_snapshot(const std::string& deployment, const ClusterState& cluster,
                                       const MetricsStore& metrics, long tick) const {
    long from = std::max(1L, tick - config_.baseline_window + 1);
    auto cpu = metrics.window_avg(deployment, "cpu_usage", from, tick);
    auto mem = metrics.window_avg(deployment, "mem_usage", from, tick);
    auto lat = metrics.window_avg(deployment, "latency", from, tick);
    if (!cpu || !mem || !lat) {
        throw Error(Err::NoBaseline, "no observation window for '" + deployment + "'");
    }
    const DeploymentState* d = cluster.find_deployment(deployment);
    if (!d) throw Error(Err::UnknownDeployment, "no deployment named '" + deployment + "'");

    StateSnapshot snap;
    snap.replicas = double(d->replicas);
    snap.cpu_usage = *cpu;
    snap.mem_usage = *mem;
    snap.latency = *lat;
    snap.cpu_alloc = d->cpu_limit ? *d->cpu_limit * d->replicas : *cpu;
    snap.mem_alloc = d->mem_limit ? *d->mem_limit * d->replicas : *mem;
    return snap;
}

namespace {

StateSnapshot snapshot_from_baseline(const Baseline& b) {
    StateSnapshot snap;
    snap.replicas = double(b.replicas);
    snap.cpu_usage = b.cpu_usage;
    snap.mem_usage = b.mem_usage;
    snap.latency = b.latency;
    snap.cpu_alloc = b.cpu_alloc;
    snap.mem_alloc = b.mem_alloc;
    return snap;
}

bool created_later(const AgentSpec& a, const AgentSpec& b) {
    if (a.created_at != b.created_at) return a.created_at > b.created_at;
    return a.id > b.id;
}

} // namespace

DrlRequest Watcher::build_request(const AgentSpec& agent, const ClusterState& cluster,
                                  const MetricsStore& metrics, long tick) const {
    DrlRequest request;
    request.agent_id = agent.id;
    request.tick = tick;
    request.conflict = conflict_class(agent.id);
    for (const std::string& target : scope_targets(agent, cluster)) {
        const Baseline* base = baseline(agent.id, target);
        if (!base) throw Error(Err::NoBaseline, "no frozen baseline for '" + target + "'");
        DrlTargetPayload payload;
        payload.deployment = target;
        payload.before = snapshot_from_baseline(*base);
        payload.after = window_snapshot(target, cluster, metrics, tick);
        request.targets.push_back(std::move(payload));
    }
    return request;
}

DrlRequest Watcher::escalate(AgentStore& store, std::uint64_t agent_id, const ClusterState& cluster,
                             const MetricsStore& metrics, long tick) {
    AgentStoreEntry entry = store.get(agent_id);
    DrlRequest request = build_request(entry.spec, cluster, metrics, tick);
    store.set_status(agent_id, AgentStatus::Escalated, tick);
    return request;
}

void Watcher::prune_yields(const std::vector<AgentStoreEntry>& live, const ClusterState& cluster) {
    auto find_live = [&live](std::uint64_t id) -> const AgentSpec* {
        for (const auto& entry : live) {
            if (entry.spec.id == id) return &entry.spec;
        }
        return nullptr;
    };
    for (auto it = yields_.begin(); it != yields_.end();) {
        const auto& [loser_id, deployment, is_cpu] = it->first;
        const AgentSpec* loser = find_live(loser_id);
        const AgentSpec* winner = find_live(it->second.winner);
        bool valid = loser && winner;
        if (valid) {
            bool winner_owns = is_cpu ? winner->quota.enforces_cpu() : winner->quota.enforces_mem();
            valid = winner_owns;
            if (valid) {
                try {
                    valid = scope_targets(*winner, cluster).count(deployment) > 0;
                } catch (const Error&) {
                    valid = false;
                }
            }
        }
        it = valid ? std::next(it) : yields_.erase(it);
    }
}

void Watcher::record_latest_wins(const AgentSpec& loser, const std::vector<AgentStoreEntry>& live,
                                 const ClusterState& cluster) {
    std::set<std::string> loser_targets;
    try {
        loser_targets = scope_targets(loser, cluster);
    } catch (const Error&) {
        return;
    }
    for (bool is_cpu : {true, false}) {
        bool loser_owns = is_cpu ? loser.quota.enforces_cpu() : loser.quota.enforces_mem();
        if (!loser_owns) continue;
        for (const std::string& deployment : loser_targets) {
            const AgentSpec* winner = nullptr;
            for (const AgentStoreEntry& other : live) {
                if (other.spec.id == loser.id) continue;
                bool other_owns =
                    is_cpu ? other.spec.quota.enforces_cpu() : other.spec.quota.enforces_mem();
                if (!other_owns) continue;
                try {
                    if (!scope_targets(other.spec, cluster).count(deployment)) continue;
                } catch (const Error&) {
                    continue;
                }
                if (!created_later(other.spec, loser)) continue;
                if (!winner || created_later(other.spec, *winner)) winner = &other.spec;
            }
            if (winner) yields_[{loser.id, deployment, is_cpu}] = {winner->id};
        }
    }
}

std::vector<ReconcileReport> Watcher::reconcile_once(AgentStore& store, Simulator& sim,
                                                     const MetricsStore& metrics,
                                                     const std::vector<SimEvent>& events_since_last) {
    const long tick = sim.state().tick;
    const ClusterState& cluster = sim.state();
    std::vector<ReconcileReport> reports;

    // Resolved agents re-enter the loop at cycle start.
    for (const AgentStoreEntry& entry : store.list(AgentStatus::Resolved)) {
        store.set_status(entry.spec.id, AgentStatus::Active, tick);
        store.reset_restarts(entry.spec.id);
    }

    const std::vector<AgentStoreEntry> live = store.list(); // creation order
    prune_yields(live, cluster);

    for (const AgentStoreEntry& snapshot : live) {
        const std::uint64_t id = snapshot.spec.id;
        AgentStoreEntry entry = store.get(id);
        if (entry.spec.status == AgentStatus::Deleted) continue;

        if (entry.spec.status == AgentStatus::Escalated) {
            // Keep the decision engine supplied with a fresh payload until a
            // resolution lands (covers retries after infeasible actions).
            try {
                pending_requests_.push_back(build_request(entry.spec, cluster, metrics, tick));
            } catch (const Error&) {
                // Payload unavailable this cycle; retry next cycle.
            }
            continue;
        }

        ReconcileReport report;
        report.tick = tick;
        report.agent_id = id;

        std::set<std::string> targets;
        try {
            targets = scope_targets(entry.spec, cluster);
        } catch (const Error& e) {
            report.note = e.what();
            reports.push_back(std::move(report));
            continue;
        }

        if (entry.spec.status == AgentStatus::Pending) {
            try {
                // Freeze all baselines before mutating anything so enforcement
                // is all-or-nothing for the cycle.
                for (const std::string& target : targets) {
                    intended_limits(entry.spec, target, metrics, tick);
                }
                // A fresh declaration re-asserts any dimension it yielded before.
                for (auto it = yields_.begin(); it != yields_.end();) {
                    it = std::get<0>(it->first) == id ? yields_.erase(it) : std::next(it);
                }
                enforce_targets(store, entry.spec, targets, sim, metrics, tick, false, {});
                report.enforced_targets.assign(targets.begin(), targets.end());
                store.set_status(id, AgentStatus::Active, tick);
                store.note_applied(id, tick, false);
            } catch (const Error& e) {
                report.note = e.what(); // stays Pending; retried next cycle
            }
        } else if (entry.spec.status == AgentStatus::Active) {
            std::vector<std::string> failing;
            for (const std::string& target : targets) {
                bool ok = true;
                try {
                    ok = check_enforced(entry.spec, target, cluster, metrics, tick);
                } catch (const Error& e) {
                    report.note = e.what();
                }
                if (!ok) failing.push_back(target);
            }
            if (failing.empty()) {
                store.reset_restarts(id);
                if (optimization_breach(entry.spec, targets, metrics, events_since_last, tick)) {
                    store.set_status(id, AgentStatus::Conflicting, tick);
                    conflict_class_[id] = ConflictClass::Optimization;
                    conflicting_since_[id] = cycle_index_;
                    report.conflict = ConflictClass::Optimization;
                }
            } else {
                enforce_targets(store, entry.spec, targets, sim, metrics, tick, true, failing);
                store.note_applied(id, tick, true);
                report.reapplied_targets = failing;
                if (store.get(id).spec.restart_count >= config_.spec_conflict_threshold) {
                    store.set_status(id, AgentStatus::Conflicting, tick);
                    conflict_class_[id] = ConflictClass::Specification;
                    conflicting_since_[id] = cycle_index_;
                    record_latest_wins(entry.spec, live, cluster);
                    report.conflict = ConflictClass::Specification;
                }
            }
        } else if (entry.spec.status == AgentStatus::Conflicting) {
            ConflictClass cls = conflict_class(id);
            bool still_failing = false;
            if (cls == ConflictClass::Optimization) {
                still_failing = optimization_breach(entry.spec, targets, metrics, events_since_last, tick);
            } else {
                for (const std::string& target : targets) {
                    try {
                        if (!check_enforced(entry.spec, target, cluster, metrics, tick)) {
                            still_failing = true;
                            break;
                        }
                    } catch (const Error&) {
                    }
                }
            }
            if (still_failing && cycle_index_ > conflicting_since_[id]) {
                try {
                    DrlRequest request = build_request(entry.spec, cluster, metrics, tick);
                    store.set_status(id, AgentStatus::Escalated, tick);
                    pending_requests_.push_back(std::move(request));
                    report.conflict = cls;
                    report.escalated = true;
                } catch (const Error& e) {
                    report.note = e.what(); // payload unavailable; retry next cycle
                }
            } else if (!still_failing) {
                // Watcher-local resolution (latest-wins) or recovery stabilized
                // the agent; it stays Conflicting but stops counting restarts.
                store.reset_restarts(id);
            }
        }
        reports.push_back(std::move(report));
    }

    cycle_index_ += 1;
    return reports;
}

std::vector<DrlRequest> Watcher::take_requests() {
    std::vector<DrlRequest> out = std::move(pending_requests_);
    pending_requests_.clear();
    return out;
}

bool Watcher::apply_resolution(AgentStore& store, std::uint64_t agent_id, Action action, Simulator& sim) {
    AgentStoreEntry entry = store.get(agent_id);
    if (entry.spec.status != AgentStatus::Escalated) {
        throw Error(Err::IllegalTransition, "resolution requires an Escalated agent, got " +
                                                std::string(to_string(entry.spec.status)));
    }

    std::set<std::string> targets;
    try {
        targets = scope_targets(entry.spec, sim.state());
    } catch (const Error&) {
        targets.clear(); // targets vanished; resolve as a no-op
    }

    switch (action) {
    case Action::Optimize:
        break;
    case Action::Migrate: {
        // Plan every move against projected demand before touching the
        // cluster so multi-target resolutions are all-or-nothing.
        std::map<std::string, double> planned_extra;
        std::vector<std::pair<std::string, std::string>> moves;
        for (const std::string& target : targets) {
            const DeploymentState* d = sim.state().find_deployment(target);
            if (!d) continue;
            std::optional<std::string> best;
            double best_utilization = 0.0;
            for (const NodeSpec& node : sim.state().nodes) {
                if (node.role != NodeRole::Worker) continue;
                double placed = 0.0;
                for (const DeploymentState& other : sim.state().deployments) {
                    if (other.node == node.name && other.name != target) placed += other.total_cpu_demand();
                }
                placed += planned_extra.count(node.name) ? planned_extra[node.name] : 0.0;
                if (node.cpu_capacity - placed < d->total_cpu_demand()) continue;
                double utilization = sim.node_utilization(node.name);
                if (!best || utilization < best_utilization ||
                    (utilization == best_utilization && node.name < *best)) {
                    best = node.name;
                    best_utilization = utilization;
                }
            }
            if (!best) return false; // infeasible: stay Escalated, retry next cycle
            if (*best != d->node) planned_extra[*best] += d->total_cpu_demand();
            moves.emplace_back(target, *best);
        }
        for (const auto& [target, destination] : moves) sim.migrate(target, destination);
        break;
    }
    case Action::ScaleDown:
    case Action::ScaleUp: {
        int delta = action == Action::ScaleUp ? 1 : -1;
        for (const std::string& target : targets) {
            try {
                sim.scale(target, delta);
            } catch (const Error& e) {
                if (e.code() != Err::ScaleBelowOne) throw;
                // Floor case: skip this target, keep processing the rest.
            }
        }
        break;
    }
    }

    store.set_status(agent_id, AgentStatus::Resolved, sim.state().tick);
    store.reset_restarts(agent_id);
    conflict_class_[agent_id] = ConflictClass::None;
    conflicting_since_.erase(agent_id);
    resolved_at_[agent_id] = sim.state().tick;
    return true;
}

} // namespace carm
