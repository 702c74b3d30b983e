#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "carm/qnet.hpp"

namespace carm {

enum class Action { Optimize = 0, Migrate = 1, ScaleDown = 2, ScaleUp = 3 };

const char* to_string(Action action);
std::optional<Action> action_from_code(int code);

// Normalized feature vector: before/after pairs of (replicas, avg cpu usage,
// avg mem usage, cpu allocation, mem allocation, latency) — before block
// first, after block second, each raw value divided by its model scale.
using DrlState = std::array<double, QNet::kInputs>;

// Aggregated observation of one deployment over a window. All six metrics
// must be present before featurization.
struct StateSnapshot {
    std::optional<double> replicas;
    std::optional<double> cpu_usage; // cores, deployment total
    std::optional<double> mem_usage; // bytes, deployment total
    std::optional<double> cpu_alloc; // cores, replicas x limit (usage when unset)
    std::optional<double> mem_alloc; // bytes
    std::optional<double> latency;   // seconds

    static StateSnapshot from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
};

std::array<double, QNet::kInputs> default_feature_scales();

struct QModel {
    QNet net;
    std::array<double, QNet::kInputs> scales = default_feature_scales();
    long steps = 0;
    std::string parent = "meta"; // "meta" or the deployment the model specializes
};

// Throws MissingFeature when a raw metric is absent or non-finite.
DrlState featurize(const StateSnapshot& before, const StateSnapshot& after,
                   const std::array<double, QNet::kInputs>& scales);

// Greedy action: argmax of the model's q-values, ties to the lowest code.
std::pair<Action, std::array<double, QNet::kOutputs>> predict(const QModel& model, const DrlState& state);

// Post-action observation window reduced to the reward inputs.
struct OutcomeWindow {
    bool any_samples = false;
    bool oom = false;              // any OomKill inside the window
    double latency = 0.0;          // window average after the action
    double latency_baseline = 0.0; // pre-enforcement baseline
    double degradation_factor = 1.30;
    double alloc_before = 0.0; // total cpu allocation when the action was taken
    double alloc_after = 0.0;
};

// Ternary reward: -1 on OOM or latency breach, 0 when healthy but the
// allocation grew, +1 otherwise. Throws EmptyWindow.
double reward(const OutcomeWindow& window);

struct Transition {
    DrlState state{};
    Action action = Action::Optimize;
    double reward = 0.0;
    DrlState next_state{};
    bool terminal = false;
};

struct TrainConfig {
    double gamma = 0.9;
    double learning_rate = 1e-3;
    long steps = 20000;
    std::uint64_t seed = 7;
};

// One-step Q-learning over a replay buffer sampled uniformly; no separate
// target network at this scale. Deterministic for a fixed seed. Throws
// EmptyDataset.
QModel train_meta(const std::vector<Transition>& dataset, const TrainConfig& config = {});

// Exploration schedule used when collecting training episodes: linear decay
// from 1.0 to 0.05 across the collection horizon.
double epsilon_schedule(long step, long total_steps);

struct FeedbackRecord {
    std::string deployment;
    DrlState state{};
    Action action = Action::Optimize;
    double reward = 0.0; // must lie in [-1, 1]
    long tick = 0;

    static FeedbackRecord from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
};

struct FeedbackConfig {
    int steps = 20;            // corrective fine-tuning gradient steps
    double learning_rate = 0.01;
};

// Meta model plus per-deployment specialized clones. Feedback never touches
// the meta model's weights.
class ModelRegistry {
public:
    ModelRegistry() = default;
    explicit ModelRegistry(QModel meta) : meta_(std::move(meta)) {}

    // Specialized model when one exists, else the meta model.
    const QModel& select_model(const std::string& deployment) const;

    // Clones the meta model on first feedback for a deployment, then runs
    // anchored fine-tuning: the chosen action's q moves toward the reward
    // while the other outputs are held at their pre-update values.
    void feedback(const FeedbackRecord& record, const FeedbackConfig& config = {});

    const QModel& meta() const { return meta_; }
    bool has_specialized(const std::string& deployment) const;
    std::vector<std::string> specialized_names() const;

    // Directory layout: manifest.json plus one binary weight file per model,
    // checksummed. load() rejects tampered or truncated files.
    void save(const std::string& dir) const;
    static ModelRegistry load(const std::string& dir);

private:
    QModel meta_;
    std::map<std::string, QModel> specialized_;
};

// Trains the shipped meta model from synthetic archetype outcomes: healthy
// states favor Optimize; OOM and latency-breach states favor ScaleUp.
QModel bootstrap_meta(std::uint64_t seed = 2024);

} // namespace carm
