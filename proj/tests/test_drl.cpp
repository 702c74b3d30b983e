#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "carm/drl.hpp"
#include "carm/error.hpp"

using namespace carm;
using nlohmann::json;

namespace {

constexpr double kGiB = 1073741824.0;

StateSnapshot snap(double replicas, double cpu, double mem, double cpu_alloc, double mem_alloc,
                   double latency) {
    StateSnapshot s;
    s.replicas = replicas;
    s.cpu_usage = cpu;
    s.mem_usage = mem;
    s.cpu_alloc = cpu_alloc;
    s.mem_alloc = mem_alloc;
    s.latency = latency;
    return s;
}

// Shared across test cases: bootstrapping is the most expensive fixture.
const QModel& shipped_model() {
    static QModel model = bootstrap_meta(2024);
    return model;
}

std::string temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

// Independent restatement of the checksum used by the registry manifest.
std::uint64_t fnv1a_oracle(const std::string& bytes) {
    std::uint64_t hash = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

std::string hex64_oracle(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << v;
    return out.str();
}

Err code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected a carm::Error");
    return Err::UnknownField;
}

} // namespace

TEST_CASE("featurize lays out both snapshots scaled, before block first") {
    std::array<double, QNet::kInputs> scales = {2, 4, 8, 16, 32, 64, 2, 4, 8, 16, 32, 64};
    DrlState state = featurize(snap(1, 2, 3, 4, 5, 6), snap(2, 4, 6, 8, 10, 12), scales);
    CHECK(state == DrlState{0.5, 0.5, 0.375, 0.25, 0.15625, 0.09375,
                            1.0, 1.0, 0.75, 0.5, 0.3125, 0.1875});

    StateSnapshot incomplete = snap(1, 2, 3, 4, 5, 6);
    incomplete.mem_alloc.reset();
    CHECK(code_of([&] { featurize(incomplete, snap(1, 2, 3, 4, 5, 6), scales); }) == Err::MissingFeature);

    StateSnapshot infinite = snap(1, 2, 3, 4, 5, 6);
    infinite.latency = std::numeric_limits<double>::infinity();
    CHECK(code_of([&] { featurize(snap(1, 2, 3, 4, 5, 6), infinite, scales); }) == Err::MissingFeature);

    scales[3] = 0.0;
    CHECK(code_of([&] { featurize(snap(1, 2, 3, 4, 5, 6), snap(1, 2, 3, 4, 5, 6), scales); }) ==
          Err::MissingFeature);
}

TEST_CASE("action codes round trip and prediction breaks ties to the lowest code") {
    CHECK(action_from_code(0) == Action::Optimize);
    CHECK(action_from_code(3) == Action::ScaleUp);
    CHECK(!action_from_code(4).has_value());
    CHECK(!action_from_code(-1).has_value());
    CHECK(std::string(to_string(Action::ScaleDown)) == "scale-down");

    QModel zero; // all-zero network: every q value identical
    auto [action, q] = predict(zero, DrlState{});
    CHECK(action == Action::Optimize);
    CHECK(q == std::array<double, 4>{0.0, 0.0, 0.0, 0.0});
}

TEST_CASE("reward is ternary over oom, latency breach and allocation growth") {
    OutcomeWindow w;
    w.any_samples = true;
    w.latency = 12.0;
    w.latency_baseline = 10.0;
    w.degradation_factor = 1.30;
    w.alloc_before = 1.0;
    w.alloc_after = 1.0;
    CHECK(reward(w) == 1.0); // healthy, allocation flat

    w.alloc_after = 0.8;
    CHECK(reward(w) == 1.0); // healthy, allocation shrank

    w.alloc_after = 1.5;
    CHECK(reward(w) == 0.0); // healthy but the fix cost capacity

    w.alloc_after = 1.0;
    w.latency = 13.0 + 1e-9;
    CHECK(reward(w) == -1.0); // above 1.3 x baseline

    w.latency = 13.0; // exactly on the bound is still healthy
    CHECK(reward(w) == 1.0);

    w.oom = true;
    w.latency = 10.0;
    CHECK(reward(w) == -1.0); // oom dominates everything

    w.oom = false;
    w.any_samples = false;
    CHECK(code_of([&] { reward(w); }) == Err::EmptyWindow);
}

TEST_CASE("exploration schedule decays linearly from 1.0 to 0.05") {
    CHECK(epsilon_schedule(0, 100) == 1.0);
    CHECK(epsilon_schedule(99, 100) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(epsilon_schedule(500, 100) == doctest::Approx(0.05).epsilon(1e-12)); // clamped past the horizon
    CHECK(epsilon_schedule(0, 1) == 0.05); // degenerate horizon
    double last = 1.0;
    for (long step = 0; step < 100; ++step) {
        double eps = epsilon_schedule(step, 100);
        CHECK(eps <= last + 1e-15);
        last = eps;
    }
    CHECK(epsilon_schedule(50, 101) == doctest::Approx(0.525)); // midpoint
}

TEST_CASE("analytic gradients agree with central finite differences") {
    QNet net = QNet::random_init(5);
    std::mt19937_64 rng(6);
    auto u = [&rng] { return double(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };

    std::array<double, QNet::kInputs> x{};
    for (double& v : x) v = u();
    std::array<double, QNet::kOutputs> target = {0.3, -0.7, 0.1, 0.9};
    std::array<bool, QNet::kOutputs> mask = {true, false, true, true};

    std::vector<double> grad = net.gradient(x, target, mask);
    REQUIRE(grad.size() == std::size_t(QNet::kParamCount));

    const double h = 1e-6;
    for (int probe = 0; probe < 50; ++probe) {
        int i = int(rng() % std::uint64_t(QNet::kParamCount));
        double saved = net.params()[i];
        net.params()[i] = saved + h;
        double up = net.loss(x, target, mask);
        net.params()[i] = saved - h;
        double down = net.loss(x, target, mask);
        net.params()[i] = saved;
        double numeric = (up - down) / (2 * h);
        double denom = std::max(1e-8, std::abs(numeric) + std::abs(grad[i]));
        CHECK(std::abs(numeric - grad[i]) / denom <= 1e-5);
    }
}

TEST_CASE("training solves a four-armed bandit and is seed-deterministic") {
    CHECK(code_of([] { train_meta({}); }) == Err::EmptyDataset);

    DrlState state{};
    state[0] = 0.4;
    state[6] = 0.4;
    std::vector<Transition> dataset;
    const std::array<double, 4> rewards = {0.2, 1.0, -1.0, 0.0};
    for (int code = 0; code < 4; ++code) {
        Transition t;
        t.state = state;
        t.action = Action(code);
        t.reward = rewards[code];
        t.next_state = state;
        t.terminal = true;
        dataset.push_back(t);
    }

    TrainConfig config;
    config.steps = 4000;
    config.learning_rate = 3e-3;
    config.seed = 11;
    QModel model = train_meta(dataset, config);
    auto [action, q] = predict(model, state);
    CHECK(action == Action::Migrate); // the 1.0 arm
    CHECK(model.steps == 4000);
    for (int code = 0; code < 4; ++code) {
        CHECK(q[code] == doctest::Approx(rewards[code]).epsilon(0.2));
    }

    QModel again = train_meta(dataset, config);
    CHECK(again.net.weight_hash() == model.net.weight_hash());
    config.seed = 12;
    QModel other = train_meta(dataset, config);
    CHECK(other.net.weight_hash() != model.net.weight_hash());
}

TEST_CASE("the bootstrapped policy separates healthy from exhausted states") {
    const QModel& model = shipped_model();
    auto scales = default_feature_scales();

    // Quota landed, latency inside the bound: keep optimizing.
    DrlState healthy = featurize(snap(1, 0.94, 1.5 * kGiB, 0.94, 1.5 * kGiB, 12.6),
                                 snap(1, 0.80, 1.5 * kGiB, 0.80, 1.5 * kGiB, 14.8), scales);
    CHECK(predict(model, healthy).first == Action::Optimize);

    // Memory demand above the allocation with kill-inflated latency: grow.
    DrlState exhausted = featurize(snap(1, 0.5, 2.0 * kGiB, 0.5, 2.0 * kGiB, 10.0),
                                   snap(1, 0.5, 2.0 * kGiB, 0.5, 1.2 * kGiB, 20.0), scales);
    CHECK(predict(model, exhausted).first == Action::ScaleUp);

    // Latency breach after an over-aggressive quota: grow as well.
    DrlState breached = featurize(snap(1, 0.9, 1.0 * kGiB, 0.9, 1.0 * kGiB, 12.0),
                                  snap(1, 0.45, 1.0 * kGiB, 0.45, 1.0 * kGiB, 24.0), scales);
    CHECK(predict(model, breached).first == Action::ScaleUp);
}

TEST_CASE("feedback specializes a clone and never touches the meta weights") {
    ModelRegistry registry(shipped_model());
    const std::uint64_t meta_hash = registry.meta().net.weight_hash();

    DrlState state{};
    state.fill(0.25);
    CHECK(!registry.has_specialized("web"));
    CHECK(&registry.select_model("web") == &registry.meta());

    auto q_before = predict(registry.meta(), state).second;
    FeedbackRecord record{"web", state, Action::Optimize, -1.0, 9};
    registry.feedback(record);

    CHECK(registry.has_specialized("web"));
    CHECK(registry.specialized_names() == std::vector<std::string>{"web"});
    CHECK(registry.meta().net.weight_hash() == meta_hash);
    CHECK(&registry.select_model("web") != &registry.meta());
    CHECK(&registry.select_model("other") == &registry.meta());

    auto q_after = predict(registry.select_model("web"), state).second;
    CHECK(q_after[0] < q_before[0]); // the punished action lost value
    CHECK(registry.select_model("web").parent == "web");

    record.reward = 2.0;
    CHECK(code_of([&] { registry.feedback(record); }) == Err::MissingFeature);
}

TEST_CASE("registry persistence round trips bitwise and rejects tampering") {
    ModelRegistry registry(shipped_model());
    DrlState state{};
    state.fill(0.1);
    registry.feedback({"web", state, Action::ScaleUp, 0.5, 3});

    std::string dir = temp_dir("carm-registry-test");
    registry.save(dir);

    ModelRegistry loaded = ModelRegistry::load(dir);
    CHECK(loaded.meta().net.params() == registry.meta().net.params());
    CHECK(loaded.meta().scales == registry.meta().scales);
    CHECK(loaded.meta().steps == registry.meta().steps);
    CHECK(loaded.has_specialized("web"));
    CHECK(loaded.select_model("web").net.params() == registry.select_model("web").net.params());

    // The manifest checksum matches an independent FNV-1a implementation.
    json manifest = json::parse(read_bytes(std::filesystem::path(dir) / "manifest.json"));
    for (const auto& entry : manifest["models"]) {
        std::string bytes = read_bytes(std::filesystem::path(dir) / entry["file"].get<std::string>());
        CHECK(entry["checksum"].get<std::string>() == hex64_oracle(fnv1a_oracle(bytes)));
    }

    auto meta_path = std::filesystem::path(dir) / "meta.qnt";
    std::string original = read_bytes(meta_path);

    // Flipped payload byte: checksum mismatch.
    std::string flipped = original;
    flipped[100] = char(flipped[100] ^ 0x40);
    write_bytes(meta_path, flipped);
    CHECK(code_of([&] { ModelRegistry::load(dir); }) == Err::CorruptModel);

    // Truncation.
    write_bytes(meta_path, original.substr(0, original.size() / 2));
    CHECK(code_of([&] { ModelRegistry::load(dir); }) == Err::CorruptModel);

    // Trailing garbage with a recomputed (matching) checksum still fails
    // structural decoding.
    std::string padded = original + '\0';
    write_bytes(meta_path, padded);
    json doctored = manifest;
    for (auto& entry : doctored["models"]) {
        if (entry["file"] == "meta.qnt") entry["checksum"] = hex64_oracle(fnv1a_oracle(padded));
    }
    write_bytes(std::filesystem::path(dir) / "manifest.json", doctored.dump(2) + "\n");
    CHECK(code_of([&] { ModelRegistry::load(dir); }) == Err::CorruptModel);

    // Restore, then corrupt the manifest itself.
    write_bytes(meta_path, original);
    write_bytes(std::filesystem::path(dir) / "manifest.json", "{broken");
    CHECK(code_of([&] { ModelRegistry::load(dir); }) == Err::CorruptModel);

    CHECK(code_of([] { ModelRegistry::load("/nonexistent/registry"); }) == Err::IoFailure);
    std::filesystem::remove_all(dir);
}

TEST_CASE("feedback records validate their wire form") {
    json good = {{"deployment", "web"},
                 {"state", std::vector<double>(12, 0.1)},
                 {"action", 2},
                 {"reward", -1.0},
                 {"tick", 4}};
    FeedbackRecord record = FeedbackRecord::from_json(good);
    CHECK(record.deployment == "web");
    CHECK(record.action == Action::ScaleDown);
    CHECK(record.reward == -1.0);
    CHECK(record.tick == 4);
    CHECK(FeedbackRecord::from_json(record.to_json()).state == record.state);

    auto expect_reject = [](json doc) {
        CHECK(code_of([&] { FeedbackRecord::from_json(doc); }) == Err::MissingFeature);
    };
    json bad = good;
    bad.erase("deployment");
    expect_reject(bad);
    bad = good;
    bad["state"] = std::vector<double>(11, 0.1);
    expect_reject(bad);
    bad = good;
    bad["action"] = 7;
    expect_reject(bad);
    bad = good;
    bad["action"] = 1.5;
    expect_reject(bad);
    bad = good;
    bad["reward"] = 1.5;
    expect_reject(bad);
    bad = good;
    bad["tick"] = "soon";
    expect_reject(bad);
}

TEST_CASE("bootstrapping is deterministic per seed") {
    QModel again = bootstrap_meta(2024);
    CHECK(again.net.weight_hash() == shipped_model().net.weight_hash());
    CHECK(again.steps == 30000);
    CHECK(again.parent == "meta");
    CHECK(again.scales == default_feature_scales());
}
