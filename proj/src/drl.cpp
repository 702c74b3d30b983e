#include "carm/drl.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "carm/error.hpp"

namespace carm {

namespace {
constexpr double kGiB = 1073741824.0;
}

const char* to_string(Action action) {
    switch (action) {
    case Action::Optimize: return "optimize";
    case Action::Migrate: return "migrate";
    case Action::ScaleDown: return "scale-down";
    case Action::ScaleUp: return "scale-up";
    }
    return "optimize";
}

std::optional<Action> action_from_code(int code) {
    if (code < 0 || code > 3) return std::nullopt;
    return Action(code);
}

std::array<double, QNet::kInputs> default_feature_scales() {
    // (replicas, cpu cores, mem bytes, cpu alloc, mem alloc, latency s),
    // before block then after block.
    return {10.0, 4.0, 8.0 * kGiB, 4.0, 8.0 * kGiB, 60.0,
            10.0, 4.0, 8.0 * kGiB, 4.0, 8.0 * kGiB, 60.0};
}

namespace {

std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw Error(Err::MissingFeature, std::string("field '") + key + "' must be a number");
    return it->get<double>();
}

void append_snapshot(DrlState& state, int offset, const StateSnapshot& snap,
                     const std::array<double, QNet::kInputs>& scales, const char* which) {
    const std::array<std::pair<const char*, const std::optional<double>*>, 6> fields = {{
        {"replicas", &snap.replicas},
        {"cpu_usage", &snap.cpu_usage},
        {"mem_usage", &snap.mem_usage},
        {"cpu_alloc", &snap.cpu_alloc},
        {"mem_alloc", &snap.mem_alloc},
        {"latency", &snap.latency},
    }};
    for (int i = 0; i < 6; ++i) {
        const auto& [name, value] = fields[i];
        if (!value->has_value() || !std::isfinite(**value)) {
            throw Error(Err::MissingFeature, std::string(which) + " snapshot lacks finite '" + name + "'");
        }
        state[offset + i] = **value / scales[offset + i];
    }
}

} // namespace

StateSnapshot StateSnapshot::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Err::MissingFeature, "snapshot must be an object");
    StateSnapshot s;
    s.replicas = optional_number(j, "replicas");
    s.cpu_usage = optional_number(j, "cpu_usage");
    s.mem_usage = optional_number(j, "mem_usage");
    s.cpu_alloc = optional_number(j, "cpu_alloc");
    s.mem_alloc = optional_number(j, "mem_alloc");
    s.latency = optional_number(j, "latency");
    return s;
}

nlohmann::ordered_json StateSnapshot::to_json() const {
    nlohmann::ordered_json j;
    auto put = [&j](const char* key, const std::optional<double>& v) {
        j[key] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    put("replicas", replicas);
    put("cpu_usage", cpu_usage);
    put("mem_usage", mem_usage);
    put("cpu_alloc", cpu_alloc);
    put("mem_alloc", mem_alloc);
    put("latency", latency);
    return j;
}

DrlState featurize(const StateSnapshot& before, const StateSnapshot& after,
                   const std::array<double, QNet::kInputs>& scales) {
    for (double s : scales) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw Error(Err::MissingFeature, "normalization scales must be positive and finite");
        }
    }
    DrlState state{};
    append_snapshot(state, 0, before, scales, "before");
    append_snapshot(state, 6, after, scales, "after");
    return state;
}

std::pair<Action, std::array<double, QNet::kOutputs>> predict(const QModel& model, const DrlState& state) {
    auto q = model.net.forward(state);
    int best = int(std::max_element(q.begin(), q.end()) - q.begin()); // first max: lowest code wins ties
    return {Action(best), q};
}

double reward(const OutcomeWindow& window) {
    if (!window.any_samples) throw Error(Err::EmptyWindow, "reward needs at least one post-action sample");
    if (window.oom || window.latency > window.degradation_factor * window.latency_baseline) return -1.0;
    if (window.alloc_after > window.alloc_before) return 0.0;
    return 1.0;
}

double epsilon_schedule(long step, long total_steps) {
    if (total_steps <= 1) return 0.05;
    double t = double(step) / double(total_steps - 1);
    t = std::clamp(t, 0.0, 1.0);
    return 1.0 + t * (0.05 - 1.0);
}

QModel train_meta(const std::vector<Transition>& dataset, const TrainConfig& config) {
    if (dataset.empty()) throw Error(Err::EmptyDataset, "training dataset is empty");
    QModel model;
    model.net = QNet::random_init(config.seed);
    model.parent = "meta";
    std::mt19937_64 replay(config.seed ^ 0x9e3779b97f4a7c15ull);
    for (long step = 0; step < config.steps; ++step) {
        const Transition& t = dataset[replay() % dataset.size()];
        double target_q = t.reward;
        if (!t.terminal) {
            auto next_q = model.net.forward(t.next_state);
            target_q += config.gamma * *std::max_element(next_q.begin(), next_q.end());
        }
        std::array<double, QNet::kOutputs> target{};
        std::array<bool, QNet::kOutputs> mask{};
        target[int(t.action)] = target_q;
        mask[int(t.action)] = true;
        model.net.sgd_step(t.state, target, mask, config.learning_rate);
    }
    model.steps = config.steps;
    return model;
}

FeedbackRecord FeedbackRecord::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Err::MissingFeature, "feedback record must be an object");
    FeedbackRecord r;
    if (!j.contains("deployment") || !j["deployment"].is_string()) {
        throw Error(Err::MissingFeature, "feedback record lacks 'deployment'");
    }
    r.deployment = j["deployment"].get<std::string>();
    if (!j.contains("state") || !j["state"].is_array() || j["state"].size() != QNet::kInputs) {
        throw Error(Err::MissingFeature, "feedback 'state' must be an array of 12 numbers");
    }
    for (int i = 0; i < QNet::kInputs; ++i) {
        if (!j["state"][i].is_number()) throw Error(Err::MissingFeature, "feedback 'state' must be numeric");
        r.state[i] = j["state"][i].get<double>();
    }
    if (!j.contains("action") || !j["action"].is_number_integer()) {
        throw Error(Err::MissingFeature, "feedback record lacks integer 'action'");
    }
    auto action = action_from_code(j["action"].get<int>());
    if (!action) throw Error(Err::MissingFeature, "feedback 'action' must be in 0..3");
    r.action = *action;
    if (!j.contains("reward") || !j["reward"].is_number()) {
        throw Error(Err::MissingFeature, "feedback record lacks numeric 'reward'");
    }
    r.reward = j["reward"].get<double>();
    if (!(r.reward >= -1.0 && r.reward <= 1.0)) {
        throw Error(Err::MissingFeature, "feedback 'reward' must lie in [-1, 1]");
    }
    if (j.contains("tick")) {
        if (!j["tick"].is_number_integer()) throw Error(Err::MissingFeature, "feedback 'tick' must be an integer");
        r.tick = j["tick"].get<long>();
    }
    return r;
}

nlohmann::ordered_json FeedbackRecord::to_json() const {
    nlohmann::ordered_json j;
    j["deployment"] = deployment;
    j["state"] = state;
    j["action"] = int(action);
    j["reward"] = reward;
    j["tick"] = tick;
    return j;
}

const QModel& ModelRegistry::select_model(const std::string& deployment) const {
    auto it = specialized_.find(deployment);
    return it == specialized_.end() ? meta_ : it->second;
}

bool ModelRegistry::has_specialized(const std::string& deployment) const {
    return specialized_.count(deployment) > 0;
}

std::vector<std::string> ModelRegistry::specialized_names() const {
    std::vector<std::string> names;
    names.reserve(specialized_.size());
    for (const auto& [name, _] : specialized_) names.push_back(name);
    return names;
}

void ModelRegistry::feedback(const FeedbackRecord& record, const FeedbackConfig& config) {
    if (!(record.reward >= -1.0 && record.reward <= 1.0)) {
        throw Error(Err::MissingFeature, "feedback 'reward' must lie in [-1, 1]");
    }
    auto it = specialized_.find(record.deployment);
    if (it == specialized_.end()) {
        QModel clone = meta_; // deep copy: weights never shared with meta
        clone.parent = record.deployment;
        it = specialized_.emplace(record.deployment, std::move(clone)).first;
    }
    QModel& model = it->second;

    // Anchored fine-tuning: pull the chosen action's q toward the reward
    // while pinning the other outputs to their pre-update values.
    auto q_pre = model.net.forward(record.state);
    std::array<double, QNet::kOutputs> target = q_pre;
    target[int(record.action)] = record.reward;
    std::array<bool, QNet::kOutputs> mask;
    mask.fill(true);
    for (int step = 0; step < config.steps; ++step) {
        model.net.sgd_step(record.state, target, mask, config.learning_rate);
    }
    model.steps += config.steps;
}

// --- persistence -----------------------------------------------------------

namespace {

constexpr char kMagic[9] = "CARMQNT1"; // 8 bytes + NUL (NUL not written)

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<std::uint64_t>(v)); }

struct ByteReader {
    const std::string& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw Error(Err::CorruptModel, "model file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(data[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string out = data.substr(pos, n);
        pos += n;
        return out;
    }
};

std::string encode_model(const QModel& model) {
    std::string buf;
    buf.append(kMagic, 8);
    put_u32(buf, QNet::kInputs);
    for (double s : model.scales) put_f64(buf, s);
    put_u64(buf, std::uint64_t(model.steps));
    put_u32(buf, std::uint32_t(model.parent.size()));
    buf.append(model.parent);
    put_u32(buf, QNet::kParamCount);
    for (double p : model.net.params()) put_f64(buf, p);
    return buf;
}

QModel decode_model(const std::string& bytes) {
    ByteReader reader{bytes};
    if (reader.bytes(8) != std::string(kMagic, 8)) {
        throw Error(Err::CorruptModel, "bad model magic (unsupported format version)");
    }
    QModel model;
    if (reader.u32() != QNet::kInputs) throw Error(Err::CorruptModel, "unexpected feature count");
    for (double& s : model.scales) s = reader.f64();
    model.steps = long(reader.u64());
    std::uint32_t parent_len = reader.u32();
    if (parent_len > 4096) throw Error(Err::CorruptModel, "implausible parent name length");
    model.parent = reader.bytes(parent_len);
    if (reader.u32() != QNet::kParamCount) throw Error(Err::CorruptModel, "unexpected parameter count");
    for (int i = 0; i < QNet::kParamCount; ++i) model.net.params()[i] = reader.f64();
    if (reader.pos != bytes.size()) throw Error(Err::CorruptModel, "trailing bytes in model file");
    return model;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t hash = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << v;
    return out.str();
}

std::string sanitize_filename(const std::string& name) {
    std::string out;
    for (char c : name) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
        out.push_back(ok ? c : '_');
    }
    return out;
}

void write_binary_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Err::IoFailure, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw Error(Err::IoFailure, "write to '" + path.string() + "' failed");
}

std::string read_binary_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Err::IoFailure, "cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

} // namespace

void ModelRegistry::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Err::IoFailure, "cannot create registry directory '" + dir + "'");

    nlohmann::ordered_json manifest;
    manifest["format"] = "model-registry";
    manifest["version"] = 1;
    manifest["models"] = nlohmann::ordered_json::array();

    auto add_model = [&](const QModel& model, const std::string& role, const std::string& deployment,
                         const std::string& file) {
        std::string bytes = encode_model(model);
        write_binary_file(fs::path(dir) / file, bytes);
        nlohmann::ordered_json entry;
        entry["role"] = role;
        if (!deployment.empty()) entry["deployment"] = deployment;
        entry["file"] = file;
        entry["checksum"] = hex64(fnv1a(bytes));
        manifest["models"].push_back(entry);
    };

    add_model(meta_, "meta", "", "meta.qnt");
    for (const auto& [deployment, model] : specialized_) {
        add_model(model, "specialized", deployment, "model-" + sanitize_filename(deployment) + ".qnt");
    }

    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Err::IoFailure, "cannot write registry manifest in '" + dir + "'");
    out << manifest.dump(2) << "\n";
    if (!out) throw Error(Err::IoFailure, "write of registry manifest failed");
}

ModelRegistry ModelRegistry::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!in) throw Error(Err::IoFailure, "cannot open registry manifest in '" + dir + "'");
    nlohmann::json manifest = nlohmann::json::parse(in, nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object() || !manifest.contains("models") ||
        !manifest["models"].is_array()) {
        throw Error(Err::CorruptModel, "registry manifest is not valid");
    }
    if (!manifest.contains("version") || manifest["version"] != 1) {
        throw Error(Err::CorruptModel, "unsupported registry version");
    }

    ModelRegistry registry;
    bool meta_seen = false;
    for (const auto& entry : manifest["models"]) {
        if (!entry.is_object() || !entry.contains("file") || !entry.contains("checksum") ||
            !entry.contains("role")) {
            throw Error(Err::CorruptModel, "registry manifest entry is incomplete");
        }
        std::string bytes = read_binary_file(fs::path(dir) / entry["file"].get<std::string>());
        if (hex64(fnv1a(bytes)) != entry["checksum"].get<std::string>()) {
            throw Error(Err::CorruptModel, "checksum mismatch for '" + entry["file"].get<std::string>() + "'");
        }
        QModel model = decode_model(bytes);
        std::string role = entry["role"].get<std::string>();
        if (role == "meta") {
            registry.meta_ = std::move(model);
            meta_seen = true;
        } else if (role == "specialized") {
            if (!entry.contains("deployment")) {
                throw Error(Err::CorruptModel, "specialized manifest entry lacks deployment");
            }
            registry.specialized_[entry["deployment"].get<std::string>()] = std::move(model);
        } else {
            throw Error(Err::CorruptModel, "unknown model role '" + role + "'");
        }
    }
    if (!meta_seen) throw Error(Err::CorruptModel, "registry has no meta model");
    return registry;
}

// --- bootstrap -------------------------------------------------------------

namespace {

struct Archetype {
    StateSnapshot before;
    StateSnapshot after;
    std::array<double, QNet::kOutputs> rewards; // indexed by action code
};

StateSnapshot snapshot(double replicas, double cpu, double mem, double cpu_alloc, double mem_alloc,
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

std::vector<Archetype> bootstrap_archetypes() {
    std::vector<Archetype> types;
    // Healthy after a quota landed: latency rose but stayed inside the
    // degradation bound; leave it alone.
    types.push_back({snapshot(1, 0.94, 1.5 * kGiB, 0.94, 1.5 * kGiB, 12.6),
                     snapshot(1, 0.80, 1.5 * kGiB, 0.80, 1.5 * kGiB, 14.8),
                     {1.0, 0.0, -1.0, 0.0}});
    // Healthy and idle.
    types.push_back({snapshot(1, 0.5, 1.0 * kGiB, 0.5, 1.0 * kGiB, 10.0),
                     snapshot(1, 0.5, 1.0 * kGiB, 0.5, 1.0 * kGiB, 10.0),
                     {1.0, 0.0, -1.0, 0.0}});
    // Memory exhaustion: usage sits above the allocation; only growing
    // capacity (more replicas sharing the demand) clears it. Observation
    // windows blend kill-inflated ticks with clean ones, so the same signal
    // appears across a spread of average latencies.
    for (double latency : {14.0, 18.0, 22.0, 30.0}) {
        types.push_back({snapshot(1, 0.5, 2.0 * kGiB, 0.5, 2.0 * kGiB, 10.0),
                         snapshot(1, 0.5, 2.0 * kGiB, 0.5, 1.2 * kGiB, latency),
                         {-1.0, -1.0, -1.0, 0.0}});
    }
    // Latency breach after an aggressive quota.
    types.push_back({snapshot(1, 0.9, 1.0 * kGiB, 0.9, 1.0 * kGiB, 12.0),
                     snapshot(1, 0.45, 1.0 * kGiB, 0.45, 1.0 * kGiB, 24.0),
                     {-1.0, -1.0, -1.0, 0.0}});
    return types;
}

} // namespace

QModel bootstrap_meta(std::uint64_t seed) {
    auto scales = default_feature_scales();
    std::mt19937_64 rng(seed);
    auto uniform = [&rng]() { return double(rng() >> 11) * 0x1.0p-53; };

    std::vector<Transition> dataset;
    for (const Archetype& archetype : bootstrap_archetypes()) {
        for (int variant = 0; variant < 64; ++variant) {
            StateSnapshot before = archetype.before;
            StateSnapshot after = archetype.after;
            // One jitter factor per metric applied to both snapshots keeps
            // the before/after ratios (the decision signal) intact.
            auto jitter_pair = [&](std::optional<double>& b, std::optional<double>& a) {
                double factor = 1.0 + 0.1 * (2.0 * uniform() - 1.0);
                b = *b * factor;
                a = *a * factor;
            };
            jitter_pair(before.cpu_usage, after.cpu_usage);
            jitter_pair(before.mem_usage, after.mem_usage);
            jitter_pair(before.cpu_alloc, after.cpu_alloc);
            jitter_pair(before.mem_alloc, after.mem_alloc);
            jitter_pair(before.latency, after.latency);

            DrlState state = featurize(before, after, scales);
            for (int code = 0; code < QNet::kOutputs; ++code) {
                Transition t;
                t.state = state;
                t.action = Action(code);
                t.reward = archetype.rewards[code];
                t.next_state = state;
                t.terminal = true;
                dataset.push_back(t);
            }
        }
    }

    TrainConfig config;
    config.seed = seed;
    config.steps = 30000;
    config.learning_rate = 3e-3;
    QModel model = train_meta(dataset, config);
    model.scales = scales;
    return model;
}

} // namespace carm
