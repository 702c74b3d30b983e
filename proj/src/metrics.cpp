#include "carm/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

#include "carm/error.hpp"
#include "carm/num_text.hpp"

namespace carm {

namespace {

// Accessor for one metric column; nullopt means the sample has no value
// (unset limit).
std::function<std::optional<double>(const MetricsSample&)> metric_getter(const std::string& metric) {
    if (metric == "cpu_usage") return [](const MetricsSample& s) { return std::optional<double>(s.cpu_usage); };
    if (metric == "mem_usage") return [](const MetricsSample& s) { return std::optional<double>(s.mem_usage); };
    if (metric == "latency") return [](const MetricsSample& s) { return std::optional<double>(s.latency); };
    if (metric == "cpu_limit") return [](const MetricsSample& s) { return s.cpu_limit; };
    if (metric == "mem_limit") return [](const MetricsSample& s) { return s.mem_limit; };
    if (metric == "replicas") return [](const MetricsSample& s) { return std::optional<double>(double(s.replicas)); };
    throw Error(Err::UnknownMetric, "no metric named '" + metric + "'");
}

bool sample_equal(const MetricsSample& a, const MetricsSample& b) {
    return a.tick == b.tick && a.deployment == b.deployment && a.cpu_usage == b.cpu_usage &&
           a.mem_usage == b.mem_usage && a.latency == b.latency && a.cpu_limit == b.cpu_limit &&
           a.mem_limit == b.mem_limit && a.replicas == b.replicas;
}

} // namespace

void MetricsStore::record(const MetricsSample& sample) {
    auto& series = series_[sample.deployment];
    auto it = std::lower_bound(series.begin(), series.end(), sample.tick,
                               [](const MetricsSample& s, long tick) { return s.tick < tick; });
    if (it != series.end() && it->tick == sample.tick) {
        *it = sample; // last write wins
    } else {
        series.insert(it, sample);
    }
}

std::vector<std::pair<long, double>> MetricsStore::query_range(const std::string& deployment,
                                                               const std::string& metric,
                                                               long tick_from, long tick_to) const {
    auto get = metric_getter(metric);
    std::vector<std::pair<long, double>> out;
    auto it = series_.find(deployment);
    if (it == series_.end()) return out;
    for (const auto& s : it->second) {
        if (s.tick < tick_from) continue;
        if (s.tick > tick_to) break;
        if (auto v = get(s)) out.emplace_back(s.tick, *v);
    }
    return out;
}

std::optional<double> MetricsStore::window_avg(const std::string& deployment, const std::string& metric,
                                               long tick_from, long tick_to) const {
    auto points = query_range(deployment, metric, tick_from, tick_to);
    if (points.empty()) return std::nullopt;
    // Centered mean: exact when the series is constant, which the exact
    // reproduction run (noise disabled) relies on.
    double anchor = points.front().second;
    double acc = 0.0;
    for (const auto& [tick, value] : points) acc += value - anchor;
    return anchor + acc / double(points.size());
}

const std::vector<MetricsSample>* MetricsStore::series(const std::string& deployment) const {
    auto it = series_.find(deployment);
    return it == series_.end() ? nullptr : &it->second;
}

std::vector<std::string> MetricsStore::deployments() const {
    std::vector<std::string> names;
    names.reserve(series_.size());
    for (const auto& [name, _] : series_) names.push_back(name);
    return names;
}

std::size_t MetricsStore::size() const {
    std::size_t n = 0;
    for (const auto& [_, series] : series_) n += series.size();
    return n;
}

namespace {

constexpr const char* kCsvHeader = "tick,deployment,cpu_usage,mem_usage,latency,cpu_limit,mem_limit,replicas";

// Export order: tick-major, deployment name ascending within a tick.
std::vector<const MetricsSample*> sorted_view(const std::map<std::string, std::vector<MetricsSample>>& series) {
    std::vector<const MetricsSample*> rows;
    for (const auto& [_, samples] : series) {
        for (const auto& s : samples) rows.push_back(&s);
    }
    std::sort(rows.begin(), rows.end(), [](const MetricsSample* a, const MetricsSample* b) {
        if (a->tick != b->tick) return a->tick < b->tick;
        return a->deployment < b->deployment;
    });
    return rows;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

} // namespace

void MetricsStore::export_file(const std::string& path, ExportFormat format) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Err::IoFailure, "cannot open '" + path + "' for writing");

    auto rows = sorted_view(series_);
    if (format == ExportFormat::Csv) {
        out << kCsvHeader << "\n";
        for (const auto* s : rows) {
            out << s->tick << ',' << s->deployment << ',' << format_double(s->cpu_usage) << ','
                << format_double(s->mem_usage) << ',' << format_double(s->latency) << ','
                << (s->cpu_limit ? format_double(*s->cpu_limit) : "") << ','
                << (s->mem_limit ? format_double(*s->mem_limit) : "") << ',' << s->replicas << "\n";
        }
    } else {
        for (const auto* s : rows) {
            nlohmann::ordered_json j;
            j["tick"] = s->tick;
            j["deployment"] = s->deployment;
            j["cpu_usage"] = s->cpu_usage;
            j["mem_usage"] = s->mem_usage;
            j["latency"] = s->latency;
            j["cpu_limit"] = s->cpu_limit ? nlohmann::ordered_json(*s->cpu_limit) : nlohmann::ordered_json(nullptr);
            j["mem_limit"] = s->mem_limit ? nlohmann::ordered_json(*s->mem_limit) : nlohmann::ordered_json(nullptr);
            j["replicas"] = s->replicas;
            out << j.dump() << "\n";
        }
    }
    if (!out) throw Error(Err::IoFailure, "write to '" + path + "' failed");
}

MetricsStore MetricsStore::import_file(const std::string& path, ExportFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Err::IoFailure, "cannot open '" + path + "' for reading");

    MetricsStore store;
    std::string line;
    if (format == ExportFormat::Csv) {
        if (!std::getline(in, line) || line != kCsvHeader) {
            throw Error(Err::IoFailure, "bad csv header in '" + path + "'");
        }
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = split_csv_line(line);
            if (fields.size() != 8) throw Error(Err::IoFailure, "bad csv row: '" + line + "'");
            MetricsSample s;
            s.tick = parse_long(fields[0]);
            s.deployment = fields[1];
            s.cpu_usage = parse_double(fields[2]);
            s.mem_usage = parse_double(fields[3]);
            s.latency = parse_double(fields[4]);
            if (!fields[5].empty()) s.cpu_limit = parse_double(fields[5]);
            if (!fields[6].empty()) s.mem_limit = parse_double(fields[6]);
            s.replicas = int(parse_long(fields[7]));
            store.record(s);
        }
    } else {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) throw Error(Err::IoFailure, "bad jsonl row: '" + line + "'");
            MetricsSample s;
            s.tick = j.at("tick").get<long>();
            s.deployment = j.at("deployment").get<std::string>();
            s.cpu_usage = j.at("cpu_usage").get<double>();
            s.mem_usage = j.at("mem_usage").get<double>();
            s.latency = j.at("latency").get<double>();
            if (!j.at("cpu_limit").is_null()) s.cpu_limit = j.at("cpu_limit").get<double>();
            if (!j.at("mem_limit").is_null()) s.mem_limit = j.at("mem_limit").get<double>();
            s.replicas = j.at("replicas").get<int>();
            store.record(s);
        }
    }
    return store;
}

bool MetricsStore::operator==(const MetricsStore& other) const {
    if (series_.size() != other.series_.size()) return false;
    for (const auto& [name, samples] : series_) {
        auto it = other.series_.find(name);
        if (it == other.series_.end() || it->second.size() != samples.size()) return false;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!sample_equal(samples[i], it->second[i])) return false;
        }
    }
    return true;
}

} // namespace carm
