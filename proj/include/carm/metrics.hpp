#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace carm {

struct MetricsSample {
    long tick = 0;
    std::string deployment;
    double cpu_usage = 0.0; // cores, deployment total
    double mem_usage = 0.0; // bytes, deployment total
    double latency = 0.0;   // seconds
    std::optional<double> cpu_limit; // cores per replica
    std::optional<double> mem_limit; // bytes per replica
    int replicas = 1;
};

enum class ExportFormat { Csv, Jsonl };

// In-process time series store. One writer (the simulation loop), any number
// of readers between ticks. Samples are kept strictly tick-ascending per
// deployment; recording a duplicate (deployment, tick) replaces the old one.
class MetricsStore {
public:
    void record(const MetricsSample& sample);

    // Samples of one metric inside the closed window, tick-ascending.
    // Valid metric names: cpu_usage, mem_usage, latency, cpu_limit,
    // mem_limit, replicas. Samples without a value for an optional metric
    // are skipped.
    std::vector<std::pair<long, double>> query_range(const std::string& deployment,
                                                     const std::string& metric,
                                                     long tick_from, long tick_to) const;

    // Arithmetic mean over the window; nullopt when the window holds no
    // samples. Exact for constant series.
    std::optional<double> window_avg(const std::string& deployment, const std::string& metric,
                                     long tick_from, long tick_to) const;

    const std::vector<MetricsSample>* series(const std::string& deployment) const;
    std::vector<std::string> deployments() const;
    std::size_t size() const;
    bool empty() const { return size() == 0; }

    void export_file(const std::string& path, ExportFormat format) const;
    static MetricsStore import_file(const std::string& path, ExportFormat format);

    bool operator==(const MetricsStore& other) const;

private:
    std::map<std::string, std::vector<MetricsSample>> series_;
};

} // namespace carm
