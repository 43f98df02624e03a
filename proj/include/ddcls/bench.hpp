#pragma once

#include "ddcls/graph.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ddcls::bench {

inline constexpr const char* kReportSchema = "ddcls.bench_report/v1";

struct LatencyStats {
    double mean = 0.0;
    double p50 = 0.0;
    double p90 = 0.0;
    double p99 = 0.0;
    double min = 0.0;
};

struct BenchReport {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
    std::uint64_t flops = 0;
    std::size_t input_size = 0;
    std::size_t iters = 0;
    std::size_t warmup = 0;
    unsigned threads = 1;
    LatencyStats latency_ms;
    std::vector<double> samples_ms;
};

/// Nearest-rank percentile (p in [0, 100]) of an ascending-sorted sample.
double percentile(std::span<const double> sorted, double p);

LatencyStats summarize(std::vector<double> samples_ms);

/// `warmup` untimed forwards, then `iters` individually timed single-image
/// forwards (monotonic clock) on a fixed seeded input. Requires iters >= 10, warmup >= 1.
BenchReport run(const graph::Model& model, std::size_t input_size, std::size_t iters, std::size_t warmup,
                unsigned threads = 1, std::uint64_t seed = 0);

std::string report_json(std::span<const BenchReport> reports);
std::string report_table(std::span<const BenchReport> reports);

} // namespace ddcls::bench
