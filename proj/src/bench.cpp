#include "ddcls/bench.hpp"

#include "ddcls/error.hpp"
#include "ddcls/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace ddcls::bench {

double percentile(std::span<const double> sorted, double p)
{
    if (sorted.empty())
        throw Error("percentile of an empty sample");
    const double rank = std::ceil(std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size()));
    const auto idx = static_cast<std::size_t>(std::max(rank, 1.0)) - 1;
    return sorted[idx];
}

LatencyStats summarize(std::vector<double> samples_ms)
{
    std::sort(samples_ms.begin(), samples_ms.end());
    LatencyStats s;
    s.mean = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(samples_ms.size());
    s.min = samples_ms.front();
    s.p50 = percentile(samples_ms, 50);
    s.p90 = percentile(samples_ms, 90);
    s.p99 = percentile(samples_ms, 99);
    return s;
}

BenchReport run(const graph::Model& model, std::size_t input_size, std::size_t iters, std::size_t warmup,
                unsigned threads, std::uint64_t seed)
{
    if (!model.bound())
        throw Error("bench: model has no bound weights");
    if (iters < 10 || warmup < 1)
        throw Error("bench: need iters >= 10 and warmup >= 1");

    Tensor input(1, model.in_channels(), input_size, input_size);
    Rng rng(seed);
    for (float& v : input.data())
        v = static_cast<float>(uniform01(rng));

    for (std::size_t i = 0; i < warmup; ++i)
        model.forward(input, threads);

    BenchReport r;
    r.samples_ms.reserve(iters);
    for (std::size_t i = 0; i < iters; ++i) {
        const auto start = std::chrono::steady_clock::now();
        const Tensor out = model.forward(input, threads);
        const auto stop = std::chrono::steady_clock::now();
        r.samples_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    const auto cost = graph::count_macs(model, input_size);
    r.params = graph::count_params(model);
    r.macs = cost.macs;
    r.flops = cost.flops;
    r.input_size = input_size;
    r.iters = iters;
    r.warmup = warmup;
    r.threads = threads;
    r.latency_ms = summarize(r.samples_ms);
    return r;
}

std::string report_json(std::span<const BenchReport> reports)
{
    using nlohmann::ordered_json;
    ordered_json runs = ordered_json::array();
    for (const BenchReport& r : reports) {
        runs.push_back({{"params", r.params},
                        {"macs", r.macs},
                        {"flops", r.flops},
                        {"input_size", r.input_size},
                        {"iters", r.iters},
                        {"warmup", r.warmup},
                        {"threads", r.threads},
                        {"latency_ms",
                         {{"mean", r.latency_ms.mean},
                          {"p50", r.latency_ms.p50},
                          {"p90", r.latency_ms.p90},
                          {"p99", r.latency_ms.p99},
                          {"min", r.latency_ms.min}}}});
    }
    ordered_json j;
    j["schema"] = kReportSchema;
    j["runs"] = runs;
    return j.dump(2) + "\n";
}

std::string report_table(std::span<const BenchReport> reports)
{
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-6s %10s %8s %8s %5s %9s %9s %9s %9s %9s\n", "size", "params", "GFLOPs",
                  "iters", "thr", "mean_ms", "p50_ms", "p90_ms", "p99_ms", "min_ms");
    out += line;
    for (const BenchReport& r : reports) {
        std::snprintf(line, sizeof line, "%-6zu %10llu %8.3f %8zu %5u %9.3f %9.3f %9.3f %9.3f %9.3f\n", r.input_size,
                      static_cast<unsigned long long>(r.params), static_cast<double>(r.flops) / 1e9, r.iters,
                      r.threads, r.latency_ms.mean, r.latency_ms.p50, r.latency_ms.p90, r.latency_ms.p99,
                      r.latency_ms.min);
        out += line;
    }
    return out;
}

} // namespace ddcls::bench
