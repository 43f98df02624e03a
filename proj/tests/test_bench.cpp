#include "ddcls/bench.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <numeric>

using namespace ddcls;

namespace {

// Smallest sample value with at least p percent of the sample at or below it.
double nearest_rank(std::vector<double> v, double p)
{
    std::sort(v.begin(), v.end());
    for (double x : v) {
        const auto below = static_cast<double>(std::count_if(v.begin(), v.end(), [&](double y) { return y <= x; }));
        if (below * 100.0 >= p * static_cast<double>(v.size()))
            return x;
    }
    return v.back();
}

} // namespace

TEST_CASE("nearest-rank percentiles")
{
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    CHECK(bench::percentile(v, 50) == 50.0);
    CHECK(bench::percentile(v, 90) == 90.0);
    CHECK(bench::percentile(v, 99) == 99.0);
    CHECK(bench::percentile(v, 100) == 100.0);
    CHECK(bench::percentile(v, 0) == 1.0);

    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
        auto s = oracle::random_vector(1 + bounded(rng, 30), rng, 0, 10);
        std::vector<double> d(s.begin(), s.end());
        std::sort(d.begin(), d.end());
        for (double p : {1.0, 25.0, 50.0, 90.0, 99.0})
            CHECK(bench::percentile(d, p) == nearest_rank(d, p));
    }

    const auto st = bench::summarize({5, 1, 3, 2, 4});
    CHECK(st.mean == 3.0);
    CHECK(st.min == 1.0);
    CHECK(st.p50 == 3.0);
    CHECK(st.p99 == 5.0);
}

TEST_CASE("bench report carries the model counters")
{
    graph::ModelConfig cfg;
    cfg.input_size = 32;
    graph::Model tiny(cfg, {graph::LayerSpec::conv("backbone.0", 3, 8, 3, 2), graph::LayerSpec::head("head", 8, 16, 10)});
    tiny.bind(graph::random_weights(tiny, 1));
    const auto r = bench::run(tiny, 32, 10, 1, 1, 3);
    CHECK(r.params == graph::count_params(tiny));
    CHECK(r.flops == graph::count_macs(tiny, 32).flops);
    CHECK(r.samples_ms.size() == 10);
    CHECK(r.latency_ms.min <= r.latency_ms.p50);
    CHECK(r.latency_ms.p50 <= r.latency_ms.p99);
    CHECK_THROWS_AS(bench::run(tiny, 32, 9, 1), Error);
    CHECK_THROWS_AS(bench::run(tiny, 32, 10, 0), Error);

    const std::vector<bench::BenchReport> rs{r};
    const auto j = nlohmann::json::parse(bench::report_json(rs));
    CHECK(j["schema"] == bench::kReportSchema);
    CHECK(j["runs"][0]["latency_ms"]["p90"].get<double>() == r.latency_ms.p90);
    CHECK(bench::report_table(rs).find("p50_ms") != std::string::npos);
}

TEST_CASE("full model costs more than a tiny one")
{
    graph::ModelConfig cfg;
    graph::Model tiny(cfg, {graph::LayerSpec::conv("backbone.0", 3, 8, 3, 2), graph::LayerSpec::head("head", 8, 16, 10)});
    tiny.bind(graph::random_weights(tiny, 1));
    auto full = graph::build_yolov8_cls(cfg);
    full.bind(graph::random_weights(full, 1));
    const auto a = bench::run(tiny, 224, 10, 1);
    const auto b = bench::run(full, 224, 10, 1);
    CHECK(b.params == 1'451'098);
    CHECK(b.latency_ms.p50 > a.latency_ms.p50);
}
