// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Every expected value is either a published figure or produced by the
// test-side oracles in support/oracles.hpp.

#include "ddcls/bench.hpp"
#include "ddcls/dataset.hpp"
#include "ddcls/eval.hpp"
#include "ddcls/graph.hpp"
#include "ddcls/trainer.hpp"
#include "ddcls/weights.hpp"

#include "support/oracles.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

using namespace ddcls;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr std::uint64_t kParamsNc10 = 1'451'098;
constexpr std::uint64_t kParamsNc1000 = 2'719'288;
constexpr double kFlops640 = 4.3e9;
constexpr double kFlopsBand = 0.20;
constexpr double kSizeMinMB = 2.7;
constexpr double kSizeMaxMB = 3.0;
constexpr int kConvCases = 200;
constexpr double kConvRel = 1e-4;
constexpr double kLoweredRel = 1e-5;
constexpr double kFoldRel = 1e-5;
constexpr double kSoftmaxTol = 1e-6;
constexpr int kGradInstances = 100;
constexpr double kGradRel = 1e-3;
constexpr std::size_t kTrainEpochs = 50;
constexpr float kSmallLr = 1e-3f;
constexpr std::size_t kSplitPaths = 10'000;
constexpr double kLatencyBudgetMs = 150.0;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void criterion(const char* name, double budget_s, const std::function<void(Outcome&)>& body)
{
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs < budget_s, "runtime over budget");
    failures += !o.pass;
    std::printf("%s  %-26s %s (%.2f s / %.0f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str(), secs,
                budget_s);
    std::fflush(stdout);
}

graph::Model nano(int nc)
{
    graph::ModelConfig cfg;
    cfg.num_classes = nc;
    return graph::build_yolov8_cls(cfg);
}

void parameter_count(Outcome& o)
{
    const auto n = graph::count_params(nano(10));
    o.detail << "params=" << n << " expected=" << kParamsNc10;
    o.require(n == kParamsNc10, "exact count");
}

void table_two(Outcome& o)
{
    const auto model = nano(1000);
    const auto params = graph::count_params(model);
    const auto cost = graph::count_macs(model, 640);
    const double flops = static_cast<double>(cost.flops);
    const double dev = flops / kFlops640 - 1.0;
    o.detail << "params=" << params << " (" << std::fixed;
    o.detail.precision(1);
    o.detail << static_cast<double>(params) / 1e6 << "M) flops@640=";
    o.detail.precision(3);
    o.detail << flops / 1e9 << "e9 deviation=" << std::showpos << dev * 100 << std::noshowpos << "% band=+-"
             << kFlopsBand * 100 << "%";
    o.require(params == kParamsNc1000, "nc=1000 params");
    o.require(std::lround(static_cast<double>(params) / 1e5) == 27, "rounds to 2.7M");
    o.require(std::abs(dev) <= kFlopsBand, "flops@640 outside band");
    if (std::abs(dev) > kFlopsBand) {
        // Diagnostic only: the published figure is reproduced when the final
        // linear layer is costed as if it ran at every stride-32 position.
        const double linear = 2.0 * 1280.0 * 1000.0;
        const double positions = (640.0 / 32) * (640.0 / 32);
        o.detail << " diagnostic: linear costed per stride-32 position gives "
                 << (flops + linear * (positions - 1)) / 1e9 << "e9";
    }
}

void model_size(Outcome& o)
{
    auto m = nano(10);
    const auto bytes = weights::save(graph::random_weights(m, 42), weights::DType::f16);
    const double mb = static_cast<double>(bytes.size()) / 1e6;
    o.detail << "f16 bytes=" << bytes.size() << " (" << mb << " MB, " << static_cast<double>(bytes.size()) / 1048576.0
             << " MiB) band=[" << kSizeMinMB << ", " << kSizeMaxMB << "] MB";
    o.require(mb >= kSizeMinMB && mb <= kSizeMaxMB, "size band");
    o.require(weights::load(bytes).size() == m.tensor_specs().size(), "reload");
}

void kernel_suite(Outcome& o)
{
    Rng rng(2024);
    double conv_worst = 0, lowered_worst = 0, fold_worst = 0, fold_float_worst = 0;
    for (int i = 0; i < kConvCases; ++i) {
        const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[bounded(rng, 3)];
        ConvParams p;
        p.stride = 1 + bounded(rng, 2);
        p.padding = bounded(rng, k / 2 + 1);
        const Tensor x = oracle::random_tensor({1 + bounded(rng, 2), 1 + bounded(rng, 16), k + bounded(rng, 12),
                                                k + bounded(rng, 12)},
                                               rng);
        p.weight = oracle::random_tensor({1 + bounded(rng, 16), x.c(), k, k}, rng);
        if (bounded(rng, 2))
            p.bias = oracle::random_vector(p.weight.n(), rng);
        const auto want = oracle::conv2d(x, p.weight, p.bias ? &*p.bias : nullptr, static_cast<int>(p.stride),
                                         static_cast<int>(p.padding));
        const Tensor direct = ops::conv2d(x, p);
        const Tensor lowered = ops::conv2d_lowered(x, p, 1 + static_cast<unsigned>(bounded(rng, 4)));
        conv_worst = std::max({conv_worst, oracle::max_rel_err(direct, want), oracle::max_rel_err(lowered, want)});
        lowered_worst = std::max(lowered_worst, oracle::max_rel_err(lowered, direct));

        BnParams bn{oracle::random_vector(p.weight.n(), rng, 0.5, 1.5), oracle::random_vector(p.weight.n(), rng),
                    oracle::random_vector(p.weight.n(), rng), oracle::random_vector(p.weight.n(), rng, 0.1, 2.0),
                    1e-3f};
        // Fold fidelity: both sides convolved by the double oracle, so only the
        // folded parameters differ.
        const ConvParams folded = ops::fold_bn(p, bn);
        Shape s;
        const auto two_step = oracle::batchnorm(
            oracle::conv2d(x, p.weight, p.bias ? &*p.bias : nullptr, static_cast<int>(p.stride),
                           static_cast<int>(p.padding), &s),
            s, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps);
        fold_worst = std::max(fold_worst, oracle::max_rel_err(oracle::conv2d(x, folded.weight, &*folded.bias,
                                                                             static_cast<int>(p.stride),
                                                                             static_cast<int>(p.padding)),
                                                              two_step));
        fold_float_worst = std::max(fold_float_worst, oracle::max_rel_err(ops::conv2d(x, folded), two_step));
    }
    o.detail << "conv max_rel=" << conv_worst << " lowered_vs_direct=" << lowered_worst << " fold=" << fold_worst
             << " (float end-to-end " << fold_float_worst << ")";
    o.require(conv_worst <= kConvRel, "conv vs oracle");
    o.require(lowered_worst <= kLoweredRel, "lowered vs direct");
    o.require(fold_worst <= kFoldRel, "bn fold");
    o.require(fold_float_worst <= kConvRel, "folded conv in float");

    double norm_worst = 0, shift_worst = 0, softmax_oracle = 0;
    bool argmax_ok = true;
    for (int i = 0; i < 200; ++i) {
        const auto z = oracle::random_vector(1 + bounded(rng, 30), rng, -40, 40);
        const auto p = ops::softmax(z);
        std::vector<double> zd(z.begin(), z.end());
        const auto ref = oracle::softmax(zd);
        norm_worst = std::max(norm_worst, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
        auto shifted = z;
        for (float& v : shifted)
            v += 100.0f;
        const auto ps = ops::softmax(shifted);
        for (std::size_t j = 0; j < p.size(); ++j) {
            shift_worst = std::max(shift_worst, std::abs(static_cast<double>(ps[j]) - p[j]));
            softmax_oracle = std::max(softmax_oracle, std::abs(p[j] - ref[j]));
        }
        argmax_ok &= std::max_element(p.begin(), p.end()) - p.begin() == std::max_element(z.begin(), z.end()) - z.begin();
    }
    o.detail << " softmax_norm=" << norm_worst << " shift=" << shift_worst << " vs_oracle=" << softmax_oracle;
    o.require(norm_worst <= kSoftmaxTol, "softmax normalization");
    o.require(shift_worst <= 1e-4, "softmax shift invariance");
    o.require(softmax_oracle <= kSoftmaxTol, "softmax vs oracle");
    o.require(argmax_ok, "softmax argmax");

    std::size_t topk_mismatch = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t rows = 1 + bounded(rng, 50), nc = 2 + bounded(rng, 10);
        std::vector<float> logits(rows * nc);
        for (float& v : logits)
            v = static_cast<float>(bounded(rng, 5));
        std::vector<int> labels(rows);
        for (int& l : labels)
            l = static_cast<int>(bounded(rng, nc));
        for (std::size_t k = 1; k <= std::min<std::size_t>(nc, 5); ++k) {
            std::size_t hits = 0;
            for (std::size_t r = 0; r < rows; ++r) {
                std::vector<std::size_t> order(nc);
                std::iota(order.begin(), order.end(), 0);
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    const float x = logits[r * nc + a], y = logits[r * nc + b];
                    return x != y ? x > y : a < b;
                });
                hits += std::find(order.begin(), order.begin() + static_cast<long>(k),
                                  static_cast<std::size_t>(labels[r])) != order.begin() + static_cast<long>(k);
            }
            topk_mismatch += eval::top_k(logits, nc, labels, k) != static_cast<double>(hits) / static_cast<double>(rows);
        }
    }
    o.detail << " topk_mismatches=" << topk_mismatch;
    o.require(topk_mismatch == 0, "top-k vs sort");
}

void gradient_check(Outcome& o)
{
    Rng rng(77);
    double worst = 0;
    for (int inst = 0; inst < kGradInstances; ++inst) {
        const std::size_t in = 2 + bounded(rng, 30), out = 2 + bounded(rng, 9);
        auto head = train::LinearHead::zeros(in, out);
        head.weight = oracle::random_vector(in * out, rng);
        head.bias = oracle::random_vector(out, rng);
        const auto x = oracle::random_vector(in, rng, -2, 2);
        const int y = static_cast<int>(bounded(rng, out));
        const double l2 = inst % 3 == 0 ? 0.01 : 0.0;
        const auto g = train::grad_head(head, x, y, l2);
        auto probe = [&](float& param, float analytic) {
            const float saved = param;
            param = saved + 1e-2f;
            const float hi = param;
            const double up = train::head_loss(head, x, y, l2);
            param = saved - 1e-2f;
            const float lo = param;
            const double down = train::head_loss(head, x, y, l2);
            param = saved;
            const double fd = (up - down) / (static_cast<double>(hi) - lo);
            worst = std::max(worst, std::abs(fd - analytic) /
                                        std::max({std::abs(fd), std::abs(static_cast<double>(analytic)), 1e-2}));
        };
        for (std::size_t i = 0; i < head.weight.size(); ++i)
            probe(head.weight[i], g.weight[i]);
        for (std::size_t i = 0; i < head.bias.size(); ++i)
            probe(head.bias[i], g.bias[i]);
    }
    o.detail << "instances=" << kGradInstances << " max_rel=" << worst << " tol=" << kGradRel;
    o.require(worst <= kGradRel, "gradient");
}

train::FeatureSet feature_set(const oracle::Synthetic& s)
{
    train::FeatureSet f;
    f.dim = s.dim;
    for (std::size_t i = 0; i < s.y.size(); ++i)
        f.push_back(std::span(s.x).subspan(i * s.dim, s.dim), s.y[i]);
    return f;
}

void trainer_property(Outcome& o)
{
    const auto set = feature_set(oracle::separable_set(10, 20, 20, graph::kHeadHidden, 3));
    train::TrainConfig cfg{0.1f, kTrainEpochs, 32, 42, 0.0};
    const auto init = train::LinearHead::zeros(graph::kHeadHidden, 10);
    const auto r = train::train_head(init, set, set, cfg);
    std::size_t first_perfect = 0;
    for (const auto& e : r.epochs)
        if (e.top1 == 1.0 && first_perfect == 0)
            first_perfect = e.epoch;
    const double final_top1 = train::accuracy(r.head, set, 1);
    o.detail << "samples=" << set.size() << " top1=" << final_top1 << " first_100%_epoch=" << first_perfect;
    o.require(final_top1 == 1.0 && first_perfect > 0, "separable set");

    const auto again = train::train_head(init, set, set, cfg);
    o.require(again.head == r.head && again.epochs == r.epochs, "determinism");

    std::size_t increases = 0;
    for (float lr : {kSmallLr, kSmallLr / 10}) {
        train::TrainConfig full{lr, 30, set.size(), 42, 0.0};
        const auto fb = train::train_head(init, set, set, full);
        double prev = train::mean_loss(init, set);
        for (const auto& e : fb.epochs) {
            increases += e.train_loss > prev;
            prev = e.train_loss;
        }
    }
    o.detail << " full_batch_loss_increases=" << increases;
    o.require(increases == 0, "monotone loss");
}

void metrics_definitions(Outcome& o)
{
    eval::ConfusionMatrix toy(2);
    toy.add(0, 0, 8);
    toy.add(0, 1, 2);
    toy.add(1, 0, 1);
    toy.add(1, 1, 9);
    const auto m = eval::metrics_from_confusion(toy);
    const double p0 = 8.0 / 9, r0 = 0.8, f0 = 2 * p0 * r0 / (p0 + r0);
    const double p1 = 9.0 / 11, r1 = 0.9, f1 = 2 * p1 * r1 / (p1 + r1);
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    o.require(near(m.per_class[0].precision, p0) && near(m.per_class[0].recall, r0) && near(m.per_class[0].f1, f0),
              "toy class 0");
    o.require(near(m.per_class[1].precision, p1) && near(m.per_class[1].recall, r1) && near(m.per_class[1].f1, f1),
              "toy class 1");
    o.require(near(m.macro.f1, (f0 + f1) / 2) && near(m.macro.precision, (p0 + p1) / 2), "toy macro");
    o.detail << "toy P0=" << m.per_class[0].precision << " R0=" << m.per_class[0].recall
             << " F1_0=" << m.per_class[0].f1;

    eval::ConfusionMatrix perfect(10);
    for (std::size_t c = 0; c < 10; ++c)
        perfect.add(c, c, 10 + 3 * c);
    const auto pm = eval::metrics_from_confusion(perfect);
    bool ones = pm.macro.precision == 1 && pm.macro.recall == 1 && pm.macro.f1 == 1;
    for (const auto& c : pm.per_class)
        ones &= c.precision == 1 && c.recall == 1 && c.f1 == 1;
    o.require(ones, "oracle predictor");

    Rng rng(5);
    eval::ConfusionMatrix noisy(10);
    for (int i = 0; i < 4000; ++i) {
        const auto t = bounded(rng, 10);
        noisy.add(t, bounded(rng, 3) ? t : bounded(rng, 10), 1 + t);
    }
    const auto nm = eval::metrics_from_confusion(noisy);
    double mf = 0;
    for (const auto& c : nm.per_class)
        mf += c.f1;
    o.require(near(nm.macro.f1, mf / 10), "macro is unweighted mean");
    o.detail << " oracle_predictor=" << (ones ? "all ones" : "no") << " macro_f1=" << nm.macro.f1;
}

void split_contract(Outcome& o)
{
    // On-disk fixture: kSplitPaths files carrying only a PNG signature.
    const fs::path root = oracle::scratch_dir("acceptance_split") / "imgs";
    Rng rng(11);
    const char sig[8] = {'\x89', 'P', 'N', 'G', '\r', '\n', '\x1a', '\n'};
    for (int c = 0; c < 10; ++c)
        fs::create_directories(root / ("c" + std::to_string(c)));
    for (std::size_t i = 0; i < kSplitPaths; ++i) {
        const auto c = bounded(rng, 10);
        std::ofstream(root / ("c" + std::to_string(c)) / ("img_" + std::to_string(i) + ".png"), std::ios::binary)
            .write(sig, sizeof sig);
    }

    const auto start = std::chrono::steady_clock::now();
    const auto index = data::scan(root);
    const data::SplitSpec spec{0.70, 0.15, 0.15, 42, data::SplitStrategy::StratifiedRandom};
    const auto a = data::split(index, spec);
    const auto b = data::split(index, spec);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    o.require(index.samples.size() == kSplitPaths, "scan found every path");
    o.require(a.train == b.train && a.val == b.val && a.test == b.test, "deterministic");

    std::map<std::string, int> seen;
    for (const auto* part : {&a.train, &a.val, &a.test})
        for (const auto& s : *part)
            ++seen[s.path];
    bool exact = seen.size() == index.samples.size();
    for (const auto& [path, count] : seen)
        exact &= count == 1;
    o.require(exact, "partition exact");

    std::array<std::array<double, 3>, 10> counts{};
    int pi = 0;
    for (const auto* part : {&a.train, &a.val, &a.test}) {
        for (const auto& s : *part)
            counts[static_cast<std::size_t>(s.class_id)][static_cast<std::size_t>(pi)] += 1;
        ++pi;
    }
    double worst = 0;
    const auto totals = index.class_counts();
    const std::array<double, 3> ratios{0.70, 0.15, 0.15};
    for (std::size_t c = 0; c < 10; ++c)
        for (std::size_t p = 0; p < 3; ++p)
            worst = std::max(worst, std::abs(counts[c][p] - ratios[p] * static_cast<double>(totals[c])));
    o.require(worst <= 1.0, "per-class proportion within 1");

    data::SplitSpec other = spec;
    other.seed = 43;
    o.require(data::split(index, other).train != a.train, "seed changes assignment");
    o.detail << "paths=" << index.samples.size() << " train/val/test=" << a.train.size() << "/" << a.val.size() << "/"
             << a.test.size() << " max_class_deviation=" << worst << " scan+2 splits=" << secs << " s";
    o.require(secs < 5.0, "scan and split time");
}

void latency(Outcome& o)
{
    auto model = nano(10);
    model.bind(graph::random_weights(model, 42));
    const auto r = bench::run(model, 224, 20, 3, 1, 42);
    o.detail << "224x224 single-thread mean=" << r.latency_ms.mean << " p50=" << r.latency_ms.p50
             << " p90=" << r.latency_ms.p90 << " ms budget=" << kLatencyBudgetMs << " ms";
    o.require(r.latency_ms.p50 <= kLatencyBudgetMs, "latency budget");
}

} // namespace

int main()
{
    criterion("parameter-count", 1, parameter_count);
    criterion("table-ii-consistency", 1, table_two);
    criterion("model-size", 5, model_size);
    criterion("kernel-oracles", 60, kernel_suite);
    criterion("gradient-check", 30, gradient_check);
    criterion("trainer-property", 60, trainer_property);
    criterion("metrics-definitions", 1, metrics_definitions);
    criterion("split-contract", 30, split_contract);
    criterion("latency", 60, latency);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
