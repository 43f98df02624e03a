// ddcls: command-line front end for the distracted-driver classifier.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad arguments,
// 3 weight file could not be loaded or bound, 4 image or dataset input failure.

#include "ddcls/bench.hpp"
#include "ddcls/dataset.hpp"
#include "ddcls/error.hpp"
#include "ddcls/eval.hpp"
#include "ddcls/graph.hpp"
#include "ddcls/image.hpp"
#include "ddcls/trainer.hpp"
#include "ddcls/weights.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace ddcls;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitWeights = 3;
constexpr int kExitInput = 4;

struct UsageError : Error {
    using Error::Error;
};

unsigned resolve_workers(int flag)
{
    if (flag > 0)
        return static_cast<unsigned>(flag);
    if (const char* env = std::getenv("DW_WORKERS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0)
                return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw UsageError(std::string("DW_WORKERS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

data::SplitSpec split_spec(const std::string& ratios, std::uint64_t seed, bool grouped)
{
    data::SplitSpec spec;
    try {
        spec = data::parse_ratios(ratios);
    } catch (const DatasetError& e) {
        throw UsageError(e.what());
    }
    spec.seed = seed;
    spec.strategy = grouped ? data::SplitStrategy::GroupedBySubject : data::SplitStrategy::StratifiedRandom;
    return spec;
}

graph::Model load_model(const std::string& weights_path, const std::string& head_path)
{
    weights::WeightStore store = weights::load_file(weights_path);
    if (!head_path.empty())
        store = train::apply_head(store, weights::load_file(head_path));
    if (store.metadata.arch != graph::kArchName)
        throw BindError("unsupported arch '" + store.metadata.arch + "' in " + weights_path, {}, {}, {});
    graph::ModelConfig cfg;
    cfg.num_classes = store.metadata.nc;
    cfg.validate();
    graph::Model model = graph::build_yolov8_cls(cfg);
    model.bind(store);
    return model;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out)
        throw Error("cannot write " + path.string());
}

std::optional<fs::path> optional_path(const std::string& s)
{
    return s.empty() ? std::nullopt : std::optional<fs::path>(s);
}

void print_warnings(const std::vector<std::string>& warnings)
{
    for (const auto& w : warnings)
        std::cerr << "warning: " << w << "\n";
}

// ---------------------------------------------------------------- classify

struct ClassifyArgs {
    std::string weights, head, image;
    int topk = 5;
    bool json = false;
};

int run_classify(const ClassifyArgs& a)
{
    const graph::Model model = load_model(a.weights, a.head);
    const std::size_t nc = model.num_classes();
    if (a.topk < 1 || static_cast<std::size_t>(a.topk) > nc)
        throw UsageError("--topk must be between 1 and " + std::to_string(nc));

    const Tensor input =
        image::preprocess(image::read_file(a.image), static_cast<std::size_t>(model.config().input_size));
    const Tensor logits = model.forward(input);
    const auto probs = ops::softmax(logits.data());
    const auto ranked = eval::ranked_classes(probs);
    const std::size_t best = ranked.front();

    if (a.json) {
        nlohmann::ordered_json j;
        j["schema"] = "ddcls.prediction/v1";
        j["class_id"] = best;
        j["code"] = data::class_code(best);
        j["label"] = data::class_label(best);
        j["probs"] = probs;
        nlohmann::ordered_json top = nlohmann::ordered_json::array();
        for (int i = 0; i < a.topk; ++i)
            top.push_back({{"class_id", ranked[static_cast<std::size_t>(i)]},
                           {"label", data::class_label(ranked[static_cast<std::size_t>(i)])},
                           {"prob", probs[ranked[static_cast<std::size_t>(i)]]}});
        j["topk"] = top;
        std::cout << j.dump(2) << "\n";
        return kExitOk;
    }
    std::printf("%s %s p=%.4f\n", data::class_code(best).c_str(), data::class_label(best).c_str(), probs[best]);
    for (int i = 0; i < a.topk; ++i) {
        const std::size_t c = ranked[static_cast<std::size_t>(i)];
        std::printf("%2d. %-4s %-36s %.6f\n", i + 1, data::class_code(c).c_str(), data::class_label(c).c_str(),
                    probs[c]);
    }
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string weights, head, data_root, subjects, out = ".";
    std::string ratios = "0.7,0.15,0.15";
    std::uint64_t seed = 42;
    std::string split = "test";
    bool grouped = false;
    int workers = 0;
};

int run_eval(const EvalArgs& a)
{
    const auto spec = split_spec(a.ratios, a.seed, a.grouped);
    if (a.split != "train" && a.split != "val" && a.split != "test")
        throw UsageError("--split must be train, val or test");
    const graph::Model model = load_model(a.weights, a.head);
    const auto index = data::scan(a.data_root, optional_path(a.subjects));
    print_warnings(index.warnings);
    const auto parts = data::split(index, spec);
    const auto& samples = parts.part(a.split);
    if (samples.empty())
        throw DatasetError("split '" + a.split + "' is empty");

    const auto report = eval::evaluate(model, index.root, samples, resolve_workers(a.workers));
    for (const auto& f : report.failures)
        std::cerr << "warning: excluded " << f.path << ": " << f.reason << "\n";
    write_text(fs::path(a.out) / "report.json", eval::report_json(report));
    write_text(fs::path(a.out) / "confusion.csv", eval::confusion_csv(report.confusion));

    std::printf("%-8s %10s %10s %10s %8s\n", "class", "precision", "recall", "f1", "support");
    for (std::size_t c = 0; c < report.metrics.per_class.size(); ++c) {
        const auto& m = report.metrics.per_class[c];
        std::printf("%-8s %10.6f %10.6f %10.6f %8llu\n", data::class_code(c).c_str(), m.precision, m.recall, m.f1,
                    static_cast<unsigned long long>(report.confusion.row_sum(c)));
    }
    const auto& macro = report.metrics.macro;
    std::printf("%-8s %10.6f %10.6f %10.6f %8zu\n", "macro", macro.precision, macro.recall, macro.f1,
                report.n_evaluated);
    std::printf("top1 %.6f top5 %.6f\n", report.top1, report.top5);
    return kExitOk;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string weights;
    int classes = 10;
    std::vector<std::size_t> sizes{224, 640};
    std::size_t iters = 50;
    std::size_t warmup = 5;
    unsigned threads = 1;
    std::uint64_t seed = 42;
    bool json = false;
};

int run_bench(const BenchArgs& a)
{
    graph::Model model = [&] {
        if (!a.weights.empty())
            return load_model(a.weights, "");
        graph::ModelConfig cfg;
        cfg.num_classes = a.classes;
        cfg.validate();
        graph::Model m = graph::build_yolov8_cls(cfg);
        m.bind(graph::random_weights(m, a.seed));
        return m;
    }();
    if (a.iters < 10 || a.warmup < 1)
        throw UsageError("bench needs --iters >= 10 and --warmup >= 1");
    std::vector<bench::BenchReport> reports;
    for (std::size_t size : a.sizes)
        reports.push_back(bench::run(model, size, a.iters, a.warmup, a.threads, a.seed));
    std::cout << (a.json ? bench::report_json(reports) : bench::report_table(reports));
    return kExitOk;
}

// ---------------------------------------------------------------- params

struct ParamsArgs {
    int classes = 10;
    std::size_t size = 224;
    bool json = false;
};

int run_params(const ParamsArgs& a)
{
    graph::ModelConfig cfg;
    cfg.num_classes = a.classes;
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const graph::Model model = graph::build_yolov8_cls(cfg);
    const auto total = graph::count_params(model);
    const auto cost = graph::count_macs(model, a.size);

    if (a.json) {
        nlohmann::ordered_json j;
        j["schema"] = "ddcls.params/v1";
        j["arch"] = model.arch();
        j["num_classes"] = a.classes;
        j["params"] = total;
        j["input_size"] = a.size;
        j["macs"] = cost.macs;
        j["flops"] = cost.flops;
        j["aux_ops"] = cost.aux_ops;
        nlohmann::ordered_json layers = nlohmann::ordered_json::array();
        for (const auto& l : cost.layers)
            layers.push_back({{"name", l.name},
                              {"kind", graph::kind_name(l.kind)},
                              {"output", {l.output.c, l.output.h, l.output.w}},
                              {"params", l.params},
                              {"macs", l.macs}});
        j["layers"] = layers;
        std::cout << j.dump(2) << "\n";
        return kExitOk;
    }
    std::printf("%-12s %-13s %-16s %10s %14s\n", "layer", "kind", "output", "params", "macs");
    for (const auto& l : cost.layers) {
        const std::string out =
            std::to_string(l.output.c) + "x" + std::to_string(l.output.h) + "x" + std::to_string(l.output.w);
        std::printf("%-12s %-13s %-16s %10llu %14llu\n", l.name.c_str(), graph::kind_name(l.kind), out.c_str(),
                    static_cast<unsigned long long>(l.params), static_cast<unsigned long long>(l.macs));
    }
    std::printf("input %zu: macs %llu flops %llu (%.3f GFLOPs)\n", a.size, static_cast<unsigned long long>(cost.macs),
                static_cast<unsigned long long>(cost.flops), static_cast<double>(cost.flops) / 1e9);
    std::printf("params %llu\n", static_cast<unsigned long long>(total));
    return kExitOk;
}

// ---------------------------------------------------------------- split

struct SplitArgs {
    std::string data_root, subjects, out = "splits";
    std::string ratios = "0.7,0.15,0.15";
    std::uint64_t seed = 42;
    bool grouped = false;
};

int run_split(const SplitArgs& a)
{
    const auto spec = split_spec(a.ratios, a.seed, a.grouped);
    const auto index = data::scan(a.data_root, optional_path(a.subjects));
    print_warnings(index.warnings);
    const auto parts = data::split(index, spec);
    data::write_manifests(parts, a.out);
    const auto counts = index.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
        std::printf("%s %-36s %zu\n", data::class_code(c).c_str(), data::class_label(c).c_str(), counts[c]);
    std::printf("total %zu train %zu val %zu test %zu\n", index.samples.size(), parts.train.size(), parts.val.size(),
                parts.test.size());
    return kExitOk;
}

// ---------------------------------------------------------------- train-head

struct TrainArgs {
    std::string weights, data_root, subjects, cache_dir, out = "head.dwt", csv = "epochs.csv";
    std::string ratios = "0.7,0.15,0.15";
    std::uint64_t seed = 42;
    bool grouped = false;
    float lr = 0.01f;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double l2 = 0.0;
    int workers = 0;
};

int run_train(const TrainArgs& a)
{
    const auto spec = split_spec(a.ratios, a.seed, a.grouped);
    train::TrainConfig cfg{a.lr, a.epochs, a.batch_size, a.seed, a.l2};
    try {
        cfg.validate();
    } catch (const TrainError& e) {
        throw UsageError(e.what());
    }
    const graph::Model model = load_model(a.weights, "");
    const auto index = data::scan(a.data_root, optional_path(a.subjects));
    print_warnings(index.warnings);
    const auto parts = data::split(index, spec);

    std::optional<train::FeatureCache> cache;
    if (!a.cache_dir.empty())
        cache.emplace(a.cache_dir);
    const unsigned workers = resolve_workers(a.workers);
    auto features = [&](const std::vector<data::Sample>& samples) {
        auto r = train::extract_feature_set(model, index.root, samples, cache ? &*cache : nullptr, workers);
        for (const auto& f : r.failures)
            std::cerr << "warning: skipped " << f << "\n";
        return std::move(r.set);
    };
    const auto train_set = features(parts.train);
    const auto val_set = features(parts.val);

    const auto result = train::train_head(train::LinearHead::from_model(model), train_set, val_set, cfg);
    weights::save_file(train::head_store(model, result.head), weights::DType::f32, a.out);
    write_text(a.csv, train::epochs_csv(result.epochs));
    std::cout << train::epochs_csv(result.epochs);
    return kExitOk;
}

// ---------------------------------------------------------------- init

struct InitArgs {
    int classes = 10;
    std::uint64_t seed = 42;
    std::string out;
    std::string dtype = "f16";
    bool zero = false;
};

int run_init(const InitArgs& a)
{
    graph::ModelConfig cfg;
    cfg.num_classes = a.classes;
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const graph::Model model = graph::build_yolov8_cls(cfg);
    const auto store = a.zero ? graph::zero_weights(model) : graph::random_weights(model, a.seed);
    const auto dtype = a.dtype == "f32" ? weights::DType::f32 : weights::DType::f16;
    weights::save_file(store, dtype, a.out);
    std::printf("%s: %zu tensors, %llu params, %zu bytes (%s)\n", a.out.c_str(), store.size(),
                static_cast<unsigned long long>(graph::count_params(model)), weights::model_size_bytes(store, dtype),
                weights::dtype_name(dtype));
    return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Distracted-driver image classifier: inference, evaluation and benchmarking"};
    app.require_subcommand(1);
    std::function<int()> action;

    ClassifyArgs ca;
    auto* classify = app.add_subcommand("classify", "Classify one image");
    classify->add_option("--weights", ca.weights, "DWT weight file")->required();
    classify->add_option("--head", ca.head, "Trained head DWT file to substitute");
    classify->add_option("--image", ca.image, "Image file (JPEG, PNG or PPM)")->required();
    classify->add_option("--topk", ca.topk, "Number of ranked classes to print");
    classify->add_flag("--json", ca.json, "Emit a JSON prediction");
    classify->callback([&] { action = [&] { return run_classify(ca); }; });

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate on a dataset split");
    ev->add_option("--weights", ea.weights, "DWT weight file")->required();
    ev->add_option("--head", ea.head, "Trained head DWT file to substitute");
    ev->add_option("--data-root", ea.data_root, "Directory containing c0..c9")->required();
    ev->add_option("--subjects", ea.subjects, "CSV with columns subject,classname,img");
    ev->add_option("--ratios", ea.ratios, "train,val,test ratios");
    ev->add_option("--seed", ea.seed, "Split seed");
    ev->add_option("--split", ea.split, "Partition to evaluate (train, val, test)");
    ev->add_flag("--group-by-subject", ea.grouped, "Keep each driver in one partition");
    ev->add_option("--out", ea.out, "Directory for report.json and confusion.csv");
    ev->add_option("--workers", ea.workers, "Parallel inference workers (default DW_WORKERS or 1)");
    ev->callback([&] { action = [&] { return run_eval(ea); }; });

    BenchArgs ba;
    auto* bn = app.add_subcommand("bench", "Benchmark single-image latency");
    bn->add_option("--weights", ba.weights, "DWT weight file (default: seeded random weights)");
    bn->add_option("--classes", ba.classes, "Class count when no weights are given");
    bn->add_option("--size", ba.sizes, "Input sizes (repeatable)");
    bn->add_option("--iters", ba.iters, "Timed iterations");
    bn->add_option("--warmup", ba.warmup, "Untimed warmup iterations");
    bn->add_option("--threads", ba.threads, "Intra-op threads")->check(CLI::PositiveNumber);
    bn->add_option("--seed", ba.seed, "Seed for the input tensor and random weights");
    bn->add_flag("--json", ba.json, "Emit a JSON report");
    bn->callback([&] { action = [&] { return run_bench(ba); }; });

    ParamsArgs pa;
    auto* params = app.add_subcommand("params", "Print parameter and MAC counts");
    params->add_option("--classes", pa.classes, "Number of output classes");
    params->add_option("--size", pa.size, "Input size for the MAC count")->check(CLI::PositiveNumber);
    params->add_flag("--json", pa.json, "Emit JSON");
    params->callback([&] { action = [&] { return run_params(pa); }; });

    SplitArgs sa;
    auto* sp = app.add_subcommand("split", "Write train/val/test manifests");
    sp->add_option("--data-root", sa.data_root, "Directory containing c0..c9")->required();
    sp->add_option("--subjects", sa.subjects, "CSV with columns subject,classname,img");
    sp->add_option("--ratios", sa.ratios, "train,val,test ratios");
    sp->add_option("--seed", sa.seed, "Split seed");
    sp->add_flag("--group-by-subject", sa.grouped, "Keep each driver in one partition");
    sp->add_option("--out", sa.out, "Output directory for the manifests");
    sp->callback([&] { action = [&] { return run_split(sa); }; });

    TrainArgs ta;
    auto* tr = app.add_subcommand("train-head", "Fine-tune the final linear layer on frozen features");
    tr->add_option("--weights", ta.weights, "DWT weight file")->required();
    tr->add_option("--data-root", ta.data_root, "Directory containing c0..c9")->required();
    tr->add_option("--subjects", ta.subjects, "CSV with columns subject,classname,img");
    tr->add_option("--ratios", ta.ratios, "train,val,test ratios");
    tr->add_option("--seed", ta.seed, "Split and shuffle seed");
    tr->add_flag("--group-by-subject", ta.grouped, "Keep each driver in one partition");
    tr->add_option("--lr", ta.lr, "Learning rate");
    tr->add_option("--epochs", ta.epochs, "Epochs");
    tr->add_option("--batch-size", ta.batch_size, "Mini-batch size");
    tr->add_option("--l2", ta.l2, "L2 penalty on the head weights");
    tr->add_option("--cache-dir", ta.cache_dir, "Feature cache directory");
    tr->add_option("--out", ta.out, "Output head DWT file");
    tr->add_option("--csv", ta.csv, "Per-epoch CSV");
    tr->add_option("--workers", ta.workers, "Parallel feature-extraction workers (default DW_WORKERS or 1)");
    tr->callback([&] { action = [&] { return run_train(ta); }; });

    InitArgs ia;
    auto* in = app.add_subcommand("init", "Write a seeded random (or zero) weight file");
    in->add_option("--classes", ia.classes, "Number of output classes");
    in->add_option("--seed", ia.seed, "Initialization seed");
    in->add_option("--out", ia.out, "Output DWT file")->required();
    in->add_option("--dtype", ia.dtype, "Storage dtype")->check(CLI::IsMember({"f16", "f32"}));
    in->add_flag("--zero", ia.zero, "All-zero weights");
    in->callback([&] { action = [&] { return run_init(ia); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        return action();
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const weights::FormatError& e) {
        std::cerr << "error: weights: " << e.what() << "\n";
        return kExitWeights;
    } catch (const BindError& e) {
        std::cerr << "error: weights: " << e.what() << "\n";
        return kExitWeights;
    } catch (const ImageError& e) {
        std::cerr << "error: image: " << e.what() << "\n";
        return kExitInput;
    } catch (const DatasetError& e) {
        std::cerr << "error: dataset: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}
