#pragma once

#include "ddcls/dataset.hpp"
#include "ddcls/graph.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ddcls::eval {

inline constexpr const char* kReportSchema = "ddcls.eval_report/v1";

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = data::kNumClasses);

    std::size_t num_classes() const { return n_; }
    void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1);
    void merge(const ConfusionMatrix& other);

    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
    std::uint64_t row_sum(std::size_t truth) const;
    std::uint64_t col_sum(std::size_t predicted) const;
    std::uint64_t total() const;
    std::uint64_t trace() const;

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t n_;
    std::vector<std::uint64_t> counts_;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct Metrics {
    std::vector<ClassMetrics> per_class;
    ClassMetrics macro; // unweighted means of per_class
    std::vector<std::string> warnings; // one per 0/0 cell defined as 0
};

Metrics metrics_from_confusion(const ConfusionMatrix& cm);

/// Class indices ordered by descending score; ties go to the lower index.
std::vector<std::size_t> ranked_classes(std::span<const float> scores);

/// Fraction of rows whose true label is among the k highest logits.
/// `logits` is row-major (rows x num_classes).
double top_k(std::span<const float> logits, std::size_t num_classes, std::span<const int> labels, std::size_t k);

struct Failure {
    std::string path;
    std::string reason;
};

struct EvalReport {
    ConfusionMatrix confusion;
    Metrics metrics;
    double top1 = 0.0;
    double top5 = 0.0;
    std::size_t n_evaluated = 0;
    std::vector<Failure> failures;
};

/// Report over precomputed logits.
EvalReport report_from_logits(std::span<const float> logits, std::size_t num_classes, std::span<const int> labels);

/// Produces logits for one sample; throws to mark the sample unreadable.
using LogitFn = std::function<std::vector<float>(const data::Sample&)>;

/// Runs `fn` over the samples (fanned out over `workers` threads), excludes and
/// records samples that throw, and derives every metric from the surviving logits.
EvalReport evaluate(const LogitFn& fn, std::span<const data::Sample> samples, std::size_t num_classes,
                    unsigned workers = 1);

/// Reads each image under `root`, preprocesses it and runs the model.
EvalReport evaluate(const graph::Model& model, const std::filesystem::path& root,
                    std::span<const data::Sample> samples, unsigned workers = 1);

std::string report_json(const EvalReport& r);
/// Header "true\pred,c0,...", then one row per true class.
std::string confusion_csv(const ConfusionMatrix& cm);

} // namespace ddcls::eval
