#include "ddcls/eval.hpp"

#include "ddcls/error.hpp"
#include "ddcls/image.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

namespace ddcls::eval {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t count)
{
    if (truth >= n_ || predicted >= n_)
        throw Error("confusion matrix: class index out of range");
    counts_[truth * n_ + predicted] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other)
{
    if (other.n_ != n_)
        throw Error("confusion matrix: cannot merge different class counts");
    for (std::size_t i = 0; i < counts_.size(); ++i)
        counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const
{
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < n_; ++p)
        s += at(truth, p);
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const
{
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < n_; ++t)
        s += at(t, predicted);
    return s;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const
{
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < n_; ++i)
        s += at(i, i);
    return s;
}

Metrics metrics_from_confusion(const ConfusionMatrix& cm)
{
    Metrics m;
    const std::size_t n = cm.num_classes();
    m.per_class.resize(n);
    auto ratio = [&m](std::uint64_t num, std::uint64_t den, const std::string& what) {
        if (den == 0) {
            m.warnings.push_back(what + " is 0/0, reported as 0");
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    for (std::size_t j = 0; j < n; ++j) {
        ClassMetrics& c = m.per_class[j];
        const std::string code = data::class_code(j);
        c.precision = ratio(cm.at(j, j), cm.col_sum(j), code + " precision");
        c.recall = ratio(cm.at(j, j), cm.row_sum(j), code + " recall");
        c.f1 = c.precision + c.recall > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
        m.macro.precision += c.precision;
        m.macro.recall += c.recall;
        m.macro.f1 += c.f1;
    }
    if (n > 0) {
        m.macro.precision /= static_cast<double>(n);
        m.macro.recall /= static_cast<double>(n);
        m.macro.f1 /= static_cast<double>(n);
    }
    return m;
}

std::vector<std::size_t> ranked_classes(std::span<const float> scores)
{
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

double top_k(std::span<const float> logits, std::size_t num_classes, std::span<const int> labels, std::size_t k)
{
    if (num_classes == 0 || logits.size() != labels.size() * num_classes)
        throw ShapeError("top_k: logits do not match labels x classes");
    if (k == 0 || k > num_classes)
        throw Error("top_k: k must be in [1, " + std::to_string(num_classes) + "]");
    if (labels.empty())
        return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = logits.subspan(i * num_classes, num_classes);
        const auto truth = static_cast<std::size_t>(labels[i]);
        // Rank of the true class: classes scoring higher, plus equal-scoring lower indices.
        std::size_t ahead = 0;
        for (std::size_t j = 0; j < num_classes; ++j)
            if (row[j] > row[truth] || (row[j] == row[truth] && j < truth))
                ++ahead;
        if (ahead < k)
            ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

EvalReport report_from_logits(std::span<const float> logits, std::size_t num_classes, std::span<const int> labels)
{
    EvalReport r{ConfusionMatrix(num_classes), {}, 0.0, 0.0, labels.size(), {}};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = logits.subspan(i * num_classes, num_classes);
        r.confusion.add(static_cast<std::size_t>(labels[i]), ranked_classes(row).front());
    }
    r.metrics = metrics_from_confusion(r.confusion);
    if (!labels.empty()) {
        r.top1 = top_k(logits, num_classes, labels, 1);
        r.top5 = top_k(logits, num_classes, labels, std::min<std::size_t>(5, num_classes));
    }
    return r;
}

EvalReport evaluate(const LogitFn& fn, std::span<const data::Sample> samples, std::size_t num_classes,
                    unsigned workers)
{
    if (samples.empty())
        throw Error("evaluate: no samples");
    std::vector<std::optional<std::vector<float>>> rows(samples.size());
    std::vector<std::string> errors(samples.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) {
            try {
                auto logits = fn(samples[i]);
                if (logits.size() != num_classes)
                    throw ShapeError("model produced " + std::to_string(logits.size()) + " logits");
                rows[i] = std::move(logits);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 1; t < std::max(1u, workers); ++t)
            pool.emplace_back(work);
        work();
    }

    std::vector<float> logits;
    std::vector<int> labels;
    std::vector<Failure> failures;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (rows[i]) {
            logits.insert(logits.end(), rows[i]->begin(), rows[i]->end());
            labels.push_back(samples[i].class_id);
        } else {
            failures.push_back({samples[i].path, errors[i]});
        }
    }
    EvalReport r = report_from_logits(logits, num_classes, labels);
    r.failures = std::move(failures);
    return r;
}

EvalReport evaluate(const graph::Model& model, const std::filesystem::path& root,
                    std::span<const data::Sample> samples, unsigned workers)
{
    const auto size = static_cast<std::size_t>(model.config().input_size);
    LogitFn fn = [&](const data::Sample& s) {
        const Tensor input = image::preprocess(image::read_file(root / s.path), size);
        const Tensor logits = model.forward(input);
        return logits.values();
    };
    return evaluate(fn, samples, model.num_classes(), workers);
}

std::string report_json(const EvalReport& r)
{
    using nlohmann::ordered_json;
    const std::size_t n = r.confusion.num_classes();
    ordered_json j;
    j["schema"] = kReportSchema;
    j["n_evaluated"] = r.n_evaluated;
    j["n_failed"] = r.failures.size();
    j["top1"] = r.top1;
    j["top5"] = r.top5;
    j["macro"] = {{"precision", r.metrics.macro.precision},
                  {"recall", r.metrics.macro.recall},
                  {"f1", r.metrics.macro.f1}};
    ordered_json per_class = ordered_json::array();
    for (std::size_t c = 0; c < n; ++c) {
        const ClassMetrics& m = r.metrics.per_class[c];
        per_class.push_back({{"class_id", c},
                             {"code", data::class_code(c)},
                             {"label", data::class_label(c)},
                             {"support", r.confusion.row_sum(c)},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1}});
    }
    j["per_class"] = per_class;
    ordered_json rows = ordered_json::array();
    for (std::size_t t = 0; t < n; ++t) {
        ordered_json row = ordered_json::array();
        for (std::size_t p = 0; p < n; ++p)
            row.push_back(r.confusion.at(t, p));
        rows.push_back(row);
    }
    j["confusion"] = rows;
    j["warnings"] = r.metrics.warnings;
    ordered_json failures = ordered_json::array();
    for (const Failure& f : r.failures)
        failures.push_back({{"path", f.path}, {"reason", f.reason}});
    j["failures"] = failures;
    return j.dump(2) + "\n";
}

std::string confusion_csv(const ConfusionMatrix& cm)
{
    std::ostringstream out;
    out << "true\\pred";
    for (std::size_t p = 0; p < cm.num_classes(); ++p)
        out << ',' << data::class_code(p);
    out << '\n';
    for (std::size_t t = 0; t < cm.num_classes(); ++t) {
        out << data::class_code(t);
        for (std::size_t p = 0; p < cm.num_classes(); ++p)
            out << ',' << cm.at(t, p);
        out << '\n';
    }
    return out.str();
}

} // namespace ddcls::eval
