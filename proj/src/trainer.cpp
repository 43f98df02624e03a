#include "ddcls/trainer.hpp"

#include "ddcls/error.hpp"
#include "ddcls/eval.hpp"
#include "ddcls/image.hpp"
#include "ddcls/random.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace ddcls::train {

namespace {

const std::string kHeadWeight = "head.linear.weight";
const std::string kHeadBias = "head.linear.bias";

void check_features(const LinearHead& head, std::span<const float> features, int true_class)
{
    if (features.size() != head.in_dim)
        throw ShapeError("head: feature length " + std::to_string(features.size()) + " vs " +
                         std::to_string(head.in_dim));
    if (true_class < 0 || static_cast<std::size_t>(true_class) >= head.out_dim)
        throw Error("head: class " + std::to_string(true_class) + " out of range");
}

std::string hex(std::uint64_t v, int width)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%0*llx", width, static_cast<unsigned long long>(v));
    return buf;
}

std::uint32_t to_little(std::uint32_t v)
{
    if constexpr (std::endian::native == std::endian::big)
        return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
    return v;
}

std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace

void TrainConfig::validate() const
{
    if (!(lr > 0.0f) || !std::isfinite(lr))
        throw TrainError("learning rate must be finite and positive");
    if (epochs == 0 || batch_size == 0)
        throw TrainError("epochs and batch size must be positive");
    if (!(l2 >= 0.0))
        throw TrainError("l2 must be non-negative");
}

LinearHead LinearHead::zeros(std::size_t in_dim, std::size_t out_dim)
{
    return {in_dim, out_dim, std::vector<float>(in_dim * out_dim, 0.0f), std::vector<float>(out_dim, 0.0f)};
}

LinearHead LinearHead::from_model(const graph::Model& model)
{
    const Tensor& w = model.head_weight();
    return {w.c(), w.n(), w.values(), model.head_bias()};
}

std::vector<float> LinearHead::logits(std::span<const float> features) const
{
    return ops::linear(features, weight_tensor(), bias);
}

Tensor LinearHead::weight_tensor() const { return Tensor(Shape{out_dim, in_dim, 1, 1}, weight); }

void FeatureSet::push_back(std::span<const float> row, int label)
{
    if (dim == 0 && labels.empty())
        dim = row.size();
    if (row.size() != dim)
        throw ShapeError("feature set: row length " + std::to_string(row.size()) + " vs " + std::to_string(dim));
    features.insert(features.end(), row.begin(), row.end());
    labels.push_back(label);
}

double cross_entropy(std::span<const float> logits, int true_class)
{
    if (true_class < 0 || static_cast<std::size_t>(true_class) >= logits.size())
        throw Error("cross_entropy: class " + std::to_string(true_class) + " out of range for " +
                    std::to_string(logits.size()) + " logits");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (float z : logits)
        sum += std::exp(static_cast<double>(z) - peak);
    const double loss = peak + std::log(sum) - static_cast<double>(logits[static_cast<std::size_t>(true_class)]);
    // Clamp rounding below zero; NaN must pass through to the caller's finiteness check.
    return loss < 0.0 ? 0.0 : loss;
}

double head_loss(const LinearHead& head, std::span<const float> features, int true_class, double l2)
{
    check_features(head, features, true_class);
    // Double-precision logits so finite differences on this function are meaningful.
    std::vector<double> z(head.out_dim);
    for (std::size_t o = 0; o < head.out_dim; ++o) {
        double acc = head.bias[o];
        for (std::size_t i = 0; i < head.in_dim; ++i)
            acc += static_cast<double>(head.weight[o * head.in_dim + i]) * features[i];
        z[o] = acc;
    }
    const double peak = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z)
        sum += std::exp(v - peak);
    double loss = peak + std::log(sum) - z[static_cast<std::size_t>(true_class)];
    if (l2 > 0.0) {
        double sq = 0.0;
        for (float w : head.weight)
            sq += static_cast<double>(w) * w;
        loss += l2 * sq;
    }
    return loss;
}

HeadGrad grad_head(const LinearHead& head, std::span<const float> features, int true_class, double l2)
{
    check_features(head, features, true_class);
    HeadGrad g;
    g.dlogits = ops::softmax(head.logits(features));
    g.dlogits[static_cast<std::size_t>(true_class)] -= 1.0f;
    g.bias = g.dlogits;
    g.weight.resize(head.weight.size());
    for (std::size_t o = 0; o < head.out_dim; ++o)
        for (std::size_t i = 0; i < head.in_dim; ++i)
            g.weight[o * head.in_dim + i] = g.dlogits[o] * features[i];
    if (l2 > 0.0)
        for (std::size_t k = 0; k < g.weight.size(); ++k)
            g.weight[k] += static_cast<float>(2.0 * l2) * head.weight[k];
    return g;
}

void sgd_step(std::span<float> theta, std::span<const float> grad, float lr)
{
    if (theta.size() != grad.size())
        throw ShapeError("sgd_step: parameter and gradient lengths differ");
    for (std::size_t i = 0; i < theta.size(); ++i)
        theta[i] -= lr * grad[i];
}

double mean_loss(const LinearHead& head, const FeatureSet& set, double l2)
{
    if (set.size() == 0)
        return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i)
        total += cross_entropy(head.logits(set.row(i)), set.labels[i]);
    double penalty = 0.0;
    if (l2 > 0.0)
        for (float w : head.weight)
            penalty += static_cast<double>(w) * w;
    return total / static_cast<double>(set.size()) + l2 * penalty;
}

double accuracy(const LinearHead& head, const FeatureSet& set, std::size_t k)
{
    if (set.size() == 0)
        return 0.0;
    std::vector<float> logits;
    logits.reserve(set.size() * head.out_dim);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto z = head.logits(set.row(i));
        logits.insert(logits.end(), z.begin(), z.end());
    }
    return eval::top_k(logits, head.out_dim, set.labels, std::min(k, head.out_dim));
}

TrainResult train_head(LinearHead head, const FeatureSet& train, const FeatureSet& val, const TrainConfig& config)
{
    config.validate();
    if (train.size() == 0 || val.size() == 0)
        throw TrainError("train_head: training and validation sets must be non-empty");
    if (train.dim != head.in_dim || val.dim != head.in_dim)
        throw ShapeError("train_head: feature dimension does not match the head");

    Rng rng(config.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> gw(head.weight.size());
    std::vector<double> gb(head.bias.size());
    std::vector<float> step_w(head.weight.size());
    std::vector<float> step_b(head.bias.size());

    TrainResult result;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                const HeadGrad g = grad_head(head, train.row(i), train.labels[i]);
                for (std::size_t k = 0; k < gw.size(); ++k)
                    gw[k] += g.weight[k];
                for (std::size_t k = 0; k < gb.size(); ++k)
                    gb[k] += g.bias[k];
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t k = 0; k < gw.size(); ++k)
                step_w[k] = static_cast<float>(gw[k] * inv + 2.0 * config.l2 * head.weight[k]);
            for (std::size_t k = 0; k < gb.size(); ++k)
                step_b[k] = static_cast<float>(gb[k] * inv);
            sgd_step(head.weight, step_w, config.lr);
            sgd_step(head.bias, step_b, config.lr);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = mean_loss(head, train, config.l2);
        rec.val_loss = mean_loss(head, val, config.l2);
        if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss))
            throw TrainError("loss became non-finite at epoch " + std::to_string(epoch) + " (lr " +
                             std::to_string(config.lr) + " is probably too high)");
        rec.top1 = accuracy(head, val, 1);
        rec.top5 = accuracy(head, val, 5);
        result.epochs.push_back(rec);
    }
    result.head = std::move(head);
    return result;
}

std::string epochs_csv(std::span<const EpochRecord> records)
{
    std::ostringstream out;
    out << "epoch,train_loss,val_loss,top1,top5\n";
    char line[160];
    for (const EpochRecord& r : records) {
        std::snprintf(line, sizeof line, "%zu,%.8f,%.8f,%.6f,%.6f\n", r.epoch, r.train_loss, r.val_loss, r.top1,
                      r.top5);
        out << line;
    }
    return out.str();
}

std::vector<float> extract_features(const graph::Model& model, const Tensor& input)
{
    return model.features(input).values();
}

fs::path FeatureCache::file(std::uint32_t weights_crc, const std::string& key) const
{
    return dir_ / hex(weights_crc, 8) / (hex(fnv1a(key), 16) + ".f32");
}

std::optional<std::vector<float>> FeatureCache::get(std::uint32_t weights_crc, const std::string& key,
                                                    std::size_t dim) const
{
    std::ifstream in(file(weights_crc, key), std::ios::binary);
    if (!in)
        return std::nullopt;
    std::vector<std::uint32_t> raw(dim);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(dim * 4));
    if (in.gcount() != static_cast<std::streamsize>(dim * 4) || in.peek() != std::char_traits<char>::eof())
        return std::nullopt;
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        out[i] = std::bit_cast<float>(to_little(raw[i]));
    }
    return out;
}

void FeatureCache::put(std::uint32_t weights_crc, const std::string& key, std::span<const float> features) const
{
    const fs::path path = file(weights_crc, key);
    fs::create_directories(path.parent_path());
    std::vector<std::uint32_t> raw(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        raw[i] = to_little(std::bit_cast<std::uint32_t>(features[i]));
    }
    // Write then rename so concurrent readers never see a partial file.
    const fs::path tmp = path.string() + ".tmp" + hex(std::hash<std::thread::id>{}(std::this_thread::get_id()), 16);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    }
    fs::rename(tmp, path);
}

ExtractResult extract_feature_set(const graph::Model& model, const fs::path& root,
                                  std::span<const data::Sample> samples, const FeatureCache* cache, unsigned workers)
{
    const std::size_t dim = model.feature_dim();
    const auto size = static_cast<std::size_t>(model.config().input_size);
    const std::uint32_t crc = model.weights_checksum();
    std::vector<std::vector<float>> rows(samples.size());
    std::vector<std::string> errors(samples.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) {
            const data::Sample& s = samples[i];
            try {
                if (cache)
                    if (auto hit = cache->get(crc, s.path, dim)) {
                        rows[i] = std::move(*hit);
                        continue;
                    }
                rows[i] = extract_features(model, image::preprocess(image::read_file(root / s.path), size));
                if (cache)
                    cache->put(crc, s.path, rows[i]);
            } catch (const std::exception& e) {
                errors[i] = s.path + ": " + e.what();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 1; t < std::max(1u, workers); ++t)
            pool.emplace_back(work);
        work();
    }
    ExtractResult out;
    out.set.dim = dim;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (errors[i].empty())
            out.set.push_back(rows[i], samples[i].class_id);
        else
            out.failures.push_back(errors[i]);
    }
    return out;
}

weights::WeightStore head_store(const graph::Model& model, const LinearHead& head)
{
    weights::WeightStore store;
    store.metadata = graph::metadata_for(model);
    store.metadata.bn_eps = model.bound() ? model.store().metadata.bn_eps : store.metadata.bn_eps;
    store.insert(weights::TensorRecord::from_floats(
        kHeadWeight, {static_cast<std::uint32_t>(head.out_dim), static_cast<std::uint32_t>(head.in_dim)},
        head.weight));
    store.insert(
        weights::TensorRecord::from_floats(kHeadBias, {static_cast<std::uint32_t>(head.out_dim)}, head.bias));
    return store;
}

weights::WeightStore apply_head(const weights::WeightStore& full, const weights::WeightStore& head)
{
    weights::WeightStore out = full;
    for (const std::string& name : {kHeadWeight, kHeadBias}) {
        if (!head.contains(name))
            throw BindError("head file lacks " + name, {name}, {}, {});
        if (!full.contains(name) || full.at(name).dims != head.at(name).dims)
            throw BindError("head tensor " + name + " does not match the model", {}, {}, {name});
        out.insert_or_assign(head.at(name));
    }
    if (head.size() != 2) {
        std::vector<std::string> extra;
        for (const auto& [name, rec] : head.records())
            if (name != kHeadWeight && name != kHeadBias)
                extra.push_back(name);
        throw BindError("head file carries unexpected tensors", {}, extra, {});
    }
    return out;
}

} // namespace ddcls::train
