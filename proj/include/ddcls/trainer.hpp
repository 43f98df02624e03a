#pragma once

// Linear-probe fine-tuning: the backbone stays frozen, only the final linear
// layer is trained with softmax cross-entropy and plain SGD.
//
// The loss is the standard categorical cross-entropy -log softmax(z)[y],
// averaged over the batch. A binary-form sum written with a positive sign
// would be maximized by SGD, so it is read as the usual negative log-likelihood.

#include "ddcls/dataset.hpp"
#include "ddcls/graph.hpp"
#include "ddcls/weights.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ddcls::train {

struct TrainConfig {
    float lr = 0.01f;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;
    double l2 = 0.0;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double top1 = 0.0; // on the validation set
    double top5 = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct LinearHead {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<float> weight; // out_dim x in_dim, row-major
    std::vector<float> bias;

    static LinearHead zeros(std::size_t in_dim, std::size_t out_dim);
    static LinearHead from_model(const graph::Model& model);

    std::vector<float> logits(std::span<const float> features) const;
    Tensor weight_tensor() const;

    friend bool operator==(const LinearHead&, const LinearHead&) = default;
};

/// Row-major feature matrix with one label per row.
struct FeatureSet {
    std::size_t dim = 0;
    std::vector<float> features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const float> row(std::size_t i) const { return std::span(features).subspan(i * dim, dim); }
    void push_back(std::span<const float> row, int label);
};

/// -log softmax(logits)[true_class], via log-sum-exp.
double cross_entropy(std::span<const float> logits, int true_class);

/// cross_entropy of the head's logits plus l2 * ||W||^2.
double head_loss(const LinearHead& head, std::span<const float> features, int true_class, double l2 = 0.0);

struct HeadGrad {
    std::vector<float> dlogits; // softmax - onehot
    std::vector<float> weight;  // outer(dlogits, features) + 2 * l2 * W
    std::vector<float> bias;
};

HeadGrad grad_head(const LinearHead& head, std::span<const float> features, int true_class, double l2 = 0.0);

/// theta <- theta - lr * grad.
void sgd_step(std::span<float> theta, std::span<const float> grad, float lr);

double mean_loss(const LinearHead& head, const FeatureSet& set, double l2 = 0.0);
double accuracy(const LinearHead& head, const FeatureSet& set, std::size_t k);

struct TrainResult {
    LinearHead head;
    std::vector<EpochRecord> epochs;
};

/// Seeded mini-batch SGD. Each epoch shuffles the training rows, steps once per
/// batch on the mean loss, then records full-pass train loss and validation
/// loss/top-1/top-5. Throws TrainError when the loss turns non-finite.
TrainResult train_head(LinearHead init, const FeatureSet& train, const FeatureSet& val, const TrainConfig& config);

std::string epochs_csv(std::span<const EpochRecord> records);

/// Pooled 1280-d head features for a single image tensor (1, 3, s, s).
std::vector<float> extract_features(const graph::Model& model, const Tensor& input);

/// On-disk feature cache: <dir>/<weights crc>/<path hash>.f32.
class FeatureCache {
public:
    explicit FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    std::optional<std::vector<float>> get(std::uint32_t weights_crc, const std::string& key, std::size_t dim) const;
    void put(std::uint32_t weights_crc, const std::string& key, std::span<const float> features) const;

private:
    std::filesystem::path file(std::uint32_t weights_crc, const std::string& key) const;

    std::filesystem::path dir_;
};

struct ExtractResult {
    FeatureSet set;
    std::vector<std::string> failures;
};

/// Features for every sample under `root`; unreadable images are reported and skipped.
ExtractResult extract_feature_set(const graph::Model& model, const std::filesystem::path& root,
                                  std::span<const data::Sample> samples, const FeatureCache* cache = nullptr,
                                  unsigned workers = 1);

/// Store holding only head.linear.weight / head.linear.bias.
weights::WeightStore head_store(const graph::Model& model, const LinearHead& head);

/// Copy of `full` with the head tensors from `head` substituted.
weights::WeightStore apply_head(const weights::WeightStore& full, const weights::WeightStore& head);

} // namespace ddcls::train
