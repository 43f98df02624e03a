#pragma once

#include "ddcls/ops.hpp"
#include "ddcls/tensor.hpp"
#include "ddcls/weights.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace ddcls::graph {

inline constexpr const char* kArchName = "yolov8n-cls";
inline constexpr std::size_t kHeadHidden = 1280;

struct ModelConfig {
    double depth_multiple = 0.33;
    double width_multiple = 0.25;
    int num_classes = 10;
    int input_size = 224;

    /// Throws Error unless multiples are in (0, 1], nc >= 2 and input_size > 0.
    void validate() const;
};

enum class LayerKind { ConvBlock, C2f, ClassifyHead };

const char* kind_name(LayerKind kind);

/// One entry of the layer table. ConvBlock = conv (no bias) + BN + SiLU.
/// C2f keeps spatial size; its hidden width is out_channels / 2.
/// ClassifyHead = 1x1 ConvBlock to hidden_channels, global average pool, linear to out_channels.
struct LayerSpec {
    LayerKind kind = LayerKind::ConvBlock;
    std::string name;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t repeats = 0;
    bool shortcut = false;
    std::size_t hidden_channels = 0;

    static LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t s);
    static LayerSpec c2f(std::string name, std::size_t in, std::size_t out, std::size_t n, bool shortcut);
    static LayerSpec head(std::string name, std::size_t in, std::size_t hidden, std::size_t classes);

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A tensor the model expects in its weight store.
struct TensorSpec {
    std::string name;
    std::vector<std::uint32_t> dims;
    bool parameter = true; // false for BN running statistics
    std::size_t layer = 0;

    std::size_t numel() const;
};

struct LayerCost {
    std::string name;
    LayerKind kind;
    Shape input;
    Shape output;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
    std::uint64_t aux_ops = 0;
};

/// Headline cost: conv and linear multiply-accumulates only; flops = 2 * macs.
/// aux_ops counts the excluded elementwise work: 2 per BN output, 1 per SiLU
/// output, 1 per residual add and 1 per pooled input element.
struct MacCount {
    std::uint64_t macs = 0;
    std::uint64_t flops = 0;
    std::uint64_t aux_ops = 0;
    std::vector<LayerCost> layers;
};

/// Layer table for the classification variant: CSP backbone plus classify head, no neck.
std::vector<LayerSpec> yolov8_cls_layers(const ModelConfig& config);

class Model {
public:
    Model(ModelConfig config, std::vector<LayerSpec> layers, std::string arch = kArchName);

    const ModelConfig& config() const { return config_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::string& arch() const { return arch_; }
    std::size_t num_classes() const;
    std::size_t in_channels() const;
    std::size_t feature_dim() const;

    /// Every tensor name and shape the model needs, in layer order.
    std::vector<TensorSpec> tensor_specs() const;

    /// Checks the store against tensor_specs() (names, shapes, metadata) and
    /// prepares BN-folded kernels. Throws BindError listing every offending name.
    void bind(const weights::WeightStore& store);
    bool bound() const { return store_ != nullptr; }
    const weights::WeightStore& store() const;
    std::uint32_t weights_checksum() const { return checksum_; }

    /// Logits shaped (n, nc, 1, 1).
    Tensor forward(const Tensor& batch, unsigned threads = 1) const;
    /// Pooled head features shaped (n, hidden, 1, 1), the input of the final linear layer.
    Tensor features(const Tensor& batch, unsigned threads = 1) const;

    /// Final linear layer as bound: weight (nc, hidden, 1, 1) and bias.
    const Tensor& head_weight() const;
    const std::vector<float>& head_bias() const;

private:
    struct FusedConv {
        ConvParams params;
    };
    struct ConvStage {
        FusedConv conv;
    };
    struct C2fStage {
        FusedConv cv1;
        std::vector<std::pair<FusedConv, FusedConv>> bottlenecks;
        FusedConv cv2;
        std::size_t hidden = 0;
        bool shortcut = false;
    };
    struct HeadStage {
        FusedConv conv;
        Tensor weight;
        std::vector<float> bias;
    };
    using Stage = std::variant<ConvStage, C2fStage, HeadStage>;

    Tensor run(const Tensor& batch, unsigned threads, bool stop_at_features) const;
    void require_bound() const;

    ModelConfig config_;
    std::vector<LayerSpec> layers_;
    std::string arch_;
    std::shared_ptr<const weights::WeightStore> store_;
    std::vector<Stage> stages_;
    std::uint32_t checksum_ = 0;
};

Model build_yolov8_cls(const ModelConfig& config);

/// Trainable parameters: conv weights, BN gamma/beta, linear weight and bias.
/// BN running statistics are not parameters.
std::uint64_t count_params(const Model& model);

/// Per-layer parameter totals aligned with model.layers().
std::vector<std::uint64_t> params_per_layer(const Model& model);

MacCount count_macs(const Model& model, std::size_t input_size);

/// Seeded random weights matching the model (BN statistics randomized too).
weights::WeightStore random_weights(const Model& model, std::uint64_t seed);
/// All-zero weights with BN running_var = 1 so the network is well defined.
weights::WeightStore zero_weights(const Model& model);

weights::Metadata metadata_for(const Model& model);

} // namespace ddcls::graph
