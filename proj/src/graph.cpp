#include "ddcls/graph.hpp"

#include "ddcls/error.hpp"
#include "ddcls/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace ddcls::graph {

namespace {

constexpr std::size_t kMaxChannels = 1024;

std::size_t scale_width(std::size_t channels, double multiple)
{
    const double scaled = static_cast<double>(std::min(channels, kMaxChannels)) * multiple;
    return static_cast<std::size_t>(std::ceil(scaled / 8.0)) * 8;
}

std::size_t scale_depth(std::size_t repeats, double multiple)
{
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(repeats) * multiple)));
}

// Visits every ConvBlock of a layer with its name prefix and (c_in, c_out, k).
template <typename Fn>
void for_each_conv_block(const LayerSpec& l, Fn&& fn)
{
    switch (l.kind) {
    case LayerKind::ConvBlock:
        fn(l.name, l.in_channels, l.out_channels, l.kernel);
        break;
    case LayerKind::C2f: {
        const std::size_t hidden = l.out_channels / 2;
        fn(l.name + ".cv1", l.in_channels, 2 * hidden, std::size_t{1});
        for (std::size_t j = 0; j < l.repeats; ++j) {
            const std::string m = l.name + ".m." + std::to_string(j);
            fn(m + ".cv1", hidden, hidden, std::size_t{3});
            fn(m + ".cv2", hidden, hidden, std::size_t{3});
        }
        fn(l.name + ".cv2", (2 + l.repeats) * hidden, l.out_channels, std::size_t{1});
        break;
    }
    case LayerKind::ClassifyHead:
        fn(l.name + ".conv", l.in_channels, l.hidden_channels, std::size_t{1});
        break;
    }
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

} // namespace

void ModelConfig::validate() const
{
    if (!(depth_multiple > 0.0 && depth_multiple <= 1.0) || !(width_multiple > 0.0 && width_multiple <= 1.0))
        throw Error("model config: depth/width multiples must lie in (0, 1]");
    if (num_classes < 2)
        throw Error("model config: num_classes must be >= 2, got " + std::to_string(num_classes));
    if (input_size <= 0)
        throw Error("model config: input_size must be positive");
}

const char* kind_name(LayerKind kind)
{
    switch (kind) {
    case LayerKind::ConvBlock: return "ConvBlock";
    case LayerKind::C2f: return "C2f";
    case LayerKind::ClassifyHead: return "ClassifyHead";
    }
    return "?";
}

LayerSpec LayerSpec::conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t s)
{
    return {LayerKind::ConvBlock, std::move(name), in, out, k, s, 0, false, 0};
}

LayerSpec LayerSpec::c2f(std::string name, std::size_t in, std::size_t out, std::size_t n, bool shortcut)
{
    return {LayerKind::C2f, std::move(name), in, out, 1, 1, n, shortcut, 0};
}

LayerSpec LayerSpec::head(std::string name, std::size_t in, std::size_t hidden, std::size_t classes)
{
    return {LayerKind::ClassifyHead, std::move(name), in, classes, 1, 1, 0, false, hidden};
}

std::size_t TensorSpec::numel() const
{
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t d) { return a * d; });
}

std::vector<LayerSpec> yolov8_cls_layers(const ModelConfig& config)
{
    config.validate();
    const double w = config.width_multiple;
    const double d = config.depth_multiple;
    struct Base {
        bool c2f;
        std::size_t channels;
        std::size_t repeats;
    };
    constexpr std::array<Base, 9> base{{{false, 64, 0},
                                        {false, 128, 0},
                                        {true, 128, 3},
                                        {false, 256, 0},
                                        {true, 256, 6},
                                        {false, 512, 0},
                                        {true, 512, 6},
                                        {false, 1024, 0},
                                        {true, 1024, 3}}};
    std::vector<LayerSpec> layers;
    std::size_t in = 3;
    for (std::size_t i = 0; i < base.size(); ++i) {
        const std::size_t out = scale_width(base[i].channels, w);
        const std::string name = "backbone." + std::to_string(i);
        if (base[i].c2f)
            layers.push_back(LayerSpec::c2f(name, in, out, scale_depth(base[i].repeats, d), true));
        else
            layers.push_back(LayerSpec::conv(name, in, out, 3, 2));
        in = out;
    }
    layers.push_back(LayerSpec::head("head", in, kHeadHidden, static_cast<std::size_t>(config.num_classes)));
    return layers;
}

Model::Model(ModelConfig config, std::vector<LayerSpec> layers, std::string arch)
    : config_(config), layers_(std::move(layers)), arch_(std::move(arch))
{
    std::size_t channels = layers_.empty() ? 0 : layers_.front().in_channels;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        LayerSpec& l = layers_[i];
        if (l.name.empty())
            l.name = l.kind == LayerKind::ClassifyHead ? "head" : "backbone." + std::to_string(i);
        if (l.in_channels != channels)
            throw ShapeError("layer " + l.name + ": expects " + std::to_string(l.in_channels) +
                             " input channels, previous layer gives " + std::to_string(channels));
        if (l.kind == LayerKind::C2f && l.out_channels % 2 != 0)
            throw ShapeError("layer " + l.name + ": C2f needs an even channel count");
        if (l.kind == LayerKind::ClassifyHead && i + 1 != layers_.size())
            throw ShapeError("layer " + l.name + ": classify head must be last");
        if (l.kernel % 2 == 0)
            throw ShapeError("layer " + l.name + ": kernel must be odd");
        channels = l.out_channels;
    }
}

std::size_t Model::num_classes() const
{
    if (layers_.empty() || layers_.back().kind != LayerKind::ClassifyHead)
        return 0;
    return layers_.back().out_channels;
}

std::size_t Model::in_channels() const { return layers_.empty() ? 0 : layers_.front().in_channels; }

std::size_t Model::feature_dim() const
{
    if (layers_.empty() || layers_.back().kind != LayerKind::ClassifyHead)
        return 0;
    return layers_.back().hidden_channels;
}

std::vector<TensorSpec> Model::tensor_specs() const
{
    std::vector<TensorSpec> specs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        for_each_conv_block(l, [&](const std::string& p, std::size_t cin, std::size_t cout, std::size_t k) {
            specs.push_back({p + ".conv.weight", {u32(cout), u32(cin), u32(k), u32(k)}, true, i});
            specs.push_back({p + ".bn.weight", {u32(cout)}, true, i});
            specs.push_back({p + ".bn.bias", {u32(cout)}, true, i});
            specs.push_back({p + ".bn.running_mean", {u32(cout)}, false, i});
            specs.push_back({p + ".bn.running_var", {u32(cout)}, false, i});
        });
        if (l.kind == LayerKind::ClassifyHead) {
            specs.push_back({l.name + ".linear.weight", {u32(l.out_channels), u32(l.hidden_channels)}, true, i});
            specs.push_back({l.name + ".linear.bias", {u32(l.out_channels)}, true, i});
        }
    }
    return specs;
}

void Model::bind(const weights::WeightStore& store)
{
    std::vector<std::string> missing, extra, mismatched;
    std::set<std::string> expected;
    for (const TensorSpec& s : tensor_specs()) {
        expected.insert(s.name);
        if (!store.contains(s.name))
            missing.push_back(s.name);
        else if (store.at(s.name).dims != s.dims)
            mismatched.push_back(s.name);
    }
    for (const auto& [name, rec] : store.records())
        if (!expected.contains(name))
            extra.push_back(name);

    std::string problem;
    if (store.metadata.arch != arch_)
        problem += " arch '" + store.metadata.arch + "' (expected '" + arch_ + "');";
    if (store.metadata.nc != static_cast<int>(num_classes()))
        problem += " metadata nc " + std::to_string(store.metadata.nc) + " (expected " +
                   std::to_string(num_classes()) + ");";
    if (!missing.empty() || !extra.empty() || !mismatched.empty() || !problem.empty()) {
        std::string what = "cannot bind weights:" + problem;
        auto list = [&what](const char* label, const std::vector<std::string>& names) {
            if (names.empty())
                return;
            what += std::string(" ") + label + " [";
            for (std::size_t i = 0; i < names.size(); ++i)
                what += (i ? ", " : "") + names[i];
            what += "]";
        };
        list("missing", missing);
        list("extra", extra);
        list("shape mismatch", mismatched);
        throw BindError(what, std::move(missing), std::move(extra), std::move(mismatched));
    }

    const auto eps = static_cast<float>(store.metadata.bn_eps);
    auto vec = [&store](const std::string& name) { return store.at(name).to_floats(); };
    auto fused = [&](const std::string& p, std::size_t stride) {
        const auto& rec = store.at(p + ".conv.weight");
        ConvParams conv;
        conv.weight = Tensor(Shape{rec.dims[0], rec.dims[1], rec.dims[2], rec.dims[3]}, rec.to_floats());
        conv.stride = stride;
        conv.padding = rec.dims[2] / 2;
        BnParams bn{vec(p + ".bn.weight"), vec(p + ".bn.bias"), vec(p + ".bn.running_mean"),
                    vec(p + ".bn.running_var"), eps};
        return FusedConv{ops::fold_bn(conv, bn)};
    };

    std::vector<Stage> stages;
    for (const LayerSpec& l : layers_) {
        switch (l.kind) {
        case LayerKind::ConvBlock:
            stages.emplace_back(ConvStage{fused(l.name, l.stride)});
            break;
        case LayerKind::C2f: {
            C2fStage st{fused(l.name + ".cv1", 1), {}, fused(l.name + ".cv2", 1), l.out_channels / 2, l.shortcut};
            for (std::size_t j = 0; j < l.repeats; ++j) {
                const std::string m = l.name + ".m." + std::to_string(j);
                st.bottlenecks.emplace_back(fused(m + ".cv1", 1), fused(m + ".cv2", 1));
            }
            stages.emplace_back(std::move(st));
            break;
        }
        case LayerKind::ClassifyHead: {
            const auto& w = store.at(l.name + ".linear.weight");
            stages.emplace_back(HeadStage{fused(l.name + ".conv", 1),
                                          Tensor(Shape{w.dims[0], w.dims[1], 1, 1}, w.to_floats()),
                                          vec(l.name + ".linear.bias")});
            break;
        }
        }
    }
    stages_ = std::move(stages);
    store_ = std::make_shared<const weights::WeightStore>(store);
    checksum_ = store_->checksum();
}

const weights::WeightStore& Model::store() const
{
    require_bound();
    return *store_;
}

void Model::require_bound() const
{
    if (!bound())
        throw Error("model has no bound weights");
}

const Tensor& Model::head_weight() const
{
    require_bound();
    return std::get<HeadStage>(stages_.back()).weight;
}

const std::vector<float>& Model::head_bias() const
{
    require_bound();
    return std::get<HeadStage>(stages_.back()).bias;
}

Tensor Model::forward(const Tensor& batch, unsigned threads) const { return run(batch, threads, false); }

Tensor Model::features(const Tensor& batch, unsigned threads) const { return run(batch, threads, true); }

Tensor Model::run(const Tensor& batch, unsigned threads, bool stop_at_features) const
{
    require_bound();
    if (batch.c() != in_channels() || batch.n() == 0 || batch.h() == 0 || batch.w() == 0)
        throw ShapeError("forward: expected input (n>=1, " + std::to_string(in_channels()) + ", h, w), got " +
                         batch.shape().str());
    auto conv_block = [threads](const Tensor& x, const FusedConv& f) {
        Tensor y = ops::conv2d_lowered(x, f.params, threads);
        ops::silu_inplace(y);
        return y;
    };

    Tensor x = batch;
    for (const Stage& stage : stages_) {
        if (const auto* conv = std::get_if<ConvStage>(&stage)) {
            x = conv_block(x, conv->conv);
        } else if (const auto* c2f = std::get_if<C2fStage>(&stage)) {
            const std::array<std::size_t, 2> halves{c2f->hidden, c2f->hidden};
            std::vector<Tensor> branches = ops::split_channels(conv_block(x, c2f->cv1), halves);
            for (const auto& [cv1, cv2] : c2f->bottlenecks) {
                Tensor y = conv_block(conv_block(branches.back(), cv1), cv2);
                if (c2f->shortcut)
                    y = ops::add(branches.back(), y);
                branches.push_back(std::move(y));
            }
            x = conv_block(ops::concat_channels(branches), c2f->cv2);
        } else {
            const auto& head = std::get<HeadStage>(stage);
            Tensor pooled = ops::global_avg_pool(conv_block(x, head.conv));
            if (stop_at_features)
                return pooled;
            const std::size_t d = pooled.c();
            Tensor logits(pooled.n(), head.weight.n(), 1, 1);
            for (std::size_t n = 0; n < pooled.n(); ++n) {
                const auto out = ops::linear(pooled.data().subspan(n * d, d), head.weight, head.bias);
                std::copy(out.begin(), out.end(), logits.data().begin() + static_cast<std::ptrdiff_t>(n * out.size()));
            }
            return logits;
        }
    }
    if (stop_at_features)
        throw Error("model has no classify head");
    return x;
}

Model build_yolov8_cls(const ModelConfig& config) { return Model(config, yolov8_cls_layers(config)); }

std::vector<std::uint64_t> params_per_layer(const Model& model)
{
    std::vector<std::uint64_t> per_layer(model.layers().size(), 0);
    for (const TensorSpec& s : model.tensor_specs())
        if (s.parameter)
            per_layer[s.layer] += s.numel();
    return per_layer;
}

std::uint64_t count_params(const Model& model)
{
    const auto per_layer = params_per_layer(model);
    return std::accumulate(per_layer.begin(), per_layer.end(), std::uint64_t{0});
}

MacCount count_macs(const Model& model, std::size_t input_size)
{
    MacCount total;
    const auto params = params_per_layer(model);
    std::size_t h = input_size;
    std::size_t w = input_size;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const LayerSpec& l = model.layers()[i];
        LayerCost cost{l.name, l.kind, Shape{1, l.in_channels, h, w}, {}, params[i], 0, 0};
        auto conv = [&](std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t ih,
                        std::size_t iw) {
            const std::size_t oh = conv_out_dim(ih, k, stride, k / 2);
            const std::size_t ow = conv_out_dim(iw, k, stride, k / 2);
            cost.macs += static_cast<std::uint64_t>(k * k * cin * cout) * oh * ow;
            cost.aux_ops += 3ull * cout * oh * ow; // BN (2) + SiLU (1)
            return std::pair{oh, ow};
        };
        switch (l.kind) {
        case LayerKind::ConvBlock:
            std::tie(h, w) = conv(l.in_channels, l.out_channels, l.kernel, l.stride, h, w);
            break;
        case LayerKind::C2f: {
            const std::size_t hidden = l.out_channels / 2;
            conv(l.in_channels, 2 * hidden, 1, 1, h, w);
            for (std::size_t j = 0; j < l.repeats; ++j) {
                conv(hidden, hidden, 3, 1, h, w);
                conv(hidden, hidden, 3, 1, h, w);
                if (l.shortcut)
                    cost.aux_ops += static_cast<std::uint64_t>(hidden) * h * w;
            }
            conv((2 + l.repeats) * hidden, l.out_channels, 1, 1, h, w);
            break;
        }
        case LayerKind::ClassifyHead:
            conv(l.in_channels, l.hidden_channels, 1, 1, h, w);
            cost.aux_ops += static_cast<std::uint64_t>(l.hidden_channels) * h * w;
            cost.macs += static_cast<std::uint64_t>(l.hidden_channels) * l.out_channels;
            h = w = 1;
            break;
        }
        cost.output = Shape{1, l.out_channels, h, w};
        total.macs += cost.macs;
        total.aux_ops += cost.aux_ops;
        total.layers.push_back(std::move(cost));
    }
    total.flops = 2 * total.macs;
    return total;
}

weights::Metadata metadata_for(const Model& model)
{
    weights::Metadata m;
    m.arch = model.arch();
    m.nc = static_cast<int>(model.num_classes());
    return m;
}

weights::WeightStore random_weights(const Model& model, std::uint64_t seed)
{
    Rng rng(seed);
    weights::WeightStore store;
    store.metadata = metadata_for(model);
    for (const TensorSpec& s : model.tensor_specs()) {
        std::vector<float> v(s.numel());
        auto ends_with = [&s](std::string_view suffix) { return s.name.ends_with(suffix); };
        if (ends_with(".conv.weight")) {
            const double bound = std::sqrt(3.0 / (s.dims[1] * s.dims[2] * s.dims[3]));
            for (float& x : v)
                x = static_cast<float>(uniform(rng, -bound, bound));
        } else if (ends_with(".bn.weight") || ends_with(".bn.running_var")) {
            for (float& x : v)
                x = static_cast<float>(uniform(rng, 0.5, 1.5));
        } else if (ends_with(".bn.bias") || ends_with(".bn.running_mean")) {
            for (float& x : v)
                x = static_cast<float>(uniform(rng, -0.1, 0.1));
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(s.dims.back()));
            for (float& x : v)
                x = static_cast<float>(uniform(rng, -bound, bound));
        }
        store.insert(weights::TensorRecord::from_floats(s.name, s.dims, v));
    }
    return store;
}

weights::WeightStore zero_weights(const Model& model)
{
    weights::WeightStore store;
    store.metadata = metadata_for(model);
    for (const TensorSpec& s : model.tensor_specs()) {
        std::vector<float> v(s.numel(), s.name.ends_with(".running_var") ? 1.0f : 0.0f);
        store.insert(weights::TensorRecord::from_floats(s.name, s.dims, v));
    }
    return store;
}

} // namespace ddcls::graph
