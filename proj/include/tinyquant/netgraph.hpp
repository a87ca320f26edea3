#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tinyquant/tensor.hpp"

namespace tinyquant {

enum class Activation { None, Relu, Sigmoid };
enum class Padding { Same, Valid };

struct Conv2DSpec {
    int out_channels = 1;
    int kernel_h = 3;
    int kernel_w = 3;
    int stride = 1;
    Padding padding = Padding::Same;
    Activation activation = Activation::Relu;
};

struct MaxPoolSpec {
    int pool = 2;
    int stride = 2;
};

struct GlobalAvgPoolSpec {};

struct FlattenSpec {};

struct DenseSpec {
    int units = 1;
    Activation activation = Activation::None;
};

struct DropoutSpec {
    float rate = 0.2f;
};

// Squeeze conv (1x1, relu) feeding parallel 1x1 and 3x3 expand convs whose
// outputs concatenate on the channel axis.
struct FireSpec {
    int squeeze_1x1 = 16;
    int expand_1x1 = 64;
    int expand_3x3 = 64;
};

using LayerSpec = std::variant<Conv2DSpec, MaxPoolSpec, GlobalAvgPoolSpec, FlattenSpec, DenseSpec,
                               DropoutSpec, FireSpec>;

struct NetworkConfig {
    std::string name;
    int input_h = 32;
    int input_w = 32;
    int input_c = 3;
    std::vector<LayerSpec> layers;
};

// Text form of a NetworkConfig (one layer per line); see docs/network-config.md.
NetworkConfig parse_network_config(const std::string& text);
NetworkConfig load_network_config(const std::string& path);
std::string network_config_to_text(const NetworkConfig& cfg);

std::int64_t param_count(const NetworkConfig& cfg);

// Reference architectures. Known names: "tinymask-ref", "squeezenet-mask",
// "squeezenet-mask-small".
NetworkConfig zoo(const std::string& name);

// ---------------------------------------------------------------------------
// Lowered execution graph. Fire modules expand into squeeze/expand convs plus
// a concat node, and a trailing sigmoid classification head becomes its own
// node so integer inference can stop at the logit edge.

enum class NodeKind { Input, Conv, MaxPool, GlobalAvgPool, Flatten, Dense, Dropout, Concat,
                      SigmoidHead };

struct Node {
    NodeKind kind = NodeKind::Input;
    std::vector<int> inputs;   // producing node ids
    Shape4 out_shape;
    std::string name;
    int layer_index = -1;      // originating layer in the config, -1 for the input node
    int param_index = -1;      // index into ModelParams for Conv/Dense

    // Conv / Dense / MaxPool geometry (unused fields stay zero).
    int kernel_h = 0, kernel_w = 0;
    int stride = 1;
    int pad_top = 0, pad_left = 0;
    bool relu = false;
    int pool = 0;
    float dropout_rate = 0.0f;
};

struct Network {
    NetworkConfig cfg;
    std::vector<Node> nodes;
    int num_param_layers = 0;

    const Node& output_node() const { return nodes.back(); }
};

// Shape inference + validation; throws ErrorKind::ConfigError on an invalid
// description (including a missing Dense(1, sigmoid) head).
Network lower(const NetworkConfig& cfg);

template <typename T>
struct LayerParams {
    Tensor<T> weights;        // conv: (kh, kw, cin, cout); dense: (1, 1, in, units)
    std::vector<T> bias;      // one per output channel / unit
};

template <typename T>
using ModelParamsT = std::vector<LayerParams<T>>;
using ModelParams = ModelParamsT<float>;

// He-uniform for relu layers, Glorot-uniform otherwise, zero biases, all
// drawn deterministically from the seed.
template <typename T>
ModelParamsT<T> init_params(const Network& net, std::uint64_t seed);

std::pair<Network, ModelParams> build_network(const NetworkConfig& cfg, std::uint64_t seed);

template <typename T>
ModelParamsT<T> zero_like(const ModelParamsT<T>& params);

template <typename From, typename To>
ModelParamsT<To> cast_params(const ModelParamsT<From>& params);

enum class RunMode { Train, Infer };

template <typename T>
struct ForwardRecord {
    std::vector<Tensor<T>> activations;          // one per node, post-activation
    std::vector<Tensor<std::uint8_t>> dropout_masks;  // per node; empty unless Dropout in train mode
    T output = T{};                              // scalar sigmoid output p
};

// In train mode Dropout zeroes elements with probability `rate` and scales
// survivors by 1/(1-rate), seeded; in infer mode Dropout is the identity.
template <typename T>
ForwardRecord<T> forward(const Network& net, const ModelParamsT<T>& params, const Tensor<T>& input,
                         RunMode mode, std::uint64_t seed = 0);

// Reverse-mode gradients of the forward pass that produced `record`,
// including its dropout masks. d_loss_d_p is dL/dp at the sigmoid output.
template <typename T>
ModelParamsT<T> backward(const Network& net, const ModelParamsT<T>& params,
                         const ForwardRecord<T>& record, T d_loss_d_p);

}  // namespace tinyquant
