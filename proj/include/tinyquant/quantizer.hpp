#pragma once

#include <cstdint>
#include <vector>

#include "tinyquant/netgraph.hpp"
#include "tinyquant/tensor.hpp"

namespace tinyquant {

// Observed activation range of one edge (a node's output tensor).
struct EdgeStats {
    double min_v = 0.0;
    double max_v = 0.0;
    std::int64_t count = 0;
};

// One EdgeStats per node of the lowered network, indexed by node id; entry 0
// is the network input. Ranges are already nudged to include zero.
struct CalibrationStats {
    std::vector<EdgeStats> edges;
};

// Fixed-point encoding of M = s_in*s_w/s_out as multiplier_q31 * 2^(-31-right_shift),
// multiplier_q31 in [2^30, 2^31-1] representing M0 in [0.5, 1).
struct RequantParams {
    std::int32_t multiplier_q31 = 1 << 30;
    std::int32_t right_shift = 0;
};

// Minimum scale assigned to degenerate (min == max) ranges and all-zero
// weight channels.
inline constexpr double kScaleFloor = 1e-7;

// Rescale an int32 accumulator into the output quant domain: round-half-away
// (acc * M0 * 2^-(31+right_shift)). The integer engine and the fake-quant
// oracle both use exactly this function, so their rounding can never diverge.
inline std::int32_t requantize(std::int32_t acc, const RequantParams& rp) {
    const std::int64_t prod = static_cast<std::int64_t>(acc) * rp.multiplier_q31;
    const int total_shift = 31 + rp.right_shift;
    const std::int64_t half = std::int64_t{1} << (total_shift - 1);
    // Round the magnitude, then restore the sign: a plain arithmetic shift
    // floors, which would bias negative values downward.
    const std::int64_t mag = (prod >= 0 ? prod : -prod) + half;
    const std::int64_t rounded = mag >> total_shift;
    return static_cast<std::int32_t>(prod >= 0 ? rounded : -rounded);
}

// Runs float inference over every sample and records per-edge min/max
// (zero-nudged) plus sample counts.
CalibrationStats calibrate(const Network& net, const ModelParams& params,
                           const std::vector<TensorF>& representative_set);

// Per-output-channel symmetric int8 quantization: scale_c = max|w_c|/127.
std::pair<TensorI8, QuantParams> quantize_weights(const TensorF& w);

// Asymmetric per-tensor activation params from a zero-inclusive range:
// scale = (max-min)/255, zero_point = round(-min/scale) - 128.
QuantParams activation_qparams(double min_v, double max_v);

RequantParams derive_requant(double s_in, double s_w, double s_out);

// All weight-layer data needed by the integer engine, indexed by param layer.
struct QuantLayer {
    TensorI8 weights;                    // float layout preserved
    QuantParams weight_qp;               // per-channel symmetric
    std::vector<std::int32_t> bias;      // scale s_in*s_w_c, zero_point 0
    std::vector<RequantParams> requant;  // one per output channel
};

struct QuantizedModel {
    NetworkConfig net_cfg;
    Network net;                           // lowered from net_cfg
    std::vector<QuantLayer> layers;        // size net.num_param_layers
    std::vector<QuantParams> edge_qp;      // per node id; input at index 0

    const QuantParams& input_qp() const { return edge_qp.front(); }
    // Quant params of the pre-sigmoid logit edge.
    const QuantParams& logit_qp() const;
};

// Full post-training integer quantization. Inputs/outputs stay float32 at the
// API boundary; see Int8Engine::infer for the explicit quantize/dequantize.
QuantizedModel quantize_model(const Network& net, const ModelParams& params,
                              const CalibrationStats& stats);

// Simulates the integer pipeline with independent naive loops but the shared
// requantize() rule; reference for the engine's class decisions.
double fake_quant_forward(const QuantizedModel& qm, const TensorF& input);

// Deterministic seeded draw of n representative inputs from a sample pool
// (all of the pool when n >= pool size).
std::vector<TensorF> representative_sample(const std::vector<Sample>& pool, int n,
                                           std::uint64_t seed);

}  // namespace tinyquant
