#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyquant/quantizer.hpp"

namespace tinyquant {

// Activation budget of the deployment target (on-device framebuffer RAM).
inline constexpr std::int64_t kFramebufferBytes = 496 * 1024;

// Largest kh*kw*cin a conv may have so the int32 accumulator cannot overflow
// (2^16 * 255 * 127 < 2^31).
inline constexpr std::int64_t kMaxKernelVolume = std::int64_t{1} << 16;

struct ConvGeom {
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int pad_top = 0;
    int pad_left = 0;
};

// Standalone integer kernels (tensor-in/tensor-out facades over the engine's
// core loops). acc_c = sum (q_in - zp_in) * q_w + bias_c; output
// clamp(requantize(acc_c) + zp_out, relu ? zp_out : -128, 127).
TensorI8 conv2d_i8(const TensorI8& input, int zp_in, const TensorI8& weights,
                   const std::vector<std::int32_t>& bias,
                   const std::vector<RequantParams>& requant, int zp_out, bool relu,
                   const ConvGeom& geom);
TensorI8 dense_i8(const TensorI8& input, int zp_in, const TensorI8& weights,
                  const std::vector<std::int32_t>& bias,
                  const std::vector<RequantParams>& requant, int zp_out, bool relu);
TensorI8 maxpool_i8(const TensorI8& input, int pool, int stride);
// Rounded integer mean per channel, in the input's quant domain.
TensorI8 global_avgpool_i8(const TensorI8& input);

struct ArenaSlot {
    int node = -1;               // node whose output lives here
    std::int64_t offset = 0;
    std::int64_t bytes = 0;
    int birth = 0;               // node index that produces the tensor
    int death = 0;               // last node index that reads it
};

struct Arena {
    std::int64_t capacity = 0;
    std::int64_t peak = 0;
    std::vector<ArenaSlot> slots;
    std::vector<int> slot_of_node;  // node id -> index into slots (aliases share)
};

// Static liveness plan with greedy first-fit offsets; flatten/dropout outputs
// alias their producer's buffer. Throws budget-exceeded (naming the layer)
// if the peak exceeds capacity.
Arena plan_arena(const QuantizedModel& qm, std::int64_t capacity = kFramebufferBytes);

struct InferResult {
    int label = 0;  // 1 = mask (p >= 0.5), 0 = no mask
    double p = 0.0;
};

// Integer-only executor over a planned arena. Floating point happens in
// exactly two places: quantizing the input image and dequantizing the logit
// through the sigmoid.
class Int8Engine {
public:
    explicit Int8Engine(const QuantizedModel& qm, std::int64_t arena_capacity = kFramebufferBytes);

    InferResult infer(const TensorF& image);

    const Arena& arena() const { return plan_; }
    // Float boundary stages of the last infer (always 2: input quantize,
    // head dequantize+sigmoid); the kernels between them are integer-only.
    int boundary_float_stages() const { return boundary_stages_; }

private:
    const QuantizedModel* qm_;
    Arena plan_;
    std::vector<std::int8_t> buf_;
    std::vector<std::int32_t> acc_;  // per-pixel accumulator row, reused
    int boundary_stages_ = 0;
};

struct LayerMacs {
    std::string name;
    std::int64_t macs = 0;
};

struct BenchReport {
    std::vector<LayerMacs> per_layer;
    std::int64_t total_macs = 0;
    std::int64_t arena_peak = 0;
    double host_latency_s = 0.0;  // median over trials
    double clock_hz = 0.0;
    double macs_per_cycle = 0.0;
    double estimated_fps = 0.0;  // clock_hz * macs_per_cycle / total_macs (estimate only)
};

std::vector<LayerMacs> per_layer_macs(const Network& net);
std::int64_t total_macs(const Network& net);

BenchReport bench(const QuantizedModel& qm, int trials, double clock_hz, double macs_per_cycle);

// Key/value lines for humans; comma-separated table for machines.
std::string bench_report_text(const BenchReport& r);
std::string bench_report_csv(const BenchReport& r);

}  // namespace tinyquant
