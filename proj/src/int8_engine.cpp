#include "tinyquant/int8_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "tinyquant/rng.hpp"

namespace tinyquant {

namespace {

std::int64_t div_round_half_away(std::int64_t num, std::int64_t den) {
    const std::int64_t mag = (2 * std::llabs(num) + den) / (2 * den);
    return num < 0 ? -mag : mag;
}

void check_conv_volume(const Shape4& wshape) {
    const std::int64_t volume =
        static_cast<std::int64_t>(wshape.n) * wshape.h * wshape.w;  // kh * kw * cin
    if (volume > kMaxKernelVolume) {
        throw Error(ErrorKind::UnsupportedShape,
                    "conv kernel volume " + std::to_string(volume) +
                        " exceeds int32 accumulation bound " + std::to_string(kMaxKernelVolume));
    }
}

// Core conv loops shared by the tensor facade and the arena engine.
// Weights layout (kh, kw, cin, cout); acc must hold cout int32 values.
void conv2d_core(const std::int8_t* in, const Shape4& is, int zp_in, const std::int8_t* w,
                 const Shape4& ws, const std::int32_t* bias, const RequantParams* requant,
                 int zp_out, bool relu, const ConvGeom& g, const Shape4& os, std::int8_t* out,
                 std::int32_t* acc) {
    const int cin = is.c, cout = os.c;
    const int lo = relu ? zp_out : -128;
    for (int ho = 0; ho < os.h; ++ho) {
        for (int wo = 0; wo < os.w; ++wo) {
            for (int co = 0; co < cout; ++co) acc[co] = bias[co];
            for (int kh = 0; kh < g.kernel_h; ++kh) {
                const int hi = ho * g.stride - g.pad_top + kh;
                if (hi < 0 || hi >= is.h) continue;
                for (int kw = 0; kw < g.kernel_w; ++kw) {
                    const int wi = wo * g.stride - g.pad_left + kw;
                    if (wi < 0 || wi >= is.w) continue;
                    const std::int8_t* x = in + (static_cast<std::int64_t>(hi) * is.w + wi) * cin;
                    const std::int8_t* wrow =
                        w + (static_cast<std::int64_t>(kh) * g.kernel_w + kw) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const std::int32_t a = static_cast<std::int32_t>(x[ci]) - zp_in;
                        const std::int8_t* wp = wrow + static_cast<std::int64_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) {
                            acc[co] += a * static_cast<std::int32_t>(wp[co]);
                        }
                    }
                }
            }
            std::int8_t* o = out + (static_cast<std::int64_t>(ho) * os.w + wo) * cout;
            for (int co = 0; co < cout; ++co) {
                const std::int32_t scaled = requantize(acc[co], requant[co]);
                o[co] = static_cast<std::int8_t>(
                    std::clamp(scaled + zp_out, lo, 127));
            }
        }
    }
    (void)ws;
}

void maxpool_core(const std::int8_t* in, const Shape4& is, int pool, int stride, const Shape4& os,
                  std::int8_t* out) {
    for (int ho = 0; ho < os.h; ++ho) {
        for (int wo = 0; wo < os.w; ++wo) {
            for (int c = 0; c < os.c; ++c) {
                std::int8_t best = -128;
                for (int kh = 0; kh < pool; ++kh) {
                    for (int kw = 0; kw < pool; ++kw) {
                        const std::int8_t v =
                            in[(static_cast<std::int64_t>(ho * stride + kh) * is.w +
                                (wo * stride + kw)) *
                                   is.c +
                               c];
                        best = std::max(best, v);
                    }
                }
                out[(static_cast<std::int64_t>(ho) * os.w + wo) * os.c + c] = best;
            }
        }
    }
}

void global_avgpool_core(const std::int8_t* in, const Shape4& is, std::int8_t* out) {
    const std::int64_t count = static_cast<std::int64_t>(is.h) * is.w;
    for (int c = 0; c < is.c; ++c) {
        std::int64_t sum = 0;
        for (std::int64_t i = 0; i < count; ++i) sum += in[i * is.c + c];
        out[c] = static_cast<std::int8_t>(
            std::clamp<std::int64_t>(div_round_half_away(sum, count), -128, 127));
    }
}

Shape4 conv_out_shape(const Shape4& is, const Shape4& ws, const ConvGeom& g) {
    const int out_h = (is.h + 2 * g.pad_top - ws.n) / g.stride + 1;
    const int out_w = (is.w + 2 * g.pad_left - ws.h) / g.stride + 1;
    return Shape4{1, out_h, out_w, ws.c};
}

}  // namespace

TensorI8 conv2d_i8(const TensorI8& input, int zp_in, const TensorI8& weights,
                   const std::vector<std::int32_t>& bias,
                   const std::vector<RequantParams>& requant, int zp_out, bool relu,
                   const ConvGeom& geom) {
    const Shape4& is = input.shape();
    const Shape4& ws = weights.shape();
    check_conv_volume(ws);
    if (ws.w != is.c) {
        throw Error(ErrorKind::ShapeMismatch, "conv weights expect " + std::to_string(ws.w) +
                                                  " input channels, tensor has " +
                                                  std::to_string(is.c));
    }
    if (bias.size() != static_cast<std::size_t>(ws.c) || requant.size() != bias.size()) {
        throw Error(ErrorKind::ShapeMismatch, "bias/requant length does not match output channels");
    }
    const Shape4 os = conv_out_shape(is, ws, geom);
    if (os.h < 1 || os.w < 1) {
        throw Error(ErrorKind::UnsupportedShape, "conv output would be empty for input " + is.str());
    }
    TensorI8 out(os);
    std::vector<std::int32_t> acc(static_cast<std::size_t>(os.c));
    conv2d_core(input.data(), is, zp_in, weights.data(), ws, bias.data(), requant.data(), zp_out,
                relu, geom, os, out.data(), acc.data());
    return out;
}

TensorI8 dense_i8(const TensorI8& input, int zp_in, const TensorI8& weights,
                  const std::vector<std::int32_t>& bias,
                  const std::vector<RequantParams>& requant, int zp_out, bool relu) {
    if (input.shape().h != 1 || input.shape().w != 1) {
        throw Error(ErrorKind::UnsupportedShape,
                    "dense expects a flat 1x1xK input, got " + input.shape().str());
    }
    return conv2d_i8(input, zp_in, weights, bias, requant, zp_out, relu, ConvGeom{1, 1, 1, 0, 0});
}

TensorI8 maxpool_i8(const TensorI8& input, int pool, int stride) {
    const Shape4& is = input.shape();
    if (pool < 1 || stride < 1 || pool > is.h || pool > is.w) {
        throw Error(ErrorKind::UnsupportedShape,
                    "maxpool window " + std::to_string(pool) + " does not fit input " + is.str());
    }
    const Shape4 os{1, (is.h - pool) / stride + 1, (is.w - pool) / stride + 1, is.c};
    TensorI8 out(os);
    maxpool_core(input.data(), is, pool, stride, os, out.data());
    return out;
}

TensorI8 global_avgpool_i8(const TensorI8& input) {
    TensorI8 out(Shape4{1, 1, 1, input.shape().c});
    global_avgpool_core(input.data(), input.shape(), out.data());
    return out;
}

// ---------------------------------------------------------------------------
// Arena planning

Arena plan_arena(const QuantizedModel& qm, std::int64_t capacity) {
    if (capacity < 1) throw Error(ErrorKind::UsageError, "arena capacity must be positive");
    const Network& net = qm.net;
    const int n = static_cast<int>(net.nodes.size());

    // Alias chain: flatten/dropout reuse the producer's bytes; the sigmoid
    // head is a float scalar outside the arena.
    std::vector<int> root(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Node& nd = net.nodes[static_cast<std::size_t>(i)];
        const bool alias = nd.kind == NodeKind::Flatten || nd.kind == NodeKind::Dropout;
        root[static_cast<std::size_t>(i)] =
            alias ? root[static_cast<std::size_t>(nd.inputs[0])] : i;
    }

    Arena arena;
    arena.capacity = capacity;
    arena.slot_of_node.assign(static_cast<std::size_t>(n), -1);

    // Liveness on root buffers: birth at producer, death at last consumer.
    for (int i = 0; i < n; ++i) {
        const Node& nd = net.nodes[static_cast<std::size_t>(i)];
        if (root[static_cast<std::size_t>(i)] != i || nd.kind == NodeKind::SigmoidHead) continue;
        ArenaSlot slot;
        slot.node = i;
        slot.bytes = nd.out_shape.numel();  // int8: one byte per element
        slot.birth = i;
        slot.death = i;
        arena.slot_of_node[static_cast<std::size_t>(i)] = static_cast<int>(arena.slots.size());
        arena.slots.push_back(slot);
    }
    for (int i = 0; i < n; ++i) {
        const Node& nd = net.nodes[static_cast<std::size_t>(i)];
        for (int producer : nd.inputs) {
            ArenaSlot& slot = arena.slots[static_cast<std::size_t>(
                arena.slot_of_node[static_cast<std::size_t>(root[static_cast<std::size_t>(producer)])])];
            slot.death = std::max(slot.death, i);
        }
        if (root[static_cast<std::size_t>(i)] != i && nd.kind != NodeKind::SigmoidHead) {
            // The alias keeps the underlying buffer alive until its own last reader.
            arena.slot_of_node[static_cast<std::size_t>(i)] =
                arena.slot_of_node[static_cast<std::size_t>(root[static_cast<std::size_t>(i)])];
        }
    }

    // Greedy first-fit in birth order.
    constexpr std::int64_t kAlign = 16;
    std::vector<std::size_t> placed;
    for (std::size_t s = 0; s < arena.slots.size(); ++s) {
        ArenaSlot& slot = arena.slots[s];
        std::int64_t offset = 0;
        for (bool moved = true; moved;) {
            moved = false;
            for (std::size_t p : placed) {
                const ArenaSlot& other = arena.slots[p];
                const bool lifetimes_overlap =
                    slot.birth <= other.death && other.birth <= slot.death;
                const bool bytes_overlap =
                    offset < other.offset + other.bytes && other.offset < offset + slot.bytes;
                if (lifetimes_overlap && bytes_overlap) {
                    offset = (other.offset + other.bytes + kAlign - 1) / kAlign * kAlign;
                    moved = true;
                }
            }
        }
        slot.offset = offset;
        placed.push_back(s);
        arena.peak = std::max(arena.peak, offset + slot.bytes);
        if (offset + slot.bytes > capacity) {
            throw Error(ErrorKind::BudgetExceeded,
                        "arena needs " + std::to_string(offset + slot.bytes) + " bytes (capacity " +
                            std::to_string(capacity) + ") at layer " +
                            net.nodes[static_cast<std::size_t>(slot.node)].name);
        }
    }
    return arena;
}

// ---------------------------------------------------------------------------
// Engine

Int8Engine::Int8Engine(const QuantizedModel& qm, std::int64_t arena_capacity)
    : qm_(&qm), plan_(plan_arena(qm, arena_capacity)) {
    buf_.assign(static_cast<std::size_t>(plan_.peak), 0);
    int max_c = 1;
    for (const Node& nd : qm.net.nodes) max_c = std::max(max_c, nd.out_shape.c);
    acc_.assign(static_cast<std::size_t>(max_c), 0);
    for (const Node& nd : qm.net.nodes) {
        if (nd.kind == NodeKind::Conv || nd.kind == NodeKind::Dense) {
            check_conv_volume(qm.layers[static_cast<std::size_t>(nd.param_index)].weights.shape());
        }
    }
}

InferResult Int8Engine::infer(const TensorF& image) {
    const Network& net = qm_->net;
    if (!(image.shape() == net.nodes[0].out_shape)) {
        throw Error(ErrorKind::ShapeMismatch, "infer: image shape " + image.shape().str() +
                                                  " does not match network input " +
                                                  net.nodes[0].out_shape.str());
    }
    boundary_stages_ = 0;
    auto slot_ptr = [&](int node) {
        return buf_.data() +
               plan_.slots[static_cast<std::size_t>(plan_.slot_of_node[static_cast<std::size_t>(node)])]
                   .offset;
    };

    {  // float boundary 1: quantize the input image
        const QuantParams& qp = qm_->input_qp();
        std::int8_t* dst = slot_ptr(0);
        for (std::int64_t i = 0; i < image.size(); ++i) {
            dst[i] = quantize_value(image[i], qp.scale(), qp.zero_point);
        }
        ++boundary_stages_;
    }

    double p = 0.0;
    for (std::size_t i = 1; i < net.nodes.size(); ++i) {
        const Node& nd = net.nodes[i];
        const Shape4& is = net.nodes[static_cast<std::size_t>(nd.inputs[0])].out_shape;
        const std::int8_t* in = slot_ptr(nd.inputs[0]);
        switch (nd.kind) {
            case NodeKind::Conv:
            case NodeKind::Dense: {
                const QuantLayer& ql = qm_->layers[static_cast<std::size_t>(nd.param_index)];
                const ConvGeom g{nd.kernel_h, nd.kernel_w, nd.stride, nd.pad_top, nd.pad_left};
                conv2d_core(in, is,
                            qm_->edge_qp[static_cast<std::size_t>(nd.inputs[0])].zero_point,
                            ql.weights.data(), ql.weights.shape(), ql.bias.data(),
                            ql.requant.data(), qm_->edge_qp[i].zero_point, nd.relu, g, nd.out_shape,
                            slot_ptr(static_cast<int>(i)), acc_.data());
                break;
            }
            case NodeKind::MaxPool:
                maxpool_core(in, is, nd.pool, nd.stride, nd.out_shape, slot_ptr(static_cast<int>(i)));
                break;
            case NodeKind::GlobalAvgPool:
                global_avgpool_core(in, is, slot_ptr(static_cast<int>(i)));
                break;
            case NodeKind::Flatten:
            case NodeKind::Dropout:
                break;  // aliases: same bytes, no work
            case NodeKind::Concat: {
                const Shape4& is2 = net.nodes[static_cast<std::size_t>(nd.inputs[1])].out_shape;
                const std::int8_t* in2 = slot_ptr(nd.inputs[1]);
                std::int8_t* out = slot_ptr(static_cast<int>(i));
                const Shape4& os = nd.out_shape;
                for (int h = 0; h < os.h; ++h) {
                    for (int w = 0; w < os.w; ++w) {
                        std::int8_t* o = out + (static_cast<std::int64_t>(h) * os.w + w) * os.c;
                        const std::int8_t* a = in + (static_cast<std::int64_t>(h) * is.w + w) * is.c;
                        const std::int8_t* b = in2 + (static_cast<std::int64_t>(h) * is2.w + w) * is2.c;
                        std::copy(a, a + is.c, o);
                        std::copy(b, b + is2.c, o + is.c);
                    }
                }
                break;
            }
            case NodeKind::SigmoidHead: {  // float boundary 2: dequantize + sigmoid
                const QuantParams& lq = qm_->edge_qp[static_cast<std::size_t>(nd.inputs[0])];
                const double z = static_cast<double>(lq.scale()) *
                                 (static_cast<int>(in[0]) - lq.zero_point);
                p = 1.0 / (1.0 + std::exp(-z));
                ++boundary_stages_;
                break;
            }
            case NodeKind::Input:
                throw Error(ErrorKind::StateError, "unexpected input node mid-graph");
        }
    }
    return InferResult{p >= 0.5 ? 1 : 0, p};
}

// ---------------------------------------------------------------------------
// MAC accounting and benchmarking

std::vector<LayerMacs> per_layer_macs(const Network& net) {
    std::vector<LayerMacs> out;
    for (const Node& nd : net.nodes) {
        if (nd.param_index < 0) continue;
        const Shape4& is = net.nodes[static_cast<std::size_t>(nd.inputs[0])].out_shape;
        const std::int64_t macs = static_cast<std::int64_t>(nd.out_shape.h) * nd.out_shape.w *
                                  nd.out_shape.c * nd.kernel_h * nd.kernel_w * is.c;
        out.push_back(LayerMacs{nd.name, macs});
    }
    return out;
}

std::int64_t total_macs(const Network& net) {
    std::int64_t total = 0;
    for (const LayerMacs& l : per_layer_macs(net)) total += l.macs;
    return total;
}

BenchReport bench(const QuantizedModel& qm, int trials, double clock_hz, double macs_per_cycle) {
    if (trials < 1) throw Error(ErrorKind::UsageError, "bench: trials must be >= 1");
    BenchReport r;
    r.per_layer = per_layer_macs(qm.net);
    r.total_macs = total_macs(qm.net);
    r.arena_peak = plan_arena(qm, kFramebufferBytes).peak;
    r.clock_hz = clock_hz;
    r.macs_per_cycle = macs_per_cycle;
    r.estimated_fps = clock_hz * macs_per_cycle / static_cast<double>(r.total_macs);

    Int8Engine engine(qm);
    const Shape4 in_shape = qm.net.nodes[0].out_shape;
    TensorF image(in_shape);
    Rng rng(42);
    for (std::int64_t i = 0; i < image.size(); ++i) {
        image[i] = static_cast<float>(rng.uniform01());
    }
    std::vector<double> secs(static_cast<std::size_t>(trials));
    for (int t = 0; t < trials; ++t) {
        const auto start = std::chrono::steady_clock::now();
        (void)engine.infer(image);
        const auto stop = std::chrono::steady_clock::now();
        secs[static_cast<std::size_t>(t)] = std::chrono::duration<double>(stop - start).count();
    }
    std::sort(secs.begin(), secs.end());
    r.host_latency_s = secs[secs.size() / 2];
    return r;
}

std::string bench_report_text(const BenchReport& r) {
    std::ostringstream out;
    out.precision(6);
    for (const LayerMacs& l : r.per_layer) {
        out << "macs." << l.name << ": " << l.macs << "\n";
    }
    out << "total_macs: " << r.total_macs << "\n";
    out << "arena_peak_bytes: " << r.arena_peak << "\n";
    out << "host_latency_seconds: " << r.host_latency_s << "\n";
    out << "clock_hz: " << r.clock_hz << "\n";
    out << "macs_per_cycle: " << r.macs_per_cycle << "\n";
    out << "estimated_device_fps: " << r.estimated_fps
        << " (model-based estimate from clock/MAC throughput, not a measurement)\n";
    return out.str();
}

std::string bench_report_csv(const BenchReport& r) {
    std::ostringstream out;
    out.precision(6);
    out << "layer,macs\n";
    for (const LayerMacs& l : r.per_layer) out << l.name << ',' << l.macs << '\n';
    out << "total," << r.total_macs << '\n';
    out << "arena_peak_bytes," << r.arena_peak << '\n';
    out << "host_latency_seconds," << r.host_latency_s << '\n';
    out << "estimated_device_fps," << r.estimated_fps << '\n';
    return out.str();
}

}  // namespace tinyquant
