#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "tinyquant/int8_engine.hpp"
#include "tinyquant/netgraph.hpp"
#include "tinyquant/quantizer.hpp"
#include "tinyquant/rng.hpp"

using namespace tinyquant;

namespace {

// ---------------------------------------------------------------------------
// Naive reference kernels. Deliberately written differently from the engine:
// element access through Tensor::at, 64-bit accumulation, and rounding via
// llround on an exact double (|acc * mult| < 2^52 for these instance sizes).

std::int32_t ref_requant(std::int64_t acc, const RequantParams& rp) {
    const std::int64_t prod = acc * static_cast<std::int64_t>(rp.multiplier_q31);
    return static_cast<std::int32_t>(
        std::llround(std::ldexp(static_cast<double>(prod), -(31 + rp.right_shift))));
}

TensorI8 ref_conv(const TensorI8& in, int zp_in, const TensorI8& w,
                  const std::vector<std::int32_t>& bias, const std::vector<RequantParams>& rq,
                  int zp_out, bool relu, const ConvGeom& g) {
    const Shape4 is = in.shape();
    const Shape4 ws = w.shape();  // {kh, kw, cin, cout}
    const int oh = (is.h + 2 * g.pad_top - ws.n) / g.stride + 1;
    const int ow = (is.w + 2 * g.pad_left - ws.h) / g.stride + 1;
    TensorI8 out(Shape4{1, oh, ow, ws.c});
    const int lo = relu ? zp_out : -128;
    for (int co = 0; co < ws.c; ++co) {
        for (int ho = 0; ho < oh; ++ho) {
            for (int wo = 0; wo < ow; ++wo) {
                std::int64_t acc = bias[static_cast<std::size_t>(co)];
                for (int kh = 0; kh < ws.n; ++kh) {
                    for (int kw = 0; kw < ws.h; ++kw) {
                        const int hi = ho * g.stride - g.pad_top + kh;
                        const int wi = wo * g.stride - g.pad_left + kw;
                        if (hi < 0 || hi >= is.h || wi < 0 || wi >= is.w) continue;
                        for (int ci = 0; ci < is.c; ++ci) {
                            acc += static_cast<std::int64_t>(in.at(0, hi, wi, ci) - zp_in) *
                                   w.at(kh, kw, ci, co);
                        }
                    }
                }
                const int scaled = ref_requant(acc, rq[static_cast<std::size_t>(co)]) + zp_out;
                out.at(0, ho, wo, co) = static_cast<std::int8_t>(std::clamp(scaled, lo, 127));
            }
        }
    }
    return out;
}

TensorI8 ref_maxpool(const TensorI8& in, int pool, int stride) {
    const Shape4 is = in.shape();
    TensorI8 out(Shape4{1, (is.h - pool) / stride + 1, (is.w - pool) / stride + 1, is.c});
    for (int ho = 0; ho < out.shape().h; ++ho) {
        for (int wo = 0; wo < out.shape().w; ++wo) {
            for (int c = 0; c < is.c; ++c) {
                int best = -129;
                for (int kh = 0; kh < pool; ++kh) {
                    for (int kw = 0; kw < pool; ++kw) {
                        best = std::max(best,
                                        static_cast<int>(in.at(0, ho * stride + kh,
                                                               wo * stride + kw, c)));
                    }
                }
                out.at(0, ho, wo, c) = static_cast<std::int8_t>(best);
            }
        }
    }
    return out;
}

TensorI8 ref_gap(const TensorI8& in) {
    const Shape4 is = in.shape();
    TensorI8 out(Shape4{1, 1, 1, is.c});
    for (int c = 0; c < is.c; ++c) {
        std::int64_t sum = 0;
        for (int h = 0; h < is.h; ++h) {
            for (int w = 0; w < is.w; ++w) sum += in.at(0, h, w, c);
        }
        // rounded mean, half away from zero; the quotient is far enough from
        // any .5 boundary that the double division cannot misround
        const double mean = static_cast<double>(sum) / (static_cast<double>(is.h) * is.w);
        out.at(0, 0, 0, c) = static_cast<std::int8_t>(
            std::clamp<long long>(std::llround(mean), -128, 127));
    }
    return out;
}

TensorI8 random_i8(const Shape4& s, Rng& rng) {
    TensorI8 t(s);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<std::int8_t>(static_cast<int>(rng.below(256)) - 128);
    }
    return t;
}

RequantParams random_requant(Rng& rng) {
    const double m = std::exp(rng.uniform(std::log(1e-3), std::log(1.5)));
    return derive_requant(m, 1.0, 1.0);
}

int random_zp(Rng& rng) { return static_cast<int>(rng.below(256)) - 128; }

NetworkConfig trace_cfg() {
    // the two-buffer liveness example: a 10-channel image and a 6-channel
    // 1x1 conv over it, then a scalar head
    NetworkConfig cfg;
    cfg.name = "trace";
    cfg.input_h = 32;
    cfg.input_w = 32;
    cfg.input_c = 10;
    cfg.layers = {Conv2DSpec{6, 1, 1, 1, Padding::Valid, Activation::Relu}, FlattenSpec{},
                  DenseSpec{1, Activation::Sigmoid}};
    return cfg;
}

QuantizedModel quantized_fixture(const NetworkConfig& cfg, std::uint64_t seed) {
    const Network net = lower(cfg);
    const ModelParams params = init_params<float>(net, seed);
    Rng rng(mix_seed(seed, 17));
    std::vector<TensorF> batch;
    for (int i = 0; i < 8; ++i) {
        TensorF t(net.nodes.front().out_shape);
        for (std::int64_t j = 0; j < t.size(); ++j) t[j] = static_cast<float>(rng.uniform01());
        batch.push_back(std::move(t));
    }
    return quantize_model(net, params, calibrate(net, params, batch));
}

}  // namespace

TEST_CASE("conv kernel is bit-exact against the naive reference") {
    Rng rng(101);
    for (int inst = 0; inst < 80; ++inst) {
        const int kh = 1 + static_cast<int>(rng.below(3));
        const int kw = 1 + static_cast<int>(rng.below(3));
        const int cin = 1 + static_cast<int>(rng.below(4));
        const int cout = 1 + static_cast<int>(rng.below(5));
        const int h = kh + static_cast<int>(rng.below(6));
        const int w = kw + static_cast<int>(rng.below(6));
        const ConvGeom g{kh, kw, 1 + static_cast<int>(rng.below(2)),
                         static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))};
        const TensorI8 in = random_i8(Shape4{1, h, w, cin}, rng);
        const TensorI8 wt = random_i8(Shape4{kh, kw, cin, cout}, rng);
        std::vector<std::int32_t> bias;
        std::vector<RequantParams> rq;
        for (int c = 0; c < cout; ++c) {
            bias.push_back(static_cast<std::int32_t>(rng.below(10001)) - 5000);
            rq.push_back(random_requant(rng));
        }
        const int zp_in = random_zp(rng), zp_out = random_zp(rng);
        const bool relu = rng.below(2) == 1;
        const TensorI8 got = conv2d_i8(in, zp_in, wt, bias, rq, zp_out, relu, g);
        const TensorI8 want = ref_conv(in, zp_in, wt, bias, rq, zp_out, relu, g);
        REQUIRE(got.shape() == want.shape());
        CHECK(got.values() == want.values());
    }
}

TEST_CASE("dense kernel is bit-exact against the naive reference") {
    Rng rng(202);
    for (int inst = 0; inst < 40; ++inst) {
        const int k = 1 + static_cast<int>(rng.below(32));
        const int units = 1 + static_cast<int>(rng.below(6));
        const TensorI8 in = random_i8(Shape4{1, 1, 1, k}, rng);
        const TensorI8 wt = random_i8(Shape4{1, 1, k, units}, rng);
        std::vector<std::int32_t> bias;
        std::vector<RequantParams> rq;
        for (int c = 0; c < units; ++c) {
            bias.push_back(static_cast<std::int32_t>(rng.below(10001)) - 5000);
            rq.push_back(random_requant(rng));
        }
        const int zp_in = random_zp(rng), zp_out = random_zp(rng);
        const bool relu = rng.below(2) == 1;
        const TensorI8 got = dense_i8(in, zp_in, wt, bias, rq, zp_out, relu);
        const TensorI8 want = ref_conv(in, zp_in, wt, bias, rq, zp_out, relu, ConvGeom{1, 1, 1, 0, 0});
        CHECK(got.values() == want.values());
    }
}

TEST_CASE("maxpool kernel is bit-exact against the naive reference") {
    Rng rng(303);
    for (int inst = 0; inst < 40; ++inst) {
        const int pool = 1 + static_cast<int>(rng.below(3));
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int h = pool + static_cast<int>(rng.below(4));
        const int w = pool + static_cast<int>(rng.below(4));
        const int c = 1 + static_cast<int>(rng.below(4));
        const TensorI8 in = random_i8(Shape4{1, h, w, c}, rng);
        CHECK(maxpool_i8(in, pool, stride).values() == ref_maxpool(in, pool, stride).values());
    }
}

TEST_CASE("global average pool is bit-exact and rounds half away from zero") {
    Rng rng(404);
    for (int inst = 0; inst < 40; ++inst) {
        const int h = 1 + static_cast<int>(rng.below(6));
        const int w = 1 + static_cast<int>(rng.below(6));
        const int c = 1 + static_cast<int>(rng.below(4));
        const TensorI8 in = random_i8(Shape4{1, h, w, c}, rng);
        CHECK(global_avgpool_i8(in).values() == ref_gap(in).values());
    }

    // pinned half-boundary cases: mean 1.5 -> 2, -1.5 -> -2, 0.5 -> 1, -0.5 -> -1
    CHECK(global_avgpool_i8(TensorI8(Shape4{1, 1, 2, 1}, {1, 2}))[0] == 2);
    CHECK(global_avgpool_i8(TensorI8(Shape4{1, 1, 2, 1}, {-1, -2}))[0] == -2);
    CHECK(global_avgpool_i8(TensorI8(Shape4{1, 1, 2, 1}, {0, 1}))[0] == 1);
    CHECK(global_avgpool_i8(TensorI8(Shape4{1, 1, 2, 1}, {0, -1}))[0] == -1);
    // mean 1.75 -> 2
    CHECK(global_avgpool_i8(TensorI8(Shape4{1, 2, 2, 1}, {1, 2, 2, 2}))[0] == 2);
}

TEST_CASE("kernel guards: volume bound, empty output, pool window") {
    const TensorI8 in(Shape4{1, 9, 9, 1024});
    const TensorI8 wt(Shape4{9, 9, 1024, 1});  // 9*9*1024 = 82944 > 65536
    const std::vector<std::int32_t> bias{0};
    const std::vector<RequantParams> rq{RequantParams{}};
    CHECK_THROWS_AS(conv2d_i8(in, 0, wt, bias, rq, 0, false, ConvGeom{9, 9, 1, 0, 0}), Error);
    try {
        conv2d_i8(in, 0, wt, bias, rq, 0, false, ConvGeom{9, 9, 1, 0, 0});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnsupportedShape);
    }

    const TensorI8 tiny(Shape4{1, 2, 2, 1});
    CHECK_THROWS_AS(maxpool_i8(tiny, 3, 1), Error);
    const TensorI8 wrong_cin(Shape4{1, 1, 3, 1});
    CHECK_THROWS_AS(conv2d_i8(tiny, 0, wrong_cin, bias, rq, 0, false, ConvGeom{}), Error);
}

TEST_CASE("arena hand trace: image and conv output overlap-free at 16384 bytes") {
    const QuantizedModel qm = quantized_fixture(trace_cfg(), 5);
    const Arena arena = plan_arena(qm);

    // nodes: 0 input (10240 B), 1 conv (6144 B), 2 flatten (alias), 3 dense, 4 head
    REQUIRE(arena.slots.size() == 3);
    CHECK(arena.slots[0].node == 0);
    CHECK(arena.slots[0].bytes == 10240);
    CHECK(arena.slots[0].offset == 0);
    CHECK(arena.slots[1].node == 1);
    CHECK(arena.slots[1].bytes == 6144);
    CHECK(arena.slots[1].offset == 10240);  // first fit after the live image
    CHECK(arena.slots[2].bytes == 1);
    CHECK(arena.slots[2].offset == 0);  // image is dead by then, bytes reused
    CHECK(arena.peak == 16384);

    // flatten aliases the conv buffer
    CHECK(arena.slot_of_node[2] == arena.slot_of_node[1]);
    // the alias extends the conv buffer's lifetime to the dense consumer
    CHECK(arena.slots[1].death == 3);
}

TEST_CASE("arena overflow names the offending layer") {
    const QuantizedModel qm = quantized_fixture(trace_cfg(), 5);
    CHECK(plan_arena(qm, 16384).peak == 16384);  // exactly at capacity is fine
    try {
        plan_arena(qm, 12000);  // image fits, conv does not
        FAIL("expected budget error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::BudgetExceeded);
        CHECK(std::string(e.what()).find("l0_conv") != std::string::npos);
    }
    CHECK_THROWS_AS(Int8Engine(qm, 12000), Error);
    CHECK_THROWS_AS(plan_arena(qm, 0), Error);
}

TEST_CASE("dropout shares its producer's buffer") {
    NetworkConfig cfg = trace_cfg();
    cfg.layers = {Conv2DSpec{6, 1, 1, 1, Padding::Valid, Activation::Relu}, DropoutSpec{0.5f},
                  FlattenSpec{}, DenseSpec{1, Activation::Sigmoid}};
    const QuantizedModel qm = quantized_fixture(cfg, 9);
    const Arena arena = plan_arena(qm);
    // nodes: 0 input, 1 conv, 2 dropout, 3 flatten, 4 dense, 5 head
    CHECK(arena.slot_of_node[2] == arena.slot_of_node[1]);
    CHECK(arena.slot_of_node[3] == arena.slot_of_node[1]);
    CHECK(arena.peak == 16384);  // aliases add no bytes
}

TEST_CASE("engine reproduces the per-node integer simulation exactly") {
    NetworkConfig cfg;
    cfg.name = "mixed";
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.input_c = 3;
    cfg.layers = {Conv2DSpec{4, 3, 3, 1, Padding::Same, Activation::Relu}, MaxPoolSpec{2, 2},
                  Conv2DSpec{3, 2, 2, 1, Padding::Valid, Activation::None}, FlattenSpec{},
                  DenseSpec{1, Activation::Sigmoid}};
    const QuantizedModel qm = quantized_fixture(cfg, 31);
    Int8Engine engine(qm);

    Rng rng(777);
    int agree = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        TensorF x(qm.net.nodes.front().out_shape);
        for (std::int64_t j = 0; j < x.size(); ++j) x[j] = static_cast<float>(rng.uniform01());
        const InferResult got = engine.infer(x);
        const double want_p = fake_quant_forward(qm, x);
        CHECK(got.p == doctest::Approx(want_p).epsilon(1e-12));
        agree += (got.label == (want_p >= 0.5 ? 1 : 0)) ? 1 : 0;
    }
    CHECK(agree == n);
    CHECK(engine.boundary_float_stages() == 2);
}

TEST_CASE("engine handles the concat branch of a fire module") {
    NetworkConfig cfg;
    cfg.name = "fire";
    cfg.input_h = 6;
    cfg.input_w = 6;
    cfg.input_c = 3;
    cfg.layers = {FireSpec{2, 3, 3}, GlobalAvgPoolSpec{}, DenseSpec{1, Activation::Sigmoid}};
    const QuantizedModel qm = quantized_fixture(cfg, 77);
    Int8Engine engine(qm);
    Rng rng(888);
    for (int i = 0; i < 100; ++i) {
        TensorF x(qm.net.nodes.front().out_shape);
        for (std::int64_t j = 0; j < x.size(); ++j) x[j] = static_cast<float>(rng.uniform01());
        CHECK(engine.infer(x).p == doctest::Approx(fake_quant_forward(qm, x)).epsilon(1e-12));
    }

    // repeat run is deterministic
    TensorF x(qm.net.nodes.front().out_shape, std::vector<float>(
                  static_cast<std::size_t>(qm.net.nodes.front().out_shape.numel()), 0.25f));
    const InferResult a = engine.infer(x);
    const InferResult b = engine.infer(x);
    CHECK(a.p == b.p);
    CHECK(a.label == b.label);
}

TEST_CASE("engine rejects mis-shaped images") {
    const QuantizedModel qm = quantized_fixture(trace_cfg(), 5);
    Int8Engine engine(qm);
    CHECK_THROWS_AS(engine.infer(TensorF(Shape4{1, 8, 8, 3})), Error);
}

TEST_CASE("mac accounting matches closed-form counts") {
    // 3x3x3 -> 16 channels over a 32x32 grid with same padding:
    // 32*32*16*3*3*3 = 442368 multiply-accumulates
    const Network net = lower(zoo("tinymask-ref"));
    const auto layers = per_layer_macs(net);
    REQUIRE(!layers.empty());
    CHECK(layers[0].name == "l0_conv");
    CHECK(layers[0].macs == 442368);

    std::int64_t sum = 0;
    for (const LayerMacs& l : layers) sum += l.macs;
    CHECK(total_macs(net) == sum);

    // dense layer macs = fan_in * units
    const Network trace = lower(trace_cfg());
    const auto tl = per_layer_macs(trace);
    REQUIRE(tl.size() == 2);
    CHECK(tl[0].macs == 32 * 32 * 6 * 1 * 1 * 10);
    CHECK(tl[1].macs == 6144);
}

TEST_CASE("bench report carries macs, arena peak, and a labeled fps estimate") {
    const QuantizedModel qm = quantized_fixture(trace_cfg(), 5);
    const BenchReport r = bench(qm, 3, 480e6, 1.0);
    CHECK(r.total_macs == total_macs(qm.net));
    CHECK(r.arena_peak == 16384);
    CHECK(r.host_latency_s >= 0.0);
    CHECK(r.estimated_fps ==
          doctest::Approx(480e6 * 1.0 / static_cast<double>(r.total_macs)));

    const std::string text = bench_report_text(r);
    CHECK(text.find("total_macs: ") != std::string::npos);
    CHECK(text.find("estimate") != std::string::npos);  // fps is labeled, not measured
    const std::string csv = bench_report_csv(r);
    CHECK(csv.find("layer,macs") != std::string::npos);
    CHECK(csv.find("total,") != std::string::npos);

    CHECK_THROWS_AS(bench(qm, 0, 480e6, 1.0), Error);
}
