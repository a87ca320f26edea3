// Acceptance harness: one self-contained check per release criterion.
// Prints exactly one [PASS]/[FAIL] line per criterion and exits with the
// number of failed criteria, so CTest reports red if anything regressed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tinyquant/datakit.hpp"
#include "tinyquant/errors.hpp"
#include "tinyquant/evalkit.hpp"
#include "tinyquant/int8_engine.hpp"
#include "tinyquant/model_io.hpp"
#include "tinyquant/netgraph.hpp"
#include "tinyquant/quantizer.hpp"
#include "tinyquant/rng.hpp"
#include "tinyquant/tensor.hpp"
#include "tinyquant/trainer.hpp"

using namespace tinyquant;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::string fmt_sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences (float64,
// h = 1e-3) on small probe networks covering every layer type, under 60 s.

NetworkConfig probe_net_conv_pool_dense() {
    NetworkConfig cfg;
    cfg.name = "probe-a";
    cfg.input_h = 6;
    cfg.input_w = 6;
    cfg.input_c = 3;
    cfg.layers = {Conv2DSpec{4, 3, 3, 1, Padding::Same, Activation::Relu},
                  MaxPoolSpec{2, 2},
                  Conv2DSpec{3, 2, 2, 1, Padding::Valid, Activation::None},
                  FlattenSpec{},
                  DenseSpec{5, Activation::Relu},
                  DropoutSpec{0.3f},
                  DenseSpec{1, Activation::Sigmoid}};
    return cfg;
}

NetworkConfig probe_net_fire_gap() {
    NetworkConfig cfg;
    cfg.name = "probe-b";
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.input_c = 1;
    cfg.layers = {Conv2DSpec{4, 1, 1, 1, Padding::Same, Activation::Relu},
                  FireSpec{2, 3, 3},
                  GlobalAvgPoolSpec{},
                  DenseSpec{1, Activation::Sigmoid}};
    return cfg;
}

NetworkConfig probe_net_strided() {
    NetworkConfig cfg;
    cfg.name = "probe-c";
    cfg.input_h = 5;
    cfg.input_w = 5;
    cfg.input_c = 3;
    cfg.layers = {Conv2DSpec{3, 3, 3, 2, Padding::Same, Activation::Relu}, FlattenSpec{},
                  DenseSpec{1, Activation::Sigmoid}};
    return cfg;
}

double bce_ref(int y, double p) {
    const double eps = 1e-12;
    const double ph = std::clamp(p, eps, 1.0 - eps);
    return y == 1 ? -std::log(ph) : -std::log(1.0 - ph);
}

// Biases are nudged off zero so relu pre-activations stay clear of their
// kinks; a central difference is only a valid derivative estimate on a
// smooth neighborhood.
double fd_max_rel_error(const NetworkConfig& cfg, int label, std::uint64_t seed,
                        std::int64_t* probes) {
    const Network net = lower(cfg);
    ModelParamsT<double> params = init_params<double>(net, seed);
    {
        Rng rng(seed + 7);
        for (auto& layer : params) {
            for (double& b : layer.bias) b = rng.uniform(0.05, 0.3);
        }
    }
    Tensor<double> input(Shape4{1, cfg.input_h, cfg.input_w, cfg.input_c});
    {
        Rng rng(seed + 17);
        for (std::int64_t i = 0; i < input.size(); ++i) input[i] = rng.uniform(0.1, 1.0);
    }
    const std::uint64_t drop_seed = seed + 29;

    const auto rec = forward<double>(net, params, input, RunMode::Train, drop_seed);
    const double dldp = label == 1 ? -1.0 / rec.output : 1.0 / (1.0 - rec.output);
    const ModelParamsT<double> grads = backward<double>(net, params, rec, dldp);

    const double h = 1e-3;
    double worst = 0.0;
    auto probe = [&](double* slot, double analytic) {
        const double keep = *slot;
        *slot = keep + h;
        const double up =
            bce_ref(label, forward<double>(net, params, input, RunMode::Train, drop_seed).output);
        *slot = keep - h;
        const double dn =
            bce_ref(label, forward<double>(net, params, input, RunMode::Train, drop_seed).output);
        *slot = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double rel =
            std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-6});
        worst = std::max(worst, rel);
        ++*probes;
    };
    for (std::size_t li = 0; li < params.size(); ++li) {
        for (std::int64_t i = 0; i < params[li].weights.size(); ++i) {
            probe(&params[li].weights[i], grads[li].weights[i]);
        }
        for (std::size_t i = 0; i < params[li].bias.size(); ++i) {
            probe(&params[li].bias[i], grads[li].bias[i]);
        }
    }
    return worst;
}

Outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    std::int64_t probes = 0;
    double worst = 0.0;
    const NetworkConfig nets[] = {probe_net_conv_pool_dense(), probe_net_fire_gap(),
                                  probe_net_strided()};
    std::uint64_t seed = 100;
    for (const NetworkConfig& cfg : nets) {
        for (int label : {1, 0}) {
            worst = std::max(worst, fd_max_rel_error(cfg, label, seed, &probes));
            seed += 100;
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = worst < 1e-3 && secs < 60.0;
    return {ok, "max relative error " + fmt_sci(worst) + " over " + std::to_string(probes) +
                    " parameter probes (conv/pool/gap/dense/dropout/fire/sigmoid) in " +
                    fmt(secs, 1) + " s; limits 1e-3, 60 s"};
}

// ---------------------------------------------------------------------------
// Shared micro network, quantized: used by the roundtrip and kernel criteria.

NetworkConfig micro_mixed_cfg() {
    NetworkConfig cfg;
    cfg.name = "micro-mixed";
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.input_c = 3;
    cfg.layers = {Conv2DSpec{4, 3, 3, 1, Padding::Same, Activation::Relu},
                  MaxPoolSpec{2, 2},
                  Conv2DSpec{3, 1, 1, 1, Padding::Valid, Activation::None},
                  FlattenSpec{},
                  DenseSpec{1, Activation::Sigmoid}};
    return cfg;
}

TensorF random_unit_image(const NetworkConfig& cfg, Rng& rng) {
    TensorF t(Shape4{1, cfg.input_h, cfg.input_w, cfg.input_c});
    for (std::int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    return t;
}

QuantizedModel quantize_fixture(const NetworkConfig& cfg, std::uint64_t seed, int calib_images) {
    auto [net, params] = build_network(cfg, seed);
    Rng rng(seed + 1);
    std::vector<TensorF> calib;
    calib.reserve(static_cast<std::size_t>(calib_images));
    for (int i = 0; i < calib_images; ++i) calib.push_back(random_unit_image(cfg, rng));
    const CalibrationStats stats = calibrate(net, params, calib);
    return quantize_model(net, params, stats);
}

// ---------------------------------------------------------------------------
// Criterion 2: |dequantize(quantize(r)) - r| <= scale/2 for in-range reals;
// zero is exactly representable on every calibrated edge.

Outcome criterion_roundtrip() {
    Rng rng(42);
    double worst_ratio = 0.0;
    bool in_bound = true;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const float scale = static_cast<float>(std::exp(rng.uniform(std::log(1e-4), 0.0)));
        const int zp = static_cast<int>(rng.below(256)) - 128;
        const double u = rng.uniform(-128.0, 127.0);  // real position on the int8 lattice
        const double x = static_cast<double>(scale) * (u - zp);
        const std::int8_t q = quantize_value(x, scale, zp);
        const double back = static_cast<double>(scale) * (q - zp);
        const double err = std::abs(back - x);
        const double bound = static_cast<double>(scale) * 0.5 * (1.0 + 1e-9) + 1e-15;
        in_bound = in_bound && err <= bound;
        worst_ratio = std::max(worst_ratio, err / static_cast<double>(scale));
    }

    const QuantizedModel qm = quantize_fixture(micro_mixed_cfg(), 11, 8);
    int zero_exact = 0;
    for (const QuantParams& qp : qm.edge_qp) {
        const std::int8_t q0 = quantize_value(0.0, qp.scale(), qp.zero_point);
        const double back = static_cast<double>(qp.scale()) * (q0 - qp.zero_point);
        if (q0 == qp.zero_point && back == 0.0) ++zero_exact;
    }
    const bool zeros_ok = zero_exact == static_cast<int>(qm.edge_qp.size());
    const bool ok = in_bound && zeros_ok;
    return {ok, std::to_string(n) + " random roundtrips within scale/2 (max |err|/scale " +
                    fmt(worst_ratio, 4) + "); zero exactly representable on " +
                    std::to_string(zero_exact) + "/" + std::to_string(qm.edge_qp.size()) +
                    " calibrated edges"};
}

// ---------------------------------------------------------------------------
// Criterion 3: fixed-point decomposition of the requant ratio.

Outcome criterion_requant_decomposition() {
    Rng rng(7);
    double worst_rel = 0.0;
    bool ok = true;
    const double rel_limit = std::ldexp(1.0, -24);
    for (int i = 0; i < 1000; ++i) {
        const double m =
            std::min(std::exp(rng.uniform(std::log(1e-6), std::log(8.0))), 7.999999);
        const RequantParams rp = derive_requant(m, 1.0, 1.0);
        ok = ok && rp.multiplier_q31 >= (std::int32_t{1} << 30);
        const double recon =
            static_cast<double>(rp.multiplier_q31) * std::ldexp(1.0, -(31 + rp.right_shift));
        const double rel = std::abs(recon - m) / m;
        worst_rel = std::max(worst_rel, rel);
        ok = ok && rel < rel_limit;
    }
    const RequantParams half = derive_requant(0.5, 1.0, 1.0);
    const RequantParams unit = derive_requant(1.0, 1.0, 1.0);
    const bool half_ok = half.multiplier_q31 == 1073741824 && half.right_shift == 0;
    const bool unit_ok = unit.multiplier_q31 == 1073741824 && unit.right_shift == -1;
    ok = ok && half_ok && unit_ok;
    return {ok, "1000 ratios in (1e-6, 8) reconstructed within 2^-24 (max rel " +
                    fmt_sci(worst_rel) + "); M=0.5 -> (1073741824, 0) " +
                    (half_ok ? "ok" : "MISMATCH") + ", M=1.0 -> (1073741824, -1) " +
                    (unit_ok ? "ok" : "MISMATCH")};
}

// ---------------------------------------------------------------------------
// Criterion 4: integer kernels bit-exact against naive references; engine
// class decisions agree with the simulated-quantization forward pass.

std::int32_t ref_requant(std::int64_t acc, const RequantParams& rp) {
    // |acc * multiplier| < 2^52, so the double product is exact and llround
    // implements round-half-away-from-zero directly.
    const double scaled =
        std::ldexp(static_cast<double>(acc * rp.multiplier_q31), -(31 + rp.right_shift));
    return static_cast<std::int32_t>(std::llround(scaled));
}

std::int8_t ref_clamp_out(std::int64_t v, bool relu, int zp_out) {
    const std::int64_t lo = relu ? zp_out : -128;
    return static_cast<std::int8_t>(std::clamp(v, lo, std::int64_t{127}));
}

TensorI8 ref_conv(const TensorI8& in, int zp_in, const TensorI8& w,
                  const std::vector<std::int32_t>& bias, const std::vector<RequantParams>& rq,
                  int zp_out, bool relu, const ConvGeom& g) {
    const Shape4 is = in.shape();
    const Shape4 ws = w.shape();  // {kh, kw, cin, cout}
    const int oh = (is.h + 2 * g.pad_top - ws.n) / g.stride + 1;
    const int ow = (is.w + 2 * g.pad_left - ws.h) / g.stride + 1;
    TensorI8 out(Shape4{1, oh, ow, ws.c});
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int oc = 0; oc < ws.c; ++oc) {
                std::int64_t acc = bias[static_cast<std::size_t>(oc)];
                for (int ky = 0; ky < ws.n; ++ky) {
                    for (int kx = 0; kx < ws.h; ++kx) {
                        const int iy = oy * g.stride + ky - g.pad_top;
                        const int ix = ox * g.stride + kx - g.pad_left;
                        if (iy < 0 || iy >= is.h || ix < 0 || ix >= is.w) continue;
                        for (int ic = 0; ic < is.c; ++ic) {
                            acc += (static_cast<std::int64_t>(in.at(0, iy, ix, ic)) - zp_in) *
                                   w.at(ky, kx, ic, oc);
                        }
                    }
                }
                const std::int64_t v =
                    ref_requant(acc, rq[static_cast<std::size_t>(oc)]) + zp_out;
                out.at(0, oy, ox, oc) = ref_clamp_out(v, relu, zp_out);
            }
        }
    }
    return out;
}

TensorI8 ref_maxpool(const TensorI8& in, int pool, int stride) {
    const Shape4 is = in.shape();
    const int oh = (is.h - pool) / stride + 1;
    const int ow = (is.w - pool) / stride + 1;
    TensorI8 out(Shape4{1, oh, ow, is.c});
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int c = 0; c < is.c; ++c) {
                std::int8_t best = -128;
                for (int ky = 0; ky < pool; ++ky) {
                    for (int kx = 0; kx < pool; ++kx) {
                        best = std::max(best, in.at(0, oy * stride + ky, ox * stride + kx, c));
                    }
                }
                out.at(0, oy, ox, c) = best;
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
        for (int y = 0; y < is.h; ++y) {
            for (int x = 0; x < is.w; ++x) sum += in.at(0, y, x, c);
        }
        const double mean = static_cast<double>(sum) / (static_cast<double>(is.h) * is.w);
        out.at(0, 0, 0, c) = static_cast<std::int8_t>(std::llround(mean));
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

Outcome criterion_kernel_equivalence() {
    Rng rng(99);
    int exact = 0, total = 0;

    for (int i = 0; i < 80; ++i) {  // conv
        const int cin = 1 + static_cast<int>(rng.below(4));
        const int cout = 1 + static_cast<int>(rng.below(5));
        const int kh = 1 + static_cast<int>(rng.below(3));
        const int kw = 1 + static_cast<int>(rng.below(3));
        ConvGeom g;
        g.kernel_h = kh;
        g.kernel_w = kw;
        g.stride = 1 + static_cast<int>(rng.below(2));
        g.pad_top = static_cast<int>(rng.below(2));
        g.pad_left = static_cast<int>(rng.below(2));
        const int h = kh + static_cast<int>(rng.below(5));
        const int w = kw + static_cast<int>(rng.below(5));
        const TensorI8 in = random_i8(Shape4{1, h, w, cin}, rng);
        const TensorI8 wt = random_i8(Shape4{kh, kw, cin, cout}, rng);
        std::vector<std::int32_t> bias;
        std::vector<RequantParams> rq;
        for (int c = 0; c < cout; ++c) {
            bias.push_back(static_cast<std::int32_t>(rng.below(10001)) - 5000);
            rq.push_back(random_requant(rng));
        }
        const int zp_in = static_cast<int>(rng.below(256)) - 128;
        const int zp_out = static_cast<int>(rng.below(256)) - 128;
        const bool relu = rng.below(2) == 1;
        const TensorI8 got = conv2d_i8(in, zp_in, wt, bias, rq, zp_out, relu, g);
        const TensorI8 want = ref_conv(in, zp_in, wt, bias, rq, zp_out, relu, g);
        exact += got.shape() == want.shape() &&
                 std::equal(&got[0], &got[0] + got.size(), &want[0]);
        ++total;
    }

    for (int i = 0; i < 40; ++i) {  // dense as 1x1xK
        const int k = 1 + static_cast<int>(rng.below(64));
        const int units = 1 + static_cast<int>(rng.below(8));
        const TensorI8 in = random_i8(Shape4{1, 1, 1, k}, rng);
        const TensorI8 wt = random_i8(Shape4{1, 1, k, units}, rng);
        std::vector<std::int32_t> bias;
        std::vector<RequantParams> rq;
        for (int c = 0; c < units; ++c) {
            bias.push_back(static_cast<std::int32_t>(rng.below(10001)) - 5000);
            rq.push_back(random_requant(rng));
        }
        const int zp_in = static_cast<int>(rng.below(256)) - 128;
        const int zp_out = static_cast<int>(rng.below(256)) - 128;
        const bool relu = rng.below(2) == 1;
        const TensorI8 got = dense_i8(in, zp_in, wt, bias, rq, zp_out, relu);
        const TensorI8 want = ref_conv(in, zp_in, wt, bias, rq, zp_out, relu, ConvGeom{});
        exact += got.shape() == want.shape() &&
                 std::equal(&got[0], &got[0] + got.size(), &want[0]);
        ++total;
    }

    for (int i = 0; i < 40; ++i) {  // maxpool
        const int pool = 1 + static_cast<int>(rng.below(3));
        const int stride = 1 + static_cast<int>(rng.below(3));
        const int h = pool + static_cast<int>(rng.below(6));
        const int w = pool + static_cast<int>(rng.below(6));
        const int c = 1 + static_cast<int>(rng.below(4));
        const TensorI8 in = random_i8(Shape4{1, h, w, c}, rng);
        const TensorI8 got = maxpool_i8(in, pool, stride);
        const TensorI8 want = ref_maxpool(in, pool, stride);
        exact += got.shape() == want.shape() &&
                 std::equal(&got[0], &got[0] + got.size(), &want[0]);
        ++total;
    }

    for (int i = 0; i < 40; ++i) {  // global average pool
        const int h = 1 + static_cast<int>(rng.below(8));
        const int w = 1 + static_cast<int>(rng.below(8));
        const int c = 1 + static_cast<int>(rng.below(6));
        const TensorI8 in = random_i8(Shape4{1, h, w, c}, rng);
        const TensorI8 got = global_avgpool_i8(in);
        const TensorI8 want = ref_gap(in);
        exact += got.shape() == want.shape() &&
                 std::equal(&got[0], &got[0] + got.size(), &want[0]);
        ++total;
    }

    const NetworkConfig cfg = micro_mixed_cfg();
    const QuantizedModel qm = quantize_fixture(cfg, 23, 8);
    Int8Engine engine(qm);
    Rng irng(77);
    int agree = 0;
    const int inputs = 1000;
    for (int i = 0; i < inputs; ++i) {
        const TensorF img = random_unit_image(cfg, irng);
        const InferResult r = engine.infer(img);
        const int sim_label = fake_quant_forward(qm, img) >= 0.5 ? 1 : 0;
        agree += r.label == sim_label;
    }

    const bool ok = exact == total && agree == inputs;
    return {ok, std::to_string(exact) + "/" + std::to_string(total) +
                    " kernel instances bit-exact vs naive references; engine class decision "
                    "agrees with simulated quantization on " +
                    std::to_string(agree) + "/" + std::to_string(inputs) + " inputs"};
}

// ---------------------------------------------------------------------------
// Criterion 5 (+ artifacts shared with 6 and 9): train on the synthetic
// dataset, quantize with 100 representative samples, compare on held-out data.

struct SharedArtifacts {
    bool ready = false;
    NetworkConfig cfg;
    Network net;
    ModelParams params;
    QuantizedModel qm;
};
SharedArtifacts g_art;

void ensure_artifacts() {
    if (g_art.ready) return;
    // Fallback when the end-to-end criterion could not run: quantize a
    // freshly initialized reference model (container sizes and arena
    // geometry depend only on the architecture).
    g_art.cfg = zoo("tinymask-ref");
    auto [net, params] = build_network(g_art.cfg, 7);
    g_art.net = net;
    g_art.params = params;
    Rng rng(8);
    std::vector<TensorF> calib;
    for (int i = 0; i < 4; ++i) calib.push_back(random_unit_image(g_art.cfg, rng));
    g_art.qm = quantize_model(g_art.net, g_art.params, calibrate(g_art.net, g_art.params, calib));
    g_art.ready = true;
}

Outcome criterion_end_to_end() {
    const NetworkConfig cfg = zoo("tinymask-ref");
    const DatasetManifest ds = synth_dataset(2000, 1);
    const auto [train_m, val_m] = split(ds, 0.1, 1);
    const std::vector<Sample> train_samples = to_samples(train_m);
    const std::vector<Sample> val_samples = to_samples(val_m);

    TrainConfig tc;
    tc.max_epochs = 5;  // well inside the 30-epoch allowance
    tc.batch_size = 32;
    tc.seed = 1;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult tr = train(tc, cfg, train_samples, val_samples);
    const double train_secs = seconds_since(t0);

    const Network net = lower(cfg);
    const std::vector<TensorF> reps = representative_sample(train_samples, 100, 1);
    const CalibrationStats stats = calibrate(net, tr.best_params, reps);
    const QuantizedModel qm = quantize_model(net, tr.best_params, stats);

    g_art.cfg = cfg;
    g_art.net = net;
    g_art.params = tr.best_params;
    g_art.qm = qm;
    g_art.ready = true;

    const std::vector<Sample> held_out = to_samples(synth_dataset(500, 2));
    Int8Engine engine(qm);
    EvalRun frun, qrun;
    for (const Sample& s : held_out) {
        const double p = forward<float>(net, tr.best_params, s.image, RunMode::Infer).output;
        frun.preds.push_back(p >= 0.5 ? 1 : 0);
        frun.truth.push_back(s.label);
        qrun.preds.push_back(engine.infer(s.image).label);
        qrun.truth.push_back(s.label);
    }
    const CompareReport cr = compare(frun, qrun);

    const bool trained = tr.best_val_accuracy >= 0.99 &&
                         static_cast<int>(tr.history.epochs.size()) <= 30 && train_secs < 600.0;
    const bool close = std::abs(cr.accuracy_delta_pts) <= 1.0;
    const bool ok = trained && close;
    return {ok, "val accuracy " + fmt(100.0 * tr.best_val_accuracy) + "% at epoch " +
                    std::to_string(tr.best_epoch) + "/" +
                    std::to_string(tr.history.epochs.size()) + " in " + fmt(train_secs, 1) +
                    " s (limits: >=99% within 30 epochs, 600 s); held-out float " +
                    fmt(100.0 * cr.float32_report.accuracy) + "% vs int8 " +
                    fmt(100.0 * cr.int8_report.accuracy) + "%, delta " +
                    fmt(cr.accuracy_delta_pts) + " pts (limit 1.0), agreement " +
                    fmt(100.0 * cr.agreement) + "%"};
}

// ---------------------------------------------------------------------------
// Criterion 6: container sizes, deployment budget, and the reference
// compression percentages.

Outcome criterion_sizes() {
    ensure_artifacts();
    const std::int64_t int8_bytes = static_cast<std::int64_t>(serialize(g_art.qm).size());
    const bool cap_ok = int8_bytes <= 150 * 1024;
    const BudgetCheck bc = budget_check(int8_bytes);
    const bool budget_ok = bc.pass;

    std::string ratios;
    bool ratios_ok = true;
    for (const char* name : {"tinymask-ref", "squeezenet-mask", "squeezenet-mask-small"}) {
        const NetworkConfig cfg = zoo(name);
        auto [net, params] = build_network(cfg, 7);
        Rng rng(9);
        std::vector<TensorF> calib;
        for (int i = 0; i < 4; ++i) calib.push_back(random_unit_image(cfg, rng));
        const QuantizedModel qm = quantize_model(net, params, calibrate(net, params, calib));
        const std::int64_t fb = static_cast<std::int64_t>(serialize(cfg, params).size());
        const std::int64_t qb = static_cast<std::int64_t>(serialize(qm).size());
        const double pct = 100.0 * static_cast<double>(qb) / static_cast<double>(fb);
        ratios_ok = ratios_ok && qb * 10 < fb * 3;  // strictly below 30%
        if (!ratios.empty()) ratios += ", ";
        ratios += fmt(pct, 1) + "%";
    }

    const double expected[3] = {90.48, 90.18, 91.16};
    const std::pair<std::int64_t, std::int64_t> pairs[3] = {{8197, 780}, {3932, 386},
                                                            {1566, 138}};
    std::string pcts;
    bool pcts_ok = true;
    for (int i = 0; i < 3; ++i) {
        const double got =
            std::round(size_report(pairs[i].first, pairs[i].second).reduction_pct * 100.0) /
            100.0;
        pcts_ok = pcts_ok && std::abs(got - expected[i]) < 1e-9;
        if (!pcts.empty()) pcts += ", ";
        pcts += fmt(got);
    }

    const bool ok = cap_ok && budget_ok && ratios_ok && pcts_ok;
    return {ok, "int8 reference container " + std::to_string(int8_bytes) +
                    " B (cap 153600): " + (cap_ok ? "ok" : "OVER") + "; deployment budget " +
                    std::to_string(bc.budget_bytes) + " B margin " + std::to_string(bc.margin) +
                    ": " + (budget_ok ? "pass" : "FAIL") + "; int8/float ratios {" + ratios +
                    "} all < 30%: " + (ratios_ok ? "ok" : "FAIL") +
                    "; reference reduction percentages expected {90.48, 90.18, 91.16}, "
                    "computed {" +
                    pcts + "}: " + (pcts_ok ? "ok" : "MISMATCH (100*(1-138/1566) = 91.19)")};
}

// ---------------------------------------------------------------------------
// Criterion 7: optimizer hand values.

Outcome criterion_optimizer() {
    LayerParams<double> wl;
    wl.weights = Tensor<double>(Shape4{1, 1, 1, 1}, {1.0});
    wl.bias = {0.0};
    ModelParamsT<double> params{wl};
    LayerParams<double> gl;
    gl.weights = Tensor<double>(Shape4{1, 1, 1, 1}, {0.1});
    gl.bias = {0.0};
    const ModelParamsT<double> grads{gl};
    auto state = AdamStateT<double>::zero(params);
    TrainConfig cfg;
    adam_step(params, grads, state, cfg);
    const double want = 0.999000000999999;  // 1 - 0.001*0.1/(0.1 + 1e-7)
    const double adam_err = std::abs(params[0].weights[0] - want);
    const bool adam_ok = adam_err < 1e-9;

    TrainHistory h;
    for (double acc : {0.90, 0.91, 0.91, 0.91, 0.91, 0.91, 0.91}) {
        EpochRecord r;
        r.epoch = static_cast<int>(h.epochs.size()) + 1;
        r.val_accuracy = acc;
        h.epochs.push_back(r);
    }
    const double lr = plateau_lr(h, cfg);
    const bool plateau_ok = std::abs(lr - 0.0002) < 1e-12;

    const bool ok = adam_ok && plateau_ok;
    return {ok, "single adam step |w' - 0.999000000999999| = " + fmt_sci(adam_err) +
                    " (limit 1e-9); plateau schedule on the 7-epoch stagnation history: lr "
                    "0.001 -> " +
                    fmt(lr, 4) + " (want 0.0002)"};
}

// ---------------------------------------------------------------------------
// Criterion 8: interpolation augmentation fan-out and split invariants.

Outcome criterion_dataset_pipeline() {
    Rng rng(3);
    std::int64_t outputs = 0;
    bool all32 = true;
    std::uint64_t checksum = 0;
    const int images = 11792;
    for (int i = 0; i < images; ++i) {
        const int h = 3 + static_cast<int>(rng.below(14));
        const int w = 3 + static_cast<int>(rng.below(14));
        const int c = i % 7 == 0 ? 3 : 1;
        Image img(h, w, c);
        for (std::uint8_t& px : img.pixels) px = static_cast<std::uint8_t>(rng.below(256));
        const std::vector<Image> outs = augment_interpolation(img);
        outputs += static_cast<std::int64_t>(outs.size());
        for (const Image& o : outs) {
            all32 = all32 && o.h == 32 && o.w == 32 && o.c == c;
            checksum += o.pixels.front() + o.pixels.back();
        }
    }
    const bool fanout_ok = outputs == 58960 && all32 && checksum != 0;

    Rng srng(55);
    int manifests_ok = 0;
    const int manifests = 1000;
    for (int t = 0; t < manifests; ++t) {
        DatasetManifest m;
        const int n0 = 2 + static_cast<int>(srng.below(40));
        const int n1 = 2 + static_cast<int>(srng.below(40));
        for (int i = 0; i < n0 + n1; ++i) {
            ManifestEntry e;
            e.path = "img" + std::to_string(i);
            e.label = i < n0 ? 0 : 1;
            m.entries.push_back(e);
        }
        const double frac = srng.uniform(0.05, 0.5);
        const auto [train_m, val_m] = split(m, frac, static_cast<std::uint64_t>(t));
        const auto [train_m2, val_m2] = split(m, frac, static_cast<std::uint64_t>(t));

        const std::int64_t total = n0 + n1;
        bool good = static_cast<std::int64_t>(train_m.entries.size() + val_m.entries.size()) ==
                    total;
        const std::int64_t target = std::llround(total * frac);
        good = good &&
               std::abs(static_cast<std::int64_t>(val_m.entries.size()) - target) <= 2;
        good = good && train_m.count(0) >= 1 && train_m.count(1) >= 1 && val_m.count(0) >= 1 &&
               val_m.count(1) >= 1;
        std::vector<std::string> paths;
        for (const auto& e : train_m.entries) paths.push_back(e.path);
        for (const auto& e : val_m.entries) paths.push_back(e.path);
        std::sort(paths.begin(), paths.end());
        good = good && std::adjacent_find(paths.begin(), paths.end()) == paths.end() &&
               static_cast<std::int64_t>(paths.size()) == total;
        good = good && manifest_index_csv(train_m) == manifest_index_csv(train_m2) &&
               manifest_index_csv(val_m) == manifest_index_csv(val_m2);
        manifests_ok += good;
    }

    const bool ok = fanout_ok && manifests_ok == manifests;
    return {ok, std::to_string(images) + " images -> " + std::to_string(outputs) +
                    " interpolation-augmented outputs (want 58960), all 32x32: " +
                    (all32 ? "yes" : "NO") + "; split invariants held on " +
                    std::to_string(manifests_ok) + "/" + std::to_string(manifests) +
                    " random manifests (partition, both classes both sides, quota within 2, "
                    "deterministic)"};
}

// ---------------------------------------------------------------------------
// Criterion 9: arena plan hand trace, reference-model peak, MAC accounting.

Outcome criterion_arena_and_macs() {
    NetworkConfig cfg;
    cfg.name = "trace";
    cfg.input_h = cfg.input_w = 32;
    cfg.input_c = 10;
    cfg.layers = {Conv2DSpec{6, 1, 1, 1, Padding::Valid, Activation::Relu}, FlattenSpec{},
                  DenseSpec{1, Activation::Sigmoid}};
    const QuantizedModel trace_qm = quantize_fixture(cfg, 5, 4);
    const Arena plan = plan_arena(trace_qm);
    int conv_node = -1, flatten_node = -1;
    for (std::size_t i = 0; i < trace_qm.net.nodes.size(); ++i) {
        if (trace_qm.net.nodes[i].kind == NodeKind::Conv) conv_node = static_cast<int>(i);
        if (trace_qm.net.nodes[i].kind == NodeKind::Flatten) flatten_node = static_cast<int>(i);
    }
    // input 32*32*10 B at offset 0, conv output 32*32*6 B placed after it,
    // dense scalar reuses the freed input bytes; flatten aliases the conv.
    const bool trace_ok = plan.peak == 16384 &&
                          plan.slot_of_node[static_cast<std::size_t>(flatten_node)] ==
                              plan.slot_of_node[static_cast<std::size_t>(conv_node)];

    ensure_artifacts();
    const Arena ref_plan = plan_arena(g_art.qm);
    const bool peak_ok = ref_plan.peak <= 496 * 1024;

    const BenchReport br = bench(g_art.qm, 3, 480e6, 1.0);
    bool conv_macs = false;
    std::int64_t sum = 0;
    for (const LayerMacs& lm : br.per_layer) {
        conv_macs = conv_macs || lm.macs == 442368;  // 32*32*16 outputs * 3*3*3 taps
        sum += lm.macs;
    }
    const std::string text = bench_report_text(br);
    const bool labeled = text.find("estimate") != std::string::npos;
    const bool macs_ok = conv_macs && sum == br.total_macs && br.estimated_fps > 0.0;

    const bool ok = trace_ok && peak_ok && macs_ok && labeled;
    return {ok, "hand-traced plan peak " + std::to_string(plan.peak) +
                    " B (want 16384) with flatten aliasing its producer: " +
                    (trace_ok ? "ok" : "MISMATCH") + "; reference model peak " +
                    std::to_string(ref_plan.peak) + " B <= 507904: " +
                    (peak_ok ? "ok" : "OVER") + "; per-layer MACs include the 442368 conv and "
                    "sum to total " +
                    std::to_string(br.total_macs) + ": " + (macs_ok ? "ok" : "FAIL") +
                    "; throughput reported as labeled estimate: " + (labeled ? "yes" : "NO")};
}

}  // namespace

int main() {
    struct Entry {
        const char* name;
        Outcome (*run)();
    };
    const Entry entries[] = {
        {"gradient check", criterion_gradients},
        {"quantization roundtrip", criterion_roundtrip},
        {"requant decomposition", criterion_requant_decomposition},
        {"integer kernel equivalence", criterion_kernel_equivalence},
        {"end-to-end train/quantize/eval", criterion_end_to_end},
        {"container size and budget", criterion_sizes},
        {"optimizer hand values", criterion_optimizer},
        {"dataset pipeline", criterion_dataset_pipeline},
        {"arena plan and MAC accounting", criterion_arena_and_macs},
    };

    int failures = 0;
    int idx = 0;
    for (const Entry& e : entries) {
        ++idx;
        Outcome out;
        try {
            out = e.run();
        } catch (const std::exception& ex) {
            out = {false, std::string("unexpected exception: ") + ex.what()};
        }
        std::cout << (out.ok ? "[PASS]" : "[FAIL]") << " criterion " << idx << " (" << e.name
                  << "): " << out.detail << "\n";
        failures += !out.ok;
    }
    std::cout << (failures == 0 ? "all criteria passed"
                                : std::to_string(failures) + " criterion(s) failed")
              << "\n";
    return failures;
}
