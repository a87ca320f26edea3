#include "tinyquant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tinyquant/rng.hpp"

namespace tinyquant {

const QuantParams& QuantizedModel::logit_qp() const {
    const Node& head = net.output_node();
    return edge_qp[static_cast<std::size_t>(head.inputs[0])];
}

CalibrationStats calibrate(const Network& net, const ModelParams& params,
                           const std::vector<TensorF>& representative_set) {
    if (representative_set.empty()) {
        throw Error(ErrorKind::DataError, "calibrate: representative set is empty");
    }
    CalibrationStats stats;
    stats.edges.assign(net.nodes.size(),
                       EdgeStats{std::numeric_limits<double>::infinity(),
                                 -std::numeric_limits<double>::infinity(), 0});
    for (const TensorF& sample : representative_set) {
        ForwardRecord<float> rec = forward(net, params, sample, RunMode::Infer);
        for (std::size_t i = 0; i < net.nodes.size(); ++i) {
            EdgeStats& e = stats.edges[i];
            for (const float v : rec.activations[i].values()) {
                e.min_v = std::min(e.min_v, static_cast<double>(v));
                e.max_v = std::max(e.max_v, static_cast<double>(v));
            }
            e.count += 1;
        }
    }
    for (EdgeStats& e : stats.edges) {  // zero must stay representable
        e.min_v = std::min(e.min_v, 0.0);
        e.max_v = std::max(e.max_v, 0.0);
    }
    return stats;
}

QuantParams activation_qparams(double min_v, double max_v) {
    min_v = std::min(min_v, 0.0);
    max_v = std::max(max_v, 0.0);
    const double scale = std::max((max_v - min_v) / 255.0, kScaleFloor);
    const int zp = static_cast<int>(
        std::clamp<std::int64_t>(round_half_away(-min_v / scale) - 128, -128, 127));
    return QuantParams::per_tensor(static_cast<float>(scale), zp);
}

std::pair<TensorI8, QuantParams> quantize_weights(const TensorF& w) {
    const int cout = w.shape().c;
    std::vector<float> scales(static_cast<std::size_t>(cout));
    for (int c = 0; c < cout; ++c) {
        double amax = 0.0;
        for (std::int64_t i = c; i < w.size(); i += cout) {
            amax = std::max(amax, std::abs(static_cast<double>(w[i])));
        }
        scales[static_cast<std::size_t>(c)] = static_cast<float>(std::max(amax / 127.0, kScaleFloor));
    }
    QuantParams qp = QuantParams::per_channel(std::move(scales));
    return {quantize_affine(w, qp), std::move(qp)};
}

RequantParams derive_requant(double s_in, double s_w, double s_out) {
    if (!(s_in > 0) || !(s_w > 0) || !(s_out > 0)) {
        throw Error(ErrorKind::InvalidQuantParams, "derive_requant: scales must be positive");
    }
    const double m = s_in * s_w / s_out;
    int exp = 0;
    double m0 = std::frexp(m, &exp);  // m = m0 * 2^exp, m0 in [0.5, 1)
    std::int64_t mult = round_half_away(m0 * 2147483648.0);
    std::int32_t shift = -exp;
    if (mult == std::int64_t{1} << 31) {  // m0 rounded up to 1.0
        mult >>= 1;
        shift -= 1;
    }
    if (shift < -3 || 31 + shift > 62) {
        throw Error(ErrorKind::InvalidQuantParams,
                    "derive_requant: multiplier " + std::to_string(m) + " out of supported range");
    }
    return RequantParams{static_cast<std::int32_t>(mult), shift};
}

QuantizedModel quantize_model(const Network& net, const ModelParams& params,
                              const CalibrationStats& stats) {
    if (stats.edges.size() != net.nodes.size()) {
        throw Error(ErrorKind::CalibrationIncomplete,
                    "calibration stats cover " + std::to_string(stats.edges.size()) +
                        " edges, network has " + std::to_string(net.nodes.size()));
    }
    for (std::size_t i = 0; i < stats.edges.size(); ++i) {
        if (stats.edges[i].count < 1) {
            throw Error(ErrorKind::CalibrationIncomplete,
                        "no calibration samples observed on edge of " + net.nodes[i].name);
        }
    }
    if (static_cast<int>(params.size()) != net.num_param_layers) {
        throw Error(ErrorKind::StateError, "parameter list does not match network");
    }

    QuantizedModel qm;
    qm.net_cfg = net.cfg;
    qm.net = net;
    qm.layers.resize(params.size());
    qm.edge_qp.resize(net.nodes.size());

    // Activation params per edge. Shape-only nodes inherit their producer's
    // params (max-pool commutes with dequantization; flatten/dropout are
    // copies; the integer global-average-pool is computed in its input's
    // domain).
    for (std::size_t i = 0; i < net.nodes.size(); ++i) {
        const Node& nd = net.nodes[i];
        switch (nd.kind) {
            case NodeKind::Input:
            case NodeKind::Conv:
            case NodeKind::Dense:
            case NodeKind::Concat:
                qm.edge_qp[i] = activation_qparams(stats.edges[i].min_v, stats.edges[i].max_v);
                break;
            case NodeKind::MaxPool:
            case NodeKind::GlobalAvgPool:
            case NodeKind::Flatten:
            case NodeKind::Dropout:
                qm.edge_qp[i] = qm.edge_qp[static_cast<std::size_t>(nd.inputs[0])];
                break;
            case NodeKind::SigmoidHead:
                qm.edge_qp[i] = QuantParams::per_tensor(1.0f, 0);  // float boundary, unused
                break;
        }
    }
    // Fold concat: both expand convs write straight into the concat range, so
    // they must share its quant params.
    for (std::size_t i = 0; i < net.nodes.size(); ++i) {
        if (net.nodes[i].kind != NodeKind::Concat) continue;
        for (int producer : net.nodes[i].inputs) {
            qm.edge_qp[static_cast<std::size_t>(producer)] = qm.edge_qp[i];
        }
    }

    for (std::size_t i = 0; i < net.nodes.size(); ++i) {
        const Node& nd = net.nodes[i];
        if (nd.param_index < 0) continue;
        const std::size_t l = static_cast<std::size_t>(nd.param_index);
        const QuantParams& in_qp = qm.edge_qp[static_cast<std::size_t>(nd.inputs[0])];
        const QuantParams& out_qp = qm.edge_qp[i];

        QuantLayer& ql = qm.layers[l];
        auto [wq, wqp] = quantize_weights(params[l].weights);
        ql.weights = std::move(wq);
        ql.weight_qp = std::move(wqp);

        const int cout = nd.out_shape.c;
        ql.bias.resize(static_cast<std::size_t>(cout));
        ql.requant.resize(static_cast<std::size_t>(cout));
        for (int c = 0; c < cout; ++c) {
            const double s_w = ql.weight_qp.scales[static_cast<std::size_t>(c)];
            const double b_scale = static_cast<double>(in_qp.scale()) * s_w;
            ql.bias[static_cast<std::size_t>(c)] = static_cast<std::int32_t>(
                std::clamp<std::int64_t>(
                    round_half_away(static_cast<double>(params[l].bias[static_cast<std::size_t>(c)]) /
                                    b_scale),
                    std::numeric_limits<std::int32_t>::min(),
                    std::numeric_limits<std::int32_t>::max()));
            ql.requant[static_cast<std::size_t>(c)] =
                derive_requant(in_qp.scale(), s_w, out_qp.scale());
        }
    }
    return qm;
}

// ---------------------------------------------------------------------------
// Fake-quant oracle: naive per-node integer simulation, independent of the
// arena engine's kernels but sharing requantize().

namespace {

std::int64_t div_round_half_away(std::int64_t num, std::int64_t den) {
    const std::int64_t mag = (2 * std::llabs(num) + den) / (2 * den);
    return num < 0 ? -mag : mag;
}

}  // namespace

double fake_quant_forward(const QuantizedModel& qm, const TensorF& input) {
    const Network& net = qm.net;
    if (!(input.shape() == net.nodes[0].out_shape)) {
        throw Error(ErrorKind::ShapeMismatch, "fake_quant_forward: input shape " +
                                                  input.shape().str() + " does not match " +
                                                  net.nodes[0].out_shape.str());
    }

    std::vector<std::vector<int>> q(net.nodes.size());
    {
        const QuantParams& qp = qm.edge_qp[0];
        q[0].resize(static_cast<std::size_t>(input.size()));
        for (std::int64_t i = 0; i < input.size(); ++i) {
            q[0][static_cast<std::size_t>(i)] = quantize_value(input[i], qp.scale(), qp.zero_point);
        }
    }

    auto at = [](const std::vector<int>& v, const Shape4& s, int h, int w, int c) {
        return v[static_cast<std::size_t>((h * s.w + w) * s.c + c)];
    };

    for (std::size_t i = 1; i < net.nodes.size(); ++i) {
        const Node& nd = net.nodes[i];
        const Shape4 is = net.nodes[nd.inputs[0]].out_shape;
        const Shape4 os = nd.out_shape;
        const std::vector<int>& in = q[static_cast<std::size_t>(nd.inputs[0])];
        std::vector<int> out(static_cast<std::size_t>(os.numel()));

        switch (nd.kind) {
            case NodeKind::Conv:
            case NodeKind::Dense: {
                const QuantLayer& ql = qm.layers[static_cast<std::size_t>(nd.param_index)];
                const int zp_in = qm.edge_qp[static_cast<std::size_t>(nd.inputs[0])].zero_point;
                const int zp_out = qm.edge_qp[i].zero_point;
                const int lo = nd.relu ? zp_out : -128;
                for (int ho = 0; ho < os.h; ++ho) {
                    for (int wo = 0; wo < os.w; ++wo) {
                        for (int co = 0; co < os.c; ++co) {
                            std::int32_t acc = ql.bias[static_cast<std::size_t>(co)];
                            for (int kh = 0; kh < nd.kernel_h; ++kh) {
                                for (int kw = 0; kw < nd.kernel_w; ++kw) {
                                    const int hi = ho * nd.stride - nd.pad_top + kh;
                                    const int wi = wo * nd.stride - nd.pad_left + kw;
                                    if (hi < 0 || hi >= is.h || wi < 0 || wi >= is.w) continue;
                                    for (int ci = 0; ci < is.c; ++ci) {
                                        const int qw = ql.weights.at(kh, kw, ci, co);
                                        acc += (at(in, is, hi, wi, ci) - zp_in) * qw;
                                    }
                                }
                            }
                            const std::int32_t scaled =
                                requantize(acc, ql.requant[static_cast<std::size_t>(co)]);
                            out[static_cast<std::size_t>((ho * os.w + wo) * os.c + co)] =
                                std::clamp(scaled + zp_out, lo, 127);
                        }
                    }
                }
                break;
            }
            case NodeKind::MaxPool: {
                for (int ho = 0; ho < os.h; ++ho) {
                    for (int wo = 0; wo < os.w; ++wo) {
                        for (int c = 0; c < os.c; ++c) {
                            int best = -128;
                            for (int kh = 0; kh < nd.pool; ++kh) {
                                for (int kw = 0; kw < nd.pool; ++kw) {
                                    best = std::max(best, at(in, is, ho * nd.stride + kh,
                                                             wo * nd.stride + kw, c));
                                }
                            }
                            out[static_cast<std::size_t>((ho * os.w + wo) * os.c + c)] = best;
                        }
                    }
                }
                break;
            }
            case NodeKind::GlobalAvgPool: {
                for (int c = 0; c < is.c; ++c) {
                    std::int64_t sum = 0;
                    for (int h = 0; h < is.h; ++h) {
                        for (int w = 0; w < is.w; ++w) sum += at(in, is, h, w, c);
                    }
                    out[static_cast<std::size_t>(c)] = static_cast<int>(std::clamp<std::int64_t>(
                        div_round_half_away(sum, static_cast<std::int64_t>(is.h) * is.w), -128, 127));
                }
                break;
            }
            case NodeKind::Flatten:
            case NodeKind::Dropout:
                out = in;
                break;
            case NodeKind::Concat: {
                const Shape4 is2 = net.nodes[nd.inputs[1]].out_shape;
                const std::vector<int>& in2 = q[static_cast<std::size_t>(nd.inputs[1])];
                for (int h = 0; h < os.h; ++h) {
                    for (int w = 0; w < os.w; ++w) {
                        for (int c = 0; c < os.c; ++c) {
                            out[static_cast<std::size_t>((h * os.w + w) * os.c + c)] =
                                c < is.c ? at(in, is, h, w, c) : at(in2, is2, h, w, c - is.c);
                        }
                    }
                }
                break;
            }
            case NodeKind::SigmoidHead: {
                const QuantParams& lq = qm.edge_qp[static_cast<std::size_t>(nd.inputs[0])];
                const double z =
                    static_cast<double>(lq.scale()) * (in[0] - lq.zero_point);
                return 1.0 / (1.0 + std::exp(-z));
            }
            case NodeKind::Input:
                throw Error(ErrorKind::StateError, "unexpected input node mid-graph");
        }
        q[i] = std::move(out);
    }
    throw Error(ErrorKind::StateError, "network has no sigmoid head");
}

std::vector<TensorF> representative_sample(const std::vector<Sample>& pool, int n,
                                           std::uint64_t seed) {
    if (pool.empty()) throw Error(ErrorKind::DataError, "representative_sample: empty pool");
    if (n < 1) throw Error(ErrorKind::UsageError, "representative_sample: n must be >= 1");
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(seed, 0x9e3779b97f4a7c15ULL));
    rng.shuffle(idx);
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), pool.size());
    std::vector<TensorF> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(pool[idx[i]].image);
    return out;
}

}  // namespace tinyquant
