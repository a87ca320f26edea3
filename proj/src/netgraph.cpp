#include "tinyquant/netgraph.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "tinyquant/rng.hpp"

namespace tinyquant {

namespace {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::None: return "none";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "none";
}

Activation parse_activation(const std::string& s) {
    if (s == "none") return Activation::None;
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw Error(ErrorKind::ConfigError, "unknown activation '" + s + "'");
}

std::string format_float(float v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

// Tokenizes "key=value" arguments following a layer keyword.
struct ArgMap {
    std::vector<std::pair<std::string, std::string>> kv;
    std::string line;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : kv) {
            if (k == key) return &v;
        }
        return nullptr;
    }
    std::string str(const std::string& key, const std::string& fallback) const {
        const std::string* v = find(key);
        return v ? *v : fallback;
    }
    int integer(const std::string& key, int fallback) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        try {
            return std::stoi(*v);
        } catch (const std::exception&) {
            throw Error(ErrorKind::ConfigError, "bad integer for '" + key + "' in: " + line);
        }
    }
    float real(const std::string& key, float fallback) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        try {
            return std::stof(*v);
        } catch (const std::exception&) {
            throw Error(ErrorKind::ConfigError, "bad number for '" + key + "' in: " + line);
        }
    }
};

ArgMap parse_args(std::istringstream& in, const std::string& line) {
    ArgMap args;
    args.line = line;
    std::string tok;
    while (in >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::ConfigError, "expected key=value, got '" + tok + "' in: " + line);
        }
        args.kv.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
    return args;
}

std::pair<int, int> parse_kernel(const std::string& spec, const std::string& line) {
    auto x = spec.find('x');
    try {
        if (x == std::string::npos) {
            int k = std::stoi(spec);
            return {k, k};
        }
        return {std::stoi(spec.substr(0, x)), std::stoi(spec.substr(x + 1))};
    } catch (const std::exception&) {
        throw Error(ErrorKind::ConfigError, "bad kernel '" + spec + "' in: " + line);
    }
}

struct ConvGeometry {
    int out_h, out_w, pad_top, pad_left;
};

ConvGeometry conv_geometry(int in_h, int in_w, int kh, int kw, int stride, Padding pad,
                           const std::string& name) {
    ConvGeometry g{};
    if (pad == Padding::Same) {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        g.pad_top = std::max((g.out_h - 1) * stride + kh - in_h, 0) / 2;
        g.pad_left = std::max((g.out_w - 1) * stride + kw - in_w, 0) / 2;
    } else {
        if (kh > in_h || kw > in_w) {
            throw Error(ErrorKind::ConfigError,
                        name + ": valid-padding kernel exceeds input " + std::to_string(in_h) +
                            "x" + std::to_string(in_w));
        }
        g.out_h = (in_h - kh) / stride + 1;
        g.out_w = (in_w - kw) / stride + 1;
    }
    return g;
}

}  // namespace

NetworkConfig parse_network_config(const std::string& text) {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = cfg.input_c = 0;
    std::istringstream stream(text);
    std::string line;
    bool saw_input = false;
    while (std::getline(stream, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream in(line);
        std::string keyword;
        if (!(in >> keyword)) continue;

        if (keyword == "name") {
            in >> cfg.name;
        } else if (keyword == "input") {
            if (!(in >> cfg.input_h >> cfg.input_w >> cfg.input_c)) {
                throw Error(ErrorKind::ConfigError, "input line needs H W C: " + line);
            }
            saw_input = true;
        } else if (keyword == "conv") {
            ArgMap a = parse_args(in, line);
            Conv2DSpec c;
            c.out_channels = a.integer("out", 0);
            auto [kh, kw] = parse_kernel(a.str("kernel", "3x3"), line);
            c.kernel_h = kh;
            c.kernel_w = kw;
            c.stride = a.integer("stride", 1);
            std::string pad = a.str("pad", "same");
            if (pad != "same" && pad != "valid") {
                throw Error(ErrorKind::ConfigError, "pad must be same|valid in: " + line);
            }
            c.padding = pad == "same" ? Padding::Same : Padding::Valid;
            c.activation = parse_activation(a.str("act", "relu"));
            if (c.activation == Activation::Sigmoid) {
                throw Error(ErrorKind::ConfigError, "conv supports act=relu|none: " + line);
            }
            cfg.layers.emplace_back(c);
        } else if (keyword == "maxpool") {
            ArgMap a = parse_args(in, line);
            MaxPoolSpec p;
            p.pool = a.integer("pool", 2);
            p.stride = a.integer("stride", p.pool);
            cfg.layers.emplace_back(p);
        } else if (keyword == "gap") {
            cfg.layers.emplace_back(GlobalAvgPoolSpec{});
        } else if (keyword == "flatten") {
            cfg.layers.emplace_back(FlattenSpec{});
        } else if (keyword == "dense") {
            ArgMap a = parse_args(in, line);
            DenseSpec d;
            d.units = a.integer("units", 0);
            d.activation = parse_activation(a.str("act", "none"));
            cfg.layers.emplace_back(d);
        } else if (keyword == "dropout") {
            ArgMap a = parse_args(in, line);
            cfg.layers.emplace_back(DropoutSpec{a.real("rate", 0.2f)});
        } else if (keyword == "fire") {
            ArgMap a = parse_args(in, line);
            FireSpec f;
            f.squeeze_1x1 = a.integer("squeeze", 0);
            f.expand_1x1 = a.integer("expand1", 0);
            f.expand_3x3 = a.integer("expand3", 0);
            cfg.layers.emplace_back(f);
        } else {
            throw Error(ErrorKind::ConfigError, "unknown layer keyword '" + keyword + "'");
        }
    }
    if (!saw_input) {
        throw Error(ErrorKind::ConfigError, "config has no input line");
    }
    return cfg;
}

NetworkConfig load_network_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::NotFound, "cannot open network config '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_network_config(buf.str());
}

std::string network_config_to_text(const NetworkConfig& cfg) {
    std::ostringstream out;
    if (!cfg.name.empty()) out << "name " << cfg.name << "\n";
    out << "input " << cfg.input_h << " " << cfg.input_w << " " << cfg.input_c << "\n";
    for (const LayerSpec& layer : cfg.layers) {
        if (const auto* c = std::get_if<Conv2DSpec>(&layer)) {
            out << "conv out=" << c->out_channels << " kernel=" << c->kernel_h << "x" << c->kernel_w
                << " stride=" << c->stride << " pad=" << (c->padding == Padding::Same ? "same" : "valid")
                << " act=" << activation_name(c->activation) << "\n";
        } else if (const auto* p = std::get_if<MaxPoolSpec>(&layer)) {
            out << "maxpool pool=" << p->pool << " stride=" << p->stride << "\n";
        } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
            out << "gap\n";
        } else if (std::holds_alternative<FlattenSpec>(layer)) {
            out << "flatten\n";
        } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            out << "dense units=" << d->units << " act=" << activation_name(d->activation) << "\n";
        } else if (const auto* r = std::get_if<DropoutSpec>(&layer)) {
            out << "dropout rate=" << format_float(r->rate) << "\n";
        } else if (const auto* f = std::get_if<FireSpec>(&layer)) {
            out << "fire squeeze=" << f->squeeze_1x1 << " expand1=" << f->expand_1x1
                << " expand3=" << f->expand_3x3 << "\n";
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Lowering

namespace {

Network lower_impl(const NetworkConfig& cfg, bool require_head) {
    if (cfg.input_h < 1 || cfg.input_w < 1 || cfg.input_c < 1) {
        throw Error(ErrorKind::ConfigError,
                    "input extents must be positive, got " + std::to_string(cfg.input_h) + "x" +
                        std::to_string(cfg.input_w) + "x" + std::to_string(cfg.input_c));
    }

    Network net;
    net.cfg = cfg;
    Node input;
    input.kind = NodeKind::Input;
    input.out_shape = Shape4{1, cfg.input_h, cfg.input_w, cfg.input_c};
    input.name = "input";
    net.nodes.push_back(input);

    auto add_conv = [&](int from, const Conv2DSpec& c, int layer_idx, const std::string& name) {
        if (c.out_channels < 1 || c.kernel_h < 1 || c.kernel_w < 1 || c.stride < 1) {
            throw Error(ErrorKind::ConfigError, name + ": channel/kernel/stride counts must be >= 1");
        }
        const Shape4 in = net.nodes[from].out_shape;
        ConvGeometry g = conv_geometry(in.h, in.w, c.kernel_h, c.kernel_w, c.stride, c.padding, name);
        Node nd;
        nd.kind = NodeKind::Conv;
        nd.inputs = {from};
        nd.out_shape = Shape4{1, g.out_h, g.out_w, c.out_channels};
        nd.name = name;
        nd.layer_index = layer_idx;
        nd.param_index = net.num_param_layers++;
        nd.kernel_h = c.kernel_h;
        nd.kernel_w = c.kernel_w;
        nd.stride = c.stride;
        nd.pad_top = g.pad_top;
        nd.pad_left = g.pad_left;
        nd.relu = c.activation == Activation::Relu;
        net.nodes.push_back(nd);
        return static_cast<int>(net.nodes.size()) - 1;
    };

    int cur = 0;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& layer = cfg.layers[i];
        const std::string prefix = "l" + std::to_string(i);
        const Shape4 in = net.nodes[cur].out_shape;
        const bool is_last = i + 1 == cfg.layers.size();

        if (const auto* c = std::get_if<Conv2DSpec>(&layer)) {
            cur = add_conv(cur, *c, static_cast<int>(i), prefix + "_conv");
        } else if (const auto* p = std::get_if<MaxPoolSpec>(&layer)) {
            if (p->pool < 1 || p->stride < 1) {
                throw Error(ErrorKind::ConfigError, prefix + ": pool/stride must be >= 1");
            }
            if (p->pool > in.h || p->pool > in.w) {
                throw Error(ErrorKind::ConfigError,
                            prefix + ": pool window " + std::to_string(p->pool) +
                                " larger than input " + in.str());
            }
            Node nd;
            nd.kind = NodeKind::MaxPool;
            nd.inputs = {cur};
            nd.out_shape = Shape4{1, (in.h - p->pool) / p->stride + 1,
                                  (in.w - p->pool) / p->stride + 1, in.c};
            nd.name = prefix + "_maxpool";
            nd.layer_index = static_cast<int>(i);
            nd.pool = p->pool;
            nd.stride = p->stride;
            net.nodes.push_back(nd);
            cur = static_cast<int>(net.nodes.size()) - 1;
        } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
            Node nd;
            nd.kind = NodeKind::GlobalAvgPool;
            nd.inputs = {cur};
            nd.out_shape = Shape4{1, 1, 1, in.c};
            nd.name = prefix + "_gap";
            nd.layer_index = static_cast<int>(i);
            net.nodes.push_back(nd);
            cur = static_cast<int>(net.nodes.size()) - 1;
        } else if (std::holds_alternative<FlattenSpec>(layer)) {
            Node nd;
            nd.kind = NodeKind::Flatten;
            nd.inputs = {cur};
            nd.out_shape = Shape4{1, 1, 1, in.h * in.w * in.c};
            nd.name = prefix + "_flatten";
            nd.layer_index = static_cast<int>(i);
            net.nodes.push_back(nd);
            cur = static_cast<int>(net.nodes.size()) - 1;
        } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            if (d->units < 1) {
                throw Error(ErrorKind::ConfigError, prefix + ": dense units must be >= 1");
            }
            if (in.h != 1 || in.w != 1) {
                throw Error(ErrorKind::ConfigError,
                            prefix + ": dense needs a flat input (insert flatten or gap), got " +
                                in.str());
            }
            if (d->activation == Activation::Sigmoid && !is_last) {
                throw Error(ErrorKind::ConfigError,
                            prefix + ": sigmoid is only supported on the classification head");
            }
            Node nd;
            nd.kind = NodeKind::Dense;
            nd.inputs = {cur};
            nd.out_shape = Shape4{1, 1, 1, d->units};
            nd.name = prefix + "_dense";
            nd.layer_index = static_cast<int>(i);
            nd.param_index = net.num_param_layers++;
            nd.kernel_h = 1;
            nd.kernel_w = 1;
            nd.relu = d->activation == Activation::Relu;
            net.nodes.push_back(nd);
            cur = static_cast<int>(net.nodes.size()) - 1;
            if (d->activation == Activation::Sigmoid) {
                Node head;
                head.kind = NodeKind::SigmoidHead;
                head.inputs = {cur};
                head.out_shape = nd.out_shape;
                head.name = prefix + "_sigmoid";
                head.layer_index = static_cast<int>(i);
                net.nodes.push_back(head);
                cur = static_cast<int>(net.nodes.size()) - 1;
            }
        } else if (const auto* r = std::get_if<DropoutSpec>(&layer)) {
            if (!(r->rate > 0.0f && r->rate < 1.0f)) {
                throw Error(ErrorKind::ConfigError, prefix + ": dropout rate must be in (0,1)");
            }
            Node nd;
            nd.kind = NodeKind::Dropout;
            nd.inputs = {cur};
            nd.out_shape = in;
            nd.name = prefix + "_dropout";
            nd.layer_index = static_cast<int>(i);
            nd.dropout_rate = r->rate;
            net.nodes.push_back(nd);
            cur = static_cast<int>(net.nodes.size()) - 1;
        } else if (const auto* f = std::get_if<FireSpec>(&layer)) {
            if (f->squeeze_1x1 < 1 || f->expand_1x1 < 1 || f->expand_3x3 < 1) {
                throw Error(ErrorKind::ConfigError, prefix + ": fire channel counts must be >= 1");
            }
            Conv2DSpec squeeze{f->squeeze_1x1, 1, 1, 1, Padding::Same, Activation::Relu};
            Conv2DSpec expand1{f->expand_1x1, 1, 1, 1, Padding::Same, Activation::Relu};
            Conv2DSpec expand3{f->expand_3x3, 3, 3, 1, Padding::Same, Activation::Relu};
            int s = add_conv(cur, squeeze, static_cast<int>(i), prefix + "_fire_squeeze");
            int e1 = add_conv(s, expand1, static_cast<int>(i), prefix + "_fire_expand1");
            int e3 = add_conv(s, expand3, static_cast<int>(i), prefix + "_fire_expand3");
            Node nd;
            nd.kind = NodeKind::Concat;
            nd.inputs = {e1, e3};
            nd.out_shape = Shape4{1, net.nodes[e1].out_shape.h, net.nodes[e1].out_shape.w,
                                  f->expand_1x1 + f->expand_3x3};
            nd.name = prefix + "_fire_concat";
            nd.layer_index = static_cast<int>(i);
            net.nodes.push_back(nd);
            cur = static_cast<int>(net.nodes.size()) - 1;
        }

        const Shape4 out = net.nodes[cur].out_shape;
        if (out.numel() <= 0) {
            throw Error(ErrorKind::ConfigError, prefix + ": produces empty shape " + out.str());
        }
    }

    if (require_head) {
        const bool head_ok = !cfg.layers.empty() && net.output_node().kind == NodeKind::SigmoidHead &&
                             net.output_node().out_shape.c == 1;
        if (!head_ok) {
            throw Error(ErrorKind::ConfigError,
                        "network must end with dense units=1 act=sigmoid");
        }
    }
    return net;
}

}  // namespace

Network lower(const NetworkConfig& cfg) { return lower_impl(cfg, true); }

std::int64_t param_count(const NetworkConfig& cfg) {
    Network net = lower_impl(cfg, false);
    std::int64_t total = 0;
    for (const Node& nd : net.nodes) {
        if (nd.param_index < 0) continue;
        const Shape4 in = net.nodes[nd.inputs[0]].out_shape;
        total += (static_cast<std::int64_t>(nd.kernel_h) * nd.kernel_w * in.c + 1) * nd.out_shape.c;
    }
    return total;
}

NetworkConfig zoo(const std::string& name) {
    if (name == "tinymask-ref") {
        NetworkConfig cfg;
        cfg.name = name;
        cfg.input_h = cfg.input_w = 32;
        cfg.input_c = 3;
        cfg.layers = {
            Conv2DSpec{16, 3, 3, 1, Padding::Same, Activation::Relu},
            DropoutSpec{0.2f},
            MaxPoolSpec{2, 2},
            Conv2DSpec{32, 3, 3, 1, Padding::Same, Activation::Relu},
            DropoutSpec{0.2f},
            MaxPoolSpec{2, 2},
            Conv2DSpec{64, 3, 3, 1, Padding::Same, Activation::Relu},
            DropoutSpec{0.2f},
            MaxPoolSpec{2, 2},
            FlattenSpec{},
            DenseSpec{102, Activation::Relu},
            DropoutSpec{0.2f},
            DenseSpec{1, Activation::Sigmoid},
        };
        return cfg;
    }
    if (name == "squeezenet-mask" || name == "squeezenet-mask-small") {
        NetworkConfig cfg;
        cfg.name = name;
        cfg.input_h = cfg.input_w = 32;
        cfg.input_c = 3;
        cfg.layers = {
            Conv2DSpec{64, 3, 3, 2, Padding::Same, Activation::Relu},
            MaxPoolSpec{3, 2},
            FireSpec{16, 64, 64},
            FireSpec{16, 64, 64},
            MaxPoolSpec{3, 2},
            FireSpec{32, 128, 128},
            FireSpec{32, 128, 128},
            MaxPoolSpec{3, 2},
            FireSpec{48, 192, 192},
            FireSpec{48, 192, 192},
            FireSpec{64, 256, 256},
            FireSpec{64, 256, 256},
        };
        if (name == "squeezenet-mask-small") {
            cfg.layers.resize(cfg.layers.size() - 2);  // drop the last two fire modules
        }
        cfg.layers.emplace_back(GlobalAvgPoolSpec{});
        cfg.layers.emplace_back(DenseSpec{1, Activation::Sigmoid});
        return cfg;
    }
    throw Error(ErrorKind::NotFound, "unknown zoo architecture '" + name + "'");
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
ModelParamsT<T> init_params(const Network& net, std::uint64_t seed) {
    ModelParamsT<T> params(static_cast<std::size_t>(net.num_param_layers));
    for (const Node& nd : net.nodes) {
        if (nd.param_index < 0) continue;
        const Shape4 in = net.nodes[nd.inputs[0]].out_shape;
        const int cin = in.c;
        const int cout = nd.out_shape.c;
        Shape4 wshape{nd.kernel_h, nd.kernel_w, cin, cout};
        if (nd.kind == NodeKind::Dense) wshape = Shape4{1, 1, cin, cout};

        const double fan_in = static_cast<double>(nd.kernel_h) * nd.kernel_w * cin;
        const double fan_out = static_cast<double>(nd.kernel_h) * nd.kernel_w * cout;
        const double limit =
            nd.relu ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));

        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(nd.param_index)));
        LayerParams<T>& lp = params[static_cast<std::size_t>(nd.param_index)];
        lp.weights = Tensor<T>(wshape);
        for (std::int64_t i = 0; i < lp.weights.size(); ++i) {
            lp.weights[i] = static_cast<T>(rng.uniform(-limit, limit));
        }
        lp.bias.assign(static_cast<std::size_t>(cout), T{});
    }
    return params;
}

std::pair<Network, ModelParams> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
    Network net = lower(cfg);
    ModelParams params = init_params<float>(net, seed);
    return {std::move(net), std::move(params)};
}

template <typename T>
ModelParamsT<T> zero_like(const ModelParamsT<T>& params) {
    ModelParamsT<T> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out[i].weights = Tensor<T>(params[i].weights.shape());
        out[i].bias.assign(params[i].bias.size(), T{});
    }
    return out;
}

template <typename From, typename To>
ModelParamsT<To> cast_params(const ModelParamsT<From>& params) {
    ModelParamsT<To> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out[i].weights = Tensor<To>(params[i].weights.shape());
        for (std::int64_t j = 0; j < params[i].weights.size(); ++j) {
            out[i].weights[j] = static_cast<To>(params[i].weights[j]);
        }
        out[i].bias.reserve(params[i].bias.size());
        for (From b : params[i].bias) out[i].bias.push_back(static_cast<To>(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename T>
void conv_node_forward(const Network& net, const Node& nd, const LayerParams<T>& p,
                       const Tensor<T>& in, Tensor<T>& out) {
    const Shape4 is = in.shape();
    const Shape4 os = nd.out_shape;
    const int cin = is.c, cout = os.c;
    const T* w = p.weights.data();
    for (int ho = 0; ho < os.h; ++ho) {
        for (int wo = 0; wo < os.w; ++wo) {
            T* acc = &out.at(0, ho, wo, 0);
            for (int co = 0; co < cout; ++co) acc[co] = p.bias[static_cast<std::size_t>(co)];
            for (int kh = 0; kh < nd.kernel_h; ++kh) {
                const int hi = ho * nd.stride - nd.pad_top + kh;
                if (hi < 0 || hi >= is.h) continue;
                for (int kw = 0; kw < nd.kernel_w; ++kw) {
                    const int wi = wo * nd.stride - nd.pad_left + kw;
                    if (wi < 0 || wi >= is.w) continue;
                    const T* x = &in.at(0, hi, wi, 0);
                    const T* wrow = w + (static_cast<std::int64_t>(kh) * nd.kernel_w + kw) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const T a = x[ci];
                        const T* wp = wrow + static_cast<std::int64_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) acc[co] += a * wp[co];
                    }
                }
            }
            if (nd.relu) {
                for (int co = 0; co < cout; ++co) acc[co] = std::max(acc[co], T{});
            }
        }
    }
    (void)net;
}

template <typename T>
void dense_node_forward(const Node& nd, const LayerParams<T>& p, const Tensor<T>& in,
                        Tensor<T>& out) {
    const int k_n = in.shape().c;
    const int units = nd.out_shape.c;
    const T* w = p.weights.data();
    T* acc = out.data();
    for (int u = 0; u < units; ++u) acc[u] = p.bias[static_cast<std::size_t>(u)];
    for (int k = 0; k < k_n; ++k) {
        const T a = in[k];
        const T* wp = w + static_cast<std::int64_t>(k) * units;
        for (int u = 0; u < units; ++u) acc[u] += a * wp[u];
    }
    if (nd.relu) {
        for (int u = 0; u < units; ++u) acc[u] = std::max(acc[u], T{});
    }
}

template <typename T>
void maxpool_node_forward(const Node& nd, const Tensor<T>& in, Tensor<T>& out) {
    const Shape4 is = in.shape();
    const Shape4 os = nd.out_shape;
    for (int ho = 0; ho < os.h; ++ho) {
        for (int wo = 0; wo < os.w; ++wo) {
            for (int c = 0; c < os.c; ++c) {
                T best = in.at(0, ho * nd.stride, wo * nd.stride, c);
                for (int kh = 0; kh < nd.pool; ++kh) {
                    for (int kw = 0; kw < nd.pool; ++kw) {
                        best = std::max(best, in.at(0, ho * nd.stride + kh, wo * nd.stride + kw, c));
                    }
                }
                out.at(0, ho, wo, c) = best;
            }
        }
    }
    (void)is;
}

}  // namespace

template <typename T>
ForwardRecord<T> forward(const Network& net, const ModelParamsT<T>& params, const Tensor<T>& input,
                         RunMode mode, std::uint64_t seed) {
    if (static_cast<int>(params.size()) != net.num_param_layers) {
        throw Error(ErrorKind::StateError, "parameter list does not match network");
    }
    if (!(input.shape() == net.nodes[0].out_shape)) {
        throw Error(ErrorKind::ShapeMismatch, "input shape " + input.shape().str() +
                                                  " does not match network input " +
                                                  net.nodes[0].out_shape.str());
    }

    ForwardRecord<T> rec;
    rec.activations.resize(net.nodes.size());
    rec.dropout_masks.resize(net.nodes.size());
    rec.activations[0] = input;

    for (std::size_t i = 1; i < net.nodes.size(); ++i) {
        const Node& nd = net.nodes[i];
        const Tensor<T>& in = rec.activations[static_cast<std::size_t>(nd.inputs[0])];
        Tensor<T> out(nd.out_shape);
        switch (nd.kind) {
            case NodeKind::Conv:
                conv_node_forward(net, nd, params[static_cast<std::size_t>(nd.param_index)], in, out);
                break;
            case NodeKind::Dense:
                dense_node_forward(nd, params[static_cast<std::size_t>(nd.param_index)], in, out);
                break;
            case NodeKind::MaxPool:
                maxpool_node_forward(nd, in, out);
                break;
            case NodeKind::GlobalAvgPool: {
                const Shape4 is = in.shape();
                const T inv_count = static_cast<T>(1) / static_cast<T>(is.h * is.w);
                for (int c = 0; c < is.c; ++c) {
                    T sum{};
                    for (int h = 0; h < is.h; ++h) {
                        for (int w = 0; w < is.w; ++w) sum += in.at(0, h, w, c);
                    }
                    out[c] = sum * inv_count;
                }
                break;
            }
            case NodeKind::Flatten:
                out = Tensor<T>(nd.out_shape, in.values());
                break;
            case NodeKind::Dropout: {
                if (mode == RunMode::Train) {
                    const T rate = static_cast<T>(nd.dropout_rate);
                    const T keep_scale = static_cast<T>(1) / (static_cast<T>(1) - rate);
                    Rng rng(mix_seed(seed, i));
                    Tensor<std::uint8_t> mask(nd.out_shape);
                    for (std::int64_t j = 0; j < in.size(); ++j) {
                        const bool keep = static_cast<T>(rng.uniform01()) >= rate;
                        mask[j] = keep ? 1 : 0;
                        out[j] = keep ? in[j] * keep_scale : T{};
                    }
                    rec.dropout_masks[i] = std::move(mask);
                } else {
                    out = in;
                }
                break;
            }
            case NodeKind::Concat: {
                const Tensor<T>& rhs = rec.activations[static_cast<std::size_t>(nd.inputs[1])];
                const Shape4 os = nd.out_shape;
                const int c0 = in.shape().c;
                for (int h = 0; h < os.h; ++h) {
                    for (int w = 0; w < os.w; ++w) {
                        for (int c = 0; c < c0; ++c) out.at(0, h, w, c) = in.at(0, h, w, c);
                        for (int c = c0; c < os.c; ++c) out.at(0, h, w, c) = rhs.at(0, h, w, c - c0);
                    }
                }
                break;
            }
            case NodeKind::SigmoidHead: {
                const T z = in[0];
                out[0] = static_cast<T>(1) / (static_cast<T>(1) + std::exp(-z));
                break;
            }
            case NodeKind::Input:
                throw Error(ErrorKind::StateError, "unexpected input node mid-graph");
        }
        rec.activations[i] = std::move(out);
    }
    rec.output = rec.activations.back()[0];
    return rec;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

template <typename T>
void conv_node_backward(const Node& nd, const LayerParams<T>& p, const Tensor<T>& in,
                        const Tensor<T>& grad_out, Tensor<T>& grad_in, LayerParams<T>& grad_p) {
    const Shape4 is = in.shape();
    const Shape4 os = nd.out_shape;
    const int cin = is.c, cout = os.c;
    const T* w = p.weights.data();
    T* dw = grad_p.weights.data();
    for (int ho = 0; ho < os.h; ++ho) {
        for (int wo = 0; wo < os.w; ++wo) {
            const T* g = &grad_out.at(0, ho, wo, 0);
            for (int co = 0; co < cout; ++co) grad_p.bias[static_cast<std::size_t>(co)] += g[co];
            for (int kh = 0; kh < nd.kernel_h; ++kh) {
                const int hi = ho * nd.stride - nd.pad_top + kh;
                if (hi < 0 || hi >= is.h) continue;
                for (int kw = 0; kw < nd.kernel_w; ++kw) {
                    const int wi = wo * nd.stride - nd.pad_left + kw;
                    if (wi < 0 || wi >= is.w) continue;
                    const T* x = &in.at(0, hi, wi, 0);
                    T* dx = &grad_in.at(0, hi, wi, 0);
                    const std::int64_t base =
                        (static_cast<std::int64_t>(kh) * nd.kernel_w + kw) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const T a = x[ci];
                        const T* wp = w + base + static_cast<std::int64_t>(ci) * cout;
                        T* dwp = dw + base + static_cast<std::int64_t>(ci) * cout;
                        T acc{};
                        for (int co = 0; co < cout; ++co) {
                            dwp[co] += a * g[co];
                            acc += wp[co] * g[co];
                        }
                        dx[ci] += acc;
                    }
                }
            }
        }
    }
}

template <typename T>
void dense_node_backward(const Node& nd, const LayerParams<T>& p, const Tensor<T>& in,
                         const Tensor<T>& grad_out, Tensor<T>& grad_in, LayerParams<T>& grad_p) {
    const int k_n = in.shape().c;
    const int units = nd.out_shape.c;
    const T* w = p.weights.data();
    T* dw = grad_p.weights.data();
    const T* g = grad_out.data();
    for (int u = 0; u < units; ++u) grad_p.bias[static_cast<std::size_t>(u)] += g[u];
    for (int k = 0; k < k_n; ++k) {
        const T a = in[k];
        const T* wp = w + static_cast<std::int64_t>(k) * units;
        T* dwp = dw + static_cast<std::int64_t>(k) * units;
        T acc{};
        for (int u = 0; u < units; ++u) {
            dwp[u] += a * g[u];
            acc += wp[u] * g[u];
        }
        grad_in[k] += acc;
    }
}

}  // namespace

template <typename T>
ModelParamsT<T> backward(const Network& net, const ModelParamsT<T>& params,
                         const ForwardRecord<T>& record, T d_loss_d_p) {
    if (record.activations.size() != net.nodes.size()) {
        throw Error(ErrorKind::StateError, "forward record does not match network");
    }
    if (static_cast<int>(params.size()) != net.num_param_layers) {
        throw Error(ErrorKind::StateError, "parameter list does not match network");
    }

    ModelParamsT<T> grads = zero_like(params);
    std::vector<Tensor<T>> grad_acts(net.nodes.size());
    for (std::size_t i = 0; i < net.nodes.size(); ++i) {
        grad_acts[i] = Tensor<T>(net.nodes[i].out_shape);
    }
    grad_acts.back()[0] = d_loss_d_p;

    for (std::size_t i = net.nodes.size(); i-- > 1;) {
        const Node& nd = net.nodes[i];
        const Tensor<T>& in = record.activations[static_cast<std::size_t>(nd.inputs[0])];
        const Tensor<T>& act = record.activations[i];
        Tensor<T>& gout = grad_acts[i];
        Tensor<T>& gin = grad_acts[static_cast<std::size_t>(nd.inputs[0])];

        // Relu folded into conv/dense: zero the upstream gradient where the
        // post-activation output is not positive.
        if (nd.relu && (nd.kind == NodeKind::Conv || nd.kind == NodeKind::Dense)) {
            for (std::int64_t j = 0; j < gout.size(); ++j) {
                if (!(act[j] > T{})) gout[j] = T{};
            }
        }

        switch (nd.kind) {
            case NodeKind::Conv:
                conv_node_backward(nd, params[static_cast<std::size_t>(nd.param_index)], in, gout,
                                   gin, grads[static_cast<std::size_t>(nd.param_index)]);
                break;
            case NodeKind::Dense:
                dense_node_backward(nd, params[static_cast<std::size_t>(nd.param_index)], in, gout,
                                    gin, grads[static_cast<std::size_t>(nd.param_index)]);
                break;
            case NodeKind::MaxPool: {
                const Shape4 os = nd.out_shape;
                for (int ho = 0; ho < os.h; ++ho) {
                    for (int wo = 0; wo < os.w; ++wo) {
                        for (int c = 0; c < os.c; ++c) {
                            // Route to the first maximum in row-major window order.
                            int bh = ho * nd.stride, bw = wo * nd.stride;
                            T best = in.at(0, bh, bw, c);
                            for (int kh = 0; kh < nd.pool; ++kh) {
                                for (int kw = 0; kw < nd.pool; ++kw) {
                                    const T v = in.at(0, ho * nd.stride + kh, wo * nd.stride + kw, c);
                                    if (v > best) {
                                        best = v;
                                        bh = ho * nd.stride + kh;
                                        bw = wo * nd.stride + kw;
                                    }
                                }
                            }
                            gin.at(0, bh, bw, c) += gout.at(0, ho, wo, c);
                        }
                    }
                }
                break;
            }
            case NodeKind::GlobalAvgPool: {
                const Shape4 is = in.shape();
                const T inv_count = static_cast<T>(1) / static_cast<T>(is.h * is.w);
                for (int c = 0; c < is.c; ++c) {
                    const T g = gout[c] * inv_count;
                    for (int h = 0; h < is.h; ++h) {
                        for (int w = 0; w < is.w; ++w) gin.at(0, h, w, c) += g;
                    }
                }
                break;
            }
            case NodeKind::Flatten:
                for (std::int64_t j = 0; j < gout.size(); ++j) gin[j] += gout[j];
                break;
            case NodeKind::Dropout: {
                const Tensor<std::uint8_t>& mask = record.dropout_masks[i];
                if (mask.size() == 0) {
                    for (std::int64_t j = 0; j < gout.size(); ++j) gin[j] += gout[j];
                } else {
                    const T keep_scale =
                        static_cast<T>(1) / (static_cast<T>(1) - static_cast<T>(nd.dropout_rate));
                    for (std::int64_t j = 0; j < gout.size(); ++j) {
                        if (mask[j]) gin[j] += gout[j] * keep_scale;
                    }
                }
                break;
            }
            case NodeKind::Concat: {
                Tensor<T>& gin2 = grad_acts[static_cast<std::size_t>(nd.inputs[1])];
                const Shape4 os = nd.out_shape;
                const int c0 = in.shape().c;
                for (int h = 0; h < os.h; ++h) {
                    for (int w = 0; w < os.w; ++w) {
                        for (int c = 0; c < c0; ++c) gin.at(0, h, w, c) += gout.at(0, h, w, c);
                        for (int c = c0; c < os.c; ++c)
                            gin2.at(0, h, w, c - c0) += gout.at(0, h, w, c);
                    }
                }
                break;
            }
            case NodeKind::SigmoidHead: {
                const T p = act[0];
                gin[0] += gout[0] * p * (static_cast<T>(1) - p);
                break;
            }
            case NodeKind::Input:
                throw Error(ErrorKind::StateError, "unexpected input node mid-graph");
        }
    }
    return grads;
}

// Explicit instantiations: float is the production path, double backs the
// finite-difference gradient checks.
template ModelParamsT<float> init_params<float>(const Network&, std::uint64_t);
template ModelParamsT<double> init_params<double>(const Network&, std::uint64_t);
template ModelParamsT<float> zero_like<float>(const ModelParamsT<float>&);
template ModelParamsT<double> zero_like<double>(const ModelParamsT<double>&);
template ModelParamsT<double> cast_params<float, double>(const ModelParamsT<float>&);
template ModelParamsT<float> cast_params<double, float>(const ModelParamsT<double>&);
template ForwardRecord<float> forward<float>(const Network&, const ModelParamsT<float>&,
                                             const Tensor<float>&, RunMode, std::uint64_t);
template ForwardRecord<double> forward<double>(const Network&, const ModelParamsT<double>&,
                                               const Tensor<double>&, RunMode, std::uint64_t);
template ModelParamsT<float> backward<float>(const Network&, const ModelParamsT<float>&,
                                             const ForwardRecord<float>&, float);
template ModelParamsT<double> backward<double>(const Network&, const ModelParamsT<double>&,
                                               const ForwardRecord<double>&, double);

}  // namespace tinyquant
