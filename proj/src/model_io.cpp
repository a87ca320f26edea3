#include "tinyquant/model_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace tinyquant {

namespace {

constexpr char kMagic[4] = {'T', 'Q', 'M', '1'};
constexpr std::size_t kHeaderBytes = 20;

class Writer {
public:
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) { raw_le(v); }
    void u32(std::uint32_t v) { raw_le(v); }
    void u64(std::uint64_t v) { raw_le(v); }
    void i32(std::int32_t v) { raw_le(static_cast<std::uint32_t>(v)); }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, sizeof u);
        raw_le(u);
    }
    void blob(const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + len);
    }

private:
    template <typename U>
    void raw_le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {}

    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
    float f32() {
        const std::uint32_t u = le<std::uint32_t>();
        float v;
        std::memcpy(&v, &u, sizeof v);
        return v;
    }
    std::string str(std::size_t len) {
        const std::uint8_t* p = take(len);
        return std::string(reinterpret_cast<const char*>(p), len);
    }
    const std::uint8_t* take(std::size_t len) {
        if (pos_ + len > len_) {
            throw Error(ErrorKind::CorruptionError, "container payload ends unexpectedly");
        }
        const std::uint8_t* p = data_ + pos_;
        pos_ += len;
        return p;
    }
    bool done() const { return pos_ == len_; }

private:
    template <typename U>
    U le() {
        const std::uint8_t* p = take(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v = static_cast<U>(v | (static_cast<U>(p[i]) << (8 * i)));
        }
        return v;
    }

    const std::uint8_t* data_;
    std::size_t len_;
    std::size_t pos_ = 0;
};

std::uint32_t payload_crc(const std::vector<std::uint8_t>& payload) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
}

std::vector<std::uint8_t> frame(ModelFlavor flavor, const std::vector<std::uint8_t>& payload) {
    Writer w;
    w.blob(kMagic, 4);
    w.u16(kContainerVersion);
    w.u8(static_cast<std::uint8_t>(flavor));
    w.u8(0);  // reserved
    w.u64(payload.size());
    w.u32(payload_crc(payload));
    w.blob(payload.data(), payload.size());
    return std::move(w.bytes);
}

struct Header {
    ModelFlavor flavor;
    const std::uint8_t* payload;
    std::size_t payload_len;
};

Header open_container(const std::vector<std::uint8_t>& bytes, bool verify_crc) {
    if (bytes.size() < kHeaderBytes) {
        throw Error(ErrorKind::FormatError, "container smaller than its 20-byte header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorKind::FormatError, "bad container magic (expected TQM1)");
    }
    Reader r(bytes.data() + 4, bytes.size() - 4);
    const std::uint16_t version = r.u16();
    if (version != kContainerVersion) {
        throw Error(ErrorKind::VersionError,
                    "unsupported container version " + std::to_string(version));
    }
    const std::uint8_t flavor = r.u8();
    if (flavor > 1) {
        throw Error(ErrorKind::FormatError, "unknown model flavor " + std::to_string(flavor));
    }
    r.u8();  // reserved
    const std::uint64_t payload_len = r.u64();
    const std::uint32_t crc = r.u32();
    if (bytes.size() - kHeaderBytes != payload_len) {
        throw Error(ErrorKind::CorruptionError,
                    "payload length field " + std::to_string(payload_len) + " does not match " +
                        std::to_string(bytes.size() - kHeaderBytes) + " bytes present");
    }
    if (verify_crc) {
        const std::uint32_t actual = static_cast<std::uint32_t>(
            ::crc32(0L, bytes.data() + kHeaderBytes, static_cast<uInt>(payload_len)));
        if (actual != crc) {
            throw Error(ErrorKind::CorruptionError, "payload checksum mismatch");
        }
    }
    return Header{static_cast<ModelFlavor>(flavor), bytes.data() + kHeaderBytes,
                  static_cast<std::size_t>(payload_len)};
}

void write_config(Writer& w, const NetworkConfig& cfg) {
    const std::string text = network_config_to_text(cfg);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.blob(text.data(), text.size());
}

NetworkConfig read_config(Reader& r) {
    const std::uint32_t len = r.u32();
    return parse_network_config(r.str(len));
}

void write_shape(Writer& w, const Shape4& s) {
    w.i32(s.n);
    w.i32(s.h);
    w.i32(s.w);
    w.i32(s.c);
}

Shape4 read_shape(Reader& r) {
    Shape4 s;
    s.n = r.i32();
    s.h = r.i32();
    s.w = r.i32();
    s.c = r.i32();
    return s;
}

}  // namespace

std::vector<std::uint8_t> serialize(const NetworkConfig& cfg, const ModelParams& params) {
    Writer w;
    write_config(w, cfg);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const LayerParams<float>& lp : params) {
        write_shape(w, lp.weights.shape());
        for (std::int64_t i = 0; i < lp.weights.size(); ++i) w.f32(lp.weights[i]);
        w.u32(static_cast<std::uint32_t>(lp.bias.size()));
        for (float b : lp.bias) w.f32(b);
    }
    return frame(ModelFlavor::Float32, w.bytes);
}

std::vector<std::uint8_t> serialize(const QuantizedModel& qm) {
    Writer w;
    write_config(w, qm.net_cfg);
    w.u32(static_cast<std::uint32_t>(qm.edge_qp.size()));
    for (const QuantParams& qp : qm.edge_qp) {
        w.u32(static_cast<std::uint32_t>(qp.scales.size()));
        for (float s : qp.scales) w.f32(s);
        w.i32(qp.zero_point);
    }
    w.u32(static_cast<std::uint32_t>(qm.layers.size()));
    for (const QuantLayer& ql : qm.layers) {
        write_shape(w, ql.weights.shape());
        w.blob(ql.weights.data(), static_cast<std::size_t>(ql.weights.size()));
        w.u32(static_cast<std::uint32_t>(ql.weight_qp.scales.size()));
        for (float s : ql.weight_qp.scales) w.f32(s);
        w.i32(ql.weight_qp.zero_point);
        w.u32(static_cast<std::uint32_t>(ql.bias.size()));
        for (std::int32_t b : ql.bias) w.i32(b);
        w.u32(static_cast<std::uint32_t>(ql.requant.size()));
        for (const RequantParams& rq : ql.requant) {
            w.i32(rq.multiplier_q31);
            w.i32(rq.right_shift);
        }
    }
    return frame(ModelFlavor::Int8, w.bytes);
}

ModelFlavor peek_flavor(const std::vector<std::uint8_t>& bytes) {
    return open_container(bytes, false).flavor;
}

FloatModel deserialize_float(const std::vector<std::uint8_t>& bytes) {
    const Header h = open_container(bytes, true);
    if (h.flavor != ModelFlavor::Float32) {
        throw Error(ErrorKind::FormatError, "container holds an int8 model, expected float32");
    }
    Reader r(h.payload, h.payload_len);
    FloatModel m;
    m.cfg = read_config(r);
    const std::uint32_t layers = r.u32();
    m.params.resize(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        const Shape4 shape = read_shape(r);
        TensorF weights(shape);
        for (std::int64_t i = 0; i < weights.size(); ++i) weights[i] = r.f32();
        m.params[l].weights = std::move(weights);
        const std::uint32_t nb = r.u32();
        m.params[l].bias.resize(nb);
        for (std::uint32_t i = 0; i < nb; ++i) m.params[l].bias[i] = r.f32();
    }
    if (!r.done()) throw Error(ErrorKind::CorruptionError, "trailing bytes after float payload");

    // Cross-check the blobs against the config's own layout.
    const Network net = lower(m.cfg);
    if (static_cast<int>(m.params.size()) != net.num_param_layers) {
        throw Error(ErrorKind::CorruptionError, "parameter blob count does not match network");
    }
    return m;
}

QuantizedModel deserialize_int8(const std::vector<std::uint8_t>& bytes) {
    const Header h = open_container(bytes, true);
    if (h.flavor != ModelFlavor::Int8) {
        throw Error(ErrorKind::FormatError, "container holds a float32 model, expected int8");
    }
    Reader r(h.payload, h.payload_len);
    QuantizedModel qm;
    qm.net_cfg = read_config(r);
    qm.net = lower(qm.net_cfg);

    const std::uint32_t edges = r.u32();
    if (edges != qm.net.nodes.size()) {
        throw Error(ErrorKind::CorruptionError, "edge table does not match network node count");
    }
    qm.edge_qp.resize(edges);
    for (std::uint32_t i = 0; i < edges; ++i) {
        const std::uint32_t ns = r.u32();
        qm.edge_qp[i].scales.resize(ns);
        for (std::uint32_t s = 0; s < ns; ++s) qm.edge_qp[i].scales[s] = r.f32();
        qm.edge_qp[i].zero_point = r.i32();
    }

    const std::uint32_t layers = r.u32();
    if (static_cast<int>(layers) != qm.net.num_param_layers) {
        throw Error(ErrorKind::CorruptionError, "quant layer count does not match network");
    }
    qm.layers.resize(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        QuantLayer& ql = qm.layers[l];
        const Shape4 shape = read_shape(r);
        const std::int64_t n = shape.numel();
        if (n < 0) throw Error(ErrorKind::CorruptionError, "negative weight extent");
        TensorI8 weights(shape);
        const std::uint8_t* blob = r.take(static_cast<std::size_t>(n));
        std::memcpy(weights.data(), blob, static_cast<std::size_t>(n));
        ql.weights = std::move(weights);
        const std::uint32_t ns = r.u32();
        ql.weight_qp.scales.resize(ns);
        for (std::uint32_t s = 0; s < ns; ++s) ql.weight_qp.scales[s] = r.f32();
        ql.weight_qp.zero_point = r.i32();
        const std::uint32_t nb = r.u32();
        ql.bias.resize(nb);
        for (std::uint32_t i = 0; i < nb; ++i) ql.bias[i] = r.i32();
        const std::uint32_t nq = r.u32();
        ql.requant.resize(nq);
        for (std::uint32_t i = 0; i < nq; ++i) {
            ql.requant[i].multiplier_q31 = r.i32();
            ql.requant[i].right_shift = r.i32();
        }
        if (nb != static_cast<std::uint32_t>(shape.c) || nq != nb) {
            throw Error(ErrorKind::CorruptionError, "bias/requant tables do not match channels");
        }
    }
    if (!r.done()) throw Error(ErrorKind::CorruptionError, "trailing bytes after int8 payload");
    return qm;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::NotFound, "cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::DataError, "short write to '" + path + "'");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::NotFound, "cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

SizeReport size_report(std::int64_t float_bytes, std::int64_t int8_bytes) {
    if (float_bytes <= 0 || int8_bytes <= 0) {
        throw Error(ErrorKind::UsageError, "size_report: sizes must be positive");
    }
    SizeReport r;
    r.float_bytes = float_bytes;
    r.int8_bytes = int8_bytes;
    r.reduction_pct =
        100.0 * (1.0 - static_cast<double>(int8_bytes) / static_cast<double>(float_bytes));
    return r;
}

BudgetCheck budget_check(std::int64_t model_bytes, std::int64_t budget_bytes) {
    if (model_bytes <= 0 || budget_bytes <= 0) {
        throw Error(ErrorKind::UsageError, "budget_check: sizes must be positive");
    }
    return BudgetCheck{model_bytes < budget_bytes, model_bytes, budget_bytes,
                       budget_bytes - model_bytes};
}

ContainerInfo inspect(const std::vector<std::uint8_t>& bytes) {
    const Header h = open_container(bytes, true);
    ContainerInfo info;
    info.version = kContainerVersion;
    info.flavor = h.flavor;
    info.payload_bytes = h.payload_len;
    info.crc32 = payload_crc(std::vector<std::uint8_t>(h.payload, h.payload + h.payload_len));
    info.container_bytes = static_cast<std::int64_t>(bytes.size());

    Reader r(h.payload, h.payload_len);
    const NetworkConfig cfg = read_config(r);
    info.network_name = cfg.name;
    const Network net = lower(cfg);
    info.param_layers = net.num_param_layers;
    info.param_count = param_count(cfg);
    return info;
}

}  // namespace tinyquant
