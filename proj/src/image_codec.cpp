#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>

#include "tinyquant/datakit.hpp"

namespace tinyquant {

Image::Image(int h_, int w_, int c_, std::uint8_t fill)
    : h(h_), w(w_), c(c_),
      pixels(static_cast<std::size_t>(std::max(h_, 0)) * static_cast<std::size_t>(std::max(w_, 0)) *
                 static_cast<std::size_t>(std::max(c_, 0)),
             fill) {
    if (h_ < 1 || w_ < 1 || (c_ != 1 && c_ != 3)) {
        throw Error(ErrorKind::DataError, "image dimensions must be HxWxC with C in {1,3}");
    }
}

namespace {

constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

std::uint32_t be32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 + 12 || std::memcmp(bytes.data(), kPngSig, 8) != 0) {
        throw Error(ErrorKind::DataError, "not a PNG stream");
    }

    std::size_t pos = 8;
    int width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;

    while (pos + 12 <= bytes.size() && !saw_iend) {
        const std::uint32_t len = be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) {
            throw Error(ErrorKind::DataError, "PNG chunk overruns the stream");
        }
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const std::uint8_t* data = &bytes[pos + 8];
        const std::uint32_t stored_crc = be32(&bytes[pos + 8 + len]);
        std::uint32_t crc = static_cast<std::uint32_t>(::crc32(0L, &bytes[pos + 4], len + 4));
        if (crc != stored_crc) throw Error(ErrorKind::DataError, "PNG chunk CRC mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw Error(ErrorKind::DataError, "bad IHDR length");
            width = static_cast<int>(be32(data));
            height = static_cast<int>(be32(data + 4));
            const int bit_depth = data[8];
            const int color_type = data[9];
            const int interlace = data[12];
            if (bit_depth != 8) {
                throw Error(ErrorKind::DataError,
                            "unsupported PNG bit depth " + std::to_string(bit_depth));
            }
            if (interlace != 0) throw Error(ErrorKind::DataError, "interlaced PNGs unsupported");
            switch (color_type) {
                case 0: channels = 1; break;
                case 2: channels = 3; break;
                case 4: channels = 2; break;
                case 6: channels = 4; break;
                default:
                    throw Error(ErrorKind::DataError,
                                "unsupported PNG color type " + std::to_string(color_type));
            }
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty()) {
        throw Error(ErrorKind::DataError, "PNG missing IHDR/IDAT/IEND");
    }
    if (width < 1 || height < 1) throw Error(ErrorKind::DataError, "empty PNG image");

    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw Error(ErrorKind::DataError, "PNG pixel data fails to inflate");
    }

    // Undo per-scanline filtering in place (recon rows packed tightly).
    std::vector<std::uint8_t> recon(stride * static_cast<std::size_t>(height));
    const int bpp = channels;
    for (int y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const std::uint8_t* src = &raw[static_cast<std::size_t>(y) * (stride + 1) + 1];
        std::uint8_t* dst = &recon[static_cast<std::size_t>(y) * stride];
        const std::uint8_t* prev = y > 0 ? dst - stride : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            const int left = x >= static_cast<std::size_t>(bpp) ? dst[x - static_cast<std::size_t>(bpp)] : 0;
            const int up = prev ? prev[x] : 0;
            const int upleft =
                (prev && x >= static_cast<std::size_t>(bpp)) ? prev[x - static_cast<std::size_t>(bpp)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, upleft); break;
                default: throw Error(ErrorKind::DataError, "unknown PNG filter type");
            }
            dst[x] = static_cast<std::uint8_t>(v & 0xff);
        }
    }

    const int out_c = channels >= 3 ? 3 : 1;
    Image img(height, width, out_c);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::uint8_t* px = &recon[(static_cast<std::size_t>(y) * width + x) * channels];
            for (int ch = 0; ch < out_c; ++ch) img.at(y, x, ch) = px[ch];
        }
    }
    return img;
}

void push_chunk(std::vector<std::uint8_t>& out, const char type[4],
                const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, &out[type_pos], static_cast<uInt>(4 + data.size())));
    put_be32(out, crc);
}

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto peek = [&]() -> int { return pos < bytes.size() ? bytes[pos] : -1; };
    auto skip_space = [&]() {
        while (pos < bytes.size()) {
            if (std::isspace(peek())) {
                ++pos;
            } else if (peek() == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(peek())) {
            throw Error(ErrorKind::DataError, "malformed PPM header");
        }
        long v = 0;
        while (pos < bytes.size() && std::isdigit(peek())) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > 1 << 20) throw Error(ErrorKind::DataError, "PPM dimension out of range");
        }
        return static_cast<int>(v);
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw Error(ErrorKind::DataError, "not a binary PPM/PGM stream");
    }
    const int c = bytes[1] == '6' ? 3 : 1;
    pos = 2;
    const int w = read_int();
    const int h = read_int();
    const int maxval = read_int();
    if (maxval != 255) throw Error(ErrorKind::DataError, "PPM maxval must be 255");
    ++pos;  // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * c;
    if (pos + need > bytes.size()) throw Error(ErrorKind::DataError, "PPM pixel data truncated");
    Image img(h, w, c);
    std::memcpy(img.pixels.data(), &bytes[pos], need);
    return img;
}

}  // namespace

Image decode_image(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        return decode_ppm(bytes);
    }
    throw Error(ErrorKind::DataError, "unrecognized image format (PNG or binary PPM expected)");
}

Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::NotFound, "cannot open image '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    try {
        return decode_image(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), std::string(e.what()) + " (" + path + ")");
    }
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    const int channels = img.c;
    const std::size_t stride = static_cast<std::size_t>(img.w) * channels;
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y) {
        raw[static_cast<std::size_t>(y) * (stride + 1)] = 0;  // filter: none
        std::memcpy(&raw[static_cast<std::size_t>(y) * (stride + 1) + 1],
                    &img.pixels[static_cast<std::size_t>(y) * stride], stride);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (::compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
        Z_OK) {
        throw Error(ErrorKind::DataError, "PNG deflate failed");
    }
    compressed.resize(bound);

    std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.w));
    put_be32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);                                  // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);              // color type
    ihdr.push_back(0);                                  // compression
    ihdr.push_back(0);                                  // filter
    ihdr.push_back(0);                                  // interlace
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", compressed);
    push_chunk(out, "IEND", {});
    return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
    std::string header = std::string(img.c == 3 ? "P6" : "P5") + "\n" + std::to_string(img.w) +
                         " " + std::to_string(img.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

void save_png(const std::string& path, const Image& img) {
    const std::vector<std::uint8_t> bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::NotFound, "cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::DataError, "short write to '" + path + "'");
}

}  // namespace tinyquant
