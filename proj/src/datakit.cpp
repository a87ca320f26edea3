#include "tinyquant/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "tinyquant/rng.hpp"

namespace fs = std::filesystem;

namespace tinyquant {

const char* resize_method_name(ResizeMethod m) {
    switch (m) {
        case ResizeMethod::Nearest: return "nearest";
        case ResizeMethod::Bilinear: return "bilinear";
        case ResizeMethod::Bicubic: return "bicubic";
        case ResizeMethod::Area: return "area";
        case ResizeMethod::Lanczos4: return "lanczos4";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Resampling. Every method is separable: per output index a list of
// (source index, weight) taps, applied first along rows then columns with
// double accumulation.

namespace {

using Taps = std::vector<std::vector<std::pair<int, double>>>;

double cubic_weight(double t) {  // Keys kernel, a = -0.75
    constexpr double a = -0.75;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0);
    return 0.0;
}

double sinc(double x) {
    if (x == 0.0) return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

double lanczos4_weight(double t) {
    if (std::abs(t) >= 4.0) return 0.0;
    return sinc(t) * sinc(t / 4.0);
}

Taps build_taps(int in, int out, ResizeMethod method) {
    Taps taps(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / out;
    auto clamp_idx = [in](int i) { return std::clamp(i, 0, in - 1); };

    for (int o = 0; o < out; ++o) {
        auto& row = taps[static_cast<std::size_t>(o)];
        const double center = (o + 0.5) * ratio - 0.5;
        switch (method) {
            case ResizeMethod::Nearest:
                row.emplace_back(clamp_idx(static_cast<int>(round_half_away(center))), 1.0);
                break;
            case ResizeMethod::Bilinear: {
                const int i0 = static_cast<int>(std::floor(center));
                const double f = center - i0;
                row.emplace_back(clamp_idx(i0), 1.0 - f);
                row.emplace_back(clamp_idx(i0 + 1), f);
                break;
            }
            case ResizeMethod::Bicubic: {
                const int base = static_cast<int>(std::floor(center));
                for (int k = -1; k <= 2; ++k) {
                    row.emplace_back(clamp_idx(base + k), cubic_weight(center - (base + k)));
                }
                break;
            }
            case ResizeMethod::Area: {
                const double start = o * ratio;
                const double end = (o + 1) * ratio;
                const int first = static_cast<int>(std::floor(start));
                const int last = static_cast<int>(std::ceil(end));
                for (int i = first; i < last; ++i) {
                    const double overlap =
                        std::min<double>(end, i + 1.0) - std::max<double>(start, i);
                    if (overlap > 0.0) row.emplace_back(clamp_idx(i), overlap / ratio);
                }
                break;
            }
            case ResizeMethod::Lanczos4: {
                const int base = static_cast<int>(std::floor(center));
                double sum = 0.0;
                for (int k = -3; k <= 4; ++k) {
                    const double wgt = lanczos4_weight(center - (base + k));
                    sum += wgt;
                    row.emplace_back(clamp_idx(base + k), wgt);
                }
                for (auto& [idx, wgt] : row) wgt /= sum;  // normalized 8-tap window
                break;
            }
        }
    }
    return taps;
}

}  // namespace

Image resize(const Image& img, int out_h, int out_w, ResizeMethod method) {
    if (out_h < 1 || out_w < 1) {
        throw Error(ErrorKind::UsageError, "resize target must be at least 1x1");
    }
    const Taps col_taps = build_taps(img.w, out_w, method);
    const Taps row_taps = build_taps(img.h, out_h, method);

    // Horizontal pass: img.h x out_w x c in double.
    std::vector<double> mid(static_cast<std::size_t>(img.h) * out_w * img.c, 0.0);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            for (const auto& [sx, wgt] : col_taps[static_cast<std::size_t>(x)]) {
                for (int ch = 0; ch < img.c; ++ch) {
                    mid[static_cast<std::size_t>((y * out_w + x) * img.c + ch)] +=
                        wgt * img.at(y, sx, ch);
                }
            }
        }
    }

    Image out(out_h, out_w, img.c);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            for (int ch = 0; ch < img.c; ++ch) {
                double acc = 0.0;
                for (const auto& [sy, wgt] : row_taps[static_cast<std::size_t>(y)]) {
                    acc += wgt * mid[static_cast<std::size_t>((sy * out_w + x) * img.c + ch)];
                }
                out.at(y, x, ch) =
                    static_cast<std::uint8_t>(std::clamp<std::int64_t>(round_half_away(acc), 0, 255));
            }
        }
    }
    return out;
}

std::vector<Image> augment_interpolation(const Image& img, int out_h, int out_w) {
    std::vector<Image> out;
    out.reserve(kAllResizeMethods.size());
    for (ResizeMethod m : kAllResizeMethods) out.push_back(resize(img, out_h, out_w, m));
    return out;
}

Image flip_horizontal(const Image& img) {
    Image out(img.h, img.w, img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y, img.w - 1 - x, ch);
        }
    }
    return out;
}

namespace {

int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

}  // namespace

Image rotate_bilinear(const Image& img, double degrees) {
    const double theta = degrees * std::numbers::pi / 180.0;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;

    Image out(img.h, img.w, img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double sy = cy + dy * cos_t - dx * sin_t;
            const double sx = cx + dy * sin_t + dx * cos_t;
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            for (int ch = 0; ch < img.c; ++ch) {
                auto px = [&](int yy, int xx) {
                    return static_cast<double>(
                        img.at(reflect_index(yy, img.h), reflect_index(xx, img.w), ch));
                };
                const double top = px(y0, x0) * (1 - fx) + px(y0, x0 + 1) * fx;
                const double bot = px(y0 + 1, x0) * (1 - fx) + px(y0 + 1, x0 + 1) * fx;
                const double v = top * (1 - fy) + bot * fy;
                out.at(y, x, ch) =
                    static_cast<std::uint8_t>(std::clamp<std::int64_t>(round_half_away(v), 0, 255));
            }
        }
    }
    return out;
}

Image adjust_brightness(const Image& img, double factor) {
    Image out(img.h, img.w, img.c);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        out.pixels[i] = static_cast<std::uint8_t>(
            std::clamp<std::int64_t>(round_half_away(img.pixels[i] * factor), 0, 255));
    }
    return out;
}

std::vector<Image> augment_standard(const Image& img, std::uint64_t seed, int ops_per_image,
                                    const AugmentOps& ops) {
    if (ops_per_image < 1) {
        throw Error(ErrorKind::UsageError, "augment_standard: ops_per_image must be >= 1");
    }
    std::vector<Image> out;
    out.reserve(static_cast<std::size_t>(ops_per_image));
    for (int k = 0; k < ops_per_image; ++k) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
        Image cur = img;
        if (ops.flip && rng.uniform01() < 0.5) cur = flip_horizontal(cur);
        if (ops.rotate) cur = rotate_bilinear(cur, rng.uniform(-15.0, 15.0));
        if (ops.brightness) cur = adjust_brightness(cur, rng.uniform(0.8, 1.2));
        out.push_back(std::move(cur));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests

int DatasetManifest::count(int label) const {
    int n = 0;
    for (const ManifestEntry& e : entries) n += e.label == label;
    return n;
}

LoadReport load_dataset(const std::string& root) {
    LoadReport report;
    const std::pair<const char*, int> classes[] = {{"mask", 1}, {"no_mask", 0}};
    for (const auto& [dir_name, label] : classes) {
        const fs::path dir = fs::path(root) / dir_name;
        if (!fs::is_directory(dir)) {
            throw Error(ErrorKind::DataError,
                        "dataset root is missing class directory '" + dir.string() + "'");
        }
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        int loaded = 0;
        for (const fs::path& file : files) {
            try {
                ManifestEntry e;
                e.path = file.string();
                e.label = label;
                e.tag = dir_name;
                e.image = load_image(file.string());
                report.manifest.entries.push_back(std::move(e));
                ++loaded;
            } catch (const Error& err) {
                report.skipped.push_back(SkippedFile{file.string(), err.what()});
            }
        }
        if (loaded == 0) {
            throw Error(ErrorKind::DataError,
                        "class directory '" + dir.string() + "' has no decodable images");
        }
    }
    return report;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw Error(ErrorKind::UsageError, "split: val_fraction must lie in (0,1)");
    }
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        by_class[manifest.entries[i].label == 1].push_back(i);
    }
    for (int cls = 0; cls < 2; ++cls) {
        if (by_class[cls].size() < 2) {
            throw Error(ErrorKind::DataError,
                        "split: class " + std::to_string(cls) + " has fewer than 2 samples");
        }
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cls)));
        rng.shuffle(by_class[cls]);
    }

    // Validation quotas: floor of the per-class ideal share, remaining seats
    // by largest fractional remainder (ties to the lower class index), each
    // class keeping at least one sample on both sides.
    const double total = static_cast<double>(manifest.entries.size());
    const std::int64_t target = round_half_away(total * val_fraction);
    double ideal[2];
    std::int64_t quota[2];
    for (int cls = 0; cls < 2; ++cls) {
        ideal[cls] = static_cast<double>(by_class[cls].size()) * val_fraction;
        quota[cls] = static_cast<std::int64_t>(std::floor(ideal[cls]));
    }
    std::int64_t leftover = target - quota[0] - quota[1];
    while (leftover > 0) {
        const int cls = (ideal[0] - static_cast<double>(quota[0])) >=
                                (ideal[1] - static_cast<double>(quota[1]))
                            ? 0
                            : 1;
        ++quota[cls];
        --leftover;
    }
    for (int cls = 0; cls < 2; ++cls) {
        quota[cls] = std::clamp<std::int64_t>(quota[cls], 1,
                                              static_cast<std::int64_t>(by_class[cls].size()) - 1);
    }

    std::vector<bool> in_val(manifest.entries.size(), false);
    for (int cls = 0; cls < 2; ++cls) {
        for (std::int64_t k = 0; k < quota[cls]; ++k) {
            in_val[by_class[cls][static_cast<std::size_t>(k)]] = true;
        }
    }
    std::pair<DatasetManifest, DatasetManifest> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        (in_val[i] ? out.second : out.first).entries.push_back(manifest.entries[i]);
    }
    return out;
}

DatasetManifest synth_dataset(int n, std::uint64_t seed) {
    if (n < 2 || n % 2 != 0) {
        throw Error(ErrorKind::UsageError, "synth_dataset: n must be even and >= 2");
    }
    DatasetManifest manifest;
    manifest.entries.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i < n / 2 ? 1 : 0;
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));

        const int bg = 30 + static_cast<int>(rng.below(20));
        const int skin = 140 + static_cast<int>(rng.below(40));
        const int cy = 14 + static_cast<int>(rng.below(3));
        const int cx = 14 + static_cast<int>(rng.below(3));
        const int ry = 10 + static_cast<int>(rng.below(3));
        const int rx = 7 + static_cast<int>(rng.below(3));

        Image img(32, 32, 3);
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                const double ey = static_cast<double>(y - cy) / ry;
                const double ex = static_cast<double>(x - cx) / rx;
                const bool face = ey * ey + ex * ex <= 1.0;
                int base[3];
                if (face) {
                    base[0] = skin + 15;
                    base[1] = skin - 5;
                    base[2] = skin - 35;
                } else {
                    base[0] = base[1] = base[2] = bg;
                }
                const bool eye = face && y == cy - 3 && (x == cx - 3 || x == cx + 3);
                const bool mask_px = label == 1 && face && y > cy + 1 && y <= cy + ry &&
                                     x > cx - rx && x < cx + rx;
                for (int ch = 0; ch < 3; ++ch) {
                    int v = base[ch];
                    if (eye) v = 25;
                    if (mask_px) v = ch == 0 ? 205 : (ch == 1 ? 225 : 235);
                    v += static_cast<int>(rng.below(21)) - 10;  // per-pixel noise
                    img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
                }
            }
        }
        ManifestEntry e;
        e.label = label;
        e.tag = "synth";
        e.image = std::move(img);
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

TensorF to_tensor(const Image& img) {
    TensorF t(Shape4{1, img.h, img.w, img.c});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        t[static_cast<std::int64_t>(i)] = static_cast<float>(img.pixels[i]) / 255.0f;
    }
    return t;
}

std::vector<Sample> to_samples(const DatasetManifest& manifest) {
    std::vector<Sample> out;
    out.reserve(manifest.entries.size());
    for (const ManifestEntry& e : manifest.entries) {
        out.push_back(Sample{to_tensor(e.image), e.label});
    }
    return out;
}

std::string manifest_index_csv(const DatasetManifest& manifest) {
    std::ostringstream out;
    out << "path,label,tag\n";
    for (const ManifestEntry& e : manifest.entries) {
        out << e.path << ',' << e.label << ',' << e.tag << '\n';
    }
    return out.str();
}

}  // namespace tinyquant
