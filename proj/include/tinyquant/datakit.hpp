#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tinyquant/tensor.hpp"

namespace tinyquant {

// 8-bit image, row-major h x w x c, c in {1, 3}.
struct Image {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int h_, int w_, int c_, std::uint8_t fill = 0);

    std::uint8_t& at(int y, int x, int ch) {
        return pixels[static_cast<std::size_t>((y * w + x) * c + ch)];
    }
    std::uint8_t at(int y, int x, int ch) const {
        return pixels[static_cast<std::size_t>((y * w + x) * c + ch)];
    }
    bool operator==(const Image&) const = default;
};

// Decoders sniff the format (PNG or binary PPM/PGM); RGBA/gray+alpha PNGs
// load with the alpha stripped.
Image decode_image(const std::vector<std::uint8_t>& bytes);
Image load_image(const std::string& path);
std::vector<std::uint8_t> encode_png(const Image& img);
std::vector<std::uint8_t> encode_ppm(const Image& img);
void save_png(const std::string& path, const Image& img);

enum class ResizeMethod { Nearest, Bilinear, Bicubic, Area, Lanczos4 };

inline constexpr std::array<ResizeMethod, 5> kAllResizeMethods = {
    ResizeMethod::Nearest, ResizeMethod::Bilinear, ResizeMethod::Bicubic, ResizeMethod::Area,
    ResizeMethod::Lanczos4};

const char* resize_method_name(ResizeMethod m);

// Half-pixel-center resampling; bicubic uses a = -0.75, lanczos4 an 8-tap
// normalized window, area a fractional box mean. Accumulation in double,
// rounded half-away and clamped to [0,255] once at the end.
Image resize(const Image& img, int out_h, int out_w, ResizeMethod method);

// One 32x32 resize per method, in kAllResizeMethods order.
std::vector<Image> augment_interpolation(const Image& img, int out_h = 32, int out_w = 32);

Image flip_horizontal(const Image& img);
// Rotation about the image center, bilinear sampling, reflected borders.
Image rotate_bilinear(const Image& img, double degrees);
Image adjust_brightness(const Image& img, double factor);

struct AugmentOps {
    bool flip = true;
    bool rotate = true;      // uniform in [-15, 15] degrees
    bool brightness = true;  // uniform factor in [0.8, 1.2]
};

// ops_per_image seeded random flip/rotate/brightness compositions.
std::vector<Image> augment_standard(const Image& img, std::uint64_t seed, int ops_per_image,
                                    const AugmentOps& ops = {});

struct ManifestEntry {
    std::string path;  // empty for in-memory images
    int label = 0;     // 1 = mask, 0 = no mask
    std::string tag;
    Image image;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    int count(int label) const;
};

struct SkippedFile {
    std::string path;
    std::string reason;
};

struct LoadReport {
    DatasetManifest manifest;
    std::vector<SkippedFile> skipped;
};

// Expects root/mask and root/no_mask; files ordered lexicographically,
// undecodable ones reported in `skipped` rather than failing the load.
LoadReport load_dataset(const std::string& root);

// Stratified split: per-class seeded shuffle, validation quota by largest
// remainder against round(total * val_fraction), at least one sample of each
// class on both sides.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double val_fraction, std::uint64_t seed);

// n/2 mask + n/2 no-mask synthetic 32x32x3 faces: noisy oval on noisy
// background; the mask class adds a bright rectangle over the lower face.
DatasetManifest synth_dataset(int n, std::uint64_t seed);

// The one normalization used everywhere: pixel / 255 into [0,1], shape 1xHxWxC.
TensorF to_tensor(const Image& img);
std::vector<Sample> to_samples(const DatasetManifest& manifest);

std::string manifest_index_csv(const DatasetManifest& manifest);

}  // namespace tinyquant
