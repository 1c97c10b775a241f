#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgraph {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// RGB raster, interleaved, values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, float fill = 0.0f);

    bool empty() const { return width <= 0 || height <= 0; }
    float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    bool operator==(const Image&) const = default;
};

struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h, bool fill = false);

    bool get(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v = true) {
        bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
    std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

// Inclusive pixel bounds of the set pixels; returns false for an empty mask.
struct PixelBounds {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
};
bool mask_bounds(const Mask& m, PixelBounds& out);

// Separable triangle-filter resampling; the filter widens when downscaling.
Image resize(const Image& img, int width, int height);
Mask resize_nearest(const Mask& m, int width, int height);
Image crop(const Image& img, int x0, int y0, int w, int h);

// ITU-R 601 luma.
std::vector<double> to_gray(const Image& img);
// Resample a single-channel plane with the same filter as resize().
std::vector<double> resize_plane(const std::vector<double>& plane, int w, int h, int nw, int nh);

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);
void write_png_gray(const std::string& path, const std::vector<double>& plane, int w, int h);
void write_pgm(const std::string& path, const std::vector<double>& plane, int w, int h);

// Encode to baseline JPEG at `quality` and decode again.
Image jpeg_roundtrip(const Image& img, int quality);

// Run-length encoding of a mask: alternating 0/1 run lengths in row-major
// order, starting with the count of leading zeros (possibly 0).
std::vector<std::uint32_t> rle_encode(const Mask& m);
Mask rle_decode(const std::vector<std::uint32_t>& counts, int width, int height);

}  // namespace fgraph
