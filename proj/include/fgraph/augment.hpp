#pragma once

// Benign redistribution transforms applied jointly to an image and its
// detections. Geometric steps remap masks and are tracked as one affine map
// from input to output pixel coordinates.

#include "fgraph/image.hpp"
#include "fgraph/nn.hpp"
#include "fgraph/scenegraph.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace fgraph::aug {

enum class Kind : std::uint8_t { jpeg, resize, flip, rotate, sharpen, color, gauss_noise, pad };
inline constexpr std::array<Kind, 6> kSecondary{Kind::flip,  Kind::rotate,      Kind::sharpen,
                                                Kind::color, Kind::gauss_noise, Kind::pad};
const char* kind_name(Kind k);

struct AugmentConfig {
    int jpeg_min = 30, jpeg_max = 95;
    double scale_min = 0.5, scale_max = 2.0;
    double rotate_max_deg = 15;
    double pad_max = 0.10;  // per side, fraction of the side length
    double noise_max = 0.05;
    double enhance_min = 0.6, enhance_max = 1.4;
    int min_secondary = 1, max_secondary = 3;
    int output_size = 128;  // 0 keeps the working size
};

struct Step {
    Kind kind = Kind::jpeg;
    std::array<double, 4> p{};  // jpeg: quality; resize: scale; rotate: degrees;
                                // sharpen/color: factor; gauss_noise: sigma, seed;
                                // pad: left, top, right, bottom fractions
};

struct Plan {
    std::vector<Step> steps;
};

// (jpeg, resize) then 1..3 distinct secondary kinds in random order.
Plan sample_plan(const AugmentConfig& cfg, nn::Rng& rng);

// x' = a0 x + a1 y + a2, y' = a3 x + a4 y + a5 (continuous pixel coordinates).
using Affine = std::array<double, 6>;
Affine compose(const Affine& second, const Affine& first);
Affine invert(const Affine& a);
std::array<double, 2> apply(const Affine& a, double x, double y);

struct Result {
    Image image;
    std::vector<sg::Detection> detections;  // tight boxes, empty objects dropped
    Affine transform{1, 0, 0, 0, 1, 0};
};

Result apply_plan(const Image& image, std::span<const sg::Detection> detections, const Plan& plan,
                  const AugmentConfig& cfg);
Result benign_augment(const Image& image, std::span<const sg::Detection> detections, const AugmentConfig& cfg,
                      nn::Rng& rng);
Image benign_augment(const Image& image, const AugmentConfig& cfg, nn::Rng& rng);

// Individual raster steps.
Image flip_horizontal(const Image& img);
Image rotate(const Image& img, double degrees);  // about the center, black fill
Image enhance_sharpness(const Image& img, double factor);
Image enhance_color(const Image& img, double factor);
Image add_noise(const Image& img, double sigma, std::uint64_t seed);
Image pad_reflect(const Image& img, int left, int top, int right, int bottom);

}  // namespace fgraph::aug
