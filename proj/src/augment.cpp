#include "fgraph/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace fgraph::aug {

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::jpeg: return "jpeg";
        case Kind::resize: return "resize";
        case Kind::flip: return "flip";
        case Kind::rotate: return "rotate";
        case Kind::sharpen: return "sharpen";
        case Kind::color: return "color";
        case Kind::gauss_noise: return "gauss_noise";
        case Kind::pad: return "pad";
    }
    return "?";
}

Plan sample_plan(const AugmentConfig& cfg, nn::Rng& rng) {
    if (cfg.min_secondary < 1 || cfg.max_secondary < cfg.min_secondary ||
        cfg.max_secondary > static_cast<int>(kSecondary.size()))
        throw std::invalid_argument("augment: bad secondary count range");
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    Plan p;
    p.steps.push_back({Kind::jpeg, {static_cast<double>(std::uniform_int_distribution<int>(cfg.jpeg_min, cfg.jpeg_max)(rng))}});
    p.steps.push_back({Kind::resize, {u(cfg.scale_min, cfg.scale_max)}});
    const int count = std::uniform_int_distribution<int>(cfg.min_secondary, cfg.max_secondary)(rng);
    auto kinds = kSecondary;
    std::shuffle(kinds.begin(), kinds.end(), rng);
    for (int i = 0; i < count; ++i) {
        Step s{kinds[static_cast<std::size_t>(i)], {}};
        switch (s.kind) {
            case Kind::rotate: s.p[0] = u(-cfg.rotate_max_deg, cfg.rotate_max_deg); break;
            case Kind::sharpen:
            case Kind::color: s.p[0] = u(cfg.enhance_min, cfg.enhance_max); break;
            case Kind::gauss_noise:
                s.p[0] = u(0.0, cfg.noise_max);
                s.p[1] = static_cast<double>(rng() >> 11);
                break;
            case Kind::pad:
                for (auto& f : s.p) f = u(0.0, cfg.pad_max);
                break;
            default: break;
        }
        p.steps.push_back(s);
    }
    return p;
}

Affine compose(const Affine& b, const Affine& a) {
    return {b[0] * a[0] + b[1] * a[3], b[0] * a[1] + b[1] * a[4], b[0] * a[2] + b[1] * a[5] + b[2],
            b[3] * a[0] + b[4] * a[3], b[3] * a[1] + b[4] * a[4], b[3] * a[2] + b[4] * a[5] + b[5]};
}

Affine invert(const Affine& a) {
    const double det = a[0] * a[4] - a[1] * a[3];
    if (std::abs(det) < 1e-15) throw std::domain_error("singular affine map");
    const double i0 = a[4] / det, i1 = -a[1] / det, i3 = -a[3] / det, i4 = a[0] / det;
    return {i0, i1, -(i0 * a[2] + i1 * a[5]), i3, i4, -(i3 * a[2] + i4 * a[5])};
}

std::array<double, 2> apply(const Affine& a, double x, double y) {
    return {a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5]};
}

// ---------------------------------------------------------------------------
// Raster steps

Image flip_horizontal(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    return out;
}

namespace {

Affine rotation_about_center(double degrees, int w, int h) {
    const double t = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    const double cx = w / 2.0, cy = h / 2.0;
    return {c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy};
}

float bilinear(const Image& img, double x, double y, int ch) {
    // x, y in continuous coordinates; samples at pixel centers.
    const double fx = x - 0.5, fy = y - 0.5;
    const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    const double ax = fx - x0, ay = fy - y0;
    auto px = [&](int xi, int yi) -> double {
        if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) return 0.0;
        return img.at(xi, yi, ch);
    };
    const double v = (px(x0, y0) * (1 - ax) + px(x0 + 1, y0) * ax) * (1 - ay) +
                     (px(x0, y0 + 1) * (1 - ax) + px(x0 + 1, y0 + 1) * ax) * ay;
    return static_cast<float>(v);
}

Mask warp_nearest(const Mask& m, const Affine& inv) {
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const auto s = apply(inv, x + 0.5, y + 0.5);
            const int sx = static_cast<int>(std::floor(s[0])), sy = static_cast<int>(std::floor(s[1]));
            if (sx >= 0 && sy >= 0 && sx < m.width && sy < m.height && m.get(sx, sy)) out.set(x, y);
        }
    return out;
}

Mask flip_mask(const Mask& m) {
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.get(x, y)) out.set(m.width - 1 - x, y);
    return out;
}

Mask pad_mask(const Mask& m, int l, int t, int r, int b) {
    Mask out(m.width + l + r, m.height + t + b);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.get(x, y)) out.set(x + l, y + t);
    return out;
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

Image blend(const Image& degenerate, const Image& img, double factor) {
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        out.pixels[i] = clamp01(degenerate.pixels[i] + factor * (img.pixels[i] - degenerate.pixels[i]));
    return out;
}

}  // namespace

Image rotate(const Image& img, double degrees) {
    const auto inv = invert(rotation_about_center(degrees, img.width, img.height));
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto s = apply(inv, x + 0.5, y + 0.5);
            if (s[0] < 0 || s[1] < 0 || s[0] > img.width || s[1] > img.height) continue;
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = bilinear(img, s[0], s[1], c);
        }
    return out;
}

Image enhance_sharpness(const Image& img, double factor) {
    // Smoothing kernel [1 1 1; 1 5 1; 1 1 1] / 13; border pixels are left as is.
    Image smooth = img;
    for (int y = 1; y + 1 < img.height; ++y)
        for (int x = 1; x + 1 < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 4.0 * img.at(x, y, c);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) s += img.at(x + dx, y + dy, c);
                smooth.at(x, y, c) = static_cast<float>(s / 13.0);
            }
    return blend(smooth, img, factor);
}

Image enhance_color(const Image& img, double factor) {
    Image gray(img.width, img.height);
    const auto l = to_gray(img);
    for (std::size_t p = 0; p < l.size(); ++p)
        for (int c = 0; c < 3; ++c) gray.pixels[p * 3 + c] = static_cast<float>(l[p]);
    return blend(gray, img, factor);
}

Image add_noise(const Image& img, double sigma, std::uint64_t seed) {
    if (sigma <= 0) return img;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) out.pixels[i] = clamp01(img.pixels[i] + n(rng));
    return out;
}

Image pad_reflect(const Image& img, int left, int top, int right, int bottom) {
    Image out(img.width + left + right, img.height + top + bottom);
    for (int y = 0; y < out.height; ++y) {
        const int sy = reflect_index(y - top, img.height);
        for (int x = 0; x < out.width; ++x) {
            const int sx = reflect_index(x - left, img.width);
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

Result apply_plan(const Image& image, std::span<const sg::Detection> detections, const Plan& plan,
                  const AugmentConfig& cfg) {
    Result r;
    r.image = image;
    std::vector<Mask> masks;
    for (const auto& d : detections) masks.push_back(d.mask);
    auto& T = r.transform;

    auto rescale = [&](int nw, int nh) {
        if (nw == r.image.width && nh == r.image.height) return;
        T = compose({static_cast<double>(nw) / r.image.width, 0, 0, 0, static_cast<double>(nh) / r.image.height, 0}, T);
        r.image = resize(r.image, nw, nh);
        for (auto& m : masks) m = resize_nearest(m, nw, nh);
    };

    for (const auto& s : plan.steps) {
        switch (s.kind) {
            case Kind::jpeg:
                if (s.p[0] < 100) r.image = jpeg_roundtrip(r.image, static_cast<int>(s.p[0]));
                break;
            case Kind::resize:
                rescale(std::max(8, static_cast<int>(std::lround(r.image.width * s.p[0]))),
                        std::max(8, static_cast<int>(std::lround(r.image.height * s.p[0]))));
                break;
            case Kind::flip:
                r.image = flip_horizontal(r.image);
                for (auto& m : masks) m = flip_mask(m);
                T = compose({-1, 0, static_cast<double>(r.image.width), 0, 1, 0}, T);
                break;
            case Kind::rotate: {
                const auto rot = rotation_about_center(s.p[0], r.image.width, r.image.height);
                r.image = rotate(r.image, s.p[0]);
                const auto inv = invert(rot);
                for (auto& m : masks) m = warp_nearest(m, inv);
                T = compose(rot, T);
                break;
            }
            case Kind::sharpen: r.image = enhance_sharpness(r.image, s.p[0]); break;
            case Kind::color: r.image = enhance_color(r.image, s.p[0]); break;
            case Kind::gauss_noise: r.image = add_noise(r.image, s.p[0], static_cast<std::uint64_t>(s.p[1])); break;
            case Kind::pad: {
                const int l = static_cast<int>(std::lround(s.p[0] * r.image.width));
                const int t = static_cast<int>(std::lround(s.p[1] * r.image.height));
                const int rr = static_cast<int>(std::lround(s.p[2] * r.image.width));
                const int b = static_cast<int>(std::lround(s.p[3] * r.image.height));
                r.image = pad_reflect(r.image, l, t, rr, b);
                for (auto& m : masks) m = pad_mask(m, l, t, rr, b);
                T = compose({1, 0, static_cast<double>(l), 0, 1, static_cast<double>(t)}, T);
                break;
            }
        }
    }
    if (cfg.output_size > 0) rescale(cfg.output_size, cfg.output_size);

    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].count() == 0) continue;
        sg::Detection d;
        d.mask = std::move(masks[i]);
        d.box = sg::tight_box(d.mask);
        d.confidence = detections[i].confidence;
        d.object_id = detections[i].object_id;
        r.detections.push_back(std::move(d));
    }
    return r;
}

Result benign_augment(const Image& image, std::span<const sg::Detection> detections, const AugmentConfig& cfg,
                      nn::Rng& rng) {
    return apply_plan(image, detections, sample_plan(cfg, rng), cfg);
}

Image benign_augment(const Image& image, const AugmentConfig& cfg, nn::Rng& rng) {
    return benign_augment(image, {}, cfg, rng).image;
}

}  // namespace fgraph::aug
