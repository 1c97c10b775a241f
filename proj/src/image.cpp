#include "fgraph/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

namespace fgraph {

Image::Image(int w, int h, float fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

Mask::Mask(int w, int h, bool fill)
    : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

bool mask_bounds(const Mask& m, PixelBounds& out) {
    PixelBounds b{m.width, m.height, -1, -1};
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.get(x, y)) {
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x);
                b.y1 = std::max(b.y1, y);
            }
    if (b.x1 < 0) return false;
    out = b;
    return true;
}

namespace {

struct Taps {
    std::vector<int> start;
    std::vector<std::vector<double>> weights;
};

// Triangle filter taps for mapping `in` samples to `out` samples
// (pixel centers at i + 0.5).
Taps make_taps(int in, int out) {
    Taps t;
    t.start.resize(out);
    t.weights.resize(out);
    const double scale = static_cast<double>(in) / out;
    const double support = std::max(1.0, scale);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) * scale;
        int lo = static_cast<int>(std::floor(center - support));
        int hi = static_cast<int>(std::ceil(center + support));
        lo = std::max(lo, 0);
        hi = std::min(hi, in);
        std::vector<double> w;
        double total = 0.0;
        for (int i = lo; i < hi; ++i) {
            const double d = std::fabs((i + 0.5 - center) / support);
            const double v = d < 1.0 ? 1.0 - d : 0.0;
            w.push_back(v);
            total += v;
        }
        if (total <= 0.0) {
            // Degenerate footprint: nearest sample.
            const int nearest = std::clamp(static_cast<int>(center), 0, in - 1);
            lo = nearest;
            w.assign(1, 1.0);
            total = 1.0;
        }
        for (auto& v : w) v /= total;
        t.start[o] = lo;
        t.weights[o] = std::move(w);
    }
    return t;
}

template <typename Get>
std::vector<double> resample(int w, int h, int ch, int nw, int nh, Get get) {
    const auto tx = make_taps(w, nw);
    const auto ty = make_taps(h, nh);
    std::vector<double> tmp(static_cast<std::size_t>(nw) * h * ch, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < nw; ++x)
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < tx.weights[x].size(); ++k)
                    s += tx.weights[x][k] * get(tx.start[x] + static_cast<int>(k), y, c);
                tmp[(static_cast<std::size_t>(y) * nw + x) * ch + c] = s;
            }
    std::vector<double> out(static_cast<std::size_t>(nw) * nh * ch, 0.0);
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x)
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < ty.weights[y].size(); ++k)
                    s += ty.weights[y][k] *
                         tmp[(static_cast<std::size_t>(ty.start[y] + static_cast<int>(k)) * nw + x) * ch + c];
                out[(static_cast<std::size_t>(y) * nw + x) * ch + c] = s;
            }
    return out;
}

}  // namespace

Image resize(const Image& img, int width, int height) {
    if (img.empty() || width <= 0 || height <= 0) throw ImageError("resize: empty geometry");
    if (width == img.width && height == img.height) return img;
    auto v = resample(img.width, img.height, 3, width, height,
                      [&](int x, int y, int c) { return static_cast<double>(img.at(x, y, c)); });
    Image out(width, height);
    for (std::size_t i = 0; i < v.size(); ++i)
        out.pixels[i] = static_cast<float>(std::clamp(v[i], 0.0, 1.0));
    return out;
}

std::vector<double> resize_plane(const std::vector<double>& plane, int w, int h, int nw, int nh) {
    if (static_cast<std::size_t>(w) * h != plane.size()) throw ImageError("resize_plane: size mismatch");
    return resample(w, h, 1, nw, nh, [&](int x, int y, int) {
        return plane[static_cast<std::size_t>(y) * w + x];
    });
}

Mask resize_nearest(const Mask& m, int width, int height) {
    Mask out(width, height);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / width));
            out.set(x, y, m.get(sx, sy));
        }
    }
    return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
    if (w <= 0 || h <= 0 || x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height)
        throw ImageError("crop outside image");
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        std::copy_n(img.pixels.begin() + (static_cast<std::size_t>(y0 + y) * img.width + x0) * 3, w * 3,
                    out.pixels.begin() + static_cast<std::size_t>(y) * w * 3);
    return out;
}

std::vector<double> to_gray(const Image& img) {
    std::vector<double> g(static_cast<std::size_t>(img.width) * img.height);
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = 0.299 * img.pixels[i * 3] + 0.587 * img.pixels[i * 3 + 1] + 0.114 * img.pixels[i * 3 + 2];
    return g;
}

namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_raw(const std::string& path, const std::vector<std::uint8_t>& bytes, int w, int h,
                   int color_type, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    // Fixed settings so identical rasters give identical bytes.
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * w * channels);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
    std::vector<std::uint8_t> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(img.pixels[i]);
    write_png_raw(path, bytes, img.width, img.height, PNG_COLOR_TYPE_RGB, 3);
}

void write_png_gray(const std::string& path, const std::vector<double>& plane, int w, int h) {
    std::vector<std::uint8_t> bytes(plane.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(plane[i]);
    write_png_raw(path, bytes, w, h, PNG_COLOR_TYPE_GRAY, 1);
}

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("unsupported png layout: " + path);
    }
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    Image img(w, h);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int i = 0; i < w * 3; ++i)
            img.pixels[static_cast<std::size_t>(y) * w * 3 + i] = row[i] / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_pgm(const std::string& path, const std::vector<double>& plane, int w, int h) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ImageError("cannot open for writing: " + path);
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : plane) os.put(static_cast<char>(to_byte(v)));
}

namespace {

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

}  // namespace

Image jpeg_roundtrip(const Image& img, int quality) {
    quality = std::clamp(quality, 1, 100);
    std::vector<std::uint8_t> rgb(img.pixels.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = to_byte(img.pixels[i]);

    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    {
        jpeg_compress_struct c{};
        JpegErr err{};
        c.err = jpeg_std_error(&err.mgr);
        err.mgr.error_exit = jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_compress(&c);
            std::free(buf);
            throw ImageError("jpeg encode failed");
        }
        jpeg_create_compress(&c);
        jpeg_mem_dest(&c, &buf, &buf_size);
        c.image_width = static_cast<JDIMENSION>(img.width);
        c.image_height = static_cast<JDIMENSION>(img.height);
        c.input_components = 3;
        c.in_color_space = JCS_RGB;
        jpeg_set_defaults(&c);
        c.dct_method = JDCT_ISLOW;
        jpeg_set_quality(&c, quality, TRUE);
        jpeg_start_compress(&c, TRUE);
        while (c.next_scanline < c.image_height) {
            JSAMPROW row = rgb.data() + static_cast<std::size_t>(c.next_scanline) * img.width * 3;
            jpeg_write_scanlines(&c, &row, 1);
        }
        jpeg_finish_compress(&c);
        jpeg_destroy_compress(&c);
    }

    Image out(img.width, img.height);
    {
        jpeg_decompress_struct d{};
        JpegErr err{};
        d.err = jpeg_std_error(&err.mgr);
        err.mgr.error_exit = jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_decompress(&d);
            std::free(buf);
            throw ImageError("jpeg decode failed");
        }
        jpeg_create_decompress(&d);
        jpeg_mem_src(&d, buf, buf_size);
        jpeg_read_header(&d, TRUE);
        d.out_color_space = JCS_RGB;
        d.dct_method = JDCT_ISLOW;
        jpeg_start_decompress(&d);
        std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
        while (d.output_scanline < d.output_height) {
            const auto y = d.output_scanline;
            JSAMPROW r = row.data();
            jpeg_read_scanlines(&d, &r, 1);
            for (int i = 0; i < img.width * 3; ++i)
                out.pixels[static_cast<std::size_t>(y) * img.width * 3 + i] = row[i] / 255.0f;
        }
        jpeg_finish_decompress(&d);
        jpeg_destroy_decompress(&d);
    }
    std::free(buf);
    return out;
}

std::vector<std::uint32_t> rle_encode(const Mask& m) {
    std::vector<std::uint32_t> counts;
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (auto b : m.bits) {
        if (b != current) {
            counts.push_back(run);
            run = 0;
            current = b;
        }
        ++run;
    }
    counts.push_back(run);
    return counts;
}

Mask rle_decode(const std::vector<std::uint32_t>& counts, int width, int height) {
    Mask m(width, height);
    std::size_t pos = 0;
    bool value = false;
    for (auto c : counts) {
        if (pos + c > m.bits.size()) throw ImageError("RLE mask longer than image");
        if (value) std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), c, std::uint8_t{1});
        pos += c;
        value = !value;
    }
    if (pos != m.bits.size()) throw ImageError("RLE mask shorter than image");
    return m;
}

}  // namespace fgraph
