#include "fgraph/scenegraph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace fgraph::sg {

using nlohmann::json;

Box tight_box(const Mask& m) {
    PixelBounds b;
    if (!mask_bounds(m, b)) throw SceneError("tight_box of empty mask");
    const double w = b.x1 - b.x0 + 1;
    const double h = b.y1 - b.y0 + 1;
    return Box{b.x0 + w / 2.0, b.y0 + h / 2.0, w, h};
}

GeometryFeature geometry_features(const Box& b, int width, int height) {
    if (width <= 0 || height <= 0) throw SceneError("geometry_features: zero image dimensions");
    const double w = width, h = height;
    return {b.cx / w, b.cy / h, b.w / w, b.h / h, (b.w * b.h) / (w * h)};
}

// ---------------------------------------------------------------------------
// Hu moments

namespace {

// Integral of t^p over [a, a+1] for p = 0..3.
std::array<double, 4> unit_integrals(double a) {
    return {1.0, a + 0.5, a * a + a + 1.0 / 3.0, a * a * a + 1.5 * a * a + a + 0.25};
}

}  // namespace

std::array<double, 7> hu_invariants(const Mask& m) {
    PixelBounds b;
    if (!mask_bounds(m, b)) throw SceneError("hu_moments: empty shape");
    // Local coordinates relative to the bounds make integer translations exact.
    const int w = b.x1 - b.x0 + 1, h = b.y1 - b.y0 + 1;
    double m00 = 0, m10 = 0, m01 = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m.get(b.x0 + x, b.y0 + y)) {
                m00 += 1.0;
                m10 += x + 0.5;
                m01 += y + 0.5;
            }
    const double cx = m10 / m00, cy = m01 / m00;
    std::vector<std::array<double, 4>> ix(w), iy(h);
    for (int x = 0; x < w; ++x) ix[x] = unit_integrals(x - cx);
    for (int y = 0; y < h; ++y) iy[y] = unit_integrals(y - cy);

    double mu20 = 0, mu11 = 0, mu02 = 0, mu30 = 0, mu21 = 0, mu12 = 0, mu03 = 0;
    for (int y = 0; y < h; ++y) {
        const auto& Y = iy[y];
        for (int x = 0; x < w; ++x) {
            if (!m.get(b.x0 + x, b.y0 + y)) continue;
            const auto& X = ix[x];
            mu20 += X[2];
            mu02 += Y[2];
            mu11 += X[1] * Y[1];
            mu30 += X[3];
            mu03 += Y[3];
            mu21 += X[2] * Y[1];
            mu12 += X[1] * Y[2];
        }
    }
    const double n2 = std::pow(m00, 2.0), n3 = std::pow(m00, 2.5);
    const double e20 = mu20 / n2, e02 = mu02 / n2, e11 = mu11 / n2;
    const double e30 = mu30 / n3, e21 = mu21 / n3, e12 = mu12 / n3, e03 = mu03 / n3;

    const double a = e30 + e12, c = e21 + e03;
    const double p = e30 - 3 * e12, q = 3 * e21 - e03;
    std::array<double, 7> hu{};
    hu[0] = e20 + e02;
    hu[1] = (e20 - e02) * (e20 - e02) + 4 * e11 * e11;
    hu[2] = p * p + q * q;
    hu[3] = a * a + c * c;
    hu[4] = p * a * (a * a - 3 * c * c) + q * c * (3 * a * a - c * c);
    hu[5] = (e20 - e02) * (a * a - c * c) + 4 * e11 * a * c;
    hu[6] = q * a * (a * a - 3 * c * c) - p * c * (3 * a * a - c * c);
    return hu;
}

ShapeFeature hu_moments(const Mask& m) {
    const auto hu = hu_invariants(m);
    ShapeFeature s{};
    for (std::size_t k = 0; k < 7; ++k) {
        const double v = std::fabs(hu[k]) < kHuNoiseFloor ? 0.0 : hu[k];
        const double sign = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
        s[k] = -sign * std::log10(std::fabs(v) + 1e-30);
    }
    return s;
}

// ---------------------------------------------------------------------------

double mask_iou(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height) throw SceneError("mask_iou: size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += (a.bits[i] & b.bits[i]);
        uni += (a.bits[i] | b.bits[i]);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

RelationFeature relation_features(const Detection& di, const Detection& dj, int width, int height) {
    if (width <= 0 || height <= 0) throw SceneError("relation_features: zero image dimensions");
    const double dx = dj.box.cx - di.box.cx;
    const double dy = dj.box.cy - di.box.cy;
    const double root_area = std::sqrt(di.box.w * di.box.h);
    const double diag = std::sqrt(static_cast<double>(width) * width + static_cast<double>(height) * height);
    double theta = 0.0;
    if (dx != 0.0) theta = std::atan(dy / dx);
    else if (dy != 0.0) theta = std::numbers::pi / 2.0;
    const double gamma = &di == &dj ? 1.0 : mask_iou(di.mask, dj.mask);
    return {dx / root_area,          dy / root_area,       std::sqrt(dx * dx + dy * dy) / diag,
            dj.box.w / di.box.w,     dj.box.h / di.box.h,  theta,
            gamma};
}

BackgroundNode background_node(const Image& image, std::span<const Detection> detections) {
    BackgroundNode bg;
    Mask mask(image.width, image.height, true);
    for (const auto& d : detections) {
        if (d.mask.width != image.width || d.mask.height != image.height)
            throw SceneError("background_node: mask not aligned to image");
        for (std::size_t i = 0; i < mask.bits.size(); ++i)
            if (d.mask.bits[i]) mask.bits[i] = 0;
    }
    if (mask.count() == 0) {
        mask = Mask(image.width, image.height, true);
        bg.fallback = true;
    }
    Image crop = image;
    for (std::size_t i = 0; i < mask.bits.size(); ++i)
        if (!mask.bits[i] && !bg.fallback)
            for (int c = 0; c < 3; ++c) crop.pixels[i * 3 + c] = 0.0f;
    bg.detection.mask = std::move(mask);
    bg.detection.crop = std::move(crop);
    bg.detection.box = Box{image.width / 2.0, image.height / 2.0, static_cast<double>(image.width),
                           static_cast<double>(image.height)};
    bg.detection.confidence = 0.0;
    return bg;
}

std::vector<std::size_t> node_order(std::span<const Detection> detections) {
    std::vector<std::size_t> idx(detections.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto& da = detections[a];
        const auto& db = detections[b];
        if (da.confidence != db.confidence) return da.confidence > db.confidence;
        const double aa = da.box.w * da.box.h, ab = db.box.w * db.box.h;
        if (aa != ab) return aa > ab;
        if (da.box.cx != db.box.cx) return da.box.cx < db.box.cx;
        return da.box.cy < db.box.cy;
    });
    return idx;
}

namespace {

Image crop_box(const Image& image, const Box& b) {
    int x0 = static_cast<int>(std::floor(b.cx - b.w / 2.0));
    int y0 = static_cast<int>(std::floor(b.cy - b.h / 2.0));
    int x1 = static_cast<int>(std::ceil(b.cx + b.w / 2.0));
    int y1 = static_cast<int>(std::ceil(b.cy + b.h / 2.0));
    x0 = std::clamp(x0, 0, image.width - 1);
    y0 = std::clamp(y0, 0, image.height - 1);
    x1 = std::clamp(x1, x0 + 1, image.width);
    y1 = std::clamp(y1, y0 + 1, image.height);
    return crop(image, x0, y0, x1 - x0, y1 - y0);
}

}  // namespace

SceneFeatures featurize(const Image& image, std::span<const Detection> detections,
                        const FeaturizeOptions& opt) {
    if (image.empty()) throw SceneError("featurize: empty image");
    for (const auto& d : detections) validate_detection(d, image.width, image.height);

    auto order = node_order(detections);
    if (order.size() > static_cast<std::size_t>(opt.n_max)) order.resize(static_cast<std::size_t>(opt.n_max));

    std::vector<const Detection*> nodes;
    std::vector<int> source;
    for (auto i : order) {
        nodes.push_back(&detections[i]);
        source.push_back(static_cast<int>(i));
    }
    // Background is the complement of all supplied objects, including truncated ones.
    std::optional<BackgroundNode> bg;
    if (opt.background) {
        bg = background_node(image, detections);
        nodes.push_back(&bg->detection);
        source.push_back(-1);
    }
    if (nodes.empty()) throw SceneError("empty scene graph: no detections and background disabled");

    SceneFeatures f;
    f.n = nodes.size();
    f.source_index = std::move(source);
    f.background_fallback = bg && bg->fallback;
    for (const auto* d : nodes) {
        const Image& raw = d->crop.empty() ? crop_box(image, d->box) : d->crop;
        f.crops.push_back(resize(raw, opt.crop_size, opt.crop_size));
        f.geometry.push_back(geometry_features(d->box, image.width, image.height));
        f.shape.push_back(hu_moments(d->mask));
        f.object_id.push_back(d->object_id);
    }
    f.relation.reserve(f.n * f.n);
    for (std::size_t i = 0; i < f.n; ++i)
        for (std::size_t j = 0; j < f.n; ++j)
            f.relation.push_back(relation_features(*nodes[i], *nodes[j], image.width, image.height));
    f.global = resize(image, opt.global_size, opt.global_size);
    return f;
}

// ---------------------------------------------------------------------------
// Learned assembly

GraphProjections::GraphProjections(std::size_t dv, std::size_t ds, std::size_t dg, std::size_t dr,
                                   nn::Rng& rng, std::size_t visual_in)
    : visual(visual_in, dv, rng),
      shape(kShapeDim, ds, rng),
      geometry(kGeometryDim, dg, rng),
      relation(kRelationDim, dr, rng) {}

std::size_t GraphProjections::node_dim() const {
    return visual.out_features() + shape.out_features() + geometry.out_features();
}

std::size_t GraphProjections::edge_dim() const { return 2 * node_dim() + relation.out_features(); }

void GraphProjections::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    visual.visit(prefix + ".E_v", fn);
    shape.visit(prefix + ".E_s", fn);
    geometry.visit(prefix + ".E_g", fn);
    relation.visit(prefix + ".E_r", fn);
}

namespace {

template <std::size_t K, typename Field>
nc::Tensor stack(std::span<const SceneFeatures* const> scenes, Field field) {
    std::vector<double> v;
    std::size_t rows = 0;
    for (const auto* s : scenes)
        for (const auto& row : field(*s)) {
            v.insert(v.end(), row.begin(), row.end());
            ++rows;
        }
    return nc::Tensor({rows, K}, std::move(v));
}

}  // namespace

nc::Tensor stack_geometry(std::span<const SceneFeatures* const> scenes) {
    return stack<kGeometryDim>(scenes, [](const SceneFeatures& s) -> const auto& { return s.geometry; });
}

nc::Tensor stack_shape(std::span<const SceneFeatures* const> scenes) {
    return stack<kShapeDim>(scenes, [](const SceneFeatures& s) -> const auto& { return s.shape; });
}

nc::Tensor stack_relation(std::span<const SceneFeatures* const> scenes) {
    return stack<kRelationDim>(scenes, [](const SceneFeatures& s) -> const auto& { return s.relation; });
}

nc::Var project_nodes(nc::Graph& g, std::span<const SceneFeatures* const> scenes, nc::Var visual,
                      GraphProjections& proj) {
    auto sv = proj.visual(g, visual);
    auto ss = proj.shape(g, g.constant(stack_shape(scenes)));
    auto sg = proj.geometry(g, g.constant(stack_geometry(scenes)));
    const nc::Var parts[] = {sv, ss, sg};
    return g.concat_cols(parts);
}

nc::Var project_relations(nc::Graph& g, std::span<const SceneFeatures* const> scenes,
                          GraphProjections& proj) {
    return proj.relation(g, g.constant(stack_relation(scenes)));
}

nc::Var assemble_edges(nc::Graph& g, nc::Var nodes, nc::Var relations, std::size_t n) {
    std::vector<std::size_t> left, right;
    left.reserve(n * n);
    right.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            left.push_back(i);
            right.push_back(j);
        }
    const nc::Var parts[] = {g.gather_rows(nodes, std::move(left)), relations,
                             g.gather_rows(nodes, std::move(right))};
    return g.concat_cols(parts);
}

SceneGraph build_scene_graph(nc::Graph& g, const Image& image, std::span<const Detection> detections,
                             const VisualExtractor& visual, GraphProjections& proj,
                             const FeaturizeOptions& opt) {
    const auto f = featurize(image, detections, opt);
    const SceneFeatures* one[] = {&f};
    auto v = visual(g, f.crops);
    if (g.value(v).rows() != f.n || g.value(v).cols() != kVisualDim)
        throw SceneError("visual extractor must return [N, 256]");
    SceneGraph sgraph;
    sgraph.n = f.n;
    sgraph.nodes = project_nodes(g, one, v, proj);
    sgraph.edges = assemble_edges(g, sgraph.nodes, project_relations(g, one, proj), f.n);
    return sgraph;
}

// ---------------------------------------------------------------------------
// Manifest

void validate_detection(const Detection& d, int width, int height) {
    const auto& b = d.box;
    if (!(b.w > 0 && b.w <= width && b.h > 0 && b.h <= height))
        throw SceneError("detection box size outside (0, image size]");
    if (b.cx - b.w / 2.0 < -1e-9 || b.cy - b.h / 2.0 < -1e-9 || b.cx + b.w / 2.0 > width + 1e-9 ||
        b.cy + b.h / 2.0 > height + 1e-9)
        throw SceneError("detection box extends outside the image");
    if (d.mask.width != width || d.mask.height != height)
        throw SceneError("detection mask not aligned to image");
    if (d.mask.count() == 0) throw SceneError("detection mask has no set pixel");
    if (!std::isfinite(d.confidence)) throw SceneError("detection confidence not finite");
}

void validate_manifest(const Manifest& m) {
    if (m.width <= 0 || m.height <= 0) throw SceneError("manifest: zero image dimensions");
    for (const auto& d : m.detections) validate_detection(d, m.width, m.height);
}

std::string manifest_to_json(const Manifest& m, int indent) {
    json j;
    j["image"] = m.image;
    j["width"] = m.width;
    j["height"] = m.height;
    j["detections"] = json::array();
    for (std::size_t i = 0; i < m.detections.size(); ++i) {
        const auto& d = m.detections[i];
        json jd;
        jd["bbox_cxcywh"] = {d.box.cx, d.box.cy, d.box.w, d.box.h};
        jd["confidence"] = d.confidence;
        jd["mask"] = rle_encode(d.mask);
        if (i < m.crop_paths.size() && !m.crop_paths[i].empty()) jd["crop"] = m.crop_paths[i];
        if (d.object_id >= 0) jd["object_id"] = d.object_id;
        j["detections"].push_back(std::move(jd));
    }
    return j.dump(indent);
}

Manifest manifest_from_json(const std::string& text) {
    Manifest m;
    try {
        const auto j = json::parse(text);
        m.image = j.at("image").get<std::string>();
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        if (m.width <= 0 || m.height <= 0) throw SceneError("manifest: zero image dimensions");
        for (const auto& jd : j.at("detections")) {
            Detection d;
            const auto bb = jd.at("bbox_cxcywh").get<std::vector<double>>();
            if (bb.size() != 4) throw SceneError("bbox_cxcywh needs 4 values");
            d.box = Box{bb[0], bb[1], bb[2], bb[3]};
            d.confidence = jd.at("confidence").get<double>();
            d.mask = rle_decode(jd.at("mask").get<std::vector<std::uint32_t>>(), m.width, m.height);
            d.object_id = jd.value("object_id", -1);
            m.crop_paths.push_back(jd.value("crop", std::string{}));
            m.detections.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw SceneError(std::string("manifest parse error: ") + e.what());
    } catch (const ImageError& e) {
        throw SceneError(std::string("manifest mask error: ") + e.what());
    }
    return m;
}

void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream os(path);
    if (!os) throw SceneError("cannot write manifest: " + path);
    os << manifest_to_json(m) << '\n';
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw SceneError("cannot read manifest: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return manifest_from_json(ss.str());
}

}  // namespace fgraph::sg
