#include "fgraph/synthdata.hpp"

#include "fgraph/augment.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fgraph::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SceneSpec::validate() const {
    if (canvas < 32) throw std::invalid_argument("scene spec: canvas must be >= 32");
    if (min_objects < 1 || max_objects < min_objects) throw std::invalid_argument("scene spec: bad object range");
    if (max_objects > n_max) throw std::invalid_argument("scene spec: max_objects exceeds n_max");
    if (min_radius < 2 || max_radius < min_radius || 2 * max_radius > canvas)
        throw std::invalid_argument("scene spec: bad radius range");
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Color hsv(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

Color random_object_color(Rng& rng) { return hsv(uniform(rng, 0, 1), uniform(rng, 0.55, 1.0), uniform(rng, 0.55, 1.0)); }

double extent(const ObjectSpec& o) { return std::max(o.rx, o.ry); }

// Smooth value noise on a coarse lattice.
double lattice(std::uint64_t seed, int i, int j) {
    const auto h = nn::mix_seed(seed, static_cast<std::uint64_t>(i) * 73856093ULL ^ static_cast<std::uint64_t>(j) * 19349663ULL);
    return static_cast<double>(h >> 11) / 9007199254740992.0;
}

double value_noise(std::uint64_t seed, double u, double v) {
    const int i = static_cast<int>(std::floor(u)), j = static_cast<int>(std::floor(v));
    const double fu = u - i, fv = v - j;
    const double su = fu * fu * (3 - 2 * fu), sv = fv * fv * (3 - 2 * fv);
    const double a = lattice(seed, i, j), b = lattice(seed, i + 1, j);
    const double c = lattice(seed, i, j + 1), d = lattice(seed, i + 1, j + 1);
    return (a * (1 - su) + b * su) * (1 - sv) + (c * (1 - su) + d * su) * sv;
}

Color object_color(const ObjectSpec& o, double x, double y) {
    if (o.stripe_period <= 0) return o.color;
    const double dx = x - o.cx, dy = y - o.cy;
    const double t = dx * std::cos(o.stripe_angle) + dy * std::sin(o.stripe_angle);
    return std::sin(2 * std::numbers::pi * t / o.stripe_period) > 0 ? o.stripe_color : o.color;
}

bool center_ok(const ObjectSpec& o, int w, int h) {
    const double r = extent(o);
    return o.cx >= r && o.cx <= w - r && o.cy >= r && o.cy <= h - r;
}

}  // namespace

bool inside(const ObjectSpec& o, double x, double y) {
    const double dx = x - o.cx, dy = y - o.cy;
    const double c = std::cos(o.angle), s = std::sin(o.angle);
    const double u = dx * c + dy * s, v = -dx * s + dy * c;
    switch (o.kind) {
        case ShapeKind::ellipse: return (u * u) / (o.rx * o.rx) + (v * v) / (o.ry * o.ry) <= 1.0;
        case ShapeKind::rectangle: return std::abs(u) <= o.rx && std::abs(v) <= o.ry;
        case ShapeKind::triangle:
            return v >= -o.ry && v <= o.ry && std::abs(u) <= o.rx * (v + o.ry) / (2 * o.ry);
        case ShapeKind::ring: {
            const double e = (u * u) / (o.rx * o.rx) + (v * v) / (o.ry * o.ry);
            return e <= 1.0 && e >= 0.55 * 0.55;
        }
    }
    return false;
}

Mask object_mask(const ObjectSpec& o, int width, int height) {
    Mask m(width, height);
    const double r = extent(o) + 1;
    const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - r))), x1 = std::min(width - 1, static_cast<int>(std::ceil(o.cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - r))), y1 = std::min(height - 1, static_cast<int>(std::ceil(o.cy + r)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (inside(o, x + 0.5, y + 0.5)) m.set(x, y);
    return m;
}

Color background_color(const Background& bg, int width, int height, double x, double y) {
    double t = 0;
    if (bg.style == BackgroundStyle::gradient) {
        const double d = (x - width / 2.0) * std::cos(bg.angle) + (y - height / 2.0) * std::sin(bg.angle);
        t = std::clamp(d / width + 0.5, 0.0, 1.0);
    } else {
        t = value_noise(bg.noise_seed, x / 16.0, y / 16.0);
    }
    Color c;
    for (int k = 0; k < 3; ++k) c[k] = static_cast<float>(bg.c0[k] * (1 - t) + bg.c1[k] * t);
    return c;
}

ObjectSpec random_object(const SceneSpec& spec, Rng& rng, int id) {
    ObjectSpec o;
    o.kind = static_cast<ShapeKind>(uniform_int(rng, 0, 3));
    o.rx = uniform(rng, spec.min_radius, spec.max_radius);
    o.ry = std::clamp(o.rx * uniform(rng, 0.6, 1.4), spec.min_radius, spec.max_radius);
    o.angle = uniform(rng, 0, std::numbers::pi);
    const double r = extent(o);
    o.cx = uniform(rng, r, spec.canvas - r);
    o.cy = uniform(rng, r, spec.canvas - r);
    o.color = random_object_color(rng);
    if (uniform(rng, 0, 1) < spec.stripe_probability) {
        o.stripe_color = random_object_color(rng);
        o.stripe_period = uniform(rng, 5, 10);
        o.stripe_angle = uniform(rng, 0, std::numbers::pi);
    }
    o.id = id;
    return o;
}

Scene generate_scene(const SceneSpec& spec, Rng& rng) {
    spec.validate();
    Scene s;
    s.width = s.height = spec.canvas;
    auto& bg = s.background;
    bg.style = uniform(rng, 0, 1) < 0.5 ? BackgroundStyle::gradient : BackgroundStyle::noise;
    bg.c0 = hsv(uniform(rng, 0, 1), uniform(rng, 0.0, 0.4), uniform(rng, 0.15, 0.45));
    bg.c1 = hsv(uniform(rng, 0, 1), uniform(rng, 0.0, 0.4), uniform(rng, 0.35, 0.75));
    bg.angle = uniform(rng, 0, 2 * std::numbers::pi);
    bg.noise_seed = rng();
    const int n = uniform_int(rng, spec.min_objects, spec.max_objects);
    for (int i = 0; i < n; ++i) {
        // Rejection keeps objects from being mostly hidden behind one another.
        ObjectSpec best;
        for (int attempt = 0; attempt < 50; ++attempt) {
            best = random_object(spec, rng, i);
            bool ok = true;
            for (const auto& o : s.objects)
                if (std::hypot(o.cx - best.cx, o.cy - best.cy) < 0.8 * (extent(o) + extent(best))) ok = false;
            if (ok) break;
        }
        s.objects.push_back(best);
    }
    return s;
}

Rendered render(const Scene& scene) {
    Rendered r;
    r.image = Image(scene.width, scene.height);
    for (int y = 0; y < scene.height; ++y)
        for (int x = 0; x < scene.width; ++x) {
            const auto c = background_color(scene.background, scene.width, scene.height, x + 0.5, y + 0.5);
            for (int k = 0; k < 3; ++k) r.image.at(x, y, k) = c[k];
        }
    for (const auto& o : scene.objects) {
        sg::Detection d;
        d.mask = object_mask(o, scene.width, scene.height);
        if (d.mask.count() == 0) continue;
        for (int y = 0; y < scene.height; ++y)
            for (int x = 0; x < scene.width; ++x)
                if (d.mask.get(x, y)) {
                    const auto c = object_color(o, x + 0.5, y + 0.5);
                    for (int k = 0; k < 3; ++k) r.image.at(x, y, k) = c[k];
                }
        d.box = sg::tight_box(d.mask);
        d.confidence = 1.0;
        d.object_id = o.id;
        r.detections.push_back(std::move(d));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Manipulations

const char* manip_name(ManipKind k) {
    switch (k) {
        case ManipKind::remove_object: return "remove_object";
        case ManipKind::insert_object: return "insert_object";
        case ManipKind::move_object: return "move_object";
        case ManipKind::recolor_object: return "recolor_object";
        case ManipKind::reshape_object: return "reshape_object";
        case ManipKind::swap_objects: return "swap_objects";
    }
    return "?";
}

ManipKind manip_from_name(const std::string& s) {
    for (int k = 0; k < 6; ++k)
        if (s == manip_name(static_cast<ManipKind>(k))) return static_cast<ManipKind>(k);
    throw std::invalid_argument("unknown manipulation kind: " + s);
}

namespace {

void check_index(const Scene& s, std::size_t i) {
    if (i >= s.objects.size()) throw std::out_of_range("manipulation: object index out of range");
}

int next_id(const Scene& s) {
    int id = -1;
    for (const auto& o : s.objects) id = std::max(id, o.id);
    return id + 1;
}

}  // namespace

Scene remove_object(const Scene& s, std::size_t index) {
    check_index(s, index);
    Scene out = s;
    out.objects.erase(out.objects.begin() + static_cast<std::ptrdiff_t>(index));
    return out;
}

Scene insert_object(const Scene& s, const ObjectSpec& o) {
    Scene out = s;
    out.objects.push_back(o);
    out.objects.back().id = next_id(s);
    return out;
}

Scene move_object(const Scene& s, std::size_t index, double dx, double dy) {
    check_index(s, index);
    Scene out = s;
    out.objects[index].cx += dx;
    out.objects[index].cy += dy;
    return out;
}

Scene recolor_object(const Scene& s, std::size_t index, const Color& color, const Color& stripe_color) {
    check_index(s, index);
    Scene out = s;
    out.objects[index].color = color;
    out.objects[index].stripe_color = stripe_color;
    return out;
}

Scene reshape_object(const Scene& s, std::size_t index, ShapeKind kind, double scale) {
    check_index(s, index);
    if (!(scale > 0)) throw std::invalid_argument("reshape: scale must be positive");
    Scene out = s;
    auto& o = out.objects[index];
    o.kind = kind;
    o.rx *= scale;
    o.ry *= scale;
    return out;
}

Scene swap_objects(const Scene& s, std::size_t i, std::size_t j) {
    check_index(s, i);
    check_index(s, j);
    Scene out = s;
    std::swap(out.objects[i].cx, out.objects[j].cx);
    std::swap(out.objects[i].cy, out.objects[j].cy);
    return out;
}

double altered_fraction(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("altered_fraction: size mismatch");
    std::size_t changed = 0;
    const std::size_t n = static_cast<std::size_t>(a.width) * a.height;
    for (std::size_t p = 0; p < n; ++p)
        for (int k = 0; k < 3; ++k)
            if (std::abs(a.pixels[p * 3 + k] - b.pixels[p * 3 + k]) > 1e-6f) {
                ++changed;
                break;
            }
    return static_cast<double>(changed) / static_cast<double>(n);
}

Manipulation manipulate(const Scene& s, const SceneSpec& sspec, const ManipulationSpec& mspec, Rng& rng) {
    if (s.objects.empty()) throw std::invalid_argument("manipulate: scene has no objects");
    if (mspec.kinds.empty()) throw std::invalid_argument("manipulate: no manipulation kinds enabled");
    const auto base = render(s).image;
    const auto n = s.objects.size();
    auto pick = [&](std::size_t count) { return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(count) - 1)); };

    for (int attempt = 0; attempt < mspec.max_tries; ++attempt) {
        const auto kind = mspec.kinds[pick(mspec.kinds.size())];
        Scene out;
        switch (kind) {
            case ManipKind::remove_object:
                if (n < 2) continue;
                out = remove_object(s, pick(n));
                break;
            case ManipKind::insert_object:
                if (static_cast<int>(n) >= sspec.n_max) continue;
                out = insert_object(s, random_object(sspec, rng, 0));
                break;
            case ManipKind::move_object: {
                const auto i = pick(n);
                const double mag = uniform(rng, mspec.move_min, mspec.move_max) * s.width;
                const double dir = uniform(rng, 0, 2 * std::numbers::pi);
                out = move_object(s, i, mag * std::cos(dir), mag * std::sin(dir));
                if (!center_ok(out.objects[i], s.width, s.height)) continue;
                break;
            }
            case ManipKind::recolor_object: {
                const auto i = pick(n);
                const auto& o = s.objects[i];
                auto shift = [&](const Color& c) {
                    // Rotate hue by at least a quarter turn.
                    const double mx = std::max({c[0], c[1], c[2]}), mn = std::min({c[0], c[1], c[2]});
                    const double v = mx, sat = mx > 0 ? (mx - mn) / mx : 0;
                    double h = 0;
                    if (mx > mn) {
                        if (mx == c[0]) h = std::fmod((c[1] - c[2]) / (mx - mn), 6.0);
                        else if (mx == c[1]) h = (c[2] - c[0]) / (mx - mn) + 2;
                        else h = (c[0] - c[1]) / (mx - mn) + 4;
                        h /= 6.0;
                    }
                    return hsv(h + uniform(rng, 0.25, 0.75), std::max(sat, 0.55), v);
                };
                out = recolor_object(s, i, shift(o.color), shift(o.stripe_color));
                break;
            }
            case ManipKind::reshape_object: {
                const auto i = pick(n);
                auto k = s.objects[i].kind;
                double scale = 1.0;
                if (uniform(rng, 0, 1) < 0.5) {
                    k = static_cast<ShapeKind>((static_cast<int>(k) + uniform_int(rng, 1, 3)) % 4);
                } else {
                    scale = uniform(rng, 0, 1) < 0.5 ? uniform(rng, 0.6, 0.8) : uniform(rng, 1.25, 1.5);
                }
                out = reshape_object(s, i, k, scale);
                if (!center_ok(out.objects[i], s.width, s.height) || extent(out.objects[i]) < 2) continue;
                break;
            }
            case ManipKind::swap_objects: {
                if (n < 2) continue;
                const auto i = pick(n);
                auto j = pick(n - 1);
                if (j >= i) ++j;
                out = swap_objects(s, i, j);
                if (!center_ok(out.objects[i], s.width, s.height) || !center_ok(out.objects[j], s.width, s.height))
                    continue;
                break;
            }
        }
        const auto r = render(out);
        if (r.detections.empty()) continue;
        const double f = altered_fraction(base, r.image);
        if (f < mspec.min_fraction || f > mspec.max_fraction) continue;
        return {std::move(out), kind, f};
    }
    throw std::runtime_error("manipulate: no manipulation within the altered-fraction bounds");
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<const IdentityEntry*> DatasetIndex::split(const std::string& name) const {
    std::vector<const IdentityEntry*> out;
    for (const auto& e : identities)
        if (e.split == name) out.push_back(&e);
    return out;
}

IdentityScenes identity_scenes(const DatasetConfig& cfg, int identity) {
    IdentityScenes out;
    const auto id = static_cast<std::uint64_t>(identity);
    Rng rng(nn::derive_seed(cfg.seed, {id, 0}));
    out.original = generate_scene(cfg.scene, rng);
    for (int m = 0; m < cfg.manips_per_identity; ++m) {
        Rng mr(nn::derive_seed(cfg.seed, {id, 1, static_cast<std::uint64_t>(m)}));
        out.manipulated.push_back(manipulate(out.original, cfg.scene, cfg.manip, mr));
    }
    return out;
}

Scene distractor_scene(const DatasetConfig& cfg, std::uint64_t index) {
    Rng rng(nn::derive_seed(cfg.seed, {0xD157AC70ULL, index}));
    return generate_scene(cfg.scene, rng);
}

std::vector<std::string> assign_splits(int n, double test_fraction, double val_fraction, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("dataset needs at least one identity");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(nn::derive_seed(seed, {0x5B117ULL}));
    std::shuffle(order.begin(), order.end(), rng);
    const int n_test = static_cast<int>(std::lround(n * test_fraction));
    const int n_val = static_cast<int>(std::lround((n - n_test) * val_fraction));
    std::vector<std::string> split(static_cast<std::size_t>(n), "train");
    for (int k = 0; k < n; ++k) {
        const auto id = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
        if (k < n_test) split[id] = "test";
        else if (k < n_test + n_val) split[id] = "val";
    }
    return split;
}

namespace {

std::string id_name(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", id);
    return buf;
}

void write_variant(const std::string& root, const std::string& stem, const Image& image,
                   const std::vector<sg::Detection>& dets, VariantEntry& e) {
    e.image = stem + ".png";
    e.manifest = stem + ".json";
    write_png((fs::path(root) / e.image).string(), image);
    sg::Manifest m;
    m.image = fs::path(e.image).filename().string();
    m.width = image.width;
    m.height = image.height;
    m.detections = dets;
    sg::save_manifest((fs::path(root) / e.manifest).string(), m);
}

json variant_json(const VariantEntry& v) {
    json j{{"image", v.image}, {"manifest", v.manifest}};
    if (!v.kind.empty()) j["kind"] = v.kind;
    if (v.transform != VariantEntry{}.transform) j["transform"] = v.transform;
    return j;
}

VariantEntry variant_from(const json& j) {
    VariantEntry v;
    v.image = j.at("image").get<std::string>();
    v.manifest = j.at("manifest").get<std::string>();
    if (j.contains("kind")) v.kind = j.at("kind").get<std::string>();
    if (j.contains("transform")) v.transform = j.at("transform").get<std::array<double, 6>>();
    return v;
}

}  // namespace

DatasetIndex emit_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    cfg.scene.validate();
    if (cfg.manips_per_identity < 1 || cfg.benigns_per_identity < 0)
        throw std::invalid_argument("dataset: need >= 1 manipulation per identity");
    for (const char* sub : {"originals", "manipulated", "benign"}) fs::create_directories(fs::path(out_dir) / sub);
    DatasetIndex index;
    index.config = cfg;
    const auto splits = assign_splits(cfg.identities, cfg.test_fraction, cfg.val_fraction, cfg.seed);
    aug::AugmentConfig acfg;
    acfg.output_size = cfg.scene.canvas;
    for (int id = 0; id < cfg.identities; ++id) {
        IdentityEntry e;
        e.id = id;
        e.split = splits[static_cast<std::size_t>(id)];
        const auto scenes = identity_scenes(cfg, id);
        const auto orig = render(scenes.original);
        write_variant(out_dir, "originals/" + id_name(id), orig.image, orig.detections, e.original);
        for (std::size_t m = 0; m < scenes.manipulated.size(); ++m) {
            const auto r = render(scenes.manipulated[m].scene);
            VariantEntry v;
            v.kind = manip_name(scenes.manipulated[m].kind);
            write_variant(out_dir, "manipulated/" + id_name(id) + "_m" + std::to_string(m), r.image, r.detections, v);
            e.manipulated.push_back(std::move(v));
        }
        for (int b = 0; b < cfg.benigns_per_identity; ++b) {
            Rng rng(nn::derive_seed(cfg.seed, {static_cast<std::uint64_t>(id), 2, static_cast<std::uint64_t>(b)}));
            const auto a = aug::benign_augment(orig.image, orig.detections, acfg, rng);
            VariantEntry v;
            v.transform = a.transform;
            write_variant(out_dir, "benign/" + id_name(id) + "_b" + std::to_string(b), a.image, a.detections, v);
            e.benign.push_back(std::move(v));
        }
        index.identities.push_back(std::move(e));
        if ((id + 1) % 50 == 0) spdlog::info("gen-data: {}/{} identities", id + 1, cfg.identities);
    }
    std::ofstream os(fs::path(out_dir) / kDatasetIndexFile);
    if (!os) throw std::runtime_error("cannot write dataset index in " + out_dir);
    os << dataset_to_json(index) << '\n';
    return index;
}

std::string dataset_to_json(const DatasetIndex& d) {
    const auto& c = d.config;
    json j;
    j["format"] = "fgraph-dataset";
    j["version"] = 1;
    j["config"] = {{"identities", c.identities},
                   {"manips_per_identity", c.manips_per_identity},
                   {"benigns_per_identity", c.benigns_per_identity},
                   {"seed", c.seed},
                   {"test_fraction", c.test_fraction},
                   {"val_fraction", c.val_fraction},
                   {"canvas", c.scene.canvas},
                   {"min_objects", c.scene.min_objects},
                   {"max_objects", c.scene.max_objects},
                   {"n_max", c.scene.n_max},
                   {"min_radius", c.scene.min_radius},
                   {"max_radius", c.scene.max_radius},
                   {"stripe_probability", c.scene.stripe_probability},
                   {"min_fraction", c.manip.min_fraction},
                   {"max_fraction", c.manip.max_fraction},
                   {"move_min", c.manip.move_min},
                   {"move_max", c.manip.move_max}};
    std::vector<std::string> kinds;
    for (auto k : c.manip.kinds) kinds.emplace_back(manip_name(k));
    j["config"]["manip_kinds"] = kinds;
    j["identities"] = json::array();
    for (const auto& e : d.identities) {
        json je{{"id", e.id}, {"split", e.split}, {"original", variant_json(e.original)}};
        je["manipulated"] = json::array();
        for (const auto& v : e.manipulated) je["manipulated"].push_back(variant_json(v));
        je["benign"] = json::array();
        for (const auto& v : e.benign) je["benign"].push_back(variant_json(v));
        j["identities"].push_back(std::move(je));
    }
    return j.dump(1);
}

DatasetIndex dataset_from_json(const std::string& text) {
    const auto j = json::parse(text);
    if (j.value("format", "") != "fgraph-dataset") throw std::runtime_error("not a dataset index file");
    DatasetIndex d;
    const auto& jc = j.at("config");
    auto& c = d.config;
    c.identities = jc.at("identities").get<int>();
    c.manips_per_identity = jc.at("manips_per_identity").get<int>();
    c.benigns_per_identity = jc.at("benigns_per_identity").get<int>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.test_fraction = jc.at("test_fraction").get<double>();
    c.val_fraction = jc.at("val_fraction").get<double>();
    c.scene.canvas = jc.at("canvas").get<int>();
    c.scene.min_objects = jc.at("min_objects").get<int>();
    c.scene.max_objects = jc.at("max_objects").get<int>();
    c.scene.n_max = jc.at("n_max").get<int>();
    c.scene.min_radius = jc.at("min_radius").get<double>();
    c.scene.max_radius = jc.at("max_radius").get<double>();
    c.scene.stripe_probability = jc.at("stripe_probability").get<double>();
    c.manip.min_fraction = jc.at("min_fraction").get<double>();
    c.manip.max_fraction = jc.at("max_fraction").get<double>();
    c.manip.move_min = jc.at("move_min").get<double>();
    c.manip.move_max = jc.at("move_max").get<double>();
    c.manip.kinds.clear();
    for (const auto& k : jc.at("manip_kinds")) c.manip.kinds.push_back(manip_from_name(k.get<std::string>()));
    for (const auto& je : j.at("identities")) {
        IdentityEntry e;
        e.id = je.at("id").get<int>();
        e.split = je.at("split").get<std::string>();
        e.original = variant_from(je.at("original"));
        for (const auto& v : je.at("manipulated")) e.manipulated.push_back(variant_from(v));
        for (const auto& v : je.at("benign")) e.benign.push_back(variant_from(v));
        d.identities.push_back(std::move(e));
    }
    return d;
}

DatasetIndex load_dataset(const std::string& root) {
    const auto path = fs::path(root) / kDatasetIndexFile;
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read dataset index " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return dataset_from_json(ss.str());
}

LoadedVariant load_variant(const std::string& root, const VariantEntry& e) {
    LoadedVariant v;
    v.image = read_png((fs::path(root) / e.image).string());
    auto m = sg::load_manifest((fs::path(root) / e.manifest).string());
    if (m.width != v.image.width || m.height != v.image.height)
        throw sg::SceneError("manifest size does not match image " + e.image);
    v.detections = std::move(m.detections);
    return v;
}

}  // namespace fgraph::synth
