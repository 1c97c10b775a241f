#include "fgraph/scenegraph.hpp"
#include "fgraph/synthdata.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace fgraph;

namespace {

Mask rect_mask(int W, int H, int x0, int y0, int w, int h) {
    Mask m(W, H);
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) m.set(x, y);
    return m;
}

sg::Detection det_from_mask(Mask m) {
    sg::Detection d;
    d.box = sg::tight_box(m);
    d.mask = std::move(m);
    return d;
}

}  // namespace

TEST_CASE("tight box uses pixel-edge coordinates") {
    const auto b = sg::tight_box(rect_mask(20, 10, 3, 2, 4, 5));
    CHECK(b == sg::Box{5.0, 4.5, 4.0, 5.0});
    CHECK_THROWS_AS(sg::tight_box(Mask(4, 4)), sg::SceneError);
}

TEST_CASE("geometry features are normalized box terms") {
    const auto g = sg::geometry_features(sg::Box{10, 20, 8, 4}, 40, 80);
    CHECK(g[0] == doctest::Approx(0.25));
    CHECK(g[1] == doctest::Approx(0.25));
    CHECK(g[2] == doctest::Approx(0.2));
    CHECK(g[3] == doctest::Approx(0.05));
    CHECK(g[4] == doctest::Approx(32.0 / 3200.0));
}

TEST_CASE("Hu invariants of a rectangle match the closed form") {
    // Continuous a x b rectangle: eta20 = a / 12b, eta02 = b / 12a, all odd terms vanish.
    for (auto [a, b] : {std::pair{6, 6}, std::pair{10, 4}, std::pair{3, 17}}) {
        const auto hu = sg::hu_invariants(rect_mask(40, 40, 5, 7, a, b));
        const double e20 = a / (12.0 * b), e02 = b / (12.0 * a);
        CHECK(hu[0] == doctest::Approx(e20 + e02).epsilon(1e-12));
        CHECK(hu[1] == doctest::Approx((e20 - e02) * (e20 - e02)).epsilon(1e-12));
        for (int k = 2; k < 7; ++k) CHECK(std::abs(hu[k]) < 1e-15);
    }
}

TEST_CASE("Hu log features of a square: symmetric terms fall on the noise floor") {
    const auto s = sg::hu_moments(rect_mask(30, 30, 4, 4, 10, 10));
    CHECK(s[0] == doctest::Approx(-std::log10(1.0 / 6.0)));
    for (int k = 1; k < 7; ++k) CHECK(s[k] == 0.0);
}

TEST_CASE("Hu moments are invariant to translation and 2x upsampling") {
    nn::Rng rng(5);
    synth::SceneSpec spec;
    for (int t = 0; t < 20; ++t) {
        const auto o = synth::random_object(spec, rng, 0);
        const auto m = synth::object_mask(o, 128, 128);
        if (m.count() < 20) continue;
        Mask shifted(160, 150), big(256, 256);
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x)
                if (m.get(x, y)) {
                    shifted.set(x + 17, y + 9);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) big.set(2 * x + dx, 2 * y + dy);
                }
        const auto a = sg::hu_moments(m), b = sg::hu_moments(shifted), c = sg::hu_moments(big);
        for (int k = 0; k < 7; ++k) {
            CHECK(std::abs(a[k] - b[k]) < 1e-6);
            CHECK(std::abs(a[k] - c[k]) < 1e-2);
        }
    }
}

TEST_CASE("relation features of a pair") {
    const auto di = det_from_mask(rect_mask(100, 100, 10, 10, 10, 10));
    const auto dj = det_from_mask(rect_mask(100, 100, 40, 10, 20, 10));
    const auto r = sg::relation_features(di, dj, 100, 100);
    // Centers (15, 15) and (50, 15).
    CHECK(r[0] == doctest::Approx(35.0 / 10.0));
    CHECK(r[1] == doctest::Approx(0.0));
    CHECK(r[2] == doctest::Approx(35.0 / std::sqrt(20000.0)));
    CHECK(r[3] == doctest::Approx(2.0));
    CHECK(r[4] == doctest::Approx(1.0));
    CHECK(r[5] == doctest::Approx(0.0));
    CHECK(r[6] == doctest::Approx(0.0));
    const auto self = sg::relation_features(di, di, 100, 100);
    CHECK(self[6] == 1.0);
    CHECK(self[2] == 0.0);
    // Vertical offset has theta = pi / 2.
    const auto dk = det_from_mask(rect_mask(100, 100, 10, 50, 10, 10));
    CHECK(sg::relation_features(di, dk, 100, 100)[5] == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("mask IoU") {
    const auto a = rect_mask(10, 10, 0, 0, 4, 4), b = rect_mask(10, 10, 2, 0, 4, 4);
    CHECK(sg::mask_iou(a, b) == doctest::Approx(8.0 / 24.0));
    CHECK_THROWS_AS(sg::mask_iou(a, Mask(5, 5)), sg::SceneError);
}

TEST_CASE("featurize orders nodes, truncates to n_max and appends the background") {
    Image img(64, 64, 0.5f);
    std::vector<sg::Detection> dets;
    for (int i = 0; i < 5; ++i) {
        dets.push_back(det_from_mask(rect_mask(64, 64, i * 12, 0, 4 + i, 4 + i)));
        dets.back().object_id = i;
    }
    sg::FeaturizeOptions opt;
    opt.n_max = 3;
    opt.crop_size = 16;
    opt.global_size = 16;
    const auto f = sg::featurize(img, dets, opt);
    REQUIRE(f.n == 4);
    CHECK(f.source_index == std::vector<int>{4, 3, 2, -1});
    CHECK(f.object_id == std::vector<int>{4, 3, 2, -1});
    CHECK(f.relation.size() == 16);
    CHECK(f.crops.front().width == 16);
    CHECK(f.global.width == 16);
}

TEST_CASE("background falls back to the full image when objects cover everything") {
    Image img(8, 8, 0.2f);
    std::vector<sg::Detection> dets{det_from_mask(Mask(8, 8, true))};
    const auto bg = sg::background_node(img, dets);
    CHECK(bg.fallback);
    CHECK(bg.detection.mask.count() == 64);
}

TEST_CASE("invalid detections are rejected") {
    auto d = det_from_mask(rect_mask(16, 16, 2, 2, 4, 4));
    CHECK_NOTHROW(sg::validate_detection(d, 16, 16));
    auto e = d;
    e.box.cx = 15;
    CHECK_THROWS_AS(sg::validate_detection(e, 16, 16), sg::SceneError);
    e = d;
    e.mask = Mask(8, 8, true);
    CHECK_THROWS_AS(sg::validate_detection(e, 16, 16), sg::SceneError);
    e = d;
    e.mask = Mask(16, 16);
    CHECK_THROWS_AS(sg::validate_detection(e, 16, 16), sg::SceneError);
    e = d;
    e.confidence = std::nan("");
    CHECK_THROWS_AS(sg::validate_detection(e, 16, 16), sg::SceneError);
    sg::FeaturizeOptions opt;
    opt.background = false;
    CHECK_THROWS_AS(sg::featurize(Image(16, 16), std::span<const sg::Detection>{}, opt), sg::SceneError);
}

TEST_CASE("manifest round trip") {
    synth::SceneSpec spec;
    nn::Rng rng(3);
    const auto r = synth::render(synth::generate_scene(spec, rng));
    sg::Manifest m;
    m.image = "x.png";
    m.width = r.image.width;
    m.height = r.image.height;
    m.detections = r.detections;
    m.crop_paths.assign(m.detections.size(), "");
    const auto path = (std::filesystem::temp_directory_path() / "fgraph_manifest_test.json").string();
    sg::save_manifest(path, m);
    const auto back = sg::load_manifest(path);
    REQUIRE(back.detections.size() == m.detections.size());
    for (std::size_t i = 0; i < m.detections.size(); ++i) {
        CHECK(back.detections[i].mask == m.detections[i].mask);
        CHECK(back.detections[i].box == m.detections[i].box);
        CHECK(back.detections[i].object_id == m.detections[i].object_id);
    }
    CHECK_THROWS(sg::manifest_from_json("{\"width\": 4}"));
}
