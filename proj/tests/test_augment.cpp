#include "fgraph/augment.hpp"
#include "fgraph/synthdata.hpp"

#include <doctest.h>

#include <set>

using namespace fgraph;

namespace {

Image ramp(int w, int h) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>((x + 2 * y + c) % 17) / 16.0f;
    return img;
}

}  // namespace

TEST_CASE("affine compose and invert") {
    const aug::Affine a{2, 0.5, 3, -1, 1.5, 4}, b{0.5, 0, -2, 0.25, 1, 1};
    const auto ab = aug::compose(b, a);
    const auto p = aug::apply(ab, 3.0, -7.0);
    const auto q0 = aug::apply(a, 3.0, -7.0);
    const auto q = aug::apply(b, q0[0], q0[1]);
    CHECK(p[0] == doctest::Approx(q[0]));
    CHECK(p[1] == doctest::Approx(q[1]));
    const auto id = aug::compose(aug::invert(a), a);
    const aug::Affine expect{1, 0, 0, 0, 1, 0};
    for (int k = 0; k < 6; ++k) CHECK(id[k] == doctest::Approx(expect[k]));
    CHECK_THROWS_AS(aug::invert({1, 2, 0, 2, 4, 0}), std::domain_error);
}

TEST_CASE("raster steps with neutral parameters are identities") {
    const auto img = ramp(13, 9);
    CHECK(aug::flip_horizontal(aug::flip_horizontal(img)).pixels == img.pixels);
    CHECK(aug::flip_horizontal(img).at(0, 3, 1) == img.at(12, 3, 1));
    CHECK(aug::add_noise(img, 0.0, 5).pixels == img.pixels);
    const auto col = aug::enhance_color(img, 1.0);
    const auto sh = aug::enhance_sharpness(img, 1.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        CHECK(col.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
        CHECK(sh.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
    }
    const auto rot = aug::rotate(img, 0.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(rot.pixels[i] == doctest::Approx(img.pixels[i]));
}

TEST_CASE("color enhancement at zero gives luma gray") {
    const auto g = aug::enhance_color(ramp(5, 5), 0.0);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            CHECK(g.at(x, y, 0) == doctest::Approx(g.at(x, y, 1)));
            CHECK(g.at(x, y, 1) == doctest::Approx(g.at(x, y, 2)));
        }
}

TEST_CASE("reflect padding mirrors the border") {
    const auto img = ramp(6, 4);
    const auto p = aug::pad_reflect(img, 2, 1, 3, 0);
    REQUIRE(p.width == 11);
    REQUIRE(p.height == 5);
    CHECK(p.at(2, 1, 0) == img.at(0, 0, 0));
    CHECK(p.at(1, 1, 0) == img.at(0, 0, 0));  // symmetric: edge pixel repeated
    CHECK(p.at(0, 1, 0) == img.at(1, 0, 0));
    CHECK(p.at(2, 0, 2) == img.at(0, 0, 2));
    CHECK(p.at(8, 2, 1) == img.at(5, 1, 1));
}

TEST_CASE("sampled plans: jpeg, resize, then distinct secondary steps") {
    aug::AugmentConfig cfg;
    nn::Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const auto p = aug::sample_plan(cfg, rng);
        REQUIRE(p.steps.size() >= 3);
        REQUIRE(p.steps.size() <= 5);
        CHECK(p.steps[0].kind == aug::Kind::jpeg);
        CHECK(p.steps[0].p[0] >= 30);
        CHECK(p.steps[0].p[0] <= 95);
        CHECK(p.steps[1].kind == aug::Kind::resize);
        std::set<aug::Kind> kinds;
        for (std::size_t i = 2; i < p.steps.size(); ++i) kinds.insert(p.steps[i].kind);
        CHECK(kinds.size() == p.steps.size() - 2);
    }
    cfg.max_secondary = 9;
    CHECK_THROWS_AS(aug::sample_plan(cfg, rng), std::invalid_argument);
}

TEST_CASE("tracked transform maps output masks back onto the source objects") {
    synth::SceneSpec spec;
    aug::AugmentConfig cfg;
    nn::Rng rng(6);
    for (int t = 0; t < 15; ++t) {
        const auto r = synth::render(synth::generate_scene(spec, rng));
        const auto out = aug::benign_augment(r.image, r.detections, cfg, rng);
        CHECK(out.image.width == cfg.output_size);
        const auto inv = aug::invert(out.transform);
        for (const auto& d : out.detections) {
            const sg::Detection* src = nullptr;
            for (const auto& s : r.detections)
                if (s.object_id == d.object_id) src = &s;
            REQUIRE(src != nullptr);
            std::size_t hit = 0, total = 0;
            for (int y = 0; y < d.mask.height; ++y)
                for (int x = 0; x < d.mask.width; ++x) {
                    if (!d.mask.get(x, y)) continue;
                    const auto [sx, sy] = aug::apply(inv, x + 0.5, y + 0.5);
                    const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
                    ++total;
                    // One pixel of slack for nearest-neighbour resampling.
                    bool near = false;
                    for (int dy = -1; dy <= 1 && !near; ++dy)
                        for (int dx = -1; dx <= 1 && !near; ++dx) {
                            const int xx = ix + dx, yy = iy + dy;
                            near = xx >= 0 && yy >= 0 && xx < 128 && yy < 128 && src->mask.get(xx, yy);
                        }
                    hit += near;
                }
            CHECK(static_cast<double>(hit) >= 0.97 * static_cast<double>(total));
        }
    }
}

TEST_CASE("augmentation is deterministic given the rng state") {
    synth::SceneSpec spec;
    nn::Rng g(1);
    const auto r = synth::render(synth::generate_scene(spec, g));
    aug::AugmentConfig cfg;
    nn::Rng a(9), b(9);
    CHECK(aug::benign_augment(r.image, cfg, a).pixels == aug::benign_augment(r.image, cfg, b).pixels);
}
