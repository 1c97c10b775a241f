#include "fgraph/explain.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>

using namespace fgraph;
namespace fs = std::filesystem;

namespace {

synth::LoadedVariant rendered(const synth::Scene& s) {
    auto r = synth::render(s);
    return {std::move(r.image), std::move(r.detections)};
}

struct Triple {
    synth::Scene original, moved;
    std::size_t object = 0;
};

Triple move_case(std::uint64_t seed) {
    synth::SceneSpec spec;
    nn::Rng rng(seed);
    Triple t;
    t.original = synth::generate_scene(spec, rng);
    t.object = t.original.objects.size() - 1;  // topmost, never occluded
    std::uniform_real_distribution<double> side(0, 1);
    const double dx = (side(rng) < 0.5 ? -1 : 1) * 0.25 * spec.canvas, dy = (side(rng) < 0.5 ? -1 : 1) * 0.1 * spec.canvas;
    t.moved = synth::move_object(t.original, t.object, dx, dy);
    return t;
}

}  // namespace

TEST_CASE("identical positive and negative give a zero loss and an all-zero map") {
    enc::Encoder model(enc::EncoderConfig{}, 1);
    const auto t = move_case(0);
    const auto x = rendered(t.original), m = rendered(t.moved);
    const auto s = xai::triplet_saliency(model, x, m, m);
    CHECK(s.loss == 0.0);
    CHECK(std::all_of(s.channel_weights.begin(), s.channel_weights.end(), [](double v) { return v == 0.0; }));
    CHECK(std::all_of(s.heatmap.begin(), s.heatmap.end(), [](double v) { return v == 0.0; }));
    CHECK(s.heatmap.size() == static_cast<std::size_t>(x.image.width * x.image.height));
}

TEST_CASE("loss matches the embeddings and is antisymmetric") {
    enc::Encoder model(enc::EncoderConfig{}, 2);
    const auto t = move_case(1);
    const auto x = rendered(t.original), m = rendered(t.moved);
    nn::Rng rng(5);
    synth::SceneSpec spec;
    const auto other = rendered(synth::generate_scene(spec, rng));

    const auto s = xai::triplet_saliency(model, x, m, other);
    const auto ex = model.embed(x.image, x.detections).z, em = model.embed(m.image, m.detections).z,
               eo = model.embed(other.image, other.detections).z;
    CHECK(std::abs(s.loss - (xai::cosine(ex, em) - xai::cosine(ex, eo))) < 1e-12);

    const auto r = xai::triplet_saliency(model, x, other, m);
    CHECK(r.loss == -s.loss);
    for (std::size_t k = 0; k < s.channel_weights.size(); ++k) CHECK(r.channel_weights[k] == -s.channel_weights[k]);

    const auto again = xai::triplet_saliency(model, x, m, other);
    CHECK(again.heatmap == s.heatmap);
    // Normalized to [0, 1]; an all-negative map stays all zero after the relu.
    const double hi = *std::max_element(s.heatmap.begin(), s.heatmap.end());
    CHECK((hi == 1.0 || hi == 0.0));
    CHECK(*std::min_element(s.heatmap.begin(), s.heatmap.end()) == 0.0);
    CHECK(s.node_weights.size() == 3);
    CHECK(s.node_weights[0].size() == x.detections.size() + 1);
}

TEST_CASE("self-positive loss is one minus the negative cosine") {
    enc::Encoder model(enc::EncoderConfig{}, 3);
    for (int c = 0; c < 5; ++c) {
        const auto t = move_case(100 + static_cast<std::uint64_t>(c));
        const auto x = rendered(t.original), m = rendered(t.moved);
        const auto s = xai::triplet_saliency(model, x, x, m);
        const double expect = 1.0 - xai::cosine(model.embed(x.image, x.detections).z, model.embed(m.image, m.detections).z);
        CHECK(std::abs(s.loss - expect) < 1e-12);
        CHECK(s.loss >= 0.0);
    }
}

TEST_CASE("outputs are written") {
    enc::Encoder model(testing::tiny_config(), 1);
    const auto t = move_case(2);
    const auto x = rendered(t.original), m = rendered(t.moved);
    const auto s = xai::triplet_saliency(model, x, x, m);
    const auto prefix = (fs::temp_directory_path() / "fgraph_sal").string();
    xai::write_outputs(prefix, s, &x.image);
    CHECK(fs::file_size(prefix + ".pgm") > static_cast<std::uintmax_t>(s.width * s.height));
    CHECK(fs::exists(prefix + ".json"));
    CHECK(fs::exists(prefix + ".png"));
    Image small(4, 4);
    CHECK_THROWS_AS(xai::write_outputs(prefix, s, &small), std::invalid_argument);
    auto cfg = testing::tiny_config();
    cfg.use_global = false;
    enc::Encoder no_global(cfg, 1);
    CHECK_THROWS_AS(xai::triplet_saliency(no_global, x, x, m), std::invalid_argument);
}
