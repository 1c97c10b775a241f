#include "fgraph/encoder.hpp"
#include "fgraph/synthdata.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace fgraph;
using testing::max_rel_diff;

namespace {

std::vector<sg::SceneFeatures> scenes(const enc::EncoderConfig& cfg, int n, std::uint64_t seed) {
    auto spec = testing::small_spec();
    nn::Rng rng(seed);
    std::vector<sg::SceneFeatures> out;
    for (int i = 0; i < n; ++i) {
        const auto r = synth::render(synth::generate_scene(spec, rng));
        out.push_back(sg::featurize(r.image, r.detections, cfg.featurize_options()));
    }
    return out;
}

}  // namespace

TEST_CASE("config validation names the violated invariant") {
    auto cfg = testing::tiny_config();
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.embed_dim = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.use_global = bad.use_objects = bad.use_relations = false;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.crop_size = 6;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.layers = 0;
    CHECK_THROWS_AS(enc::Encoder(bad, 0), std::invalid_argument);
}

TEST_CASE("default config dimensions") {
    enc::EncoderConfig cfg;
    CHECK(cfg.node_dim() == 64);
    CHECK(cfg.edge_dim() == 144);
    CHECK(cfg.fused_dim() == 256 + 64 + 144);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config JSON round trip") {
    auto cfg = testing::tiny_config();
    cfg.use_relations = false;
    const auto back = enc::config_from_json(enc::config_to_json(cfg));
    CHECK(enc::config_to_json(back) == enc::config_to_json(cfg));
    CHECK(!back.use_relations);
    CHECK(back.cnn_channels == cfg.cnn_channels);
}

TEST_CASE("ConvNet output shapes") {
    nn::Rng rng(1);
    enc::ConvNet net({3, 4}, 6, 8, rng);
    nc::Graph g;
    std::vector<Image> imgs(3, Image(8, 8, 0.3f));
    const auto out = net.forward(g, imgs);
    CHECK(g.value(out.features).shape == nc::Shape{3, 6});
    CHECK(out.last_h == 2);
    CHECK(out.last_w == 2);
    CHECK(out.last_c == 4);
    CHECK(g.value(out.last_conv).shape == nc::Shape{12, 4});
    std::vector<Image> wrong(1, Image(16, 16));
    CHECK_THROWS(net.forward(g, wrong));
}

TEST_CASE("transformer and pool ignore padded rows") {
    nn::Rng rng(2);
    enc::TransformerEncoder tf(8, 2, 2, 16, rng);
    enc::AttentionPool pool(8, 8, rng);
    nc::Tensor x = nc::Tensor::zeros({3, 8});
    std::normal_distribution<double> n;
    for (auto& v : x.data) v = n(rng);
    nc::Tensor padded = nc::Tensor::zeros({5, 8});
    for (std::size_t i = 0; i < 24; ++i) padded.data[i] = x.data[i];
    for (std::size_t i = 24; i < 40; ++i) padded.data[i] = 100.0 + static_cast<double>(i);

    nc::Graph g;
    const auto a = tf(g, g.constant(x), nc::RowMask{1, 1, 1});
    const auto b = tf(g, g.constant(padded), nc::RowMask{1, 1, 1, 0, 0});
    const auto pa = pool(g, a, nc::RowMask{1, 1, 1});
    const auto pb = pool(g, b, nc::RowMask{1, 1, 1, 0, 0});
    const auto& va = g.value(a).data;
    const auto& vb = g.value(b).data;
    for (std::size_t i = 0; i < 24; ++i) CHECK(va[i] == doctest::Approx(vb[i]).epsilon(1e-12));
    for (std::size_t i = 24; i < 40; ++i) CHECK(vb[i] == 0.0);
    CHECK(max_rel_diff(g.value(pa.pooled).data, g.value(pb.pooled).data) < 1e-12);
    CHECK(g.value(pb.weights).data[3] == 0.0);

    CHECK_THROWS_AS(tf(g, g.constant(x), nc::RowMask{1, 1}), nc::DimensionError);
    CHECK_THROWS_AS(tf(g, g.constant(x), nc::RowMask{0, 0, 0}), nc::DegenerateMaskError);
}

TEST_CASE("pool weights are a distribution over nodes") {
    const auto cfg = testing::tiny_config();
    enc::Encoder model(cfg, 3);
    for (const auto& f : scenes(cfg, 4, 9)) {
        const auto e = model.embed(f);
        REQUIRE(e.node_weights.size() == f.n);
        double s = 0;
        for (double w : e.node_weights) {
            CHECK(w > 0);
            s += w;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(e.z.size() == cfg.embed_dim);
    }
}

TEST_CASE("object and relation embeddings are invariant to node order") {
    const auto cfg = testing::tiny_config();
    enc::Encoder model(cfg, 4);
    nn::Rng rng(11);
    for (const auto& f : scenes(cfg, 10, 12)) {
        std::vector<std::size_t> perm(f.n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto a = model.embed(f), b = model.embed(testing::permute_nodes(f, perm));
        CHECK(max_rel_diff(a.z_object, b.z_object) < 1e-10);
        CHECK(max_rel_diff(a.z_relation, b.z_relation) < 1e-10);
        CHECK(max_rel_diff(a.z, b.z) < 1e-10);
    }
}

TEST_CASE("batched forward equals one-at-a-time embedding") {
    const auto cfg = testing::tiny_config();
    enc::Encoder model(cfg, 5);
    const auto fs = scenes(cfg, 5, 13);
    std::vector<const sg::SceneFeatures*> ptrs;
    for (const auto& f : fs) ptrs.push_back(&f);
    const auto batch = model.embed_batch(ptrs);
    for (std::size_t i = 0; i < fs.size(); ++i) CHECK(max_rel_diff(batch[i].z, model.embed(fs[i]).z) < 1e-12);
}

TEST_CASE("disabling a stream changes the fused width only") {
    auto cfg = testing::tiny_config();
    cfg.use_global = false;
    enc::Encoder model(cfg, 6);
    CHECK(model.fusion().in_features() == cfg.node_dim() + cfg.edge_dim());
    const auto fs = scenes(cfg, 1, 14);
    CHECK(model.embed(fs[0]).z_global.empty());
}

TEST_CASE("state round trip and mismatch errors") {
    const auto cfg = testing::tiny_config();
    enc::Encoder a(cfg, 7), b(cfg, 8);
    const auto fs = scenes(cfg, 1, 15);
    CHECK(a.embed(fs[0]).z != b.embed(fs[0]).z);
    b.load_state(a.state());
    CHECK(a.embed(fs[0]).z == b.embed(fs[0]).z);

    auto st = a.state();
    st.pop_back();
    CHECK_THROWS_AS(b.load_state(st), nc::CheckpointError);
    st = a.state();
    st.front().tensor = nc::Tensor::zeros({1});
    CHECK_THROWS_AS(b.load_state(st), nc::CheckpointError);
}

TEST_CASE("same seed gives identical weights") {
    const auto cfg = testing::tiny_config();
    const auto a = enc::Encoder(cfg, 21).state(), b = enc::Encoder(cfg, 21).state();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].tensor.data == b[i].tensor.data);
    }
}
