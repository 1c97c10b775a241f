#include "fgraph/gradsuite.hpp"

#include "fgraph/augment.hpp"
#include "fgraph/contrastive.hpp"
#include "fgraph/encoder.hpp"
#include "fgraph/hashing.hpp"
#include "fgraph/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace fgraph::diag {

namespace {

using nc::Graph;
using nc::Tensor;
using nc::Var;

Tensor random_tensor(nc::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    nn::Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) {
        v = u(rng);
        // Keep samples off the kinks of relu and abs.
        if (std::abs(v) < 0.05) v = v < 0 ? -0.05 - std::abs(v) : 0.05 + v;
    }
    return t;
}

// Random fixed projection of y to a scalar so every output entry matters.
Var wsum(Graph& g, Var y) {
    const auto& v = g.value(y);
    return g.sum(g.mul(y, g.constant(random_tensor(v.shape, 0xC0FFEEULL + v.size()))));
}

struct OpCase {
    std::string name;
    nc::Shape shape;
    std::function<Var(Graph&, Var)> body;
};

std::vector<OpCase> op_cases() {
    auto C = [](nc::Shape s, std::uint64_t k) { return random_tensor(std::move(s), 0xABCDULL + k); };
    std::vector<OpCase> ops;
    auto add = [&](std::string name, nc::Shape shape, std::function<Var(Graph&, Var)> f) {
        ops.push_back({std::move(name), std::move(shape), std::move(f)});
    };
    add("matmul (left)", {3, 4}, [=](Graph& g, Var x) { return g.matmul(x, g.constant(C({4, 2}, 1))); });
    add("matmul (right)", {3, 4}, [=](Graph& g, Var x) { return g.matmul(g.constant(C({2, 3}, 2)), x); });
    add("matmul (x x^T)", {3, 4}, [](Graph& g, Var x) { return g.matmul(x, g.transpose(x)); });
    add("transpose", {3, 4}, [](Graph& g, Var x) { return g.transpose(x); });
    add("add", {3, 4}, [=](Graph& g, Var x) { return g.add(x, g.constant(C({3, 4}, 3))); });
    add("add (x + x)", {3, 4}, [](Graph& g, Var x) { return g.add(x, x); });
    add("sub", {3, 4}, [=](Graph& g, Var x) { return g.sub(g.constant(C({3, 4}, 4)), x); });
    add("mul", {3, 4}, [=](Graph& g, Var x) { return g.mul(x, g.constant(C({3, 4}, 5))); });
    add("mul (x * x)", {3, 4}, [](Graph& g, Var x) { return g.mul(x, x); });
    add("scale", {3, 4}, [](Graph& g, Var x) { return g.scale(x, 0.7); });
    add("add_bias (matrix)", {3, 4}, [=](Graph& g, Var x) { return g.add_bias(x, g.constant(C({4}, 6))); });
    add("add_bias (bias)", {4}, [=](Graph& g, Var x) { return g.add_bias(g.constant(C({3, 4}, 7)), x); });
    add("concat_cols", {3, 2}, [=](Graph& g, Var x) {
        const Var parts[] = {x, g.constant(C({3, 3}, 8)), x};
        return g.concat_cols(parts);
    });
    add("concat_rows", {2, 3}, [=](Graph& g, Var x) {
        const Var parts[] = {g.constant(C({1, 3}, 9)), x, x};
        return g.concat_rows(parts);
    });
    add("slice_rows", {4, 3}, [](Graph& g, Var x) { return g.slice_rows(x, 1, 3); });
    add("slice_cols", {3, 4}, [](Graph& g, Var x) { return g.slice_cols(x, 1, 3); });
    add("gather_rows", {3, 2}, [](Graph& g, Var x) { return g.gather_rows(x, {2, 0, 2, 1}); });
    add("tanh", {3, 4}, [](Graph& g, Var x) { return g.tanh(x); });
    add("relu", {3, 4}, [](Graph& g, Var x) { return g.relu(x); });
    add("sigmoid", {3, 4}, [](Graph& g, Var x) { return g.sigmoid(x); });
    add("exp", {3, 4}, [](Graph& g, Var x) { return g.exp(x); });
    add("log", {3, 4}, [](Graph& g, Var x) {
        return g.log(g.add(g.mul(x, x), g.constant(Tensor::filled({3, 4}, 0.5))));
    });
    add("abs", {3, 4}, [](Graph& g, Var x) { return g.abs(x); });
    add("softmax_rows", {3, 4}, [](Graph& g, Var x) { return g.softmax_rows(g.scale(x, 2.0)); });
    add("softmax_rows (masked)", {3, 4}, [](Graph& g, Var x) {
        return g.softmax_rows(x, nc::RowMask{1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 1});
    });
    add("layer_norm (x)", {3, 5}, [=](Graph& g, Var x) {
        return g.layer_norm(x, g.constant(C({5}, 10)), g.constant(C({5}, 11)), 1e-5);
    });
    add("layer_norm (gain)", {5}, [=](Graph& g, Var x) {
        return g.layer_norm(g.constant(C({3, 5}, 12)), x, g.constant(C({5}, 13)), 1e-5);
    });
    add("layer_norm (bias)", {5}, [=](Graph& g, Var x) {
        return g.layer_norm(g.constant(C({3, 5}, 14)), g.constant(C({5}, 15)), x, 1e-5);
    });
    add("sum", {3, 4}, [](Graph& g, Var x) { return g.scale(g.sum(x), 1.3); });
    add("mean", {3, 4}, [](Graph& g, Var x) { return g.scale(g.mean(x), 1.3); });
    add("row_sum", {3, 4}, [](Graph& g, Var x) { return g.row_sum(x); });
    add("mean_row_groups", {6, 3}, [](Graph& g, Var x) { return g.mean_row_groups(x, 3); });
    add("l2_normalize_rows", {3, 4}, [](Graph& g, Var x) { return g.l2_normalize_rows(x); });
    add("im2col", {2 * 5 * 4, 2}, [](Graph& g, Var x) { return g.im2col(x, 2, 5, 4, 2, 3, 2, 1); });
    return ops;
}

}  // namespace

std::vector<CheckResult> op_suite(std::uint64_t seed, int points, double eps) {
    std::vector<CheckResult> out;
    std::uint64_t k = 0;
    for (const auto& op : op_cases()) {
        CheckResult r{op.name, 0.0};
        for (int p = 0; p < points; ++p) {
            const auto x = random_tensor(op.shape, nn::derive_seed(seed, {++k}));
            const auto body = op.body;
            r.max_error = std::max(r.max_error, nc::grad_check([&](Graph& g, Var v) { return wsum(g, body(g, v)); }, x, eps));
        }
        out.push_back(r);
    }
    // Straight-through sign: the upstream gradient must arrive unchanged.
    CheckResult st{"sign_st (definitional)", 0.0};
    for (int p = 0; p < points; ++p) {
        const auto x = random_tensor({3, 4}, nn::derive_seed(seed, {++k}));
        const auto s = random_tensor({3, 4}, nn::derive_seed(seed, {++k}));
        Graph g;
        auto xv = g.input(x);
        auto y = g.sign_st(xv);
        g.backward(y, s);
        const auto& gx = g.grad(xv);
        for (std::size_t i = 0; i < s.size(); ++i) st.max_error = std::max(st.max_error, std::abs(gx[i] - s.data[i]));
    }
    out.push_back(st);
    return out;
}

CheckResult composed_check(std::uint64_t seed, int points, double eps) {
    enc::EncoderConfig cfg;
    cfg.visual_proj = 4;
    cfg.shape_proj = 2;
    cfg.geometry_proj = 2;
    cfg.relation_proj = 4;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embed_dim = 8;
    cfg.cnn_channels = {3, 4};
    cfg.visual_dim = 6;
    cfg.crop_size = 8;
    cfg.global_size = 8;
    cfg.n_max = 3;

    synth::SceneSpec spec;
    spec.canvas = 32;
    spec.min_objects = 1;
    spec.max_objects = 2;
    spec.min_radius = 4;
    spec.max_radius = 8;

    CheckResult res{"encoder + contrastive loss (pre-quantization)", 0.0};
    for (int p = 0; p < points; ++p) {
        nn::Rng rng(nn::derive_seed(seed, {0xC0A1ULL, static_cast<std::uint64_t>(p)}));
        // Two identities: original, a noisy benign copy, and a manipulated variant of the first.
        std::vector<sg::SceneFeatures> feats;
        std::vector<con::BatchItem> items;
        synth::Scene first;
        for (int id = 0; id < 2; ++id) {
            const auto s = synth::generate_scene(spec, rng);
            if (id == 0) first = s;
            const auto r = synth::render(s);
            feats.push_back(sg::featurize(r.image, r.detections, cfg.featurize_options()));
            items.push_back({id, con::Variant::original});
            const auto noisy = aug::add_noise(r.image, 0.03, rng());
            feats.push_back(sg::featurize(noisy, r.detections, cfg.featurize_options()));
            items.push_back({id, con::Variant::benign});
        }
        const auto moved = synth::render(synth::move_object(first, 0, 3.0, -2.0));
        feats.push_back(sg::featurize(moved.image, moved.detections, cfg.featurize_options()));
        items.push_back({0, con::Variant::manipulated});
        std::vector<const sg::SceneFeatures*> ptrs;
        for (const auto& f : feats) ptrs.push_back(&f);

        enc::Encoder model(cfg, nn::derive_seed(seed, {0xE9C0ULL, static_cast<std::uint64_t>(p)}));
        nn::Linear proj(cfg.embed_dim, cfg.embed_dim, rng);
        std::vector<std::pair<std::string, nc::Tensor*>> params;
        model.visit([&](const std::string& n, nc::Tensor& t) { params.emplace_back(n, &t); });
        proj.visit("E_b", [&](const std::string& n, nc::Tensor& t) { params.emplace_back(n, &t); });

        // u is frozen at the unperturbed point so the objective stays smooth.
        std::vector<double> u_frozen;
        auto loss = [&](Graph& g) {
            auto z = model.forward(g, ptrs).z;
            if (u_frozen.empty()) {
                for (double v : g.value(z).data) u_frozen.push_back(v >= 0 ? 1.0 : -1.0);
            }
            auto u = g.constant(Tensor(g.value(z).shape, u_frozen));
            auto lc = con::simclr_plus_loss(g, z, items, &proj, 0.5);
            return g.add(lc, g.scale(hash::quantization_loss_graph(g, z, u), 1e-2));
        };
        for (auto& [n, t] : params) t->grad.reset();
        {
            Graph g;
            g.backward(loss(g));
        }
        std::vector<std::vector<double>> analytic;
        for (auto& [n, t] : params) {
            analytic.push_back(t->grad ? *t->grad : std::vector<double>(t->size(), 0.0));
            t->grad.reset();
        }
        auto value = [&] {
            Graph g;
            return g.value(loss(g)).data[0];
        };
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& t = *params[k].second;
            std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
            for (int c = 0; c < 3; ++c) {
                const auto i = pick(rng);
                const double x0 = t.data[i];
                t.data[i] = x0 + eps;
                const double fp = value();
                t.data[i] = x0 - eps;
                const double fm = value();
                t.data[i] = x0;
                const double numeric = (fp - fm) / (2 * eps);
                const double a = analytic[k][i];
                res.max_error = std::max(res.max_error, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
            }
        }
    }
    return res;
}

}  // namespace fgraph::diag
