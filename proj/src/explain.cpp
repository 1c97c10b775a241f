#include "fgraph/explain.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fgraph::xai {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: size mismatch");
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

SaliencyMap triplet_saliency(enc::Encoder& model, const synth::LoadedVariant& x, const synth::LoadedVariant& x_plus,
                             const synth::LoadedVariant& x_minus) {
    if (!model.config().use_global) throw std::invalid_argument("saliency needs the global stream");
    const auto opt = model.config().featurize_options();
    const sg::SceneFeatures f[3] = {sg::featurize(x.image, x.detections, opt),
                                    sg::featurize(x_plus.image, x_plus.detections, opt),
                                    sg::featurize(x_minus.image, x_minus.detections, opt)};
    nc::Graph g;
    // One forward per input keeps the two comparisons bitwise symmetric.
    enc::EmbeddingVars out[3];
    nc::Var unit[3];
    for (int i = 0; i < 3; ++i) {
        const sg::SceneFeatures* p = &f[i];
        out[i] = model.forward(g, std::span(&p, 1));
        unit[i] = g.l2_normalize_rows(out[i].z);
    }
    const auto loss = g.sub(g.sum(g.mul(unit[0], unit[1])), g.sum(g.mul(unit[0], unit[2])));
    g.backward(loss);
    model.visit([](const std::string&, nc::Tensor& t) { t.grad.reset(); });

    SaliencyMap s;
    s.loss = g.value(loss).data[0];
    const auto& conv = out[0].global_cnn;
    const auto& act = g.value(conv.last_conv).data;
    const auto& grad = g.grad(conv.last_conv);
    const std::size_t hw = conv.last_h * conv.last_w, c = conv.last_c;
    for (double v : grad)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite saliency gradient");

    s.grid_w = static_cast<int>(conv.last_w);
    s.grid_h = static_cast<int>(conv.last_h);
    s.channel_weights.assign(c, 0.0);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < c; ++k) s.channel_weights[k] += grad[p * c + k];
    for (auto& w : s.channel_weights) w /= static_cast<double>(hw);
    s.grid.assign(hw, 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
        double v = 0;
        for (std::size_t k = 0; k < c; ++k) v += s.channel_weights[k] * act[p * c + k];
        s.grid[p] = std::max(0.0, v);
    }

    s.width = x.image.width;
    s.height = x.image.height;
    s.heatmap = resize_plane(s.grid, s.grid_w, s.grid_h, s.width, s.height);
    const auto [lo, hi] = std::minmax_element(s.heatmap.begin(), s.heatmap.end());
    const double a = *lo, b = *hi;
    for (auto& v : s.heatmap) v = b > a ? (v - a) / (b - a) : 0.0;

    for (int i = 0; i < 3; ++i)
        s.node_weights.push_back(out[i].node_pool_weights.empty() ? std::vector<double>{}
                                                                 : g.value(out[i].node_pool_weights[0]).data);
    return s;
}

void write_outputs(const std::string& prefix, const SaliencyMap& s, const Image* overlay) {
    write_pgm(prefix + ".pgm", s.heatmap, s.width, s.height);
    nlohmann::json j;
    j["loss"] = s.loss;
    j["grid"] = {{"width", s.grid_w}, {"height", s.grid_h}, {"values", s.grid}};
    j["node_weights"] = {{"x", s.node_weights.at(0)}, {"x_plus", s.node_weights.at(1)}, {"x_minus", s.node_weights.at(2)}};
    std::ofstream os(prefix + ".json");
    if (!os) throw std::runtime_error("cannot write " + prefix + ".json");
    os << j.dump(1) << '\n';
    if (overlay) {
        if (overlay->width != s.width || overlay->height != s.height)
            throw std::invalid_argument("overlay size differs from the map");
        Image o = *overlay;
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const double h = s.heatmap[static_cast<std::size_t>(y) * s.width + x];
                // Red-yellow ramp weighted by the map.
                const float heat[3] = {1.0f, static_cast<float>(h), 0.0f};
                const float a = static_cast<float>(0.6 * h);
                for (int ch = 0; ch < 3; ++ch) o.at(x, y, ch) = (1 - a) * o.at(x, y, ch) + a * heat[ch];
            }
        write_png(prefix + ".png", o);
    }
}

}  // namespace fgraph::xai
