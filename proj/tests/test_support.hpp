#pragma once

// Shared fixtures for the test binaries.

#include "fgraph/encoder.hpp"
#include "fgraph/synthdata.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace fgraph::testing {

inline enc::EncoderConfig tiny_config() {
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
    cfg.n_max = 4;
    return cfg;
}

inline synth::SceneSpec small_spec(int canvas = 48) {
    synth::SceneSpec spec;
    spec.canvas = canvas;
    spec.min_objects = 2;
    spec.max_objects = 4;
    spec.min_radius = canvas / 12.0;
    spec.max_radius = canvas / 6.0;
    return spec;
}

// Relabels nodes: node i of the result is node perm[i] of the input.
inline sg::SceneFeatures permute_nodes(const sg::SceneFeatures& f, const std::vector<std::size_t>& perm) {
    sg::SceneFeatures p = f;
    for (std::size_t i = 0; i < f.n; ++i) {
        p.crops[i] = f.crops[perm[i]];
        p.geometry[i] = f.geometry[perm[i]];
        p.shape[i] = f.shape[perm[i]];
        p.source_index[i] = f.source_index[perm[i]];
        p.object_id[i] = f.object_id[perm[i]];
        for (std::size_t j = 0; j < f.n; ++j) p.relation[i * f.n + j] = f.relation[perm[i] * f.n + perm[j]];
    }
    return p;
}

inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 0, d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max(scale, std::abs(a[i]));
        d = std::max(d, std::abs(a[i] - b[i]));
    }
    return d / std::max(scale, 1e-300);
}

}  // namespace fgraph::testing
