#pragma once

// Triplet saliency on the global CNN: gradient-weighted last-layer activations
// of the query for L = cos(f(x), f(x+)) - cos(f(x), f(x-)), plus the object
// pooling weights of each input.

#include "fgraph/encoder.hpp"
#include "fgraph/synthdata.hpp"

#include <string>
#include <vector>

namespace fgraph::xai {

struct SaliencyMap {
    int grid_w = 0, grid_h = 0;
    std::vector<double> grid;  // relu(sum_c w_c A_c) on the activation grid, before normalization
    int width = 0, height = 0;
    std::vector<double> heatmap;  // upsampled to the query size, min-max normalized to [0, 1]
    double loss = 0;
    std::vector<double> channel_weights;
    std::vector<std::vector<double>> node_weights;  // x, x+, x-: pooling weight per node
};

// Throws std::runtime_error on non-finite gradients and std::invalid_argument
// when the model has no global stream.
SaliencyMap triplet_saliency(enc::Encoder& model, const synth::LoadedVariant& x, const synth::LoadedVariant& x_plus,
                             const synth::LoadedVariant& x_minus);

// Cosine similarity of two embeddings (the d in L).
double cosine(const std::vector<double>& a, const std::vector<double>& b);

// <prefix>.pgm (8-bit map), <prefix>.json (loss and node weights) and, with
// an image, <prefix>.png (map blended over it).
void write_outputs(const std::string& prefix, const SaliencyMap& s, const Image* overlay);

}  // namespace fgraph::xai
