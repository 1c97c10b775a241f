#pragma once

// Glue between datasets, hashers and benchmarks: hashing image sets in
// chunks, building benchmark inputs for a split with generated distractors.

#include "fgraph/encoder.hpp"
#include "fgraph/evalbench.hpp"
#include "fgraph/synthdata.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fgraph::pipe {

using BatchHasher = std::function<std::vector<std::uint64_t>(std::span<const synth::LoadedVariant>)>;

// Rounds every channel to the nearest 8-bit level, as a PNG round trip would.
Image quantize8(const Image& img);

std::vector<sg::SceneFeatures> featurize_all(std::span<const synth::LoadedVariant> items,
                                             const sg::FeaturizeOptions& opt);
std::vector<enc::Embedding> embed_all(enc::Encoder& model, std::span<const synth::LoadedVariant> items,
                                      std::size_t chunk = 64);

BatchHasher model_hasher(enc::Encoder& model, std::size_t chunk = 64);
BatchHasher classical_hasher(eval::ClassicalKind kind);

struct BenchOptions {
    std::string split = "test";
    std::size_t distractors = 10000;
    std::uint64_t distractor_offset = 0;  // first distractor index
    std::size_t chunk = 64;
};

// Distractor i rendered and quantized like a stored image.
synth::LoadedVariant distractor(const synth::DatasetConfig& cfg, std::uint64_t index);

eval::BenchInputs hash_bench_inputs(const std::string& root, const synth::DatasetIndex& index,
                                    const BatchHasher& hasher, const BenchOptions& opt);

}  // namespace fgraph::pipe
