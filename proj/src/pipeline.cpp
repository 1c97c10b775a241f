#include "fgraph/pipeline.hpp"

#include "fgraph/hashing.hpp"
#include "fgraph/parallel.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace fgraph::pipe {

Image quantize8(const Image& img) {
    Image out = img;
    for (auto& v : out.pixels) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
    return out;
}

std::vector<sg::SceneFeatures> featurize_all(std::span<const synth::LoadedVariant> items,
                                             const sg::FeaturizeOptions& opt) {
    std::vector<sg::SceneFeatures> out(items.size());
    parallel_for(items.size(), [&](std::size_t i) { out[i] = sg::featurize(items[i].image, items[i].detections, opt); });
    return out;
}

std::vector<enc::Embedding> embed_all(enc::Encoder& model, std::span<const synth::LoadedVariant> items,
                                      std::size_t chunk) {
    std::vector<enc::Embedding> out;
    out.reserve(items.size());
    const auto opt = model.config().featurize_options();
    for (std::size_t b = 0; b < items.size(); b += chunk) {
        const auto part = items.subspan(b, std::min(chunk, items.size() - b));
        const auto feats = featurize_all(part, opt);
        std::vector<const sg::SceneFeatures*> ptrs;
        for (const auto& f : feats) ptrs.push_back(&f);
        auto emb = model.embed_batch(ptrs);
        for (auto& e : emb) out.push_back(std::move(e));
    }
    return out;
}

BatchHasher model_hasher(enc::Encoder& model, std::size_t chunk) {
    return [&model, chunk](std::span<const synth::LoadedVariant> items) {
        std::vector<std::uint64_t> codes;
        codes.reserve(items.size());
        for (const auto& e : embed_all(model, items, chunk)) codes.push_back(hash::quantize(e.z).bits);
        return codes;
    };
}

BatchHasher classical_hasher(eval::ClassicalKind kind) {
    return [kind](std::span<const synth::LoadedVariant> items) {
        std::vector<std::uint64_t> codes(items.size());
        parallel_for(items.size(), [&](std::size_t i) { codes[i] = eval::classical_hash(items[i].image, kind); });
        return codes;
    };
}

synth::LoadedVariant distractor(const synth::DatasetConfig& cfg, std::uint64_t index) {
    auto r = synth::render(synth::distractor_scene(cfg, index));
    return {quantize8(r.image), std::move(r.detections)};
}

namespace {

void hash_entries(const std::string& root, const std::vector<std::pair<const synth::VariantEntry*, int>>& entries,
                  idx::Role role, const BatchHasher& hasher, std::size_t chunk, std::vector<eval::CodedItem>& out) {
    for (std::size_t b = 0; b < entries.size(); b += chunk) {
        const auto n = std::min(chunk, entries.size() - b);
        std::vector<synth::LoadedVariant> items(n);
        parallel_for(n, [&](std::size_t i) { items[i] = synth::load_variant(root, *entries[b + i].first); });
        const auto codes = hasher(items);
        for (std::size_t i = 0; i < n; ++i)
            out.push_back({entries[b + i].first->image, entries[b + i].second, role, codes[i]});
    }
}

}  // namespace

eval::BenchInputs hash_bench_inputs(const std::string& root, const synth::DatasetIndex& index,
                                    const BatchHasher& hasher, const BenchOptions& opt) {
    eval::BenchInputs in;
    std::vector<std::pair<const synth::VariantEntry*, int>> originals, benign, manipulated;
    for (const auto* e : index.split(opt.split)) {
        originals.emplace_back(&e->original, e->id);
        for (const auto& v : e->benign) benign.emplace_back(&v, e->id);
        for (const auto& v : e->manipulated) manipulated.emplace_back(&v, e->id);
    }
    if (originals.empty()) throw std::invalid_argument("split '" + opt.split + "' has no identities");
    hash_entries(root, originals, idx::Role::original, hasher, opt.chunk, in.originals);
    hash_entries(root, benign, idx::Role::benign, hasher, opt.chunk, in.benign);
    hash_entries(root, manipulated, idx::Role::manipulated, hasher, opt.chunk, in.manipulated);
    for (std::size_t b = 0; b < opt.distractors; b += opt.chunk) {
        const auto n = std::min(opt.chunk, opt.distractors - b);
        std::vector<synth::LoadedVariant> items(n);
        parallel_for(n, [&](std::size_t i) { items[i] = distractor(index.config, opt.distractor_offset + b + i); });
        const auto codes = hasher(items);
        for (std::size_t i = 0; i < n; ++i)
            in.distractors.push_back({"distractor/" + std::to_string(opt.distractor_offset + b + i), -1,
                                      idx::Role::distractor, codes[i]});
        if ((b / opt.chunk) % 40 == 39) spdlog::info("hashed {}/{} distractors", b + n, opt.distractors);
    }
    return in;
}

}  // namespace fgraph::pipe
