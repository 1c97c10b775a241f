#include "fgraph/encoder.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fgraph::enc {

using nlohmann::json;

std::size_t EncoderConfig::fused_dim() const {
    std::size_t d = 0;
    if (use_global) d += visual_dim;
    if (use_objects) d += node_dim();
    if (use_relations) d += edge_dim();
    return d;
}

sg::FeaturizeOptions EncoderConfig::featurize_options() const {
    sg::FeaturizeOptions o;
    o.n_max = n_max;
    o.crop_size = crop_size;
    o.global_size = global_size;
    return o;
}

void EncoderConfig::validate() const {
    if (heads == 0 || node_dim() % heads != 0)
        throw std::invalid_argument("encoder config: D_N must be divisible by heads");
    if (edge_dim() % heads != 0) throw std::invalid_argument("encoder config: D_E must be divisible by heads");
    if (embed_dim < 8) throw std::invalid_argument("encoder config: D must be >= 8");
    if (node_dim() < 2) throw std::invalid_argument("encoder config: D_N must be >= 2");
    if (layers == 0) throw std::invalid_argument("encoder config: need at least one layer");
    if (cnn_channels.empty()) throw std::invalid_argument("encoder config: empty CNN channel plan");
    if (n_max < 1) throw std::invalid_argument("encoder config: n_max must be >= 1");
    if (!use_global && !use_objects && !use_relations)
        throw std::invalid_argument("encoder config: all streams disabled");
    const int shrink = 1 << cnn_channels.size();
    if (crop_size % shrink != 0 || global_size % shrink != 0)
        throw std::invalid_argument("encoder config: input size not divisible by CNN stride");
}

std::string config_to_json(const EncoderConfig& c) {
    json j{{"visual_proj", c.visual_proj}, {"shape_proj", c.shape_proj},
           {"geometry_proj", c.geometry_proj}, {"relation_proj", c.relation_proj},
           {"layers", c.layers}, {"heads", c.heads}, {"ffn_mult", c.ffn_mult},
           {"pool_dim", c.pool_dim}, {"embed_dim", c.embed_dim}, {"cnn_channels", c.cnn_channels},
           {"visual_dim", c.visual_dim}, {"n_max", c.n_max}, {"crop_size", c.crop_size},
           {"global_size", c.global_size}, {"use_global", c.use_global},
           {"use_objects", c.use_objects}, {"use_relations", c.use_relations}};
    return j.dump(2);
}

EncoderConfig config_from_json(const std::string& text) {
    EncoderConfig c;
    const auto j = json::parse(text);
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("visual_proj", c.visual_proj);
    get("shape_proj", c.shape_proj);
    get("geometry_proj", c.geometry_proj);
    get("relation_proj", c.relation_proj);
    get("layers", c.layers);
    get("heads", c.heads);
    get("ffn_mult", c.ffn_mult);
    get("pool_dim", c.pool_dim);
    get("embed_dim", c.embed_dim);
    get("cnn_channels", c.cnn_channels);
    get("visual_dim", c.visual_dim);
    get("n_max", c.n_max);
    get("crop_size", c.crop_size);
    get("global_size", c.global_size);
    get("use_global", c.use_global);
    get("use_objects", c.use_objects);
    get("use_relations", c.use_relations);
    c.validate();
    return c;
}

EncoderConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read encoder config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const std::string& path, const EncoderConfig& c) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write encoder config: " + path);
    os << config_to_json(c) << '\n';
}

// ---------------------------------------------------------------------------
// CNN

nc::Tensor images_to_tensor(std::span<const Image> images, int size) {
    const auto plane = static_cast<std::size_t>(size) * size;
    nc::Tensor t = nc::Tensor::zeros({images.size() * plane, 3});
    for (std::size_t b = 0; b < images.size(); ++b) {
        const auto& img = images[b];
        if (img.width != size || img.height != size)
            throw std::invalid_argument("CNN input must be " + std::to_string(size) + "x" +
                                        std::to_string(size));
        for (std::size_t i = 0; i < plane * 3; ++i) t.data[b * plane * 3 + i] = img.pixels[i];
    }
    return t;
}

ConvNet::ConvNet(const std::vector<std::size_t>& channels, std::size_t out_dim, int size, nn::Rng& rng)
    : input_size(size) {
    std::size_t cin = 3;
    for (auto cout : channels) {
        const double bound = 1.0 / std::sqrt(9.0 * static_cast<double>(cin));
        blocks.push_back({nn::uniform_init({9 * cin, cout}, bound, rng), nn::uniform_init({cout}, bound, rng)});
        cin = cout;
    }
    head = nn::Linear(cin, out_dim, rng);
}

ConvNet::Output ConvNet::forward(nc::Graph& g, std::span<const Image> images) {
    Output out;
    auto x = g.constant(images_to_tensor(images, input_size));
    std::size_t h = static_cast<std::size_t>(input_size), w = h, c = 3;
    for (auto& blk : blocks) {
        auto cols = g.im2col(x, images.size(), h, w, c, 3, 2, 1);
        x = g.relu(g.add_bias(g.matmul(cols, g.param(blk.weight)), g.param(blk.bias)));
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        c = blk.weight.shape[1];
    }
    out.last_conv = x;
    out.last_h = h;
    out.last_w = w;
    out.last_c = c;
    out.features = head(g, g.mean_row_groups(x, h * w));
    return out;
}

void ConvNet::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        fn(prefix + ".conv" + std::to_string(i) + ".weight", blocks[i].weight);
        fn(prefix + ".conv" + std::to_string(i) + ".bias", blocks[i].bias);
    }
    head.visit(prefix + ".head", fn);
}

// ---------------------------------------------------------------------------
// Transformer

TransformerLayer::TransformerLayer(std::size_t d, std::size_t ffn, nn::Rng& rng)
    : ln_attn(d), ln_ffn(d), q(d, d, rng), k(d, d, rng), v(d, d, rng), o(d, d, rng),
      ff1(d, ffn, rng), ff2(ffn, d, rng) {}

void TransformerLayer::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    ln_attn.visit(prefix + ".ln_attn", fn);
    q.visit(prefix + ".q", fn);
    k.visit(prefix + ".k", fn);
    v.visit(prefix + ".v", fn);
    o.visit(prefix + ".o", fn);
    ln_ffn.visit(prefix + ".ln_ffn", fn);
    ff1.visit(prefix + ".ff1", fn);
    ff2.visit(prefix + ".ff2", fn);
}

TransformerEncoder::TransformerEncoder(std::size_t d, std::size_t h, std::size_t n_layers,
                                       std::size_t ffn, nn::Rng& rng)
    : final_norm(d), dim(d), heads(h) {
    for (std::size_t i = 0; i < n_layers; ++i) layers.emplace_back(d, ffn, rng);
}

namespace {

bool all_valid(const nc::RowMask& valid) {
    return std::all_of(valid.begin(), valid.end(), [](auto v) { return v != 0; });
}

void check_mask(const nc::RowMask& valid, std::size_t n) {
    if (valid.size() != n) throw nc::DimensionError("pad mask length != sequence length");
    if (std::none_of(valid.begin(), valid.end(), [](auto v) { return v != 0; }))
        throw nc::DegenerateMaskError("all rows masked");
}

nc::Var multi_head_attention(nc::Graph& g, TransformerLayer& L, nc::Var x, std::size_t heads,
                             const std::optional<nc::RowMask>& key_mask) {
    const auto d = g.value(x).cols();
    const auto dh = d / heads;
    auto Q = L.q(g, x);
    auto K = L.k(g, x);
    auto V = L.v(g, x);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<nc::Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = g.slice_cols(Q, h * dh, (h + 1) * dh);
        auto kh = g.slice_cols(K, h * dh, (h + 1) * dh);
        auto vh = g.slice_cols(V, h * dh, (h + 1) * dh);
        auto scores = g.scale(g.matmul(qh, g.transpose(kh)), inv);
        outs.push_back(g.matmul(g.softmax_rows(scores, key_mask), vh));
    }
    return L.o(g, heads == 1 ? outs[0] : g.concat_cols(outs));
}

}  // namespace

nc::Var TransformerEncoder::operator()(nc::Graph& g, nc::Var seq, const nc::RowMask& valid) {
    const auto n = g.value(seq).rows();
    if (g.value(seq).cols() != dim) throw nc::DimensionError("transformer width mismatch");
    check_mask(valid, n);
    const bool padded = !all_valid(valid);
    std::optional<nc::RowMask> key_mask;
    if (padded) {
        nc::RowMask m(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) m[i * n + j] = valid[j];
        key_mask = std::move(m);
    }
    auto x = seq;
    for (auto& L : layers) {
        x = g.add(x, multi_head_attention(g, L, L.ln_attn(g, x), heads, key_mask));
        x = g.add(x, L.ff2(g, g.relu(L.ff1(g, L.ln_ffn(g, x)))));
    }
    x = final_norm(g, x);
    if (padded) {
        nc::Tensor keep = nc::Tensor::zeros({n, dim});
        for (std::size_t i = 0; i < n; ++i)
            if (valid[i])
                for (std::size_t j = 0; j < dim; ++j) keep.data[i * dim + j] = 1.0;
        x = g.mul(x, g.constant(std::move(keep)));
    }
    return x;
}

void TransformerEncoder::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
    final_norm.visit(prefix + ".final_norm", fn);
}

AttentionPool::AttentionPool(std::size_t d, std::size_t pool_dim, nn::Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    key = nn::uniform_init({pool_dim, d}, bound, rng);
    value = nn::uniform_init({pool_dim, 1}, 1.0 / std::sqrt(static_cast<double>(pool_dim)), rng);
}

AttentionPool::Output AttentionPool::operator()(nc::Graph& g, nc::Var seq, const nc::RowMask& valid) {
    const auto n = g.value(seq).rows();
    check_mask(valid, n);
    auto logits = g.matmul(g.tanh(g.matmul(seq, g.transpose(g.param(key)))), g.param(value));  // [N,1]
    std::optional<nc::RowMask> mask;
    if (!all_valid(valid)) mask = valid;
    Output out;
    out.weights = g.softmax_rows(g.transpose(logits), mask);
    out.pooled = g.matmul(out.weights, seq);
    return out;
}

void AttentionPool::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    fn(prefix + ".K", key);
    fn(prefix + ".V", value);
}

nc::Var transformer_encode(nc::Graph& g, nc::Var seq, const nc::RowMask& valid, TransformerEncoder& w) {
    return w(g, seq, valid);
}

nc::Var attention_pool(nc::Graph& g, nc::Var seq, const nc::RowMask& valid, AttentionPool& w) {
    return w(g, seq, valid).pooled;
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    // Independent streams per component so toggling one stream leaves the others' init unchanged.
    auto rng_for = [&](std::uint64_t key) { return nn::Rng(nn::derive_seed(seed, {key})); };
    auto r1 = rng_for(1), r2 = rng_for(2), r3 = rng_for(3), r4 = rng_for(4), r5 = rng_for(5),
         r6 = rng_for(6);
    global_cnn_ = ConvNet(cfg_.cnn_channels, cfg_.visual_dim, cfg_.global_size, r1);
    visual_cnn_ = ConvNet(cfg_.cnn_channels, cfg_.visual_dim, cfg_.crop_size, r2);
    proj_ = sg::GraphProjections(cfg_.visual_proj, cfg_.shape_proj, cfg_.geometry_proj, cfg_.relation_proj, r3,
                                 cfg_.visual_dim);
    const auto dn = cfg_.node_dim(), de = cfg_.edge_dim();
    object_tf_ = TransformerEncoder(dn, cfg_.heads, cfg_.layers, cfg_.ffn_mult * dn, r4);
    object_pool_ = AttentionPool(dn, cfg_.pool_dim ? cfg_.pool_dim : dn, r4);
    relation_tf_ = TransformerEncoder(de, cfg_.heads, cfg_.layers, cfg_.ffn_mult * de, r5);
    relation_pool_ = AttentionPool(de, cfg_.pool_dim ? cfg_.pool_dim : de, r5);
    fusion_ = nn::Linear(cfg_.fused_dim(), cfg_.embed_dim, r6);
}

EmbeddingVars Encoder::forward(nc::Graph& g, std::span<const sg::SceneFeatures* const> scenes) {
    if (scenes.empty()) throw std::invalid_argument("encoder forward on empty batch");
    EmbeddingVars out;
    std::vector<nc::Var> fused;

    if (cfg_.use_global) {
        std::vector<Image> globals;
        globals.reserve(scenes.size());
        for (const auto* s : scenes) globals.push_back(s->global);
        out.global_cnn = global_cnn_.forward(g, globals);
        out.z_global = out.global_cnn.features;
        fused.push_back(out.z_global);
    }

    if (cfg_.needs_graph()) {
        std::vector<Image> crops;
        for (const auto* s : scenes) crops.insert(crops.end(), s->crops.begin(), s->crops.end());
        auto visual = visual_cnn_.forward(g, crops).features;
        auto nodes = sg::project_nodes(g, scenes, visual, proj_);
        std::optional<nc::Var> relations;
        if (cfg_.use_relations) relations = sg::project_relations(g, scenes, proj_);

        std::vector<nc::Var> zo, zr;
        std::size_t node_off = 0, rel_off = 0;
        for (const auto* s : scenes) {
            const auto n = s->n;
            auto scene_nodes = g.slice_rows(nodes, node_off, node_off + n);
            if (cfg_.use_objects) {
                const nc::RowMask valid(n, 1);
                auto pooled = object_pool_(g, object_tf_(g, scene_nodes, valid), valid);
                zo.push_back(pooled.pooled);
                out.node_pool_weights.push_back(pooled.weights);
            }
            if (cfg_.use_relations) {
                auto rel = g.slice_rows(*relations, rel_off, rel_off + n * n);
                auto edges = sg::assemble_edges(g, scene_nodes, rel, n);
                const nc::RowMask valid(n * n, 1);
                zr.push_back(relation_pool_(g, relation_tf_(g, edges, valid), valid).pooled);
            }
            node_off += n;
            rel_off += n * n;
        }
        if (cfg_.use_objects) {
            out.z_object = g.concat_rows(zo);
            fused.push_back(out.z_object);
        }
        if (cfg_.use_relations) {
            out.z_relation = g.concat_rows(zr);
            fused.push_back(out.z_relation);
        }
    }
    out.z = fusion_(g, fused.size() == 1 ? fused[0] : g.concat_cols(fused));
    return out;
}

namespace {

std::vector<double> row_of(const nc::Graph& g, nc::Var v, std::size_t r) {
    if (v.id == nc::Var{}.id) return {};
    const auto& t = g.value(v);
    const auto c = t.cols();
    return {t.data.begin() + static_cast<std::ptrdiff_t>(r * c),
            t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
}

}  // namespace

std::vector<Embedding> Encoder::embed_batch(std::span<const sg::SceneFeatures* const> scenes) {
    nc::Graph g;
    auto vars = forward(g, scenes);
    std::vector<Embedding> out(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        out[i].z = row_of(g, vars.z, i);
        out[i].z_global = row_of(g, vars.z_global, i);
        out[i].z_object = row_of(g, vars.z_object, i);
        out[i].z_relation = row_of(g, vars.z_relation, i);
        if (i < vars.node_pool_weights.size()) out[i].node_weights = g.value(vars.node_pool_weights[i]).data;
    }
    return out;
}

Embedding Encoder::embed(const sg::SceneFeatures& scene) {
    const sg::SceneFeatures* one[] = {&scene};
    return std::move(embed_batch(one).front());
}

Embedding Encoder::embed(const Image& image, std::span<const sg::Detection> detections) {
    return embed(sg::featurize(image, detections, cfg_.featurize_options()));
}

void Encoder::visit(const nn::ParamVisitor& fn) {
    global_cnn_.visit("global_cnn", fn);
    visual_cnn_.visit("visual_cnn", fn);
    proj_.visit("graph", fn);
    object_tf_.visit("object_tf", fn);
    object_pool_.visit("object_pool", fn);
    relation_tf_.visit("relation_tf", fn);
    relation_pool_.visit("relation_pool", fn);
    fusion_.visit("E_d", fn);
}

std::vector<nc::NamedTensor> Encoder::state() const {
    std::vector<nc::NamedTensor> out;
    const_cast<Encoder*>(this)->visit([&](const std::string& name, nc::Tensor& t) {
        out.push_back({name, nc::Tensor(t.shape, t.data)});
    });
    return out;
}

void Encoder::load_state(const std::vector<nc::NamedTensor>& tensors) {
    std::map<std::string, const nc::Tensor*> by_name;
    for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
    visit([&](const std::string& name, nc::Tensor& t) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw nc::CheckpointError("checkpoint missing parameter " + name);
        if (it->second->shape != t.shape)
            throw nc::CheckpointError("checkpoint shape mismatch for " + name + ": " +
                                      nc::shape_str(it->second->shape) + " vs " + nc::shape_str(t.shape));
        t.data = it->second->data;
    });
}

}  // namespace fgraph::enc
