#pragma once

// Three-stream scene-graph encoder: a global CNN over the whole image, an
// object Transformer over node features and a relation Transformer over edge
// features, each pooled to one vector and fused by a linear projection.

#include "fgraph/nn.hpp"
#include "fgraph/numcore.hpp"
#include "fgraph/scenegraph.hpp"

#include <span>
#include <string>
#include <vector>

namespace fgraph::enc {

struct EncoderConfig {
    // Node feature split: D_N = visual_proj + shape_proj + geometry_proj.
    std::size_t visual_proj = 48;
    std::size_t shape_proj = 8;
    std::size_t geometry_proj = 8;
    std::size_t relation_proj = 16;  // D_E = 2 D_N + relation_proj
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_mult = 2;
    std::size_t pool_dim = 0;  // D_a; 0 means "same as the pooled width"
    std::size_t embed_dim = 64;
    std::vector<std::size_t> cnn_channels{16, 32, 64, 128};
    std::size_t visual_dim = 256;
    int n_max = 8;
    int crop_size = 64;
    int global_size = 64;
    bool use_global = true;
    bool use_objects = true;
    bool use_relations = true;

    std::size_t node_dim() const { return visual_proj + shape_proj + geometry_proj; }
    std::size_t edge_dim() const { return 2 * node_dim() + relation_proj; }
    std::size_t fused_dim() const;
    sg::FeaturizeOptions featurize_options() const;
    bool needs_graph() const { return use_objects || use_relations; }

    // Throws std::invalid_argument naming the violated invariant.
    void validate() const;
};

std::string config_to_json(const EncoderConfig& c);
EncoderConfig config_from_json(const std::string& text);
EncoderConfig load_config(const std::string& path);
void save_config(const std::string& path, const EncoderConfig& c);

// Strided 3x3 conv stack + global average pool + linear head.
struct ConvNet {
    struct Block {
        nc::Tensor weight;  // [9*cin, cout]
        nc::Tensor bias;    // [cout]
    };
    std::vector<Block> blocks;
    nn::Linear head;
    int input_size = 64;

    ConvNet() = default;
    ConvNet(const std::vector<std::size_t>& channels, std::size_t out_dim, int input_size, nn::Rng& rng);

    struct Output {
        nc::Var features;     // [B, out_dim]
        nc::Var last_conv;    // [B*h*w, c] activations of the last block
        std::size_t last_h = 0, last_w = 0, last_c = 0;
    };
    Output forward(nc::Graph& g, std::span<const Image> images);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

// Image batch as an NHWC matrix [B*H*W, 3]; every image must be size x size.
nc::Tensor images_to_tensor(std::span<const Image> images, int size);

struct TransformerLayer {
    nn::LayerNorm ln_attn, ln_ffn;
    nn::Linear q, k, v, o;
    nn::Linear ff1, ff2;

    TransformerLayer() = default;
    TransformerLayer(std::size_t d, std::size_t ffn, nn::Rng& rng);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

// Pre-norm encoder stack without positional encoding.
struct TransformerEncoder {
    std::vector<TransformerLayer> layers;
    nn::LayerNorm final_norm;
    std::size_t dim = 0;
    std::size_t heads = 1;

    TransformerEncoder() = default;
    TransformerEncoder(std::size_t d, std::size_t heads, std::size_t n_layers, std::size_t ffn, nn::Rng& rng);

    // seq [N, d]; pad rows (mask 0) are excluded as keys and zeroed in the output.
    nc::Var operator()(nc::Graph& g, nc::Var seq, const nc::RowMask& valid);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

// w = softmax(tanh(seq K^T) V) over valid rows; output sum_i w_i seq_i.
struct AttentionPool {
    nc::Tensor key;    // [D_a, d]
    nc::Tensor value;  // [D_a, 1]

    AttentionPool() = default;
    AttentionPool(std::size_t d, std::size_t pool_dim, nn::Rng& rng);

    struct Output {
        nc::Var pooled;   // [1, d]
        nc::Var weights;  // [1, N]
    };
    Output operator()(nc::Graph& g, nc::Var seq, const nc::RowMask& valid);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

// Convenience wrappers on single sequences (tests and tools).
nc::Var transformer_encode(nc::Graph& g, nc::Var seq, const nc::RowMask& valid, TransformerEncoder& w);
nc::Var attention_pool(nc::Graph& g, nc::Var seq, const nc::RowMask& valid, AttentionPool& w);

struct EmbeddingVars {
    nc::Var z;        // [B, D]
    nc::Var z_global;  // [B, 256] (invalid id when the stream is off)
    nc::Var z_object;  // [B, D_N]
    nc::Var z_relation;  // [B, D_E]
    ConvNet::Output global_cnn;
    std::vector<nc::Var> node_pool_weights;  // per scene [1, N]
};

struct Embedding {
    std::vector<double> z;
    std::vector<double> z_global, z_object, z_relation;
    std::vector<double> node_weights;
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, std::uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }

    // Batched forward on featurized scenes (all scenes share one graph).
    EmbeddingVars forward(nc::Graph& g, std::span<const sg::SceneFeatures* const> scenes);

    // Inference on one scene.
    Embedding embed(const sg::SceneFeatures& scene);
    Embedding embed(const Image& image, std::span<const sg::Detection> detections);
    std::vector<Embedding> embed_batch(std::span<const sg::SceneFeatures* const> scenes);

    void visit(const nn::ParamVisitor& fn);
    std::vector<nc::NamedTensor> state() const;
    // Throws nc::CheckpointError on missing or mis-shaped parameters.
    void load_state(const std::vector<nc::NamedTensor>& tensors);

    ConvNet& global_cnn() { return global_cnn_; }
    ConvNet& visual_cnn() { return visual_cnn_; }
    sg::GraphProjections& projections() { return proj_; }
    TransformerEncoder& object_encoder() { return object_tf_; }
    TransformerEncoder& relation_encoder() { return relation_tf_; }
    AttentionPool& object_pool() { return object_pool_; }
    AttentionPool& relation_pool() { return relation_pool_; }
    nn::Linear& fusion() { return fusion_; }

private:
    EncoderConfig cfg_;
    ConvNet global_cnn_;
    ConvNet visual_cnn_;
    sg::GraphProjections proj_;
    TransformerEncoder object_tf_;
    TransformerEncoder relation_tf_;
    AttentionPool object_pool_;
    AttentionPool relation_pool_;
    nn::Linear fusion_;
};

}  // namespace fgraph::enc
