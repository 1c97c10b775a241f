#pragma once

// Scene decomposition: detections -> per-object geometry, shape and pairwise
// relation features, and assembly of the fully connected attributed graph
// (node matrix N x D_N, edge matrix N^2 x D_E).

#include "fgraph/image.hpp"
#include "fgraph/nn.hpp"
#include "fgraph/numcore.hpp"

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgraph::sg {

class SceneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Box in pixel units: (cx, cy) is the box center, pixel i spans [i, i+1).
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
    bool operator==(const Box&) const = default;
};

struct Detection {
    Image crop;  // optional; cut from the image by `box` when empty
    Mask mask;   // aligned to the full image
    Box box;
    double confidence = 1.0;
    int object_id = -1;  // generator lineage tag, -1 when unknown
};

// Tight box of the set pixels of a mask.
Box tight_box(const Mask& m);

using GeometryFeature = std::array<double, 5>;
using ShapeFeature = std::array<double, 7>;
using RelationFeature = std::array<double, 7>;

inline constexpr std::size_t kGeometryDim = 5;
inline constexpr std::size_t kShapeDim = 7;
inline constexpr std::size_t kRelationDim = 7;
inline constexpr std::size_t kVisualDim = 256;

// [x/w, y/h, w_i/w, h_i/h, A_i/A] with A_i = w_i h_i and A = w h.
GeometryFeature geometry_features(const Box& b, int width, int height);

// Seven Hu invariants of the mask, from exact area moments of the pixel squares.
std::array<double, 7> hu_invariants(const Mask& m);
// Log rescaling: s = -sign(h) log10(|h| + 1e-30); |h| below kHuNoiseFloor counts as 0.
inline constexpr double kHuNoiseFloor = 1e-24;
ShapeFeature hu_moments(const Mask& m);

// Mask intersection over union.
double mask_iou(const Mask& a, const Mask& b);

RelationFeature relation_features(const Detection& di, const Detection& dj, int width, int height);

struct BackgroundNode {
    Detection detection;
    bool fallback = false;  // objects covered every pixel; full-image mask used
};
BackgroundNode background_node(const Image& image, std::span<const Detection> detections);

struct FeaturizeOptions {
    int n_max = 8;
    int crop_size = 64;
    int global_size = 64;
    bool background = true;
};

// Non-learned part of the scene graph: ordered nodes and their features.
struct SceneFeatures {
    std::size_t n = 0;
    std::vector<Image> crops;                 // n crops, crop_size^2, background last
    std::vector<GeometryFeature> geometry;    // n
    std::vector<ShapeFeature> shape;          // n
    std::vector<RelationFeature> relation;    // n*n, row (i,j) at i*n+j
    std::vector<int> source_index;            // detection index per node, -1 = background
    std::vector<int> object_id;               // lineage tag per node
    Image global;                             // whole image at global_size^2
    bool background_fallback = false;
};

// Node order: confidence desc, then box area desc, then cx asc, then cy asc.
std::vector<std::size_t> node_order(std::span<const Detection> detections);

SceneFeatures featurize(const Image& image, std::span<const Detection> detections,
                        const FeaturizeOptions& opt = {});

// Learned projections E_v, E_s, E_g (node) and E_r (edge).
struct GraphProjections {
    nn::Linear visual;    // 256 -> dv
    nn::Linear shape;     // 7 -> ds
    nn::Linear geometry;  // 5 -> dg
    nn::Linear relation;  // 7 -> dr

    GraphProjections() = default;
    GraphProjections(std::size_t dv, std::size_t ds, std::size_t dg, std::size_t dr, nn::Rng& rng,
                     std::size_t visual_in = kVisualDim);

    std::size_t node_dim() const;
    std::size_t edge_dim() const;
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

struct SceneGraph {
    nc::Var nodes;  // [N, D_N]
    nc::Var edges;  // [N*N, D_E]
    std::size_t n = 0;
};

// Feature matrices for a batch of scenes, stacked row-wise.
nc::Tensor stack_geometry(std::span<const SceneFeatures* const> scenes);
nc::Tensor stack_shape(std::span<const SceneFeatures* const> scenes);
nc::Tensor stack_relation(std::span<const SceneFeatures* const> scenes);

// Node rows n_i = [E_v v_i, E_s s_i, E_g g_i] for all scenes in one pass; the
// visual input is [sum n, 256] in the same stacked order.
nc::Var project_nodes(nc::Graph& g, std::span<const SceneFeatures* const> scenes, nc::Var visual,
                      GraphProjections& proj);
// Projected relations E_r r_ij for all scenes, stacked.
nc::Var project_relations(nc::Graph& g, std::span<const SceneFeatures* const> scenes,
                          GraphProjections& proj);

// e_ij = [n_i, rel_ij, n_j] for all ordered pairs, given one scene's node
// rows [n, D_N] and its projected relations [n*n, dr].
nc::Var assemble_edges(nc::Graph& g, nc::Var nodes, nc::Var relations, std::size_t n);

using VisualExtractor = std::function<nc::Var(nc::Graph&, std::span<const Image>)>;

SceneGraph build_scene_graph(nc::Graph& g, const Image& image, std::span<const Detection> detections,
                             const VisualExtractor& visual, GraphProjections& proj,
                             const FeaturizeOptions& opt = {});

// --- detection manifest -----------------------------------------------------

struct Manifest {
    std::string image;
    int width = 0;
    int height = 0;
    std::vector<Detection> detections;
    std::vector<std::string> crop_paths;  // parallel to detections, may be empty strings
};

std::string manifest_to_json(const Manifest& m, int indent = -1);
Manifest manifest_from_json(const std::string& text);
void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

// Throws SceneError naming the first violated invariant.
void validate_detection(const Detection& d, int width, int height);
void validate_manifest(const Manifest& m);

}  // namespace fgraph::sg
