#pragma once

// Procedural scenes of flat and striped shapes over gradient or noise
// backgrounds, with exact detection manifests, object-level manipulations and
// an on-disk dataset layout of originals, manipulated and benign variants.

#include "fgraph/image.hpp"
#include "fgraph/nn.hpp"
#include "fgraph/scenegraph.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace fgraph::synth {

using Rng = nn::Rng;
using Color = std::array<float, 3>;

enum class ShapeKind : std::uint8_t { ellipse, rectangle, triangle, ring };

struct ObjectSpec {
    ShapeKind kind = ShapeKind::ellipse;
    double cx = 0, cy = 0;  // center in pixel units
    double rx = 10, ry = 10;  // half extents before rotation
    double angle = 0;       // radians
    Color color{1, 0, 0};
    Color stripe_color{0, 0, 0};
    double stripe_period = 0;  // 0 = flat fill
    double stripe_angle = 0;
    int id = 0;
};

enum class BackgroundStyle : std::uint8_t { gradient, noise };

struct Background {
    BackgroundStyle style = BackgroundStyle::gradient;
    Color c0{0.2f, 0.2f, 0.2f}, c1{0.6f, 0.6f, 0.6f};
    double angle = 0;
    std::uint64_t noise_seed = 0;
};

struct Scene {
    int width = 128, height = 128;
    Background background;
    std::vector<ObjectSpec> objects;  // drawn in order, later on top
};

struct SceneSpec {
    int canvas = 128;
    int min_objects = 2;
    int max_objects = 5;
    int n_max = 8;  // hard cap on objects after insertion
    double min_radius = 8;
    double max_radius = 22;
    double stripe_probability = 0.5;
    void validate() const;
};

struct Rendered {
    Image image;
    std::vector<sg::Detection> detections;  // one per object, mask = full shape support
};

bool inside(const ObjectSpec& o, double x, double y);
Mask object_mask(const ObjectSpec& o, int width, int height);
Color background_color(const Background& bg, int width, int height, double x, double y);

Scene generate_scene(const SceneSpec& spec, Rng& rng);
ObjectSpec random_object(const SceneSpec& spec, Rng& rng, int id);
Rendered render(const Scene& scene);

// --- manipulations ---------------------------------------------------------

enum class ManipKind : std::uint8_t {
    remove_object,
    insert_object,
    move_object,
    recolor_object,
    reshape_object,
    swap_objects
};
const char* manip_name(ManipKind k);
ManipKind manip_from_name(const std::string& s);

struct ManipulationSpec {
    std::vector<ManipKind> kinds{ManipKind::remove_object,  ManipKind::insert_object,
                                 ManipKind::move_object,    ManipKind::recolor_object,
                                 ManipKind::reshape_object, ManipKind::swap_objects};
    double min_fraction = 0.005;
    double max_fraction = 0.20;
    double move_min = 0.15;  // displacement as a fraction of canvas width
    double move_max = 0.35;
    int max_tries = 200;
};

Scene remove_object(const Scene& s, std::size_t index);
Scene insert_object(const Scene& s, const ObjectSpec& o);
Scene move_object(const Scene& s, std::size_t index, double dx, double dy);
Scene recolor_object(const Scene& s, std::size_t index, const Color& color, const Color& stripe_color);
Scene reshape_object(const Scene& s, std::size_t index, ShapeKind kind, double scale);
Scene swap_objects(const Scene& s, std::size_t i, std::size_t j);

// Fraction of pixels whose color differs between two equally sized rasters.
double altered_fraction(const Image& a, const Image& b);

struct Manipulation {
    Scene scene;
    ManipKind kind = ManipKind::move_object;
    double fraction = 0;
};

// Applies one random manipulation whose altered fraction lies in the spec
// bounds; infeasible or out-of-bounds draws are resampled. Throws
// std::runtime_error after max_tries failures.
Manipulation manipulate(const Scene& s, const SceneSpec& sspec, const ManipulationSpec& mspec, Rng& rng);

// --- datasets --------------------------------------------------------------

struct DatasetConfig {
    int identities = 200;
    int manips_per_identity = 3;
    int benigns_per_identity = 10;
    std::uint64_t seed = 0;
    double test_fraction = 0.2;
    double val_fraction = 0.05;  // of the non-test identities
    SceneSpec scene;
    ManipulationSpec manip;
};

struct VariantEntry {
    std::string image;     // relative to the dataset root
    std::string manifest;  // relative to the dataset root
    std::string kind;      // manipulation name, empty for others
    std::array<double, 6> transform{1, 0, 0, 0, 1, 0};  // canvas -> variant pixel coords
};

struct IdentityEntry {
    int id = 0;
    std::string split;  // train | val | test
    VariantEntry original;
    std::vector<VariantEntry> manipulated;
    std::vector<VariantEntry> benign;
};

struct DatasetIndex {
    DatasetConfig config;
    std::vector<IdentityEntry> identities;

    std::vector<const IdentityEntry*> split(const std::string& name) const;
};

// Deterministic per-identity content: original scene plus its manipulations.
struct IdentityScenes {
    Scene original;
    std::vector<Manipulation> manipulated;
};
IdentityScenes identity_scenes(const DatasetConfig& cfg, int identity);

// Independent scene for distractor i.
Scene distractor_scene(const DatasetConfig& cfg, std::uint64_t index);

// Split assignment: test_fraction of identities (rounded) go to test, then
// val_fraction of the rest to val, chosen by a seeded shuffle.
std::vector<std::string> assign_splits(int n, double test_fraction, double val_fraction, std::uint64_t seed);

DatasetIndex emit_dataset(const DatasetConfig& cfg, const std::string& out_dir);

std::string dataset_to_json(const DatasetIndex& d);
DatasetIndex dataset_from_json(const std::string& text);
DatasetIndex load_dataset(const std::string& root);
inline constexpr const char* kDatasetIndexFile = "dataset.json";

// Image and manifest of one entry, loaded from the dataset root.
struct LoadedVariant {
    Image image;
    std::vector<sg::Detection> detections;
};
LoadedVariant load_variant(const std::string& root, const VariantEntry& e);

}  // namespace fgraph::synth
