#pragma once

// Fundamental-matrix verification of retrieval candidates: normalized
// eight-point fitting, MLESAC with a capped Sampson cost, shortlist
// attribution and the FPR/FNR harness over a dataset split. Correspondences
// come from a file or from a generator that knows the synthetic scenes.

#include "fgraph/evalbench.hpp"
#include "fgraph/nn.hpp"
#include "fgraph/synthdata.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgraph::gv {

struct Correspondence {
    Eigen::Vector3d p{0, 0, 1};  // query image
    Eigen::Vector3d q{0, 0, 1};  // candidate image
};

inline Correspondence make_corr(double x1, double y1, double x2, double y2) {
    return {Eigen::Vector3d(x1, y1, 1), Eigen::Vector3d(x2, y2, 1)};
}

class RankDeficiencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Hartley-normalized linear estimate with rank 2 enforced and unit Frobenius
// norm. Throws std::invalid_argument for fewer than 8 correspondences or a
// third coordinate other than 1, RankDeficiencyError when either point set is
// collinear.
Eigen::Matrix3d eight_point(std::span<const Correspondence> corrs);

// First-order geometric error (squared, pixels^2) of q^T F p.
double sampson_sq(const Eigen::Matrix3d& F, const Correspondence& c);

struct MlesacOptions {
    int iterations = 500;
    double sigma = 1.0;
    double penalty = 5.99;  // cap on sampson_sq / sigma^2
    std::size_t min_inliers = 12;
    double min_fraction = 0.3;
};

struct VerificationResult {
    Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
    std::vector<bool> inliers;
    std::size_t n_inliers = 0;
    double score = 0;
    bool pass = false;
    std::string diagnostic;
};

// Throws std::invalid_argument for fewer than 8 correspondences.
VerificationResult mlesac(std::span<const Correspondence> corrs, const MlesacOptions& opt, nn::Rng& rng);

// --- attribution -------------------------------------------------------------

// Correspondences between a query and one shortlisted candidate.
using CorrespondenceSource =
    std::function<std::vector<Correspondence>(const eval::CodedItem& query, const eval::CodedItem& candidate)>;

// First candidate, in shortlist order, whose verification passes. The rng for
// candidate k is derived from (seed, k).
std::optional<std::size_t> attribute(const eval::CodedItem& query, std::span<const eval::CodedItem* const> shortlist,
                                     const CorrespondenceSource& source, const MlesacOptions& opt,
                                     std::uint64_t seed);

// Keypoints are drawn in the query with probability proportional to gradient
// magnitude. A keypoint becomes an exact match (p, A^-1 p) when the candidate
// is the query's own original and the clean renders of both scenes agree at
// the source pixel; every other keypoint gets a uniform random partner.
class SyntheticCorrespondences {
public:
    // Precomputes keypoint weights for every query in `queries`.
    SyntheticCorrespondences(const std::string& root, const synth::DatasetIndex& index,
                             std::span<const eval::CodedItem> queries, std::size_t keypoints, std::uint64_t seed);
    std::vector<Correspondence> operator()(const eval::CodedItem& query, const eval::CodedItem& candidate) const;

private:
    struct QueryInfo {
        int identity = -1;
        int width = 0, height = 0;
        Image clean;                  // render of the query's scene on the canvas
        std::array<double, 6> to_canvas{1, 0, 0, 0, 1, 0};
        std::vector<double> weights;  // per query pixel, 0 outside the canvas preimage
    };

    std::size_t keypoints_;
    std::uint64_t seed_;
    int canvas_w_ = 0, canvas_h_ = 0;
    std::map<std::string, QueryInfo> queries_;
    std::map<int, Image> originals_;  // clean original renders
};

struct AttributionOptions {
    std::size_t shortlist = 10;
    std::size_t keypoints = 200;
    MlesacOptions mlesac;
    std::uint64_t seed = 0;
};

struct AttributionRow {
    std::string query_id;
    idx::Role role = idx::Role::benign;
    std::string top1;        // name of the top-1 candidate
    std::string attributed;  // empty for no-match
    bool own_original_top1 = false;
    bool own_original_attributed = false;
};

struct AttributionReport {
    std::vector<AttributionRow> rows;
    double fpr = 0, fnr = 0;            // with verification
    double fpr_top1 = 0, fnr_top1 = 0;  // top-1 taken without verification
    std::size_t n_benign = 0, n_manipulated = 0;
};

// FPR = manipulated queries attributed to their original; FNR = benign queries
// not attributed to theirs. Database = originals + distractors in the
// benchmark II order. Throws std::invalid_argument on empty query sets.
AttributionReport attribution_rates(const eval::BenchInputs& in, const CorrespondenceSource& source,
                                    const AttributionOptions& opt);

// Synthetic correspondences for the benign and manipulated queries of `in`.
AttributionReport evaluate_attribution(const std::string& root, const synth::DatasetIndex& index,
                                       const eval::BenchInputs& in, const AttributionOptions& opt);

void write_attribution_report(const std::string& path, const AttributionReport& r);

// --- correspondence files ------------------------------------------------------

// JSON: [{"query": ..., "candidate": ..., "rows": [[x1, y1, x2, y2], ...]}, ...]
struct CorrespondenceSet {
    std::string query, candidate;
    std::vector<Correspondence> corrs;
};
std::vector<CorrespondenceSet> read_correspondences(const std::string& path);
void write_correspondences(const std::string& path, std::span<const CorrespondenceSet> sets);

}  // namespace fgraph::gv
