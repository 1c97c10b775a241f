#pragma once

// Supervised contrastive loss over hash codes: an anchor is pulled toward its
// benign siblings and pushed from its manipulated siblings and every other
// identity in the batch.

#include "fgraph/nn.hpp"
#include "fgraph/numcore.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace fgraph::con {

enum class Variant : std::uint8_t { original = 0, benign = 1, manipulated = 2 };

struct BatchItem {
    int identity = 0;
    Variant variant = Variant::original;
};

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Pair roles for anchor i: +1 positive, -1 denominator term, 0 ignored.
// Anchors are originals and benign items; positives share the identity and
// are not manipulated; the denominator holds same-identity manipulated items
// and all items of other identities.
struct PairPlan {
    std::size_t n = 0;
    std::vector<std::int8_t> role;      // n*n
    std::vector<std::size_t> anchors;   // anchors that have at least one positive
    std::size_t skipped = 0;            // anchors dropped for lack of a positive
};
PairPlan plan_pairs(std::span<const BatchItem> items);

// Mean over anchors of -log(sum_pos s / sum_den s), s = exp(cos(E_b a, E_b b) / tau).
// `codes` is [B, D]; `proj` may be null for the identity map.
nc::Var simclr_plus_loss(nc::Graph& g, nc::Var codes, std::span<const BatchItem> items, nn::Linear* proj,
                         double tau);

struct LossTerms {
    nc::Var total;
    nc::Var contrastive;
    nc::Var quantization;  // batch mean of sum |z - u|^3
};

// L = L_C(u) + alpha * mean_i L_B(z_i, u_i), u = sign(z) with straight-through gradients.
LossTerms total_loss(nc::Graph& g, nc::Var z, std::span<const BatchItem> items, nn::Linear* proj, double tau,
                     double alpha);

}  // namespace fgraph::con
