#include "fgraph/contrastive.hpp"

#include "fgraph/hashing.hpp"

#include <spdlog/spdlog.h>

namespace fgraph::con {

PairPlan plan_pairs(std::span<const BatchItem> items) {
    PairPlan p;
    p.n = items.size();
    p.role.assign(p.n * p.n, 0);
    for (std::size_t i = 0; i < p.n; ++i) {
        if (items[i].variant == Variant::manipulated) continue;
        bool has_pos = false, has_den = false;
        for (std::size_t j = 0; j < p.n; ++j) {
            if (j == i) continue;
            auto& r = p.role[i * p.n + j];
            if (items[j].identity != items[i].identity) {
                r = -1;
            } else if (items[j].variant == Variant::manipulated) {
                r = -1;
            } else {
                r = 1;
            }
            has_pos |= r == 1;
            has_den |= r == -1;
        }
        if (!has_pos) {
            ++p.skipped;
            std::fill_n(p.role.begin() + static_cast<std::ptrdiff_t>(i * p.n), p.n, std::int8_t{0});
            continue;
        }
        if (!has_den) throw LossError("contrastive loss: anchor " + std::to_string(i) + " has an empty denominator");
        p.anchors.push_back(i);
    }
    return p;
}

nc::Var simclr_plus_loss(nc::Graph& g, nc::Var codes, std::span<const BatchItem> items, nn::Linear* proj,
                         double tau) {
    if (tau <= 0) throw std::invalid_argument("contrastive loss: tau must be positive");
    const auto n = items.size();
    if (g.value(codes).rows() != n) throw nc::DimensionError("contrastive loss: codes/items length mismatch");
    const auto plan = plan_pairs(items);
    if (plan.skipped) spdlog::warn("contrastive loss: {} anchors without a positive were skipped", plan.skipped);
    if (plan.anchors.empty()) throw LossError("contrastive loss: no anchor with a positive in the batch");

    auto h = proj ? (*proj)(g, codes) : codes;
    auto hn = g.l2_normalize_rows(h);
    auto sim = g.exp(g.scale(g.matmul(hn, g.transpose(hn)), 1.0 / tau));

    nc::Tensor pos = nc::Tensor::zeros({n, n}), den = nc::Tensor::zeros({n, n});
    for (std::size_t k = 0; k < n * n; ++k) {
        pos.data[k] = plan.role[k] == 1 ? 1.0 : 0.0;
        den.data[k] = plan.role[k] == -1 ? 1.0 : 0.0;
    }
    auto num_sum = g.row_sum(g.mul(sim, g.constant(std::move(pos))));
    auto den_sum = g.row_sum(g.mul(sim, g.constant(std::move(den))));
    auto per_row = g.sub(g.log(g.gather_rows(den_sum, plan.anchors)), g.log(g.gather_rows(num_sum, plan.anchors)));
    return g.mean(per_row);
}

LossTerms total_loss(nc::Graph& g, nc::Var z, std::span<const BatchItem> items, nn::Linear* proj, double tau,
                     double alpha) {
    if (alpha < 0) throw std::invalid_argument("total loss: alpha must be >= 0");
    LossTerms t;
    auto u = hash::quantize_st(g, z);
    t.contrastive = simclr_plus_loss(g, u, items, proj, tau);
    t.quantization = hash::quantization_loss_graph(g, z, u);
    t.total = alpha == 0.0 ? t.contrastive : g.add(t.contrastive, g.scale(t.quantization, alpha));
    return t;
}

}  // namespace fgraph::con
