#include "fgraph/hashing.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fgraph::hash {

HashCode quantize(std::span<const double> z) {
    if (z.size() > kMaxBits) throw std::length_error("quantize: at most 64 dimensions per code");
    HashCode h;
    h.u.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        if (!std::isfinite(z[k])) throw std::domain_error("quantize: non-finite value at " + std::to_string(k));
        h.u[k] = z[k] >= 0.0 ? 1 : -1;
    }
    h.bits = pack(h.u);
    return h;
}

std::uint64_t pack(std::span<const std::int8_t> u) {
    if (u.size() > kMaxBits) throw std::length_error("pack: at most 64 entries");
    std::uint64_t w = 0;
    for (std::size_t k = 0; k < u.size(); ++k)
        if (u[k] > 0) w |= std::uint64_t{1} << k;
    return w;
}

std::vector<std::int8_t> unpack(std::uint64_t bits, std::size_t length) {
    if (length > kMaxBits) throw std::length_error("unpack: at most 64 entries");
    std::vector<std::int8_t> u(length);
    for (std::size_t k = 0; k < length; ++k) u[k] = (bits >> k) & 1U ? 1 : -1;
    return u;
}

double quantization_loss(std::span<const double> z, std::span<const double> u) {
    if (z.size() != u.size()) throw std::invalid_argument("quantization_loss: length mismatch");
    double s = 0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double d = std::abs(z[k] - u[k]);
        s += d * d * d;
    }
    return s;
}

nc::Var quantize_st(nc::Graph& g, nc::Var z) { return g.sign_st(z); }

nc::Var quantization_loss_graph(nc::Graph& g, nc::Var z, nc::Var u) {
    const auto& uz = g.value(u);
    if (uz.shape != g.value(z).shape) throw std::invalid_argument("quantization_loss: shape mismatch");
    auto frozen = g.constant(nc::Tensor(uz.shape, uz.data));
    auto d = g.abs(g.sub(z, frozen));
    auto cube = g.mul(g.mul(d, d), d);
    return g.scale(g.sum(cube), 1.0 / static_cast<double>(g.value(z).rows()));
}

}  // namespace fgraph::hash
