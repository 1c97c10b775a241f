#include "fgraph/nn.hpp"

#include <cmath>

namespace fgraph::nn {

nc::Tensor uniform_init(nc::Shape shape, double bound, Rng& rng) {
    auto t = nc::Tensor::zeros(std::move(shape), true);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& x : t.data) x = u(rng);
    return t;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform_init({in, out}, bound, rng);
    bias = uniform_init({out}, bound, rng);
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t d)
    : gain(nc::Tensor::zeros({d}, true)), bias(nc::Tensor::zeros({d}, true)) {
    std::fill(gain.data.begin(), gain.data.end(), 1.0);
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t s = mix_seed(seed, 0x5eedULL);
    for (auto k : keys) s = mix_seed(s, k);
    return s;
}

}  // namespace fgraph::nn
