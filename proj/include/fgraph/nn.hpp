#pragma once

#include "fgraph/numcore.hpp"

#include <functional>
#include <random>
#include <string>

namespace fgraph::nn {

using Rng = std::mt19937_64;

// Visits every learnable tensor with a stable, hierarchical name.
using ParamVisitor = std::function<void(const std::string& name, nc::Tensor& t)>;

// y = x W + b with W stored [in, out].
struct Linear {
    nc::Tensor weight;
    nc::Tensor bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);

    std::size_t in_features() const { return weight.shape.at(0); }
    std::size_t out_features() const { return weight.shape.at(1); }

    nc::Var operator()(nc::Graph& g, nc::Var x) { return g.add_bias(g.matmul(x, g.param(weight)), g.param(bias)); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LayerNorm {
    nc::Tensor gain;
    nc::Tensor bias;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d);

    nc::Var operator()(nc::Graph& g, nc::Var x) { return g.layer_norm(x, g.param(gain), g.param(bias), eps); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Uniform(-bound, bound) initialisation with bound = 1/sqrt(fan_in).
nc::Tensor uniform_init(nc::Shape shape, double bound, Rng& rng);

// 64-bit seed mixing (splitmix64 finaliser) for deriving independent streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

}  // namespace fgraph::nn
