#pragma once

// Sign quantization of embeddings into binary codes, packed 64-bit words and
// the cubic quantization penalty.

#include "fgraph/numcore.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fgraph::hash {

inline constexpr std::size_t kMaxBits = 64;

struct HashCode {
    std::vector<std::int8_t> u;  // entries in {-1, +1}
    std::uint64_t bits = 0;      // bit k = (u_k + 1) / 2, k = 0 least significant
};

// u_k = sign(z_k) with sign(0) = +1. Throws std::domain_error on non-finite
// input and std::length_error above 64 entries.
HashCode quantize(std::span<const double> z);

std::uint64_t pack(std::span<const std::int8_t> u);
std::vector<std::int8_t> unpack(std::uint64_t bits, std::size_t length);

inline int hamming(std::uint64_t a, std::uint64_t b) { return __builtin_popcountll(a ^ b); }

// sum_k |z_k - u_k|^3. Throws std::invalid_argument on length mismatch.
double quantization_loss(std::span<const double> z, std::span<const double> u);

// Graph forms. quantize_st applies sign with a straight-through backward.
// quantization_loss_graph treats u as a constant and returns the row-mean of
// sum_k |z_k - u_k|^3 over a [B, D] batch.
nc::Var quantize_st(nc::Graph& g, nc::Var z);
nc::Var quantization_loss_graph(nc::Graph& g, nc::Var z, nc::Var u);

}  // namespace fgraph::hash
