#include "fgraph/evalbench.hpp"
#include "fgraph/synthdata.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace fgraph;
using eval::Relevance;

namespace {

constexpr auto B = Relevance::benign_relevant;
constexpr auto M = Relevance::manipulated_of_query;
constexpr auto I = Relevance::irrelevant;

double precision_at(const eval::Ranking& r, std::size_t k) {
    double c = 0;
    for (std::size_t i = 0; i < k; ++i) c += r[i] == B;
    return c / static_cast<double>(k);
}

bool clean_prefix(const eval::Ranking& r, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i)
        if (r[i] == M) return false;
    return true;
}

// Direct transcriptions of the sums.
double oracle_ap(const eval::Ranking& r) {
    double num = 0, den = 0;
    for (std::size_t k = 1; k <= r.size(); ++k) {
        const double rel = r[k - 1] == B;
        num += rel * precision_at(r, k);
        den += rel;
    }
    return num / den;
}

double oracle_mmap(const eval::Ranking& r, std::size_t limit, double den_override) {
    double num = 0, den = 0;
    for (std::size_t k = 1; k <= std::min(limit, r.size()); ++k) {
        const double rel = r[k - 1] == B;
        num += rel * (clean_prefix(r, k) ? 1.0 : 0.0) * precision_at(r, k);
        den += rel;
    }
    return num / (den_override > 0 ? den_override : den);
}

eval::Ranking random_ranking(std::mt19937_64& rng) {
    const std::size_t n = 1 + rng() % 40;
    eval::Ranking r(n);
    for (auto& x : r) x = static_cast<Relevance>(rng() % 3);
    r[rng() % n] = B;
    return r;
}

}  // namespace

TEST_CASE("worked mmAP example") {
    const eval::Ranking r{B, M, B, I};
    CHECK(eval::mmap_query(r) == 0.5);
    CHECK(eval::average_precision(r) == doctest::Approx((1.0 + 2.0 / 3.0) / 2));
    CHECK(eval::first_manipulated_rank(r) == 2);
}

TEST_CASE("metrics match the direct sums on random rankings") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 500; ++t) {
        const auto r = random_ranking(rng);
        std::size_t R = 0;
        for (auto x : r) R += x == B;
        CHECK(std::abs(eval::average_precision(r) - oracle_ap(r)) < 1e-12);
        CHECK(std::abs(eval::mmap_query(r) - oracle_mmap(r, r.size(), 0)) < 1e-12);
        CHECK(std::abs(eval::mmap_at_r(r, R) - oracle_mmap(r, R, static_cast<double>(R))) < 1e-12);
    }
}

TEST_CASE("metric edge cases") {
    CHECK_THROWS_AS(eval::average_precision({I, M}), eval::UndefinedQueryError);
    CHECK_THROWS_AS(eval::mmap_query({}), eval::UndefinedQueryError);
    CHECK(eval::mmap_query({M, B, B}) == 0.0);
    CHECK(eval::mmap_query({B, B, M}) == 1.0);
    CHECK(eval::first_manipulated_rank({B, I}) == 0);
    CHECK(eval::f_score(0, 0) == 0.0);
    CHECK(eval::f_score(1, 1) == 0.5);
    CHECK(eval::f_score(0.6, 0.3) == doctest::Approx(0.2));
}

TEST_CASE("benchmark II on hand-built codes") {
    eval::BenchInputs in;
    in.originals = {{"o0", 0, idx::Role::original, 0x0}, {"o1", 1, idx::Role::original, 0xFFFF}};
    in.distractors = {{"d0", -1, idx::Role::distractor, 0xF0F0F0F0F0F0ULL}};
    // Benign of 0 lands on its original; benign of 1 is closer to o0.
    in.benign = {{"b0", 0, idx::Role::benign, 0x1}, {"b1", 1, idx::Role::benign, 0x3}};
    // Manipulated of 0 is far from o0; manipulated of 1 still at o1.
    in.manipulated = {{"m0", 0, idx::Role::manipulated, 0xFFFF}, {"m1", 1, idx::Role::manipulated, 0x7FFF}};
    const auto rep = eval::benchmark_two(in, 0);
    // b0: rank 1; b1: o0 at 2 bits, o1 at 14 bits -> rank 2.
    CHECK(rep.get("R@1") == 0.5);
    // m0: own original o0 at distance 16 vs o1 at 0 -> not top 1. m1: top 1 -> failure.
    CHECK(rep.get("Rbar@1") == 0.5);
    CHECK(rep.get("F_R1") == doctest::Approx(0.25));
    CHECK(rep.get("mAP") == doctest::Approx((1.0 + 0.5) / 2));
    CHECK(rep.rows.size() == 4);
    CHECK(rep.get("db_size") == 3);
}

TEST_CASE("benchmark I on hand-built codes") {
    eval::BenchInputs in;
    in.originals = {{"o0", 0, idx::Role::original, 0x0}};
    in.benign = {{"b0", 0, idx::Role::benign, 0x1}, {"b0b", 0, idx::Role::benign, 0xFF}};
    in.manipulated = {{"m0", 0, idx::Role::manipulated, 0x7}};
    in.distractors = {{"d", -1, idx::Role::distractor, ~0ULL}};
    const auto rep = eval::benchmark_one(in, 0);
    // Ranking: b0 (1), m0 (3), b0b (8), d (64) -> [B, M, B, I].
    CHECK(rep.get("mmAP") == 0.5);
    CHECK(rep.get("R@1") == 1.0);
    CHECK(rep.rows[0].first_manip_rank == 2);
    const auto csv = eval::report_csv(rep);
    CHECK(csv.rfind("query_id,n_relevant,first_manip_rank,ap,mmap,r_at_1\n", 0) == 0);
    CHECK(csv.find("#AGG,") != std::string::npos);
}

TEST_CASE("queries without a relevant item are excluded and counted") {
    eval::BenchInputs in;
    in.originals = {{"o0", 0, idx::Role::original, 0}, {"o1", 1, idx::Role::original, 5}};
    in.benign = {{"b0", 0, idx::Role::benign, 1}};
    const auto rep = eval::benchmark_one(in, 0);
    CHECK(rep.excluded == 1);
    CHECK(rep.rows.size() == 1);
}

TEST_CASE("database order is a seeded permutation") {
    const auto a = eval::database_order(100, 1);
    auto s = a;
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i < 100; ++i) CHECK(s[i] == i);
    CHECK(eval::database_order(100, 1) == a);
    CHECK(eval::database_order(100, 2) != a);
}

TEST_CASE("DCT matches the cosine sum") {
    const int n = 8;
    std::mt19937_64 rng(3);
    std::vector<double> f(n * n);
    for (auto& v : f) v = static_cast<double>(rng() % 1000) / 1000.0;
    const auto c = eval::dct2(f, n);
    for (int v = 0; v < n; ++v)
        for (int u = 0; u < n; ++u) {
            double s = 0;
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    s += f[y * n + x] * std::cos(std::numbers::pi * (2 * x + 1) * u / (2.0 * n)) *
                         std::cos(std::numbers::pi * (2 * y + 1) * v / (2.0 * n));
            CHECK(c[v * n + u] == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("classical hashes: bit structure and robustness") {
    Image left(64, 64, 0.1f);
    for (int y = 0; y < 64; ++y)
        for (int x = 32; x < 64; ++x)
            for (int c = 0; c < 3; ++c) left.at(x, y, c) = 0.9f;
    // Right half bright: aHash bits set in columns 4..7 of every row.
    std::uint64_t expect = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) expect |= 1ULL << (y * 8 + x);
    CHECK(eval::ahash(left) == expect);
    // dHash: a strict left-to-right ramp sets every bit, its mirror none.
    Image ramp(72, 64), mirror(72, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 72; ++x)
            for (int c = 0; c < 3; ++c) {
                ramp.at(x, y, c) = static_cast<float>(x) / 72.0f;
                mirror.at(x, y, c) = 1.0f - static_cast<float>(x) / 72.0f;
            }
    CHECK(eval::dhash(ramp) == ~0ULL);
    CHECK(eval::dhash(mirror) == 0ULL);
    // pHash bits are balanced up to ties at the median.
    synth::SceneSpec spec;
    nn::Rng rng(2);
    const auto img = synth::render(synth::generate_scene(spec, rng)).image;
    const int ones = __builtin_popcountll(eval::phash(img));
    CHECK(ones <= 32);
    CHECK(ones >= 28);
    CHECK(eval::classical_hash(img, eval::classical_from_name("phash")) == eval::phash(img));
    CHECK_THROWS(eval::classical_from_name("whash"));
}
