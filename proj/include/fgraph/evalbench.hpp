#pragma once

// Retrieval metrics (AP, masked AP, recall at 1, F scores), the two benchmark
// protocols over precomputed codes, classical perceptual hashes and the CSV
// report format.

#include "fgraph/image.hpp"
#include "fgraph/index.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fgraph::eval {

enum class Relevance : std::uint8_t { benign_relevant, manipulated_of_query, irrelevant };

// Full ranked list for one query, best first.
using Ranking = std::vector<Relevance>;

class UndefinedQueryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Standard AP: sum_k r(k) P(k) / sum_k r(k).
double average_precision(const Ranking& r);
// sum_k r(k) m(k) P(k) / sum_k r(k), m(k) = 1 iff no manipulated item at rank <= k.
double mmap_query(const Ranking& r);
// The same sum truncated at rank R with denominator R.
double mmap_at_r(const Ranking& r, std::size_t R);
// 1-based rank of the first manipulated_of_query item, 0 when absent.
std::size_t first_manipulated_rank(const Ranking& r);
// a b / (a + b), 0 when a + b = 0.
double f_score(double a, double b);

// One hashed item of a benchmark.
struct CodedItem {
    std::string name;  // dataset-relative path or "distractor/<i>"
    int identity = -1;  // -1 for distractors
    idx::Role role = idx::Role::distractor;
    std::uint64_t code = 0;
};

struct BenchInputs {
    std::vector<CodedItem> originals;
    std::vector<CodedItem> benign;
    std::vector<CodedItem> manipulated;
    std::vector<CodedItem> distractors;
};

struct QueryRow {
    std::string query_id;
    std::size_t n_relevant = 0;
    std::size_t first_manip_rank = 0;
    double ap = 0;
    double mmap = 0;
    double r_at_1 = 0;
};

struct BenchmarkReport {
    std::vector<QueryRow> rows;
    std::vector<std::pair<std::string, double>> aggregates;  // fixed order
    std::size_t excluded = 0;  // queries without a relevant item

    double get(const std::string& key) const;
};

// Database insertion order is a seeded shuffle of all database items so that
// ties are not systematically resolved in favour of one role.
std::vector<std::size_t> database_order(std::size_t n, std::uint64_t seed);

// Queries = originals; database = manipulated + benign + distractors.
BenchmarkReport benchmark_one(const BenchInputs& in, std::uint64_t seed = 0);
// Queries = benign and manipulated variants; database = originals + distractors.
BenchmarkReport benchmark_two(const BenchInputs& in, std::uint64_t seed = 0);

std::string report_csv(const BenchmarkReport& r);
void write_report(const std::string& path, const BenchmarkReport& r);

// --- classical hashes -------------------------------------------------------

enum class ClassicalKind : std::uint8_t { ahash, dhash, phash };
ClassicalKind classical_from_name(const std::string& s);

// Bit k is the k-th element in row-major order, k = 0 least significant.
std::uint64_t ahash(const Image& img);
std::uint64_t dhash(const Image& img);
std::uint64_t phash(const Image& img);
std::uint64_t classical_hash(const Image& img, ClassicalKind kind);

// Unnormalised 2-D type-II DCT of an n x n plane: C(u,v) = sum f(x,y) cos(pi(2x+1)u/2n) cos(pi(2y+1)v/2n).
std::vector<double> dct2(const std::vector<double>& plane, int n);

}  // namespace fgraph::eval
