#include "fgraph/evalbench.hpp"

#include "fgraph/nn.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace fgraph::eval {

double average_precision(const Ranking& r) {
    double sum = 0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < r.size(); ++k)
        if (r[k] == Relevance::benign_relevant) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    if (hits == 0) throw UndefinedQueryError("query has no relevant item");
    return sum / static_cast<double>(hits);
}

double mmap_query(const Ranking& r) {
    double sum = 0;
    std::size_t hits = 0;
    bool masked = false;
    for (std::size_t k = 0; k < r.size(); ++k) {
        masked = masked || r[k] == Relevance::manipulated_of_query;
        if (r[k] != Relevance::benign_relevant) continue;
        ++hits;
        if (!masked) sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    if (hits == 0) throw UndefinedQueryError("query has no relevant item");
    return sum / static_cast<double>(hits);
}

double mmap_at_r(const Ranking& r, std::size_t R) {
    if (R == 0) throw UndefinedQueryError("query has no relevant item");
    double sum = 0;
    std::size_t hits = 0;
    bool masked = false;
    for (std::size_t k = 0; k < std::min(R, r.size()); ++k) {
        masked = masked || r[k] == Relevance::manipulated_of_query;
        if (r[k] != Relevance::benign_relevant) continue;
        ++hits;
        if (!masked) sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return sum / static_cast<double>(R);
}

std::size_t first_manipulated_rank(const Ranking& r) {
    for (std::size_t k = 0; k < r.size(); ++k)
        if (r[k] == Relevance::manipulated_of_query) return k + 1;
    return 0;
}

double f_score(double a, double b) { return a + b == 0 ? 0.0 : a * b / (a + b); }

double BenchmarkReport::get(const std::string& key) const {
    for (const auto& [k, v] : aggregates)
        if (k == key) return v;
    throw std::out_of_range("report has no aggregate " + key);
}

std::vector<std::size_t> database_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    nn::Rng rng(nn::derive_seed(seed, {0xDB0ULL}));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

namespace {

struct Database {
    std::vector<const CodedItem*> items;  // in insertion order
    idx::HashDatabase db;
};

Database make_database(std::vector<const CodedItem*> items, std::uint64_t seed) {
    Database d;
    for (auto i : database_order(items.size(), seed)) d.items.push_back(items[i]);
    std::vector<idx::HashRecord> recs;
    recs.reserve(d.items.size());
    for (std::size_t i = 0; i < d.items.size(); ++i) recs.push_back({i, d.items[i]->code, d.items[i]->role});
    d.db = idx::HashDatabase::build(std::move(recs));
    return d;
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

BenchmarkReport benchmark_one(const BenchInputs& in, std::uint64_t seed) {
    if (in.originals.empty()) throw std::invalid_argument("benchmark I: empty query set");
    std::vector<const CodedItem*> items;
    for (const auto* group : {&in.manipulated, &in.benign, &in.distractors})
        for (const auto& it : *group) items.push_back(&it);
    const auto d = make_database(std::move(items), seed);

    BenchmarkReport rep;
    std::vector<double> aps, mmaps, mmaps_r, r1;
    for (const auto& q : in.originals) {
        const auto hits = d.db.rank_all(q.code);
        Ranking rank;
        rank.reserve(hits.size());
        std::size_t n_rel = 0;
        for (const auto& h : hits) {
            const auto* it = d.items[h.position];
            auto rel = Relevance::irrelevant;
            if (it->identity == q.identity && it->identity >= 0) {
                if (it->role == idx::Role::benign) rel = Relevance::benign_relevant;
                else if (it->role == idx::Role::manipulated) rel = Relevance::manipulated_of_query;
            }
            n_rel += rel == Relevance::benign_relevant;
            rank.push_back(rel);
        }
        if (n_rel == 0) {
            spdlog::warn("benchmark I: query {} has no relevant item; excluded", q.name);
            ++rep.excluded;
            continue;
        }
        QueryRow row;
        row.query_id = q.name;
        row.n_relevant = n_rel;
        row.first_manip_rank = first_manipulated_rank(rank);
        row.ap = average_precision(rank);
        row.mmap = mmap_query(rank);
        row.r_at_1 = rank.front() == Relevance::benign_relevant ? 1.0 : 0.0;
        aps.push_back(row.ap);
        mmaps.push_back(row.mmap);
        mmaps_r.push_back(mmap_at_r(rank, n_rel));
        r1.push_back(row.r_at_1);
        rep.rows.push_back(std::move(row));
    }
    rep.aggregates = {{"mAP", mean(aps)},
                      {"mmAP", mean(mmaps)},
                      {"mmAP@R", mean(mmaps_r)},
                      {"R@1", mean(r1)},
                      {"n_queries", static_cast<double>(rep.rows.size())},
                      {"n_excluded", static_cast<double>(rep.excluded)},
                      {"db_size", static_cast<double>(d.db.size())}};
    return rep;
}

BenchmarkReport benchmark_two(const BenchInputs& in, std::uint64_t seed) {
    if (in.benign.empty() && in.manipulated.empty()) throw std::invalid_argument("benchmark II: empty query set");
    std::vector<const CodedItem*> items;
    for (const auto* group : {&in.originals, &in.distractors})
        for (const auto& it : *group) items.push_back(&it);
    const auto d = make_database(std::move(items), seed);

    BenchmarkReport rep;
    std::vector<double> ap_b, ap_m, r1_b, r1_m;
    auto run = [&](const std::vector<CodedItem>& queries, std::vector<double>& aps, std::vector<double>& r1s) {
        for (const auto& q : queries) {
            const auto hits = d.db.rank_all(q.code);
            std::size_t rank = 0;
            for (std::size_t k = 0; k < hits.size(); ++k) {
                const auto* it = d.items[hits[k].position];
                if (it->role == idx::Role::original && it->identity == q.identity) {
                    rank = k + 1;
                    break;
                }
            }
            if (rank == 0) {
                spdlog::warn("benchmark II: original of {} not in database; excluded", q.name);
                ++rep.excluded;
                continue;
            }
            QueryRow row;
            row.query_id = q.name;
            row.n_relevant = 1;
            row.ap = 1.0 / static_cast<double>(rank);
            row.mmap = row.ap;
            row.r_at_1 = rank == 1 ? 1.0 : 0.0;
            aps.push_back(row.ap);
            r1s.push_back(row.r_at_1);
            rep.rows.push_back(std::move(row));
        }
    };
    run(in.benign, ap_b, r1_b);
    run(in.manipulated, ap_m, r1_m);
    const double R1 = mean(r1_b), R1bar = 1.0 - mean(r1_m);
    const double mAP = mean(ap_b), mAPbar = 1.0 - mean(ap_m);
    rep.aggregates = {{"R@1", R1},
                      {"Rbar@1", R1bar},
                      {"F_R1", f_score(R1, R1bar)},
                      {"mAP", mAP},
                      {"mAPbar", mAPbar},
                      {"F_mAP", f_score(mAP, mAPbar)},
                      {"n_benign", static_cast<double>(r1_b.size())},
                      {"n_manipulated", static_cast<double>(r1_m.size())},
                      {"n_excluded", static_cast<double>(rep.excluded)},
                      {"db_size", static_cast<double>(d.db.size())}};
    return rep;
}

std::string report_csv(const BenchmarkReport& r) {
    std::ostringstream os;
    char buf[64];
    os << "query_id,n_relevant,first_manip_rank,ap,mmap,r_at_1\n";
    for (const auto& row : r.rows) {
        os << row.query_id << ',' << row.n_relevant << ',' << row.first_manip_rank;
        for (double v : {row.ap, row.mmap, row.r_at_1}) {
            std::snprintf(buf, sizeof buf, ",%.6f", v);
            os << buf;
        }
        os << '\n';
    }
    os << "#AGG";
    for (const auto& [k, v] : r.aggregates) {
        std::snprintf(buf, sizeof buf, ",%s=%.6f", k.c_str(), v);
        os << buf;
    }
    os << '\n';
    return os.str();
}

void write_report(const std::string& path, const BenchmarkReport& r) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write report " + path);
    os << report_csv(r);
}

// ---------------------------------------------------------------------------
// Classical hashes

ClassicalKind classical_from_name(const std::string& s) {
    if (s == "ahash") return ClassicalKind::ahash;
    if (s == "dhash") return ClassicalKind::dhash;
    if (s == "phash") return ClassicalKind::phash;
    throw std::invalid_argument("unknown classical hash " + s);
}

namespace {

std::vector<double> gray_at(const Image& img, int w, int h) {
    return resize_plane(to_gray(img), img.width, img.height, w, h);
}

}  // namespace

std::uint64_t ahash(const Image& img) {
    const auto p = gray_at(img, 8, 8);
    const double m = std::accumulate(p.begin(), p.end(), 0.0) / 64.0;
    std::uint64_t bits = 0;
    for (int k = 0; k < 64; ++k)
        if (p[static_cast<std::size_t>(k)] >= m) bits |= 1ULL << k;
    return bits;
}

std::uint64_t dhash(const Image& img) {
    const auto p = gray_at(img, 9, 8);
    std::uint64_t bits = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (p[static_cast<std::size_t>(y * 9 + x)] < p[static_cast<std::size_t>(y * 9 + x + 1)])
                bits |= 1ULL << (y * 8 + x);
    return bits;
}

std::vector<double> dct2(const std::vector<double>& plane, int n) {
    std::vector<double> basis(static_cast<std::size_t>(n) * n);
    for (int u = 0; u < n; ++u)
        for (int x = 0; x < n; ++x)
            basis[static_cast<std::size_t>(u * n + x)] = std::cos(std::numbers::pi * (2 * x + 1) * u / (2.0 * n));
    // Rows then columns.
    std::vector<double> tmp(plane.size()), out(plane.size());
    for (int y = 0; y < n; ++y)
        for (int u = 0; u < n; ++u) {
            double s = 0;
            for (int x = 0; x < n; ++x) s += plane[static_cast<std::size_t>(y * n + x)] * basis[static_cast<std::size_t>(u * n + x)];
            tmp[static_cast<std::size_t>(y * n + u)] = s;
        }
    for (int v = 0; v < n; ++v)
        for (int u = 0; u < n; ++u) {
            double s = 0;
            for (int y = 0; y < n; ++y) s += tmp[static_cast<std::size_t>(y * n + u)] * basis[static_cast<std::size_t>(v * n + y)];
            out[static_cast<std::size_t>(v * n + u)] = s;
        }
    return out;
}

std::uint64_t phash(const Image& img) {
    const auto c = dct2(gray_at(img, 32, 32), 32);
    std::vector<double> low;
    low.reserve(64);
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) low.push_back(c[static_cast<std::size_t>(v * 32 + u)]);
    auto sorted = low;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted[31] + sorted[32]);
    std::uint64_t bits = 0;
    for (int k = 0; k < 64; ++k)
        if (low[static_cast<std::size_t>(k)] > median) bits |= 1ULL << k;
    return bits;
}

std::uint64_t classical_hash(const Image& img, ClassicalKind kind) {
    switch (kind) {
        case ClassicalKind::ahash: return ahash(img);
        case ClassicalKind::dhash: return dhash(img);
        case ClassicalKind::phash: return phash(img);
    }
    return 0;
}

}  // namespace fgraph::eval
