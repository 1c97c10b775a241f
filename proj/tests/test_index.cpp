#include "fgraph/index.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

using namespace fgraph;

namespace {

std::vector<idx::HashRecord> random_records(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<idx::HashRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
        // Low-entropy codes force many distance ties.
        const auto code = rng() & rng() & rng();
        recs.push_back({i * 3 + 7, code, static_cast<idx::Role>(i % 4)});
    }
    return recs;
}

std::vector<idx::Hit> naive(const std::vector<idx::HashRecord>& recs, std::uint64_t q, std::size_t k) {
    std::vector<idx::Hit> all;
    for (std::size_t i = 0; i < recs.size(); ++i)
        all.push_back({recs[i].id, __builtin_popcountll(recs[i].code ^ q), i});
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.position < b.position;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

}  // namespace

TEST_CASE("k-NN equals a sorted linear scan, ties by insertion order") {
    const auto recs = random_records(5000, 1);
    const auto db = idx::HashDatabase::build(recs);
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        const auto q = rng() & rng();
        for (std::size_t k : {1, 10, 1500}) {
            CHECK(db.query(q, k) == naive(recs, q, k));
            CHECK(db.query(q, k, 3) == naive(recs, q, k));
        }
    }
    CHECK(db.rank_all(123).size() == recs.size());
    CHECK(db.rank_all(123) == naive(recs, 123, recs.size()));
}

TEST_CASE("k larger than the database returns everything") {
    const auto recs = random_records(5, 3);
    const auto db = idx::HashDatabase::build(recs);
    CHECK(db.query(0, 50).size() == 5);
    CHECK_THROWS_AS(db.query(0, 0), std::invalid_argument);
    CHECK_THROWS_AS(idx::HashDatabase{}.query(0, 1), idx::IndexError);
}

TEST_CASE("short codes compare only their low bits") {
    std::vector<idx::HashRecord> recs{{1, 0b1010, idx::Role::original}, {2, 0xFF00000000000003ULL, idx::Role::benign}};
    const auto db = idx::HashDatabase::build(recs, 4);
    const auto hits = db.query(0b0011, 2);
    CHECK(hits[0].id == 2);
    CHECK(hits[0].distance == 0);
    CHECK(hits[1].distance == 2);  // 0011 ^ 1010
    CHECK_THROWS(idx::HashDatabase::build(recs, 0));
    CHECK_THROWS(idx::HashDatabase::build(recs, 65));
}

TEST_CASE("duplicate ids are rejected") {
    std::vector<idx::HashRecord> recs{{4, 1, idx::Role::original}, {4, 2, idx::Role::benign}};
    try {
        idx::HashDatabase::build(recs);
        FAIL("expected DuplicateIdError");
    } catch (const idx::DuplicateIdError& e) {
        CHECK(e.id == 4);
    }
}

TEST_CASE("serialization round trip and corruption errors") {
    const auto db = idx::HashDatabase::build(random_records(100, 4));
    const auto bytes = idx::serialize(db);
    CHECK(bytes.size() == 4 + 2 + 2 + 8 + 100 * 17);
    CHECK(idx::deserialize(bytes) == db);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(idx::deserialize(bad), idx::FormatError);
    bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(idx::deserialize(bad), idx::VersionError);
    bad = bytes;
    bad.resize(bytes.size() - 1);
    CHECK_THROWS_AS(idx::deserialize(bad), idx::TruncatedError);
    CHECK_THROWS_AS(idx::deserialize(std::vector<std::uint8_t>{'F', 'G'}), idx::TruncatedError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(idx::deserialize(bad), idx::FormatError);
    bad = bytes;
    bad[16 + 16] = 7;  // role byte of the first record
    CHECK_THROWS_AS(idx::deserialize(bad), idx::FormatError);

    const auto path = (std::filesystem::temp_directory_path() / "fgraph_index_test.fghd").string();
    idx::save(db, path);
    CHECK(idx::load(path) == db);
}
