#include "fgraph/index.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <queue>
#include <thread>
#include <unordered_set>

namespace fgraph::idx {

const char* role_name(Role r) {
    switch (r) {
        case Role::original: return "original";
        case Role::benign: return "benign";
        case Role::manipulated: return "manipulated";
        case Role::distractor: return "distractor";
    }
    return "?";
}

HashDatabase HashDatabase::build(std::vector<HashRecord> records, std::uint16_t code_len) {
    if (code_len < 1 || code_len > 64) throw std::invalid_argument("code length must be in [1, 64]");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(records.size());
    for (const auto& r : records)
        if (!seen.insert(r.id).second) throw DuplicateIdError(r.id);
    HashDatabase db;
    db.code_len_ = code_len;
    db.records_ = std::move(records);
    db.codes_.reserve(db.records_.size());
    for (const auto& r : db.records_) db.codes_.push_back(r.code & db.mask());
    return db;
}

namespace {

struct HeapEntry {
    int distance;
    std::size_t position;
    bool operator<(const HeapEntry& o) const {
        return distance != o.distance ? distance < o.distance : position < o.position;
    }
};

constexpr std::size_t kBlock = 1024;

// Top-k of codes[begin, end) into a max-heap keyed by (distance, position).
std::vector<HeapEntry> scan(const std::uint64_t* codes, std::size_t begin, std::size_t end, std::uint64_t q,
                            std::size_t k) {
    std::priority_queue<HeapEntry> heap;
    int dist[kBlock];
    for (std::size_t b = begin; b < end; b += kBlock) {
        const std::size_t n = std::min(kBlock, end - b);
        for (std::size_t i = 0; i < n; ++i) dist[i] = __builtin_popcountll(codes[b + i] ^ q);
        for (std::size_t i = 0; i < n; ++i) {
            if (heap.size() < k) {
                heap.push({dist[i], b + i});
            } else if (dist[i] < heap.top().distance) {
                heap.pop();
                heap.push({dist[i], b + i});
            }
        }
    }
    std::vector<HeapEntry> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
        out.push_back(heap.top());
        heap.pop();
    }
    return out;
}

}  // namespace

std::vector<Hit> HashDatabase::query(std::uint64_t code, std::size_t k, unsigned threads) const {
    if (k < 1) throw std::invalid_argument("query: k must be >= 1");
    if (records_.empty()) throw IndexError("query on an empty database");
    const auto q = code & mask();
    const std::size_t n = codes_.size();
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>((n + kBlock - 1) / kBlock)));
    std::vector<HeapEntry> merged;
    if (threads == 1) {
        merged = scan(codes_.data(), 0, n, q, k);
    } else {
        std::vector<std::vector<HeapEntry>> parts(threads);
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                const std::size_t b = t * chunk, e = std::min(n, b + chunk);
                if (b < e) parts[t] = scan(codes_.data(), b, e, q, k);
            });
        for (auto& th : pool) th.join();
        for (auto& p : parts) merged.insert(merged.end(), p.begin(), p.end());
    }
    std::sort(merged.begin(), merged.end());
    if (merged.size() > k) merged.resize(k);
    std::vector<Hit> hits;
    hits.reserve(merged.size());
    for (const auto& e : merged) hits.push_back({records_[e.position].id, e.distance, e.position});
    return hits;
}

std::vector<Hit> HashDatabase::rank_all(std::uint64_t code) const {
    const auto q = code & mask();
    std::vector<Hit> hits(codes_.size());
    for (std::size_t i = 0; i < codes_.size(); ++i)
        hits[i] = {records_[i].id, __builtin_popcountll(codes_[i] ^ q), i};
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.distance < b.distance; });
    return hits;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::size_t kHeader = 4 + 2 + 2 + 8;
constexpr std::size_t kRecord = 8 + 8 + 1;

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class T>
T get(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
}

}  // namespace

std::vector<std::uint8_t> serialize(const HashDatabase& db) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeader + db.size() * kRecord);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put<std::uint16_t>(out, kVersion);
    put<std::uint16_t>(out, db.code_len());
    put<std::uint64_t>(out, db.size());
    for (const auto& r : db.records()) {
        put<std::uint64_t>(out, r.id);
        put<std::uint64_t>(out, r.code);
        out.push_back(static_cast<std::uint8_t>(r.role));
    }
    return out;
}

HashDatabase deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw TruncatedError("hash database truncated: missing header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic: expected \"FGHD\"");
    if (bytes.size() < kHeader) throw TruncatedError("hash database truncated: incomplete header");
    const auto version = get<std::uint16_t>(bytes.data() + 4);
    if (version != kVersion)
        throw VersionError("unsupported hash database version " + std::to_string(version) + " (expected " +
                           std::to_string(kVersion) + ")");
    const auto code_len = get<std::uint16_t>(bytes.data() + 6);
    const auto count = get<std::uint64_t>(bytes.data() + 8);
    const std::size_t body = bytes.size() - kHeader;
    if (count > body / kRecord)
        throw TruncatedError("hash database truncated: header declares " + std::to_string(count) +
                             " records, file holds " + std::to_string(body / kRecord));
    if (body != count * kRecord) throw FormatError("hash database has trailing bytes after the last record");
    std::vector<HashRecord> records(count);
    const auto* p = bytes.data() + kHeader;
    for (std::size_t i = 0; i < count; ++i, p += kRecord) {
        records[i].id = get<std::uint64_t>(p);
        records[i].code = get<std::uint64_t>(p + 8);
        if (p[16] > 3) throw FormatError("invalid role byte in record " + std::to_string(i));
        records[i].role = static_cast<Role>(p[16]);
    }
    if (code_len < 1 || code_len > 64) throw FormatError("invalid code length " + std::to_string(code_len));
    return HashDatabase::build(std::move(records), code_len);
}

void save(const HashDatabase& db, const std::string& path) {
    const auto bytes = serialize(db);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IndexError("cannot open " + path + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IndexError("write failed: " + path);
}

HashDatabase load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IndexError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace fgraph::idx
