#pragma once

// Exact Hamming k-NN over 64-bit codes by blocked popcount scan, with a flat
// little-endian file format:
//   "FGHD" | u16 version | u16 code_len | u64 count | count x (u64 id, u64 code, u8 role)

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgraph::idx {

enum class Role : std::uint8_t { original = 0, benign = 1, manipulated = 2, distractor = 3 };
const char* role_name(Role r);

struct HashRecord {
    std::uint64_t id = 0;
    std::uint64_t code = 0;
    Role role = Role::original;
    bool operator==(const HashRecord&) const = default;
};

class IndexError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class FormatError : public IndexError {
public:
    using IndexError::IndexError;
};
class VersionError : public IndexError {
public:
    using IndexError::IndexError;
};
class TruncatedError : public IndexError {
public:
    using IndexError::IndexError;
};
class DuplicateIdError : public IndexError {
public:
    DuplicateIdError(std::uint64_t id) : IndexError("duplicate record id " + std::to_string(id)), id(id) {}
    std::uint64_t id;
};

inline constexpr char kMagic[4] = {'F', 'G', 'H', 'D'};
inline constexpr std::uint16_t kVersion = 1;

struct Hit {
    std::uint64_t id = 0;
    int distance = 0;
    std::size_t position = 0;  // insertion order
    bool operator==(const Hit&) const = default;
};

class HashDatabase {
public:
    HashDatabase() = default;
    // Throws DuplicateIdError; code_len in [1, 64] bits.
    static HashDatabase build(std::vector<HashRecord> records, std::uint16_t code_len = 64);

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    std::uint16_t code_len() const { return code_len_; }
    const std::vector<HashRecord>& records() const { return records_; }
    const HashRecord& at(std::size_t position) const { return records_.at(position); }

    // Exact k nearest by Hamming distance, ties by insertion order. `threads`
    // > 1 partitions the scan. Throws IndexError on an empty database and
    // std::invalid_argument for k < 1.
    std::vector<Hit> query(std::uint64_t code, std::size_t k, unsigned threads = 1) const;
    // Full ranking of every record (stable by insertion order).
    std::vector<Hit> rank_all(std::uint64_t code) const;

    bool operator==(const HashDatabase& o) const { return code_len_ == o.code_len_ && records_ == o.records_; }

private:
    std::uint64_t mask() const { return code_len_ == 64 ? ~0ULL : ((1ULL << code_len_) - 1); }
    std::uint16_t code_len_ = 64;
    std::vector<HashRecord> records_;
    std::vector<std::uint64_t> codes_;  // contiguous copy for the scan
};

void save(const HashDatabase& db, const std::string& path);
HashDatabase load(const std::string& path);
std::vector<std::uint8_t> serialize(const HashDatabase& db);
HashDatabase deserialize(std::span<const std::uint8_t> bytes);

}  // namespace fgraph::idx
