#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "meshtok/common.hpp"

namespace meshtok {

// FNV-1a 64-bit, used for all content fingerprints (checkpoints, datasets,
// token files). Hashes raw little-endian bytes; stable on a given platform.
class Hasher {
public:
    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    void update(double v) { update(&v, sizeof(v)); }
    void update(int64_t v) { update(&v, sizeof(v)); }
    void update(const Mat& m) {
        int64_t r = m.rows(), c = m.cols();
        update(r);
        update(c);
        for (int64_t j = 0; j < c; ++j)
            for (int64_t i = 0; i < r; ++i) update(m(i, j));
    }

    uint64_t digest() const { return h_; }
    std::string hex() const;

private:
    uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(uint64_t v);

}  // namespace meshtok
