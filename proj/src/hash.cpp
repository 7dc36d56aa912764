#include "meshtok/hash.hpp"

namespace meshtok {

std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string Hasher::hex() const { return to_hex(h_); }

}  // namespace meshtok
