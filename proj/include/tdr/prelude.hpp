#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdr {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    if (s.empty()) os << "scalar";
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void require(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

inline void require_same_shape(const char* kind, const Shape& a, const Shape& b) {
    if (a != b)
        fail(std::string(kind) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace tdr
