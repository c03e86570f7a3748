#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sgrpo/tinylm.hpp"

namespace sgrpo::test {

inline bool rel_close(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

template <class T>
bool rows_close(std::span<const T> a, std::span<const T> b, double tol) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!rel_close(double(a[i]), double(b[i]), tol)) return false;
    return true;
}

inline ModelConfig tiny_config(uint64_t seed = 1) {
    ModelConfig c;
    c.vocab_size = 16;
    c.d_model = 32;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 64;
    c.max_seq_len = 32;
    c.seed = seed;
    return c;
}

}  // namespace sgrpo::test
