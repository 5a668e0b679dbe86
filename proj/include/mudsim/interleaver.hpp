#pragma once

#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mudsim/rng.hpp"

namespace mudsim {

struct Interleaver {
    std::vector<int> perm;  // output position of input position i
    int spread = 0;

    int size() const { return static_cast<int>(perm.size()); }

    template <typename T>
    std::vector<T> apply(const std::vector<T>& x) const {
        std::vector<T> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[perm[i]] = x[i];
        return y;
    }

    template <typename T>
    std::vector<T> invert(const std::vector<T>& x) const {
        std::vector<T> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[perm[i]];
        return y;
    }
};

inline bool s_random_property_holds(const std::vector<int>& perm, int spread) {
    const int n = static_cast<int>(perm.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n && j - i < spread; ++j)
            if (std::abs(perm[i] - perm[j]) < spread) return false;
    return true;
}

// rejection-sampled S-random permutation: positions within distance S map at
// least S apart. If construction stalls, S is lowered and the degradation
// recorded in the result.
inline Interleaver make_s_random_interleaver(int block_size, int spread, Rng& rng,
                                             int max_attempts = 100) {
    if (block_size < 1) throw std::invalid_argument("block size must be positive");
    if (spread < 1) throw std::invalid_argument("spread must be positive");
    for (int s = spread; s >= 1; --s) {
        for (int attempt = 0; attempt < max_attempts; ++attempt) {
            std::vector<int> pool(block_size);
            std::iota(pool.begin(), pool.end(), 0);
            // Fisher-Yates shuffle of the candidate pool
            for (int i = block_size - 1; i > 0; --i) {
                const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
                std::swap(pool[i], pool[j]);
            }
            std::vector<int> perm;
            perm.reserve(block_size);
            bool ok = true;
            for (int i = 0; i < block_size && ok; ++i) {
                bool placed = false;
                for (std::size_t c = 0; c < pool.size(); ++c) {
                    const int cand = pool[c];
                    bool clash = false;
                    for (int back = 1; back <= s && back <= i; ++back)
                        if (std::abs(perm[i - back] - cand) < s) {
                            clash = true;
                            break;
                        }
                    if (!clash) {
                        perm.push_back(cand);
                        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(c));
                        placed = true;
                        break;
                    }
                }
                ok = placed;
            }
            if (ok) {
                Interleaver out;
                out.perm = std::move(perm);
                out.spread = s;
                return out;
            }
        }
    }
    throw std::runtime_error("failed to build an S-random interleaver");
}

inline void save_interleaver(const Interleaver& il, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open interleaver file for writing: " + path);
    for (std::size_t i = 0; i < il.perm.size(); ++i) {
        if (i) f << ' ';
        f << il.perm[i];
    }
    f << '\n';
}

inline Interleaver load_interleaver(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open interleaver file: " + path);
    Interleaver il;
    int v;
    while (f >> v) il.perm.push_back(v);
    std::vector<char> seen(il.perm.size(), 0);
    for (int p : il.perm) {
        if (p < 0 || p >= static_cast<int>(il.perm.size()) || seen[p])
            throw std::runtime_error("interleaver file is not a permutation");
        seen[p] = 1;
    }
    return il;
}

}  // namespace mudsim
