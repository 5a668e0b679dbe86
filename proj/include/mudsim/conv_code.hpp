#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mudsim {

using Bits = std::vector<std::uint8_t>;

// rate-1/2 feedforward convolutional mother code, optionally punctured.
// Default: constraint length 6, generators (53,75) octal, punctured to 3/4
// with the standard [[1,1,0],[1,0,1]] pattern. Trellis terminated with
// constraint_length-1 zero tail bits; 0 maps to +1, 1 to -1.
struct ConvCode {
    int constraint_length = 6;
    unsigned g1 = 053;
    unsigned g2 = 075;
    std::vector<std::array<std::uint8_t, 2>> puncture = {{1, 1}, {1, 0}, {0, 1}};

    int memory() const { return constraint_length - 1; }
    int states() const { return 1 << memory(); }
    int period() const { return static_cast<int>(puncture.size()); }

    double rate() const {
        int kept = 0;
        for (const auto& col : puncture) kept += col[0] + col[1];
        return static_cast<double>(period()) / kept;
    }

    int steps_for_info(int info_len) const { return info_len + memory(); }

    int code_len(int info_len) const {
        const int steps = steps_for_info(info_len);
        int n = 0;
        for (int t = 0; t < steps; ++t) {
            const auto& col = puncture[t % period()];
            n += col[0] + col[1];
        }
        return n;
    }

    void validate() const {
        if (constraint_length < 2 || constraint_length > 16)
            throw std::invalid_argument("constraint length out of range");
        if (puncture.empty()) throw std::invalid_argument("puncture pattern must be nonempty");
        for (const auto& col : puncture)
            if (col[0] == 0 && col[1] == 0)
                throw std::invalid_argument("puncture pattern deletes a whole step");
    }
};

namespace detail {
inline std::uint8_t parity(unsigned x) {
    x ^= x >> 16;
    x ^= x >> 8;
    x ^= x >> 4;
    x ^= x >> 2;
    x ^= x >> 1;
    return static_cast<std::uint8_t>(x & 1u);
}
}  // namespace detail

struct Trellis {
    std::vector<std::array<int, 2>> next;           // next[state][input]
    std::vector<std::array<std::uint8_t, 2>> out1;  // first code bit
    std::vector<std::array<std::uint8_t, 2>> out2;  // second code bit

    explicit Trellis(const ConvCode& code) {
        code.validate();
        const int mem = code.memory();
        const int n = code.states();
        next.resize(n);
        out1.resize(n);
        out2.resize(n);
        for (int s = 0; s < n; ++s)
            for (int u = 0; u < 2; ++u) {
                const unsigned reg = (static_cast<unsigned>(u) << mem) | static_cast<unsigned>(s);
                next[s][u] = static_cast<int>((static_cast<unsigned>(u) << (mem - 1)) |
                                              (static_cast<unsigned>(s) >> 1));
                out1[s][u] = detail::parity(reg & code.g1);
                out2[s][u] = detail::parity(reg & code.g2);
            }
    }
};

inline Bits conv_encode(const ConvCode& code, const Bits& info) {
    const Trellis tr(code);
    const int steps = code.steps_for_info(static_cast<int>(info.size()));
    Bits out;
    out.reserve(code.code_len(static_cast<int>(info.size())));
    int s = 0;
    for (int t = 0; t < steps; ++t) {
        const int u = t < static_cast<int>(info.size()) ? info[t] : 0;
        const auto& col = code.puncture[t % code.period()];
        if (col[0]) out.push_back(tr.out1[s][u]);
        if (col[1]) out.push_back(tr.out2[s][u]);
        s = tr.next[s][u];
    }
    return out;
}

// hard-decision Viterbi with Hamming branch metrics; punctured positions do
// not contribute. Metric ties keep the u=0 extension (lexicographically
// smaller surviving path).
inline Bits viterbi_decode(const ConvCode& code, const Bits& hard_bits, int info_len) {
    const Trellis tr(code);
    const int steps = code.steps_for_info(info_len);
    if (static_cast<int>(hard_bits.size()) != code.code_len(info_len))
        throw std::invalid_argument("coded length inconsistent with terminated trellis");
    const int n = code.states();
    const int mem = code.memory();
    constexpr int kInf = std::numeric_limits<int>::max() / 4;
    std::vector<int> metric(n, kInf), next_metric(n, kInf);
    metric[0] = 0;
    std::vector<std::uint16_t> surv(static_cast<std::size_t>(steps) * n);

    std::size_t pos = 0;
    for (int t = 0; t < steps; ++t) {
        const auto& col = code.puncture[t % code.period()];
        int r1 = -1, r2 = -1;
        if (col[0]) r1 = hard_bits[pos++];
        if (col[1]) r2 = hard_bits[pos++];
        std::fill(next_metric.begin(), next_metric.end(), kInf);
        const int umax = t < info_len ? 1 : 0;  // tail forces zeros
        for (int s = 0; s < n; ++s) {
            if (metric[s] >= kInf) continue;
            for (int u = 0; u <= umax; ++u) {
                int bm = 0;
                if (r1 >= 0) bm += tr.out1[s][u] != r1;
                if (r2 >= 0) bm += tr.out2[s][u] != r2;
                const int ns = tr.next[s][u];
                const int cand = metric[s] + bm;
                if (cand < next_metric[ns]) {
                    next_metric[ns] = cand;
                    surv[static_cast<std::size_t>(t) * n + ns] =
                        static_cast<std::uint16_t>((u << mem) | s);
                }
            }
        }
        metric.swap(next_metric);
    }
    Bits info(info_len);
    int s = 0;  // terminated trellis ends in the zero state
    for (int t = steps - 1; t >= 0; --t) {
        const std::uint16_t rec = surv[static_cast<std::size_t>(t) * n + s];
        const int u = rec >> mem;
        if (t < info_len) info[t] = static_cast<std::uint8_t>(u);
        s = rec & (n - 1);
    }
    return info;
}

inline int viterbi_path_metric(const ConvCode& code, const Bits& hard_bits, const Bits& info) {
    const Bits re = conv_encode(code, info);
    int d = 0;
    for (std::size_t i = 0; i < re.size(); ++i) d += re[i] != hard_bits[i];
    return d;
}

inline std::vector<double> bits_to_symbols(const Bits& bits) {
    std::vector<double> s(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) s[i] = bits[i] ? -1.0 : 1.0;
    return s;
}

inline Bits symbols_to_bits(const std::vector<double>& symbols) {
    Bits b(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) b[i] = symbols[i] < 0.0 ? 1 : 0;
    return b;
}

}  // namespace mudsim
