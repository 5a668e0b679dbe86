#pragma once

#include <cmath>
#include <vector>

#include "mudsim/conv_code.hpp"

namespace mudsim {

namespace detail {
constexpr double kLogZero = -1e30;

// exact max*: max(a,b) + log(1 + e^{-|a-b|})
inline double max_star(double a, double b) {
    if (a <= kLogZero / 2) return b;
    if (b <= kLogZero / 2) return a;
    const double m = a > b ? a : b;
    return m + std::log1p(std::exp(-std::abs(a - b)));
}
}  // namespace detail

struct BcjrResult {
    std::vector<double> extrinsic;  // per transmitted code bit (punctured stream)
    std::vector<double> app_info;   // a posteriori LLR per info bit
};

// log-domain forward-backward on the terminated, punctured trellis.
// channel_llrs and apriori_llrs are per transmitted code bit in the
// LLR convention log P(bit=0)/P(bit=1); punctured positions carry no input.
// The branch input is their sum; extrinsic = posterior - input.
inline BcjrResult bcjr_decode(const ConvCode& code, const std::vector<double>& apriori_llrs,
                              const std::vector<double>& channel_llrs, int info_len) {
    const Trellis tr(code);
    const int steps = code.steps_for_info(info_len);
    const int n = code.states();
    const int expected = code.code_len(info_len);
    if (static_cast<int>(channel_llrs.size()) != expected)
        throw std::invalid_argument("channel LLR length inconsistent with terminated trellis");
    if (!apriori_llrs.empty() && apriori_llrs.size() != channel_llrs.size())
        throw std::invalid_argument("a priori LLR length mismatch");

    // depuncture the two per-step inputs
    std::vector<double> l1(steps, 0.0), l2(steps, 0.0);
    std::vector<int> pos1(steps, -1), pos2(steps, -1);
    {
        std::size_t pos = 0;
        for (int t = 0; t < steps; ++t) {
            const auto& col = code.puncture[t % code.period()];
            if (col[0]) {
                l1[t] = channel_llrs[pos] + (apriori_llrs.empty() ? 0.0 : apriori_llrs[pos]);
                pos1[t] = static_cast<int>(pos);
                ++pos;
            }
            if (col[1]) {
                l2[t] = channel_llrs[pos] + (apriori_llrs.empty() ? 0.0 : apriori_llrs[pos]);
                pos2[t] = static_cast<int>(pos);
                ++pos;
            }
        }
    }

    // gamma[t][s][u] = 0.5*(l1*x1 + l2*x2) with x = +-1 symbol of the code bit
    auto gamma = [&](int t, int s, int u) {
        const double x1 = tr.out1[s][u] ? -1.0 : 1.0;
        const double x2 = tr.out2[s][u] ? -1.0 : 1.0;
        return 0.5 * (l1[t] * x1 + l2[t] * x2);
    };

    std::vector<std::vector<double>> alpha(steps + 1, std::vector<double>(n, detail::kLogZero));
    alpha[0][0] = 0.0;
    for (int t = 0; t < steps; ++t) {
        const int umax = t < info_len ? 1 : 0;
        for (int s = 0; s < n; ++s) {
            if (alpha[t][s] <= detail::kLogZero / 2) continue;
            for (int u = 0; u <= umax; ++u) {
                const int ns = tr.next[s][u];
                alpha[t + 1][ns] = detail::max_star(alpha[t + 1][ns], alpha[t][s] + gamma(t, s, u));
            }
        }
    }
    std::vector<std::vector<double>> beta(steps + 1, std::vector<double>(n, detail::kLogZero));
    beta[steps][0] = 0.0;
    for (int t = steps - 1; t >= 0; --t) {
        const int umax = t < info_len ? 1 : 0;
        for (int s = 0; s < n; ++s)
            for (int u = 0; u <= umax; ++u) {
                const double v = gamma(t, s, u) + beta[t + 1][tr.next[s][u]];
                beta[t][s] = detail::max_star(beta[t][s], v);
            }
    }

    BcjrResult res;
    res.extrinsic.assign(channel_llrs.size(), 0.0);
    res.app_info.assign(info_len, 0.0);
    for (int t = 0; t < steps; ++t) {
        const int umax = t < info_len ? 1 : 0;
        double p1_c1 = detail::kLogZero, m1_c1 = detail::kLogZero;
        double p1_c2 = detail::kLogZero, m1_c2 = detail::kLogZero;
        double u0 = detail::kLogZero, u1 = detail::kLogZero;
        for (int s = 0; s < n; ++s) {
            if (alpha[t][s] <= detail::kLogZero / 2) continue;
            for (int u = 0; u <= umax; ++u) {
                const double m = alpha[t][s] + gamma(t, s, u) + beta[t + 1][tr.next[s][u]];
                if (tr.out1[s][u])
                    m1_c1 = detail::max_star(m1_c1, m);
                else
                    p1_c1 = detail::max_star(p1_c1, m);
                if (tr.out2[s][u])
                    m1_c2 = detail::max_star(m1_c2, m);
                else
                    p1_c2 = detail::max_star(p1_c2, m);
                if (u)
                    u1 = detail::max_star(u1, m);
                else
                    u0 = detail::max_star(u0, m);
            }
        }
        if (pos1[t] >= 0) res.extrinsic[pos1[t]] = (p1_c1 - m1_c1) - l1[t];
        if (pos2[t] >= 0) res.extrinsic[pos2[t]] = (p1_c2 - m1_c2) - l2[t];
        if (t < info_len) res.app_info[t] = u0 - u1;
    }
    return res;
}

}  // namespace mudsim
