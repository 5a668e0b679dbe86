#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <vector>

#include "mudsim/rng.hpp"

namespace mudsim {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using cplx = std::complex<double>;

struct SystemConfig {
    int users = 1;             // K
    int gain = 16;             // N, chips per symbol
    int paths = 1;             // Lp
    Vec amplitudes;            // length K; empty means all ones
    double noise_var = 0.0;    // sigma^2
    std::uint64_t seed = 0;

    int chips_window() const { return gain + paths - 1; }  // M

    void validate() const {
        if (users < 1) throw std::invalid_argument("users must be positive");
        if (gain < 1) throw std::invalid_argument("processing gain must be positive");
        if (paths < 1) throw std::invalid_argument("path count must be positive");
        if (paths - 1 > gain)
            throw std::invalid_argument("channel order exceeds processing gain (Lp-1 > N)");
        if (noise_var < 0.0) throw std::invalid_argument("noise variance must be nonnegative");
        if (amplitudes.size() != 0 && amplitudes.size() != users)
            throw std::invalid_argument("amplitude vector length mismatch");
    }

    Vec amps() const {
        if (amplitudes.size() == users) return amplitudes;
        return Vec::Ones(users);
    }
};

struct ConvMatrices {
    Mat main;       // C_k,     M x Lp
    Mat previous;   // Cbar_k,  M x Lp (tail of s spilling from symbol i-1)
    Mat next;       // Cbreve_k,M x Lp (head of s owed to symbol i+1)
};

struct SignatureModel {
    Mat chips;                      // S, N x K, entries +-1/sqrt(N)
    std::vector<ConvMatrices> conv; // per user
};

struct ChannelRealization {
    Mat taps;       // H, Lp x K, unit-norm columns
    CMat effective; // P, M x K, column k = C_k h_k
};

struct FrameBatch {
    Mat symbols;    // B, K x T, entries +-1
    CMat received;  // R, M x T
    int length = 0; // T
};

// column j of C = s delayed by j chips; previous/next hold the convolution
// spill of the adjacent symbols into this M-chip window
inline ConvMatrices build_conv_matrices(const Vec& s, int paths) {
    const int n = static_cast<int>(s.size());
    if (paths < 1) throw std::invalid_argument("path count must be positive");
    if (paths - 1 > n) throw std::invalid_argument("channel order exceeds processing gain (Lp-1 > N)");
    const int m = n + paths - 1;
    ConvMatrices out;
    out.main = Mat::Zero(m, paths);
    out.previous = Mat::Zero(m, paths);
    out.next = Mat::Zero(m, paths);
    for (int j = 0; j < paths; ++j) {
        out.main.block(j, j, n, 1) = s;
        if (j > 0) out.previous.block(0, j, j, 1) = s.tail(j);
        const int spill = paths - 1 - j;
        if (spill > 0) out.next.block(n + j, j, spill, 1) = s.head(spill);
    }
    return out;
}

inline SignatureModel gen_spreading(const SystemConfig& cfg, Rng& rng) {
    cfg.validate();
    SignatureModel model;
    const double a = 1.0 / std::sqrt(static_cast<double>(cfg.gain));
    model.chips = Mat::Zero(cfg.gain, cfg.users);
    for (int k = 0; k < cfg.users; ++k)
        for (int i = 0; i < cfg.gain; ++i) model.chips(i, k) = rng.sign() * a;
    model.conv.reserve(cfg.users);
    for (int k = 0; k < cfg.users; ++k)
        model.conv.push_back(build_conv_matrices(model.chips.col(k), cfg.paths));
    return model;
}

inline ChannelRealization gen_channel(const SystemConfig& cfg, const SignatureModel& model, Rng& rng) {
    ChannelRealization chan;
    chan.taps = Mat::Zero(cfg.paths, cfg.users);
    for (int k = 0; k < cfg.users; ++k) {
        double norm2 = 0.0;
        do {
            for (int l = 0; l < cfg.paths; ++l) chan.taps(l, k) = rng.uniform(-1.0, 1.0);
            norm2 = chan.taps.col(k).squaredNorm();
        } while (norm2 == 0.0);
        chan.taps.col(k) /= std::sqrt(norm2);
    }
    const int m = cfg.chips_window();
    chan.effective = CMat::Zero(m, cfg.users);
    for (int k = 0; k < cfg.users; ++k)
        chan.effective.col(k) = (model.conv[k].main * chan.taps.col(k)).cast<cplx>();
    return chan;
}

// amplitude-scaled effective signatures; all filter algebra downstream works
// on these so the unit-amplitude formulas apply verbatim
inline CMat scaled_signatures(const SystemConfig& cfg, const ChannelRealization& chan) {
    CMat p = chan.effective;
    const Vec a = cfg.amps();
    for (int k = 0; k < cfg.users; ++k) p.col(k) *= a(k);
    return p;
}

inline void add_noise(CMat& received, double noise_var, Rng& rng) {
    if (noise_var == 0.0) return;
    const double s = std::sqrt(noise_var / 2.0);
    for (Eigen::Index j = 0; j < received.cols(); ++j)
        for (Eigen::Index i = 0; i < received.rows(); ++i)
            received(i, j) += cplx(s * rng.gauss(), s * rng.gauss());
}

// r(i) = sum_k A_k [ b_k(i) C_k + b_k(i-1) Cbar_k + b_k(i+1) Cbreve_k ] h_k + n(i)
// boundary symbols are drawn like ordinary symbols so edges are unbiased
inline FrameBatch synthesize_frame_with_symbols(const SystemConfig& cfg, const SignatureModel& model,
                                                const ChannelRealization& chan, const Mat& symbols,
                                                Rng& rng) {
    const int m = cfg.chips_window();
    const int t = static_cast<int>(symbols.cols());
    const Vec a = cfg.amps();
    Mat prev_sig(m, cfg.users), next_sig(m, cfg.users), main_sig(m, cfg.users);
    for (int k = 0; k < cfg.users; ++k) {
        main_sig.col(k) = a(k) * (model.conv[k].main * chan.taps.col(k));
        prev_sig.col(k) = a(k) * (model.conv[k].previous * chan.taps.col(k));
        next_sig.col(k) = a(k) * (model.conv[k].next * chan.taps.col(k));
    }
    Vec left(cfg.users), right(cfg.users);
    for (int k = 0; k < cfg.users; ++k) left(k) = rng.sign();
    for (int k = 0; k < cfg.users; ++k) right(k) = rng.sign();

    FrameBatch frame;
    frame.symbols = symbols;
    frame.length = t;
    Mat clean = Mat::Zero(m, t);
    for (int i = 0; i < t; ++i) {
        const Vec cur = symbols.col(i);
        const Vec before = (i == 0) ? left : Vec(symbols.col(i - 1));
        const Vec after = (i == t - 1) ? right : Vec(symbols.col(i + 1));
        clean.col(i) = main_sig * cur + prev_sig * before + next_sig * after;
    }
    frame.received = clean.cast<cplx>();
    add_noise(frame.received, cfg.noise_var, rng);
    return frame;
}

inline FrameBatch synthesize_frame(const SystemConfig& cfg, const SignatureModel& model,
                                   const ChannelRealization& chan, int t, Rng& rng) {
    Mat symbols(cfg.users, t);
    for (int k = 0; k < cfg.users; ++k)
        for (int i = 0; i < t; ++i) symbols(k, i) = rng.sign();
    return synthesize_frame_with_symbols(cfg, model, chan, symbols, rng);
}

// harness convention for BPSK with unit-norm signatures:
// sigma^2 = A^2 / (2 R 10^(EbN0/10))
inline double sigma_from_ebn0(double ebn0_db, double amplitude, double code_rate) {
    if (code_rate <= 0.0 || code_rate > 1.0) throw std::invalid_argument("code rate must be in (0,1]");
    if (amplitude <= 0.0) throw std::invalid_argument("amplitude must be positive");
    return amplitude * amplitude / (2.0 * code_rate * std::pow(10.0, ebn0_db / 10.0));
}

}  // namespace mudsim
