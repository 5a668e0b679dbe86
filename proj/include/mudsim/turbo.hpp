#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mudsim/bcjr.hpp"
#include "mudsim/coded.hpp"
#include "mudsim/detectors.hpp"

namespace mudsim {

struct SoftStats {
    double amplitude = 0.0;  // V
    double xi_var = 0.0;     // residual variance
    bool floored = false;
};

constexpr double kXiVarFloor = 1e-12;

// Eqs. 36-37 sample averages on the real part of z
inline SoftStats estimate_soft_stats(const Eigen::RowVectorXcd& z, const Eigen::RowVectorXd& refs) {
    const int t = static_cast<int>(z.size());
    if (t == 0) throw std::invalid_argument("cannot estimate soft statistics from an empty frame");
    if (refs.size() != t) throw std::invalid_argument("reference length mismatch");
    SoftStats s;
    double v = 0.0;
    for (int i = 0; i < t; ++i) v += refs(i) * z(i).real();
    s.amplitude = v / t;
    double var = 0.0;
    for (int i = 0; i < t; ++i) {
        const double d = z(i).real() - s.amplitude * refs(i);
        var += d * d;
    }
    s.xi_var = var / t;
    if (s.xi_var < kXiVarFloor) {
        s.xi_var = kXiVarFloor;
        s.floored = true;
    }
    return s;
}

// Eq. 38: lambda = 2 V Re(z) / sigma_xi^2
inline std::vector<double> extrinsic_llr(const Eigen::RowVectorXcd& z, const SoftStats& stats) {
    if (!(stats.xi_var > 0.0)) throw std::invalid_argument("xi variance must be positive");
    std::vector<double> out(z.size());
    const double scale = 2.0 * stats.amplitude / stats.xi_var;
    for (int i = 0; i < static_cast<int>(z.size()); ++i) out[i] = scale * z(i).real();
    return out;
}

// conditional mean of a +-1 symbol under LLR lambda
inline double soft_symbol(double llr) { return std::tanh(llr / 2.0); }

enum class TurboScheme { Spadf, Ispaspa };

struct TurboOptions {
    int iterations = 4;
    int branches = 4;
    TurboScheme scheme = TurboScheme::Spadf;
    bool update_filters = true;  // re-derive feedback filters from current soft symbols
};

struct TurboTrace {
    // decisions[m](k, i) in {0,1}: info bit i of user k after iteration m+1
    std::vector<std::vector<Bits>> decisions;
};

namespace detail {

// feedback filters from the reliability-projected cross covariance
// B = P diag(rho): only K scalars are estimated, conditioning matches the
// perfect-feedback design
struct TurboFilterCache {
    CMat rinv_p;  // R^{-1} P
    CMat gram;    // P^H R^{-1} P
    CMat zff;     // (R^{-1}P)^H r : linear outputs, K x T

    TurboFilterCache(const CMat& p_eff, const CMat& r, const CMat& r_frame) {
        HermitianSolver solver(r);
        rinv_p = solver.solve(p_eff);
        gram = p_eff.adjoint() * rinv_p;
        zff = rinv_p.adjoint() * r_frame;
    }
};

inline Vec project_reliability(const CMat& p_eff, const CMat& r_frame, const Mat& soft_symbols) {
    const int k_users = static_cast<int>(p_eff.cols());
    const int t = static_cast<int>(r_frame.cols());
    Vec rho = Vec::Zero(k_users);
    const CMat bhat = (r_frame * soft_symbols.transpose().cast<cplx>()) / static_cast<double>(t);
    for (int k = 0; k < k_users; ++k) {
        const double num = p_eff.col(k).dot(bhat.col(k)).real();
        const double den = p_eff.col(k).squaredNorm();
        rho(k) = std::clamp(num / den, 0.0, 1.0);
    }
    return rho;
}

// z_k = w_k^H r - f_k^H btil over the detected set D, expressed through the
// cached linear outputs: z_k = zff_k + sum_d conj(f_d) (rho_d zff_d - btil_d)
inline Eigen::RowVectorXcd soft_branch_output(const TurboFilterCache& cache, const Vec& rho,
                                              const Mat& btil, int k, const std::vector<int>& det) {
    Eigen::RowVectorXcd z = cache.zff.row(k);
    const int nd = static_cast<int>(det.size());
    if (nd == 0) return z;
    CMat g(nd, nd);
    CVec rhs(nd);
    for (int a = 0; a < nd; ++a) {
        for (int b = 0; b < nd; ++b) g(a, b) = rho(det[a]) * rho(det[b]) * cache.gram(det[a], det[b]);
        rhs(a) = rho(det[a]) * cache.gram(det[a], k);
    }
    const Eigen::FullPivLU<CMat> lu(CMat::Identity(nd, nd) - g);
    if (!lu.isInvertible())
        throw SingularMatrixError("feedback design matrix (I - B^H R^{-1}B) is singular");
    const CVec f = lu.solve(rhs);
    for (int a = 0; a < nd; ++a) {
        const int d = det[a];
        z += std::conj(f(a)) *
             (rho(d) * cache.zff.row(d) - btil.row(d).cast<cplx>());
    }
    return z;
}

}  // namespace detail

// Fig. 2 loop: SISO detector with soft feedback, per-user MAP decoding,
// extrinsic exchange through the interleavers
inline TurboTrace turbo_iterate(const CodedFrameSetup& setup, const CMat& p_eff, double noise_var,
                                const std::vector<int>& base, const TurboOptions& opts,
                                const CMat& r_frame) {
    if (opts.iterations < 1) throw std::invalid_argument("need at least one turbo iteration");
    const int k_users = static_cast<int>(p_eff.cols());
    const int t = static_cast<int>(r_frame.cols());
    const CMat r = build_true_R(p_eff, noise_var);
    detail::TurboFilterCache cache(p_eff, r, r_frame);
    const auto perms = make_branch_permutations(k_users, k_users > 1 ? opts.branches : 1, base);
    const std::vector<int> rev = reversed(base);
    const auto perms2 = make_branch_permutations(k_users, k_users > 1 ? opts.branches : 1, rev);

    Mat btil = Mat::Zero(k_users, t);       // prior soft symbols
    Mat prior_llr = Mat::Zero(k_users, t);  // lambda2^p, interleaved domain
    TurboTrace trace;
    trace.decisions.resize(opts.iterations);

    for (int m = 0; m < opts.iterations; ++m) {
        const Vec rho = opts.update_filters ? detail::project_reliability(p_eff, r_frame, btil)
                                            : Vec::Zero(k_users);
        // stage 1: SISO SPA-DF, prior-only feedback, frame-DD arbitration
        CMat selected(k_users, t);
        Vec best = Vec::Constant(k_users, std::numeric_limits<double>::infinity());
        for (const auto& bp : perms) {
            CMat soft(k_users, t);
            std::vector<int> det;
            for (int k : bp.order) {
                soft.row(k) = detail::soft_branch_output(cache, rho, btil, k, det);
                det.push_back(k);
            }
            for (int k = 0; k < k_users; ++k) {
                double metric = 0.0;
                for (int i = 0; i < t; ++i) {
                    const cplx d = cplx(slicer(soft(k, i)), 0.0) - soft(k, i);
                    metric += std::norm(d);
                }
                if (metric < best(k)) {
                    best(k) = metric;
                    selected.row(k) = soft.row(k);
                }
            }
        }

        if (opts.scheme == TurboScheme::Ispaspa && k_users > 1) {
            // stage 2: full-cancellation soft refresh branches over the
            // reversed order, arbitrated per user
            std::vector<SoftStats> st1(k_users);
            Mat soft1(k_users, t);
            for (int k = 0; k < k_users; ++k) {
                Eigen::RowVectorXd refs(t);
                for (int i = 0; i < t; ++i) refs(i) = slicer(selected(k, i));
                st1[k] = estimate_soft_stats(selected.row(k), refs);
                for (int i = 0; i < t; ++i) {
                    const double llr = 2.0 * st1[k].amplitude * selected(k, i).real() / st1[k].xi_var +
                                       prior_llr(k, i);
                    soft1(k, i) = soft_symbol(llr);
                }
            }
            const Vec rho1 = detail::project_reliability(p_eff, r_frame, soft1);
            CMat sel2(k_users, t);
            Vec best2 = Vec::Constant(k_users, std::numeric_limits<double>::infinity());
            std::vector<int> all_others;
            for (const auto& bp : perms2) {
                CMat soft(k_users, t);
                Mat current = soft1;
                for (int k : bp.order) {
                    all_others.clear();
                    for (int j = 0; j < k_users; ++j)
                        if (j != k) all_others.push_back(j);
                    soft.row(k) = detail::soft_branch_output(cache, rho1, current, k, all_others);
                    for (int i = 0; i < t; ++i) {
                        const double llr = 2.0 * st1[k].amplitude * soft(k, i).real() / st1[k].xi_var +
                                           prior_llr(k, i);
                        current(k, i) = soft_symbol(llr);
                    }
                }
                for (int k = 0; k < k_users; ++k) {
                    double metric = 0.0;
                    for (int i = 0; i < t; ++i) {
                        const cplx d = cplx(slicer(soft(k, i)), 0.0) - soft(k, i);
                        metric += std::norm(d);
                    }
                    if (metric < best2(k)) {
                        best2(k) = metric;
                        sel2.row(k) = soft.row(k);
                    }
                }
            }
            selected = sel2;
        }

        // detector extrinsic -> MAP decoders -> new priors and soft symbols
        trace.decisions[m].resize(k_users);
        for (int k = 0; k < k_users; ++k) {
            Eigen::RowVectorXd refs(t);
            for (int i = 0; i < t; ++i) refs(i) = slicer(selected(k, i));
            const SoftStats stats = estimate_soft_stats(selected.row(k), refs);
            const std::vector<double> lam1 = extrinsic_llr(selected.row(k), stats);
            const std::vector<double> lam1_deint = setup.interleavers[k].invert(lam1);
            const BcjrResult dec = bcjr_decode(setup.code, {}, lam1_deint, setup.info_len);
            const std::vector<double> lam2_int = setup.interleavers[k].apply(dec.extrinsic);
            for (int i = 0; i < t; ++i) {
                prior_llr(k, i) = lam2_int[i];
                btil(k, i) = soft_symbol(lam2_int[i]);
            }
            Bits hard(setup.info_len);
            for (int i = 0; i < setup.info_len; ++i) hard[i] = dec.app_info[i] < 0.0 ? 1 : 0;
            trace.decisions[m][k] = std::move(hard);
        }
    }
    return trace;
}

}  // namespace mudsim
