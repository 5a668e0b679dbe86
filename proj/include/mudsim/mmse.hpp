#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mudsim/signal_model.hpp"

namespace mudsim {

struct SingularMatrixError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class FilterStructure { Linear, SDF, PDF, General };

struct FilterBank {
    CMat feedforward;  // W, M x K, column k = w_k
    CMat feedback;     // F, K x K, column k = f_k
    FilterStructure structure = FilterStructure::Linear;
    std::vector<int> order;  // detection order for SDF banks
};

struct DetectionSets {
    std::vector<int> detected;
    std::vector<int> undetected;
};

// Hermitian PD solve via LDLT with a condition estimate; the pivoted D ratio
// stands in for the condition number, threshold 1e12 per the design contract
class HermitianSolver {
public:
    explicit HermitianSolver(const CMat& a) : ldlt_(a) {
        if (ldlt_.info() != Eigen::Success)
            throw SingularMatrixError("Hermitian factorization failed");
        const Vec d = ldlt_.vectorD().real().cwiseAbs();
        const double dmax = d.maxCoeff();
        const double dmin = d.minCoeff();
        if (!(dmin > 0.0) || dmax / dmin > 1e12)
            throw SingularMatrixError("matrix is numerically singular (condition estimate > 1e12)");
    }

    CVec solve(const CVec& b) const { return ldlt_.solve(b); }
    CMat solve(const CMat& b) const { return ldlt_.solve(b); }

private:
    Eigen::LDLT<CMat> ldlt_;
};

inline CMat build_true_R(const CMat& p_eff, double noise_var) {
    const Eigen::Index m = p_eff.rows();
    CMat r = p_eff * p_eff.adjoint();
    r = 0.5 * (r + CMat(r.adjoint()));  // exactly Hermitian
    r += noise_var * CMat::Identity(m, m);
    return r;
}

inline CMat estimate_R(const CMat& frames) {
    if (frames.cols() < 1) throw std::invalid_argument("need at least one received sample");
    CMat r = (frames * frames.adjoint()) / static_cast<double>(frames.cols());
    return 0.5 * (r + CMat(r.adjoint()));
}

inline CMat estimate_B(const CMat& frames, const Mat& decisions) {
    if (frames.cols() < 1) throw std::invalid_argument("need at least one received sample");
    if (frames.cols() != decisions.cols())
        throw std::invalid_argument("sample count mismatch between frames and decisions");
    return (frames * decisions.transpose().cast<cplx>()) / static_cast<double>(frames.cols());
}

// S-DF bank for a given detection order: w_k = R_U^{-1} p_k with
// R_U = R - P_D P_D^H, f_k = P_D^H w_k on the detected coordinates
inline FilterBank sdf_filters_perfect(const CMat& p_eff, const std::vector<int>& order, double noise_var) {
    const int k_users = static_cast<int>(p_eff.cols());
    const int m = static_cast<int>(p_eff.rows());
    if (static_cast<int>(order.size()) != k_users)
        throw std::invalid_argument("order must be a permutation of all users");
    FilterBank bank;
    bank.structure = FilterStructure::SDF;
    bank.order = order;
    bank.feedforward = CMat::Zero(m, k_users);
    bank.feedback = CMat::Zero(k_users, k_users);
    const CMat r = build_true_R(p_eff, noise_var);
    CMat r_u = r;
    std::vector<int> detected;
    for (int idx : order) {
        HermitianSolver solver(r_u);
        const CVec w = solver.solve(CVec(p_eff.col(idx)));
        bank.feedforward.col(idx) = w;
        for (int d : detected) bank.feedback(d, idx) = p_eff.col(d).dot(w);  // p_d^H w
        r_u -= p_eff.col(idx) * p_eff.col(idx).adjoint();
        detected.push_back(idx);
    }
    return bank;
}

// P-DF: U = {k}; exact rank-one form w_k = p_k / (||p_k||^2 + sigma^2)
inline void pdf_filters_perfect(const CMat& p_eff, double noise_var, int k, CVec& w, CVec& f) {
    const int k_users = static_cast<int>(p_eff.cols());
    if (k < 0 || k >= k_users) throw std::invalid_argument("invalid user index");
    const double denom = p_eff.col(k).squaredNorm() + noise_var;
    w = p_eff.col(k) / denom;
    f = CVec::Zero(k_users);
    for (int j = 0; j < k_users; ++j)
        if (j != k) f(j) = p_eff.col(j).dot(w);
    f(k) = cplx(0.0, 0.0);
}

inline FilterBank pdf_bank(const CMat& p_eff, double noise_var) {
    const int k_users = static_cast<int>(p_eff.cols());
    FilterBank bank;
    bank.structure = FilterStructure::PDF;
    bank.feedforward = CMat::Zero(p_eff.rows(), k_users);
    bank.feedback = CMat::Zero(k_users, k_users);
    for (int k = 0; k < k_users; ++k) {
        CVec w, f;
        pdf_filters_perfect(p_eff, noise_var, k, w, f);
        bank.feedforward.col(k) = w;
        bank.feedback.col(k) = f;
    }
    return bank;
}

// general (imperfect-feedback) filters:
//   f_k = (I - Q^{-1} B^H R^{-1} B)^{-1} Q^{-1} B^H R^{-1} p_k
//   w_k = R^{-1} (p_k + B f_k)
// Q defaults to identity; only the full R is inverted
inline void general_df_filters(const CMat& r, const CMat& b, const CVec& p_k, CVec& w, CVec& f,
                               const CMat* q = nullptr) {
    HermitianSolver solver(r);
    const CVec rinv_p = solver.solve(p_k);
    const Eigen::Index nd = b.cols();
    if (nd == 0) {
        w = rinv_p;
        f = CVec();
        return;
    }
    const CMat rinv_b = solver.solve(b);
    CMat g = b.adjoint() * rinv_b;              // B^H R^{-1} B
    CVec rhs = b.adjoint() * rinv_p;            // B^H R^{-1} p_k
    if (q != nullptr) {
        const Eigen::PartialPivLU<CMat> qlu(*q);
        g = qlu.solve(g);
        rhs = qlu.solve(rhs);
    }
    const CMat d = CMat::Identity(nd, nd) - g;
    const Eigen::FullPivLU<CMat> lu(d);
    if (!lu.isInvertible())
        throw SingularMatrixError("feedback design matrix (I - Q^{-1}B^H R^{-1}B) is singular");
    f = lu.solve(rhs);
    w = rinv_p + rinv_b * f;
}

// Eq. 11: J = sigma_b^2 - p^H R_U^{-1} p  (sigma_b^2 = 1 for BPSK)
inline double mmse_perfect(const CVec& p_k, const CMat& r_u) {
    HermitianSolver solver(r_u);
    return 1.0 - p_k.dot(solver.solve(p_k)).real();
}

// Eq. 15: single-user bound for unit-amplitude convention
inline double mmse_pdf(double amplitude, double noise_var) {
    return noise_var / (amplitude * amplitude + noise_var);
}

// Eq. 18: J ~= 1 - p^H R^{-1} p - p^H R^{-1} B f
inline double mmse_imperfect(const CVec& p_k, const CMat& r, const CMat& b, const CVec& f) {
    HermitianSolver solver(r);
    const CVec rinv_p = solver.solve(p_k);
    double j = 1.0 - p_k.dot(rinv_p).real();
    if (b.cols() > 0) j -= (rinv_p.adjoint() * b * f)(0).real();
    return j;
}

// Eq. 43 closed form
inline double mmse_imperfect_closed(const CVec& p_k, const CMat& r, const CMat& b) {
    HermitianSolver solver(r);
    const CVec rinv_p = solver.solve(p_k);
    double j = 1.0 - p_k.dot(rinv_p).real();
    const Eigen::Index nd = b.cols();
    if (nd == 0) return j;
    const CMat rinv_b = solver.solve(b);
    const CMat d = CMat::Identity(nd, nd) - b.adjoint() * rinv_b;
    const Eigen::FullPivLU<CMat> lu(d);
    if (!lu.isInvertible())
        throw SingularMatrixError("feedback design matrix (I - B^H R^{-1}B) is singular");
    const CVec bh_rinv_p = b.adjoint() * rinv_p;
    j -= bh_rinv_p.dot(lu.solve(bh_rinv_p)).real();
    return j;
}

// undetected-set covariance R_U = sigma^2 I + sum_{j in U} p_j p_j^H
inline CMat undetected_R(const CMat& p_eff, const std::vector<int>& undetected, double noise_var) {
    const Eigen::Index m = p_eff.rows();
    CMat r = noise_var * CMat::Identity(m, m);
    for (int j : undetected) r += p_eff.col(j) * p_eff.col(j).adjoint();
    return 0.5 * (r + CMat(r.adjoint()));
}

inline double mmse_for_undetected(const CMat& p_eff, int k, const std::vector<int>& undetected,
                                  double noise_var) {
    return mmse_perfect(p_eff.col(k), undetected_R(p_eff, undetected, noise_var));
}

// Eq. 47: min over branch undetected sets
inline double mmse_spadf_bound(const CMat& p_eff, int k,
                               const std::vector<std::vector<int>>& undetected_sets, double noise_var) {
    if (undetected_sets.empty()) throw std::invalid_argument("need at least one branch");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& u : undetected_sets)
        best = std::min(best, mmse_for_undetected(p_eff, k, u, noise_var));
    return best;
}

// Eqs. 48-50: the K! orderings induce exactly the undetected sets containing
// user k, so the exhaustive minimum is a minimum over those 2^(K-1) subsets
inline double mmse_optimal_bound(const CMat& p_eff, int k, double noise_var, int factorial_cap = 8) {
    const int k_users = static_cast<int>(p_eff.cols());
    if (k_users > factorial_cap)
        throw std::invalid_argument("user count exceeds factorial cap for exhaustive ordering search");
    std::vector<int> others;
    for (int j = 0; j < k_users; ++j)
        if (j != k) others.push_back(j);
    const int n_others = static_cast<int>(others.size());
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> u;
    for (std::uint32_t bits = 0; bits < (1u << n_others); ++bits) {
        u.clear();
        u.push_back(k);
        for (int i = 0; i < n_others; ++i)
            if (bits & (1u << i)) u.push_back(others[i]);
        best = std::min(best, mmse_for_undetected(p_eff, k, u, noise_var));
    }
    return best;
}

}  // namespace mudsim
