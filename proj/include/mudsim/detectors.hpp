#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mudsim/mmse.hpp"

namespace mudsim {

inline double slicer(cplx z) { return z.real() >= 0.0 ? 1.0 : -1.0; }

inline Mat slice_all(const CMat& z) {
    Mat out(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        for (Eigen::Index i = 0; i < z.rows(); ++i) out(i, j) = slicer(z(i, j));
    return out;
}

struct DetectorOutput {
    CMat soft;       // Z, K x T
    Mat decisions;   // sign(Re Z), K x T
    std::vector<CMat> per_branch;  // optional, SPA-DF only
};

// nominal received power A_k^2 descending, ties by ascending index; under the
// unit-norm channel convention this equals E||A_k p_k||^2
inline std::vector<int> power_order(const Vec& amplitudes) {
    std::vector<int> order(amplitudes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return amplitudes(a) * amplitudes(a) > amplitudes(b) * amplitudes(b);
    });
    return order;
}

inline std::vector<int> reversed(const std::vector<int>& order) {
    return std::vector<int>(order.rbegin(), order.rend());
}

struct BranchPermutation {
    std::vector<int> order;
    int branch_index = 1;  // 1-based, matching the M_l notation
};

inline std::vector<BranchPermutation> make_branch_permutations(int users, int branches,
                                                               const std::vector<int>& base) {
    if (branches < 1) throw std::invalid_argument("need at least one branch");
    if (static_cast<int>(base.size()) != users) throw std::invalid_argument("base order size mismatch");
    if (users <= 12) {
        long long fact = 1;
        for (int i = 2; i <= users; ++i) fact *= i;
        if (branches > fact) throw std::invalid_argument("more branches than orderings (L > K!)");
    }
    std::vector<BranchPermutation> out;
    out.reserve(branches);
    for (int l = 1; l <= branches; ++l) {
        BranchPermutation bp;
        bp.branch_index = l;
        if (l == branches && branches > 1) {
            bp.order = reversed(base);
        } else {
            const int shift = (l - 1) * (users / branches);
            bp.order.resize(users);
            for (int i = 0; i < users; ++i) bp.order[i] = base[(i + shift) % users];
        }
        out.push_back(std::move(bp));
    }
    return out;
}

inline CMat linear_mmse_bank(const CMat& p_eff, double noise_var) {
    HermitianSolver solver(build_true_R(p_eff, noise_var));
    return solver.solve(p_eff);
}

inline DetectorOutput linear_detect(const CMat& w, const CMat& r_frame) {
    DetectorOutput out;
    out.soft = w.adjoint() * r_frame;
    out.decisions = slice_all(out.soft);
    return out;
}

// successive detection: decisions made earlier in this pass are fed back
inline DetectorOutput sdf_detect(const FilterBank& bank, const CMat& r_frame,
                                 const std::vector<int>& order) {
    const int k_users = static_cast<int>(bank.feedforward.cols());
    const int t = static_cast<int>(r_frame.cols());
    DetectorOutput out;
    out.soft = CMat::Zero(k_users, t);
    out.decisions = Mat::Zero(k_users, t);
    const CMat zff = bank.feedforward.adjoint() * r_frame;
    for (int k : order) {
        Eigen::RowVectorXcd z = zff.row(k);
        for (int d = 0; d < k_users; ++d) {
            const cplx fdk = bank.feedback(d, k);
            if (fdk != cplx(0.0, 0.0))
                z -= std::conj(fdk) * out.decisions.row(d).cast<cplx>();
        }
        out.soft.row(k) = z;
        for (int i = 0; i < t; ++i) out.decisions(k, i) = slicer(z(i));
    }
    return out;
}

// parallel cancellation against a full set of tentative decisions
inline DetectorOutput pdf_detect(const FilterBank& bank, const CMat& r_frame,
                                 const Mat& initial_decisions) {
    DetectorOutput out;
    out.soft = bank.feedforward.adjoint() * r_frame -
               bank.feedback.adjoint() * initial_decisions.cast<cplx>();
    out.decisions = slice_all(out.soft);
    return out;
}

enum class SpadfFilters { Recomputed, Shared };
enum class Selection { DDFrame, DDSymbol, Genie };

struct SpadfOptions {
    int branches = 4;
    SpadfFilters filters = SpadfFilters::Recomputed;
    Selection selection = Selection::DDFrame;
    bool keep_per_branch = false;
};

namespace detail {

// distance from z to the candidate reference (slicer decision or true symbol)
inline void branch_errors(const CMat& z, const Mat* truth, Mat& err) {
    const Eigen::Index k_users = z.rows(), t = z.cols();
    err.resize(k_users, t);
    for (Eigen::Index j = 0; j < t; ++j)
        for (Eigen::Index i = 0; i < k_users; ++i) {
            const double ref = truth ? (*truth)(i, j) : slicer(z(i, j));
            err(i, j) = std::abs(cplx(ref, 0.0) - z(i, j));
        }
}

class BranchSelector {
public:
    BranchSelector(int k_users, int t, Selection mode, const Mat* truth)
        : mode_(mode), truth_(truth), t_(t) {
        best_soft_ = CMat::Zero(k_users, t);
        if (mode_ == Selection::DDFrame)
            best_metric_ = Vec::Constant(k_users, std::numeric_limits<double>::infinity());
        else
            best_sym_ = Mat::Constant(k_users, t, std::numeric_limits<double>::infinity());
    }

    void offer(const CMat& z) {
        Mat err;
        branch_errors(z, mode_ == Selection::Genie ? truth_ : nullptr, err);
        if (mode_ == Selection::DDFrame) {
            for (Eigen::Index k = 0; k < z.rows(); ++k) {
                const double metric = err.row(k).squaredNorm();
                if (metric < best_metric_(k)) {
                    best_metric_(k) = metric;
                    best_soft_.row(k) = z.row(k);
                }
            }
        } else {
            for (Eigen::Index j = 0; j < t_; ++j)
                for (Eigen::Index k = 0; k < z.rows(); ++k)
                    if (err(k, j) < best_sym_(k, j)) {
                        best_sym_(k, j) = err(k, j);
                        best_soft_(k, j) = z(k, j);
                    }
        }
    }

    const CMat& selected() const { return best_soft_; }

private:
    Selection mode_;
    const Mat* truth_;
    int t_;
    CMat best_soft_;
    Vec best_metric_;
    Mat best_sym_;
};

}  // namespace detail

// one SIC pass over `order` reusing the base bank; slots not yet refreshed in
// this pass read from `fill` (Eq. 4 initial decisions)
inline CMat shared_branch_pass(const FilterBank& base_bank, const CMat& zff,
                               const std::vector<int>& order, const Mat& fill) {
    const int k_users = static_cast<int>(base_bank.feedforward.cols());
    const int t = static_cast<int>(zff.cols());
    CMat soft = CMat::Zero(k_users, t);
    Mat current = fill;
    for (int k : order) {
        Eigen::RowVectorXcd z = zff.row(k);
        for (int d = 0; d < k_users; ++d) {
            const cplx fdk = base_bank.feedback(d, k);
            if (fdk != cplx(0.0, 0.0)) z -= std::conj(fdk) * current.row(d).cast<cplx>();
        }
        soft.row(k) = z;
        for (int i = 0; i < t; ++i) current(k, i) = slicer(z(i));
    }
    return soft;
}

inline DetectorOutput spadf_detect_with_orders(const CMat& p_eff, double noise_var,
                                               const std::vector<std::vector<int>>& orders,
                                               const SpadfOptions& opts, const CMat& r_frame,
                                               const Mat* truth = nullptr,
                                               const FilterBank* base_bank = nullptr,
                                               const Mat* initial = nullptr) {
    const int k_users = static_cast<int>(p_eff.cols());
    const int t = static_cast<int>(r_frame.cols());
    if (opts.selection == Selection::Genie && truth == nullptr)
        throw std::invalid_argument("genie selection needs the transmitted symbols");
    detail::BranchSelector sel(k_users, t, opts.selection, truth);
    DetectorOutput out;

    FilterBank local_bank;
    const FilterBank* shared = base_bank;
    CMat zff;
    Mat fill;
    if (opts.filters == SpadfFilters::Shared) {
        if (shared == nullptr) {
            local_bank = sdf_filters_perfect(p_eff, orders.front(), noise_var);
            shared = &local_bank;
        }
        zff = shared->feedforward.adjoint() * r_frame;
        if (initial != nullptr) {
            fill = *initial;
        } else {
            fill = linear_detect(linear_mmse_bank(p_eff, noise_var), r_frame).decisions;
        }
    }
    for (const auto& order : orders) {
        CMat soft;
        if (opts.filters == SpadfFilters::Shared) {
            soft = shared_branch_pass(*shared, zff, order, fill);
        } else {
            const FilterBank bank = sdf_filters_perfect(p_eff, order, noise_var);
            soft = sdf_detect(bank, r_frame, order).soft;
        }
        if (opts.keep_per_branch) out.per_branch.push_back(soft);
        sel.offer(soft);
    }
    out.soft = sel.selected();
    out.decisions = slice_all(out.soft);
    return out;
}

inline DetectorOutput spadf_detect(const CMat& p_eff, double noise_var, const std::vector<int>& base,
                                   const SpadfOptions& opts, const CMat& r_frame,
                                   const Mat* truth = nullptr, const FilterBank* base_bank = nullptr,
                                   const Mat* initial = nullptr) {
    const auto perms = make_branch_permutations(static_cast<int>(base.size()), opts.branches, base);
    std::vector<std::vector<int>> orders;
    orders.reserve(perms.size());
    for (const auto& bp : perms) orders.push_back(bp.order);
    return spadf_detect_with_orders(p_eff, noise_var, orders, opts, r_frame, truth, base_bank, initial);
}

// exhaustive search over all K! cancellation orders; filters depend on the
// undetected set only, so they are cached per (user, subset)
inline DetectorOutput optimal_order_detect(const CMat& p_eff, double noise_var, const CMat& r_frame,
                                           Selection selection = Selection::DDFrame,
                                           const Mat* truth = nullptr, int factorial_cap = 8) {
    const int k_users = static_cast<int>(p_eff.cols());
    const int t = static_cast<int>(r_frame.cols());
    if (k_users > factorial_cap)
        throw std::invalid_argument(
            "optimal ordering is factorial in the user count; raise the cap explicitly to force it");
    if (selection == Selection::Genie && truth == nullptr)
        throw std::invalid_argument("genie selection needs the transmitted symbols");

    const CMat r = build_true_R(p_eff, noise_var);
    const int n_sub = 1 << (k_users - 1);
    // zff_cache[k][mask] = w(k,U)^H r_frame ; f_cache[k][mask] = feedback taps
    std::vector<std::vector<Eigen::RowVectorXcd>> zff_cache(k_users);
    std::vector<std::vector<CVec>> f_cache(k_users);
    std::vector<std::vector<int>> others(k_users);
    for (int k = 0; k < k_users; ++k) {
        others[k].reserve(k_users - 1);
        for (int j = 0; j < k_users; ++j)
            if (j != k) others[k].push_back(j);
        zff_cache[k].resize(n_sub);
        f_cache[k].resize(n_sub);
        for (int mask = 0; mask < n_sub; ++mask) {
            CMat r_u = r;
            for (int i = 0; i < k_users - 1; ++i)
                if (!(mask & (1 << i))) {
                    const int j = others[k][i];
                    r_u -= p_eff.col(j) * p_eff.col(j).adjoint();
                }
            HermitianSolver solver(r_u);
            const CVec w = solver.solve(CVec(p_eff.col(k)));
            zff_cache[k][mask] = w.adjoint() * r_frame;
            CVec f = CVec::Zero(k_users);
            for (int i = 0; i < k_users - 1; ++i)
                if (!(mask & (1 << i))) {
                    const int j = others[k][i];
                    f(j) = p_eff.col(j).dot(w);
                }
            f_cache[k][mask] = f;
        }
    }
    std::vector<std::vector<int>> bit_of(k_users, std::vector<int>(k_users, -1));
    for (int k = 0; k < k_users; ++k)
        for (int i = 0; i < k_users - 1; ++i) bit_of[k][others[k][i]] = i;

    detail::BranchSelector sel(k_users, t, selection, truth);
    std::vector<int> order(k_users);
    std::iota(order.begin(), order.end(), 0);
    Mat decisions(k_users, t);
    CMat soft(k_users, t);
    do {
        decisions.setZero();
        int undet_mask_full = (1 << k_users) - 1;
        for (int k : order) {
            int mask = 0;
            for (int j = 0; j < k_users; ++j)
                if ((undet_mask_full & (1 << j)) && j != k) mask |= 1 << bit_of[k][j];
            Eigen::RowVectorXcd z = zff_cache[k][mask];
            const CVec& f = f_cache[k][mask];
            for (int d = 0; d < k_users; ++d)
                if (f(d) != cplx(0.0, 0.0)) z -= std::conj(f(d)) * decisions.row(d).cast<cplx>();
            soft.row(k) = z;
            for (int i = 0; i < t; ++i) decisions(k, i) = slicer(z(i));
            undet_mask_full &= ~(1 << k);
        }
        sel.offer(soft);
    } while (std::next_permutation(order.begin(), order.end()));

    DetectorOutput out;
    out.soft = sel.selected();
    out.decisions = slice_all(out.soft);
    return out;
}

enum class StageKind { SDF, PDF, SPADF };

struct IterativeScheme {
    StageKind stage1 = StageKind::SDF;
    StageKind stage2 = StageKind::PDF;
    int stages = 2;
};

// second and later stages refine the previous stage's decisions with the user
// order reversed stage to stage
inline DetectorOutput iterative_detect(const CMat& p_eff, double noise_var,
                                       const std::vector<int>& base, const IterativeScheme& scheme,
                                       const SpadfOptions& opts, const CMat& r_frame,
                                       const Mat* truth = nullptr) {
    if (scheme.stages < 2) throw std::invalid_argument("iterative schemes need at least two stages");
    const int k_users = static_cast<int>(p_eff.cols());
    const int t = static_cast<int>(r_frame.cols());

    DetectorOutput stage_out;
    if (scheme.stage1 == StageKind::SDF) {
        const FilterBank bank = sdf_filters_perfect(p_eff, base, noise_var);
        stage_out = sdf_detect(bank, r_frame, base);
    } else if (scheme.stage1 == StageKind::SPADF) {
        stage_out = spadf_detect(p_eff, noise_var, base, opts, r_frame, truth);
    } else {
        throw std::invalid_argument("first stage must be S-DF or SPA-DF");
    }

    std::vector<int> order = base;
    const FilterBank full_bank = pdf_bank(p_eff, noise_var);
    for (int stage = 2; stage <= scheme.stages; ++stage) {
        order = reversed(order);
        const Mat prev = stage_out.decisions;
        if (scheme.stage2 == StageKind::PDF) {
            stage_out = pdf_detect(full_bank, r_frame, prev);
        } else if (scheme.stage2 == StageKind::SDF) {
            const FilterBank bank = sdf_filters_perfect(p_eff, order, noise_var);
            const CMat zff = bank.feedforward.adjoint() * r_frame;
            CMat soft = CMat::Zero(k_users, t);
            Mat current = prev;  // mixed vector: refreshed entries overwrite stage-1 decisions
            for (int k : order) {
                Eigen::RowVectorXcd z = zff.row(k);
                for (int d = 0; d < k_users; ++d) {
                    const cplx fdk = bank.feedback(d, k);
                    if (fdk != cplx(0.0, 0.0)) z -= std::conj(fdk) * current.row(d).cast<cplx>();
                }
                soft.row(k) = z;
                for (int i = 0; i < t; ++i) current(k, i) = slicer(z(i));
            }
            stage_out.soft = soft;
            stage_out.decisions = slice_all(soft);
        } else {
            // SPA-DF second stage: full-cancellation refresh branches over
            // permutations of the reversed order, arbitrated per user
            const auto perms = make_branch_permutations(k_users, opts.branches, order);
            detail::BranchSelector sel(k_users, t, opts.selection, truth);
            const CMat zff = full_bank.feedforward.adjoint() * r_frame;
            for (const auto& bp : perms) {
                CMat soft = CMat::Zero(k_users, t);
                Mat current = prev;
                for (int k : bp.order) {
                    Eigen::RowVectorXcd z = zff.row(k);
                    for (int d = 0; d < k_users; ++d) {
                        const cplx fdk = full_bank.feedback(d, k);
                        if (fdk != cplx(0.0, 0.0)) z -= std::conj(fdk) * current.row(d).cast<cplx>();
                    }
                    soft.row(k) = z;
                    for (int i = 0; i < t; ++i) current(k, i) = slicer(z(i));
                }
                sel.offer(soft);
            }
            stage_out.soft = sel.selected();
            stage_out.decisions = slice_all(stage_out.soft);
        }
    }
    return stage_out;
}

}  // namespace mudsim
