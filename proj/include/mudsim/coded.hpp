#pragma once

#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mudsim/conv_code.hpp"
#include "mudsim/detectors.hpp"
#include "mudsim/interleaver.hpp"

namespace mudsim {

// per-user coded transmission: info -> conv encode -> interleave -> BPSK
struct CodedFrameSetup {
    ConvCode code;
    int info_len = 0;
    std::vector<Bits> info;                // K x B
    std::vector<Interleaver> interleavers; // per user
    Mat symbols;                           // K x T (T = code length)
};

inline CodedFrameSetup make_coded_frame(const ConvCode& code, int users, int info_len,
                                        const std::vector<Interleaver>& interleavers, Rng& rng) {
    CodedFrameSetup s;
    s.code = code;
    s.info_len = info_len;
    s.interleavers = interleavers;
    const int t = code.code_len(info_len);
    s.symbols = Mat::Zero(users, t);
    s.info.resize(users);
    for (int k = 0; k < users; ++k) {
        s.info[k].resize(info_len);
        for (int i = 0; i < info_len; ++i) s.info[k][i] = rng.bit() ? 1 : 0;
        const Bits coded = conv_encode(code, s.info[k]);
        const auto sym = s.interleavers[k].apply(bits_to_symbols(coded));
        for (int i = 0; i < t; ++i) s.symbols(k, i) = sym[i];
    }
    return s;
}

struct CodedUserResult {
    Bits info;
    Eigen::RowVectorXd reencoded;  // interleaved +-1 stream, codeword length
};

// slice -> deinterleave -> Viterbi -> reencode -> interleave
inline CodedUserResult decode_and_reencode(const CodedFrameSetup& setup, int user,
                                           const Eigen::RowVectorXcd& z) {
    const int t = static_cast<int>(z.size());
    std::vector<double> hard(t);
    for (int i = 0; i < t; ++i) hard[i] = slicer(z(i));
    const Bits received = symbols_to_bits(setup.interleavers[user].invert(hard));
    CodedUserResult res;
    res.info = viterbi_decode(setup.code, received, setup.info_len);
    const Bits re = conv_encode(setup.code, res.info);
    const auto sym = setup.interleavers[user].apply(bits_to_symbols(re));
    res.reencoded = Eigen::Map<const Eigen::RowVectorXd>(sym.data(), t);
    return res;
}

struct CodedDetectorOutput {
    std::vector<Bits> info;  // decoded info bits per user
    Mat reencoded;           // K x T re-encoded symbol streams
};

namespace detail {

// one successive decode/re-encode pass: users in `order`; each user's taps
// read the current feedback matrix, updated as users are (re)decoded
inline CodedDetectorOutput coded_sic_pass(const CodedFrameSetup& setup, const FilterBank& bank,
                                          const std::vector<int>& order, const CMat& r_frame,
                                          const Mat& fill) {
    const int k_users = static_cast<int>(bank.feedforward.cols());
    CodedDetectorOutput out;
    out.info.resize(k_users);
    out.reencoded = fill;
    Mat feedback = fill;
    const CMat zff = bank.feedforward.adjoint() * r_frame;
    for (int k : order) {
        Eigen::RowVectorXcd z = zff.row(k);
        for (int d = 0; d < k_users; ++d) {
            const cplx fdk = bank.feedback(d, k);
            if (fdk != cplx(0.0, 0.0)) z -= std::conj(fdk) * feedback.row(d).cast<cplx>();
        }
        auto res = decode_and_reencode(setup, k, z);
        feedback.row(k) = res.reencoded;
        out.reencoded.row(k) = res.reencoded;
        out.info[k] = std::move(res.info);
    }
    return out;
}

struct CodedBranchCandidate {
    CodedDetectorOutput result;
    CMat soft;
};

// frame-aggregated distance between a branch's soft outputs and its own
// re-encoded references (the available references of Eq. 31)
inline Vec coded_branch_metric(const CMat& soft, const Mat& reencoded) {
    const int k_users = static_cast<int>(soft.rows());
    Vec m(k_users);
    for (int k = 0; k < k_users; ++k) {
        double acc = 0.0;
        for (int i = 0; i < soft.cols(); ++i) {
            const cplx d = cplx(reencoded(k, i), 0.0) - soft(k, i);
            acc += std::norm(d);
        }
        m(k) = acc;
    }
    return m;
}

inline CodedBranchCandidate coded_sic_pass_soft(const CodedFrameSetup& setup, const FilterBank& bank,
                                                const std::vector<int>& order, const CMat& r_frame,
                                                const Mat& fill) {
    const int k_users = static_cast<int>(bank.feedforward.cols());
    CodedBranchCandidate cand;
    cand.result.info.resize(k_users);
    cand.result.reencoded = fill;
    cand.soft = CMat::Zero(k_users, r_frame.cols());
    Mat feedback = fill;
    const CMat zff = bank.feedforward.adjoint() * r_frame;
    for (int k : order) {
        Eigen::RowVectorXcd z = zff.row(k);
        for (int d = 0; d < k_users; ++d) {
            const cplx fdk = bank.feedback(d, k);
            if (fdk != cplx(0.0, 0.0)) z -= std::conj(fdk) * feedback.row(d).cast<cplx>();
        }
        cand.soft.row(k) = z;
        auto res = decode_and_reencode(setup, k, z);
        feedback.row(k) = res.reencoded;
        cand.result.reencoded.row(k) = res.reencoded;
        cand.result.info[k] = std::move(res.info);
    }
    return cand;
}

inline CodedDetectorOutput arbitrate_coded(const std::vector<CodedBranchCandidate>& cands) {
    const int k_users = static_cast<int>(cands.front().soft.rows());
    CodedDetectorOutput out;
    out.info.resize(k_users);
    out.reencoded = cands.front().result.reencoded;
    Vec best = Vec::Constant(k_users, std::numeric_limits<double>::infinity());
    for (const auto& c : cands) {
        const Vec m = coded_branch_metric(c.soft, c.result.reencoded);
        for (int k = 0; k < k_users; ++k)
            if (m(k) < best(k)) {
                best(k) = m(k);
                out.info[k] = c.result.info[k];
                out.reencoded.row(k) = c.result.reencoded.row(k);
            }
    }
    return out;
}

}  // namespace detail

enum class CodedDetector { Linear, SDF, PDF, SPADF, ISS, ISP, ISPAS, ISPAP, ISPASPA };

struct CodedOptions {
    int branches = 4;
    SpadfFilters filters = SpadfFilters::Shared;
};

// section V.A receivers: hard Viterbi decoding inside the cancellation loop,
// re-encoded symbols as feedback
inline CodedDetectorOutput coded_iterative_detect(const CodedFrameSetup& setup, const CMat& p_eff,
                                                  double noise_var, const std::vector<int>& base,
                                                  CodedDetector kind, const CodedOptions& opts,
                                                  const CMat& r_frame) {
    const int k_users = static_cast<int>(p_eff.cols());
    const std::vector<int> rev = reversed(base);
    const CMat wlin = linear_mmse_bank(p_eff, noise_var);
    const Mat lin_hard = linear_detect(wlin, r_frame).decisions;

    auto decode_rows = [&](const CMat& soft) {
        CodedDetectorOutput out;
        out.info.resize(k_users);
        out.reencoded = Mat::Zero(k_users, r_frame.cols());
        for (int k = 0; k < k_users; ++k) {
            auto res = decode_and_reencode(setup, k, soft.row(k));
            out.reencoded.row(k) = res.reencoded;
            out.info[k] = std::move(res.info);
        }
        return out;
    };

    if (kind == CodedDetector::Linear) return decode_rows(wlin.adjoint() * r_frame);

    const FilterBank base_bank = sdf_filters_perfect(p_eff, base, noise_var);
    const FilterBank full_bank = pdf_bank(p_eff, noise_var);

    auto stage1_sdf = [&]() {
        return detail::coded_sic_pass(setup, base_bank, base, r_frame, lin_hard);
    };
    auto stage1_spadf = [&]() {
        const auto perms = make_branch_permutations(k_users, opts.branches, base);
        std::vector<detail::CodedBranchCandidate> cands;
        cands.reserve(perms.size());
        for (const auto& bp : perms) {
            if (opts.filters == SpadfFilters::Shared) {
                cands.push_back(detail::coded_sic_pass_soft(setup, base_bank, bp.order, r_frame, lin_hard));
            } else {
                const FilterBank bank = sdf_filters_perfect(p_eff, bp.order, noise_var);
                cands.push_back(detail::coded_sic_pass_soft(setup, bank, bp.order, r_frame, lin_hard));
            }
        }
        return detail::arbitrate_coded(cands);
    };

    switch (kind) {
        case CodedDetector::SDF:
            return stage1_sdf();
        case CodedDetector::PDF: {
            const auto init = decode_rows(wlin.adjoint() * r_frame);
            const CMat soft = full_bank.feedforward.adjoint() * r_frame -
                              full_bank.feedback.adjoint() * init.reencoded.cast<cplx>();
            return decode_rows(soft);
        }
        case CodedDetector::SPADF:
            return stage1_spadf();
        case CodedDetector::ISS: {
            const auto s1 = stage1_sdf();
            const FilterBank bank = sdf_filters_perfect(p_eff, rev, noise_var);
            return detail::coded_sic_pass(setup, bank, rev, r_frame, s1.reencoded);
        }
        case CodedDetector::ISP: {
            const auto s1 = stage1_sdf();
            const CMat soft = full_bank.feedforward.adjoint() * r_frame -
                              full_bank.feedback.adjoint() * s1.reencoded.cast<cplx>();
            return decode_rows(soft);
        }
        case CodedDetector::ISPAS: {
            const auto s1 = stage1_spadf();
            return detail::coded_sic_pass(setup, full_bank, rev, r_frame, s1.reencoded);
        }
        case CodedDetector::ISPAP: {
            const auto s1 = stage1_spadf();
            const CMat soft = full_bank.feedforward.adjoint() * r_frame -
                              full_bank.feedback.adjoint() * s1.reencoded.cast<cplx>();
            return decode_rows(soft);
        }
        case CodedDetector::ISPASPA: {
            const auto s1 = stage1_spadf();
            const auto perms = make_branch_permutations(k_users, opts.branches, rev);
            std::vector<detail::CodedBranchCandidate> cands;
            cands.reserve(perms.size());
            for (const auto& bp : perms)
                cands.push_back(
                    detail::coded_sic_pass_soft(setup, full_bank, bp.order, r_frame, s1.reencoded));
            return detail::arbitrate_coded(cands);
        }
        default:
            throw std::invalid_argument("unhandled coded detector");
    }
}

}  // namespace mudsim
