#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "mudsim/turbo.hpp"

using namespace mudsim;

namespace {

Eigen::RowVectorXcd to_row(const std::vector<double>& v) {
    Eigen::RowVectorXcd z(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) z(i) = cplx(v[i], 0.0);
    return z;
}

struct TurboScene {
    SystemConfig cfg;
    SignatureModel model;
    ChannelRealization chan;
    CMat p_eff;
    CodedFrameSetup setup;
    FrameBatch frame;
    std::vector<int> base;
};

TurboScene make_turbo_scene(Rng& rng, int k, double ebn0, int info_bits = 120) {
    TurboScene s;
    s.cfg.users = k;
    s.cfg.gain = 16;
    s.cfg.paths = 3;
    ConvCode code;
    s.cfg.noise_var = sigma_from_ebn0(ebn0, 1.0, code.rate());
    s.model = gen_spreading(s.cfg, rng);
    s.chan = gen_channel(s.cfg, s.model, rng);
    s.p_eff = scaled_signatures(s.cfg, s.chan);
    const int t = code.code_len(info_bits);
    std::vector<Interleaver> ils;
    for (int u = 0; u < k; ++u) ils.push_back(make_s_random_interleaver(t, 6, rng));
    s.setup = make_coded_frame(code, k, info_bits, ils, rng);
    s.frame = synthesize_frame_with_symbols(s.cfg, s.model, s.chan, s.setup.symbols, rng);
    s.base.resize(k);
    std::iota(s.base.begin(), s.base.end(), 0);
    return s;
}

}  // namespace

TEST_CASE("soft statistics on synthetic channels") {
    // z = 2b exactly
    Eigen::RowVectorXd refs(4);
    refs << 1, -1, 1, -1;
    std::vector<double> z = {2, -2, 2, -2};
    auto s = estimate_soft_stats(to_row(z), refs);
    CHECK(s.amplitude == doctest::Approx(2.0));
    CHECK(s.xi_var == doctest::Approx(kXiVarFloor));
    CHECK(s.floored);

    // z = b + gaussian(0, 0.25)
    Rng rng(80);
    const int n = 10000;
    Eigen::RowVectorXd b(n);
    Eigen::RowVectorXcd zz(n);
    for (int i = 0; i < n; ++i) {
        b(i) = rng.sign();
        zz(i) = cplx(b(i) + 0.5 * rng.gauss(), 0.0);
    }
    s = estimate_soft_stats(zz, b);
    CHECK(s.amplitude == doctest::Approx(1.0).epsilon(0.02));
    CHECK(s.xi_var == doctest::Approx(0.25).epsilon(0.05));

    // constant z uncorrelated with b
    Eigen::RowVectorXcd c = Eigen::RowVectorXcd::Constant(n, cplx(0.7, 0.0));
    s = estimate_soft_stats(c, b);
    CHECK(std::abs(s.amplitude) < 0.05);

    CHECK_THROWS(estimate_soft_stats(Eigen::RowVectorXcd(), Eigen::RowVectorXd()));
}

TEST_CASE("extrinsic LLR formula and calibration") {
    SoftStats st;
    st.amplitude = 1.0;
    st.xi_var = 0.5;
    std::vector<double> z = {0.0, 1.0};
    const auto lam = extrinsic_llr(to_row(z), st);
    CHECK(lam[0] == doctest::Approx(0.0));
    CHECK(lam[1] == doctest::Approx(4.0));

    // calibration: empirical P(b=+1|z) vs sigmoid(lambda) on a Gaussian channel
    Rng rng(81);
    const int n = 100000;
    const double v = 0.8, var = 0.3;
    std::vector<double> lams(n);
    std::vector<int> truth(n);
    Eigen::RowVectorXcd zz(n);
    Eigen::RowVectorXd b(n);
    for (int i = 0; i < n; ++i) {
        b(i) = rng.sign();
        truth[i] = b(i) > 0;
        zz(i) = cplx(v * b(i) + std::sqrt(var) * rng.gauss(), 0.0);
    }
    const auto stats = estimate_soft_stats(zz, b);
    const auto l = extrinsic_llr(zz, stats);
    // bucket by predicted probability
    double bucket_pred[10] = {0}, bucket_emp[10] = {0};
    int bucket_n[10] = {0};
    for (int i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-l[i]));
        int bkt = std::min(9, static_cast<int>(p * 10));
        bucket_pred[bkt] += p;
        bucket_emp[bkt] += truth[i];
        ++bucket_n[bkt];
    }
    for (int bkt = 0; bkt < 10; ++bkt)
        if (bucket_n[bkt] > 2000)
            CHECK(std::abs(bucket_pred[bkt] / bucket_n[bkt] - bucket_emp[bkt] / bucket_n[bkt]) < 0.02);
}

TEST_CASE("soft symbols") {
    CHECK(soft_symbol(0.0) == 0.0);
    CHECK(soft_symbol(2.0) == doctest::Approx(std::tanh(1.0)));
    CHECK(soft_symbol(60.0) == doctest::Approx(1.0));
    Rng rng(82);
    for (int i = 0; i < 100; ++i) {
        const double s = soft_symbol(rng.uniform(-30.0, 30.0));
        CHECK(s > -1.0);
        CHECK(s < 1.0);
    }
}

TEST_CASE("single turbo iteration equals one-shot detection plus MAP decode") {
    Rng rng(83);
    auto s = make_turbo_scene(rng, 4, 7.0);
    TurboOptions opts;
    opts.iterations = 1;
    const auto trace = turbo_iterate(s.setup, s.p_eff, s.cfg.noise_var, s.base, opts, s.frame.received);

    // reference: linear MMSE soft outputs (first iteration has zero priors and
    // zero feedback, and all branches coincide), stats, LLR, one BCJR pass
    HermitianSolver solver(build_true_R(s.p_eff, s.cfg.noise_var));
    const CMat w = solver.solve(s.p_eff);
    const CMat z = w.adjoint() * s.frame.received;
    for (int k = 0; k < 4; ++k) {
        Eigen::RowVectorXd refs(z.cols());
        for (int i = 0; i < z.cols(); ++i) refs(i) = slicer(z(k, i));
        const auto stats = estimate_soft_stats(z.row(k), refs);
        const auto lam = extrinsic_llr(z.row(k), stats);
        const auto deint = s.setup.interleavers[k].invert(lam);
        const auto dec = bcjr_decode(s.setup.code, {}, deint, s.setup.info_len);
        for (int i = 0; i < s.setup.info_len; ++i)
            CHECK(trace.decisions[0][k][i] == (dec.app_info[i] < 0.0 ? 1 : 0));
    }
}

TEST_CASE("turbo iterations do not increase the error count on a clean run") {
    Rng rng(84);
    auto s = make_turbo_scene(rng, 6, 6.0, 160);
    TurboOptions opts;
    opts.iterations = 5;
    const auto trace = turbo_iterate(s.setup, s.p_eff, s.cfg.noise_var, s.base, opts, s.frame.received);
    std::vector<int> errs(5, 0);
    for (int m = 0; m < 5; ++m)
        for (int k = 0; k < 6; ++k)
            for (int i = 0; i < s.setup.info_len; ++i)
                errs[m] += trace.decisions[m][k][i] != s.setup.info[k][i];
    CHECK(errs[4] <= errs[0]);
    CHECK(errs[2] <= errs[0]);
}

TEST_CASE("hard-limited priors reproduce the hard-decision feedback receiver") {
    // with saturated priors the soft symbols are exactly +-1, so one branch
    // pass must equal hard interference cancellation with perfect decisions
    Rng rng(85);
    auto s = make_turbo_scene(rng, 3, 8.0);
    const CMat r = build_true_R(s.p_eff, s.cfg.noise_var);
    detail::TurboFilterCache cache(s.p_eff, r, s.frame.received);
    Vec rho = Vec::Ones(3);
    Mat btil = s.setup.symbols;  // saturated priors: tanh(inf) = true symbols
    std::vector<int> det = {0, 1};
    const auto z = detail::soft_branch_output(cache, rho, btil, 2, det);
    // reference: perfect-feedback S-DF filters for user 2 with D = {0,1}
    const auto bank = sdf_filters_perfect(s.p_eff, {0, 1, 2}, s.cfg.noise_var);
    Eigen::RowVectorXcd ref = bank.feedforward.col(2).adjoint() * s.frame.received;
    for (int d = 0; d < 2; ++d)
        ref -= std::conj(bank.feedback(d, 2)) * btil.row(d).cast<cplx>();
    CHECK((z - ref).norm() / ref.norm() < 1e-9);
}

TEST_CASE("turbo trace is reproducible") {
    Rng rng1(86), rng2(86);
    auto s1 = make_turbo_scene(rng1, 4, 5.0);
    auto s2 = make_turbo_scene(rng2, 4, 5.0);
    TurboOptions opts;
    opts.iterations = 3;
    const auto t1 = turbo_iterate(s1.setup, s1.p_eff, s1.cfg.noise_var, s1.base, opts, s1.frame.received);
    const auto t2 = turbo_iterate(s2.setup, s2.p_eff, s2.cfg.noise_var, s2.base, opts, s2.frame.received);
    for (int m = 0; m < 3; ++m)
        for (int k = 0; k < 4; ++k) CHECK(t1.decisions[m][k] == t2.decisions[m][k]);
}
