#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mudsim/bcjr.hpp"
#include "mudsim/experiment.hpp"
#include "mudsim/interleaver.hpp"
#include "mudsim/turbo.hpp"

namespace {

using namespace mudsim;

void print_records(const std::vector<BerRecord>& records) {
    std::printf("%-12s %-10s %10s %12s %12s %12s\n", "detector", "sweep", "value", "avg_ber",
                "wilson_lo", "wilson_hi");
    for (const auto& rec : records) {
        const auto w = wilson_interval(rec.total_errors(), rec.total_bits());
        std::printf("%-12s %-10s %10.4g %12.5g %12.5g %12.5g\n", rec.detector.c_str(),
                    rec.sweep_name.c_str(), rec.sweep_value, rec.average_ber(), w.lo, w.hi);
    }
}

int run_verify() {
    int failures = 0;
    auto check = [&](bool ok, const std::string& what) {
        std::printf("%s  %s\n", ok ? "ok  " : "FAIL", what.c_str());
        if (!ok) ++failures;
    };

    // filter identities: general filters against the perfect-feedback bank,
    // and the imperfect-feedback MMSE against the closed form
    {
        Rng rng(11);
        bool id_ok = true, j_ok = true, chain_ok = true;
        for (int trial = 0; trial < 20; ++trial) {
            SystemConfig cfg;
            cfg.users = 2 + (trial % 5);
            cfg.gain = 16;
            cfg.paths = 1 + 2 * (trial % 2);
            cfg.noise_var = trial % 2 ? 0.5 : 0.05;
            const SignatureModel model = gen_spreading(cfg, rng);
            const ChannelRealization chan = gen_channel(cfg, model, rng);
            const CMat p = scaled_signatures(cfg, chan);
            std::vector<int> order(cfg.users);
            std::iota(order.begin(), order.end(), 0);
            const FilterBank bank = sdf_filters_perfect(p, order, cfg.noise_var);
            const CMat r = build_true_R(p, cfg.noise_var);
            const int k = cfg.users - 1;
            CMat pd(p.rows(), k);
            for (int j = 0; j < k; ++j) pd.col(j) = p.col(j);
            CVec w, f;
            general_df_filters(r, pd, p.col(k), w, f);
            if ((w - bank.feedforward.col(k)).norm() > 1e-10) id_ok = false;
            std::vector<int> undet = {k};
            const double j11 = mmse_perfect(p.col(k), undetected_R(p, undet, cfg.noise_var));
            const double j18 = mmse_imperfect(p.col(k), r, pd, f);
            if (std::abs(j18 - j11) > 1e-9) j_ok = false;
            // bound chain
            const auto perms = make_branch_permutations(cfg.users, std::min(4, cfg.users), order);
            std::vector<std::vector<int>> usets;
            for (const auto& bp : perms) {
                std::vector<int> u;
                bool seen = false;
                for (int idx : bp.order) {
                    if (idx == k) seen = true;
                    if (seen || idx == k) u.push_back(idx);
                }
                if (!seen) u.push_back(k);
                usets.push_back(u);
            }
            const double j_opt = mmse_optimal_bound(p, k, cfg.noise_var);
            const double j_spa = mmse_spadf_bound(p, k, usets, cfg.noise_var);
            const double j_lin = mmse_perfect(p.col(k), r);
            if (!(j_opt <= j_spa + 1e-12 && j_spa <= j11 + 1e-12 && j11 <= j_lin + 1e-12))
                chain_ok = false;
        }
        check(id_ok, "general DF filters match perfect-feedback bank (B = P_D, Q = I)");
        check(j_ok, "imperfect-feedback MMSE equals Eq.-11 value under perfect feedback");
        check(chain_ok, "MMSE bound chain: optimal <= arbitrated <= successive <= linear");
    }
    // single-user bound value
    {
        const double j = mmse_pdf(1.0, 0.1);
        check(std::abs(j - 0.1 / 1.1) < 1e-12, "P-DF single-user bound value");
    }
    // noiseless end-to-end: every detector error-free
    {
        ExperimentSpec spec;
        spec.sweep = SweepAxis::None;
        spec.ebn0_db = {100.0};
        spec.users = {4};
        spec.gain = 16;
        spec.paths = 2;
        spec.runs = 2;
        spec.symbols = 64;
        spec.detectors = {DetectorId::Linear,  DetectorId::Sdf,     DetectorId::Pdf,
                          DetectorId::Spadf,   DetectorId::IssDf,   DetectorId::IspDf,
                          DetectorId::IspasDf, DetectorId::IspapDf, DetectorId::IspaspaDf};
        const auto recs = run_experiment(spec);
        bool ok = true;
        for (const auto& r : recs) ok = ok && r.total_errors() == 0;
        check(ok, "noiseless frames detected error-free by all receivers");
    }
    // coding round trip + BCJR sanity
    {
        ConvCode code;
        Rng rng(5);
        bool ok = true;
        for (int t = 0; t < 50 && ok; ++t) {
            Bits info(48);
            for (auto& b : info) b = rng.bit();
            ok = viterbi_decode(code, conv_encode(code, info), 48) == info;
        }
        check(ok, "Viterbi decodes clean codewords exactly");
        Bits info(24);
        for (auto& b : info) b = rng.bit();
        const Bits cw = conv_encode(code, info);
        std::vector<double> llr(cw.size());
        for (std::size_t i = 0; i < cw.size(); ++i) llr[i] = cw[i] ? -9.0 : 9.0;
        const auto dec = bcjr_decode(code, {}, llr, 24);
        bool sok = true;
        for (int i = 0; i < 24; ++i) sok = sok && ((dec.app_info[i] < 0.0) == (info[i] != 0));
        check(sok, "BCJR recovers a clean codeword");
    }
    // interleaver property
    {
        Rng rng(7);
        const auto il = make_s_random_interleaver(256, 8, rng);
        check(il.spread == 8 && s_random_property_holds(il.perm, il.spread),
              "S-random interleaver satisfies its spread property");
    }
    std::printf(failures == 0 ? "verify: all checks passed\n" : "verify: %d check(s) FAILED\n",
                failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MMSE decision-feedback multiuser detection simulator"};
    app.require_subcommand(1);

    std::string spec_path, out_path, checkpoint;
    int threads = 0;

    auto* cmd_run = app.add_subcommand("run", "run an experiment described by a spec file");
    cmd_run->add_option("spec", spec_path, "flat key=value spec file")->required();
    cmd_run->add_option("--out", out_path, "CSV output path (JSON sidecar written alongside)");
    cmd_run->add_option("--threads", threads, "worker count (default: SIM_THREADS or hardware)");
    cmd_run->add_option("--checkpoint", checkpoint, "checkpoint file for resume");

    ExperimentSpec sw;
    std::string sw_ebn0 = "8", sw_detectors = "S-DF", sw_sweep = "ebn0", sw_cov = "true";
    std::string sw_filters = "recomputed", sw_selection = "dd_frame";
    int sw_k = 8;
    bool sw_coded = false, sw_turbo = false;
    auto* cmd_sweep = app.add_subcommand("sweep", "run a sweep from command-line flags");
    cmd_sweep->add_option("--n", sw.gain, "processing gain (chips per symbol)");
    cmd_sweep->add_option("--k", sw_k, "user count");
    cmd_sweep->add_option("--lp", sw.paths, "multipath count");
    cmd_sweep->add_option("--ebn0", sw_ebn0, "Eb/N0 grid in dB: start:step:stop or comma list");
    cmd_sweep->add_option("--detector", sw_detectors, "comma list of detector ids");
    cmd_sweep->add_option("--branches", sw.branches, "SPA-DF parallel branches");
    cmd_sweep->add_option("--runs", sw.runs, "Monte Carlo runs per point");
    cmd_sweep->add_option("--seed", sw.seed, "base seed");
    cmd_sweep->add_option("--symbols", sw.symbols, "symbols per frame");
    cmd_sweep->add_flag("--coded", sw_coded, "convolutionally coded transmission");
    cmd_sweep->add_flag("--turbo", sw_turbo, "turbo (SISO + MAP) receiver");
    cmd_sweep->add_option("--turbo-iters", sw.turbo_iters, "turbo iterations");
    cmd_sweep->add_option("--info-bits", sw.info_bits, "info bits per coded block");
    cmd_sweep->add_option("--sweep", sw_sweep, "sweep axis: ebn0|users|iteration|none");
    cmd_sweep->add_option("--cov", sw_cov, "covariance source: true|estimated");
    cmd_sweep->add_option("--spadf-filters", sw_filters, "recomputed|shared");
    cmd_sweep->add_option("--selection", sw_selection, "dd_frame|dd_symbol|genie");
    cmd_sweep->add_option("--out", out_path, "CSV output path");
    cmd_sweep->add_option("--threads", threads, "worker count");

    auto* cmd_verify = app.add_subcommand("verify", "run the built-in oracle and identity checks");
    auto* cmd_list = app.add_subcommand("list-detectors", "print the available detector ids");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_list->parsed()) {
            for (const auto& [id, name] : mudsim::detector_names())
                if (id != mudsim::DetectorId::Optimal) std::printf("%s\n", name.c_str());
            return 0;
        }
        if (cmd_verify->parsed()) return run_verify();

        ExperimentSpec spec;
        if (cmd_run->parsed()) {
            spec = parse_spec_file(spec_path);
        } else {
            std::string text;
            text += "sweep = " + sw_sweep + "\n";
            text += "ebn0 = " + sw_ebn0 + "\n";
            text += "k = " + std::to_string(sw_k) + "\n";
            text += "n = " + std::to_string(sw.gain) + "\n";
            text += "lp = " + std::to_string(sw.paths) + "\n";
            text += "runs = " + std::to_string(sw.runs) + "\n";
            text += "symbols = " + std::to_string(sw.symbols) + "\n";
            text += "branches = " + std::to_string(sw.branches) + "\n";
            text += "seed = " + std::to_string(sw.seed) + "\n";
            text += "detectors = " + sw_detectors + "\n";
            text += std::string("coded = ") + (sw_coded || sw_turbo ? "1" : "0") + "\n";
            text += std::string("turbo = ") + (sw_turbo ? "1" : "0") + "\n";
            text += "turbo_iters = " + std::to_string(sw.turbo_iters) + "\n";
            text += "info_bits = " + std::to_string(sw.info_bits) + "\n";
            text += "cov = " + sw_cov + "\n";
            text += "spadf_filters = " + sw_filters + "\n";
            text += "selection = " + sw_selection + "\n";
            spec = parse_spec_text(text);
        }
        RunOptions opts;
        opts.threads = threads;
        opts.checkpoint_path = checkpoint;
        if (!out_path.empty() && checkpoint.empty() && cmd_run->parsed())
            opts.checkpoint_path = out_path + ".ckpt";
        const auto records = run_experiment(spec, opts);
        print_records(records);
        if (!out_path.empty()) {
            emit_results(records, spec, out_path);
            std::printf("wrote %s\n", out_path.c_str());
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
