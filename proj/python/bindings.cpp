#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mudsim/bcjr.hpp"
#include "mudsim/experiment.hpp"
#include "mudsim/interleaver.hpp"
#include "mudsim/turbo.hpp"

namespace py = pybind11;
using namespace mudsim;

namespace {

SystemConfig make_config(int users, int gain, int paths, double noise_var, std::uint64_t seed) {
    SystemConfig cfg;
    cfg.users = users;
    cfg.gain = gain;
    cfg.paths = paths;
    cfg.noise_var = noise_var;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

struct Scenario {
    SystemConfig cfg;
    SignatureModel model;
    ChannelRealization chan;
};

Scenario make_scenario(int users, int gain, int paths, double noise_var, std::uint64_t seed) {
    Scenario s;
    s.cfg = make_config(users, gain, paths, noise_var, seed);
    Rng rng(seed);
    s.model = gen_spreading(s.cfg, rng);
    s.chan = gen_channel(s.cfg, s.model, rng);
    return s;
}

ExperimentSpec spec_from_text(const std::string& text) { return parse_spec_text(text); }

py::dict record_to_dict(const BerRecord& r) {
    py::dict d;
    d["detector"] = r.detector;
    d["sweep_name"] = r.sweep_name;
    d["sweep_value"] = r.sweep_value;
    d["errors"] = r.errors;
    d["bits"] = r.bits;
    d["average_ber"] = r.average_ber();
    return d;
}

}  // namespace

PYBIND11_MODULE(_mudsim, m) {
    m.doc() = "MMSE decision-feedback multiuser detection simulator";

    py::register_exception<SingularMatrixError>(m, "SingularMatrixError");

    m.def("sigma_from_ebn0", &sigma_from_ebn0, py::arg("ebn0_db"), py::arg("amplitude") = 1.0,
          py::arg("code_rate") = 1.0);

    py::class_<Scenario>(m, "Scenario")
        .def(py::init(&make_scenario), py::arg("users"), py::arg("gain"), py::arg("paths"),
             py::arg("noise_var"), py::arg("seed"))
        .def_property_readonly("chips", [](const Scenario& s) { return s.model.chips; })
        .def_property_readonly("taps", [](const Scenario& s) { return s.chan.taps; })
        .def_property_readonly("signatures", [](const Scenario& s) { return s.chan.effective; })
        .def("frame",
             [](const Scenario& s, int symbols, std::uint64_t seed) {
                 Rng rng(seed);
                 const auto f = synthesize_frame(s.cfg, s.model, s.chan, symbols, rng);
                 return py::make_tuple(f.symbols, f.received);
             },
             py::arg("symbols"), py::arg("seed"));

    m.def("build_true_R", &build_true_R, py::arg("signatures"), py::arg("noise_var"));
    m.def("estimate_R", &estimate_R, py::arg("frames"));
    m.def("estimate_B", &estimate_B, py::arg("frames"), py::arg("decisions"));
    m.def("linear_mmse_bank", &linear_mmse_bank, py::arg("signatures"), py::arg("noise_var"));

    m.def(
        "sdf_bank",
        [](const CMat& p, const std::vector<int>& order, double nv) {
            const auto bank = sdf_filters_perfect(p, order, nv);
            return py::make_tuple(bank.feedforward, bank.feedback);
        },
        py::arg("signatures"), py::arg("order"), py::arg("noise_var"));

    m.def(
        "detect",
        [](const std::string& detector, const CMat& p, double noise_var, const CMat& r_frame,
           int branches, const std::string& filters, const std::string& selection) {
            ExperimentSpec spec;
            spec.branches = branches;
            spec.spadf_filters = filters == "shared" ? SpadfFilters::Shared : SpadfFilters::Recomputed;
            spec.selection = selection == "dd_symbol" ? Selection::DDSymbol : Selection::DDFrame;
            const DetectorId id = parse_detector(detector);
            const int k = static_cast<int>(p.cols());
            std::vector<int> base(k);
            std::iota(base.begin(), base.end(), 0);
            SpadfOptions opts;
            opts.branches = spec.branches;
            opts.filters = spec.spadf_filters;
            opts.selection = spec.selection;
            switch (id) {
                case DetectorId::Linear:
                    return linear_detect(linear_mmse_bank(p, noise_var), r_frame).decisions;
                case DetectorId::Sdf:
                    return sdf_detect(sdf_filters_perfect(p, base, noise_var), r_frame, base).decisions;
                case DetectorId::Pdf: {
                    const Mat init =
                        linear_detect(linear_mmse_bank(p, noise_var), r_frame).decisions;
                    return pdf_detect(pdf_bank(p, noise_var), r_frame, init).decisions;
                }
                case DetectorId::Spadf:
                    return spadf_detect(p, noise_var, base, opts, r_frame).decisions;
                case DetectorId::Optimal:
                    return optimal_order_detect(p, noise_var, r_frame, opts.selection).decisions;
                default: {
                    IterativeScheme scheme;
                    scheme.stage1 = (id == DetectorId::IssDf || id == DetectorId::IspDf)
                                        ? StageKind::SDF
                                        : StageKind::SPADF;
                    scheme.stage2 = (id == DetectorId::IssDf || id == DetectorId::IspasDf)
                                        ? StageKind::SDF
                                    : (id == DetectorId::IspaspaDf) ? StageKind::SPADF
                                                                    : StageKind::PDF;
                    return iterative_detect(p, noise_var, base, scheme, opts, r_frame).decisions;
                }
            }
        },
        py::arg("detector"), py::arg("signatures"), py::arg("noise_var"), py::arg("r_frame"),
        py::arg("branches") = 4, py::arg("filters") = "recomputed",
        py::arg("selection") = "dd_frame");

    m.def("detector_names", [] {
        std::vector<std::string> names;
        for (const auto& [id, name] : detector_names()) names.push_back(name);
        return names;
    });

    m.def(
        "conv_encode",
        [](const std::vector<int>& info) {
            ConvCode code;
            Bits b(info.begin(), info.end());
            const Bits out = conv_encode(code, b);
            return std::vector<int>(out.begin(), out.end());
        },
        py::arg("info_bits"));
    m.def(
        "viterbi_decode",
        [](const std::vector<int>& coded, int info_len) {
            ConvCode code;
            Bits b(coded.begin(), coded.end());
            const Bits out = viterbi_decode(code, b, info_len);
            return std::vector<int>(out.begin(), out.end());
        },
        py::arg("code_bits"), py::arg("info_len"));
    m.def(
        "bcjr_decode",
        [](const std::vector<double>& channel_llrs, int info_len) {
            ConvCode code;
            const auto res = bcjr_decode(code, {}, channel_llrs, info_len);
            return py::make_tuple(res.extrinsic, res.app_info);
        },
        py::arg("channel_llrs"), py::arg("info_len"));
    m.def(
        "s_random_interleaver",
        [](int block, int spread, std::uint64_t seed) {
            Rng rng(seed);
            return make_s_random_interleaver(block, spread, rng).perm;
        },
        py::arg("block"), py::arg("spread"), py::arg("seed"));

    m.def(
        "run_experiment",
        [](const std::string& spec_text, int threads) {
            const ExperimentSpec spec = spec_from_text(spec_text);
            RunOptions opts;
            opts.threads = threads;
            const auto recs = run_experiment(spec, opts);
            py::list out;
            for (const auto& r : recs) out.append(record_to_dict(r));
            return out;
        },
        py::arg("spec_text"), py::arg("threads") = 0);

    m.def("wilson_interval", [](std::uint64_t errors, std::uint64_t bits) {
        const auto w = wilson_interval(errors, bits);
        return py::make_tuple(w.lo, w.hi);
    });
}
