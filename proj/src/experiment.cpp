#include "mudsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "mudsim/coded.hpp"
#include "mudsim/turbo.hpp"

namespace mudsim {

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    return out;
}

// "0:2:12" (start:step:stop inclusive) or "0,2,4"
std::vector<double> parse_grid(const std::string& value, const std::string& field) {
    std::vector<double> out;
    if (value.find(':') != std::string::npos) {
        const auto parts = split(value, ':');
        if (parts.size() != 3) throw std::invalid_argument(field + ": range must be start:step:stop");
        const double start = std::stod(parts[0]);
        const double step = std::stod(parts[1]);
        const double stop = std::stod(parts[2]);
        if (step <= 0.0) throw std::invalid_argument(field + ": range step must be positive");
        for (double v = start; v <= stop + 1e-12; v += step) out.push_back(v);
        return out;
    }
    for (const auto& p : split(value, ','))
        if (!p.empty()) out.push_back(std::stod(p));
    if (out.empty()) throw std::invalid_argument(field + ": empty list");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

const std::vector<std::pair<DetectorId, std::string>>& detector_names() {
    static const std::vector<std::pair<DetectorId, std::string>> names = {
        {DetectorId::Linear, "linear"},       {DetectorId::Sdf, "S-DF"},
        {DetectorId::Pdf, "P-DF"},            {DetectorId::Spadf, "SPA-DF"},
        {DetectorId::IssDf, "ISS-DF"},        {DetectorId::IspDf, "ISP-DF"},
        {DetectorId::IspasDf, "ISPAS-DF"},    {DetectorId::IspapDf, "ISPAP-DF"},
        {DetectorId::IspaspaDf, "ISPASPA-DF"},{DetectorId::Optimal, "optimal"}};
    return names;
}

std::string detector_name(DetectorId id) {
    for (const auto& [d, n] : detector_names())
        if (d == id) return n;
    return "?";
}

DetectorId parse_detector(const std::string& name) {
    const std::string want = lower(name);
    for (const auto& [d, n] : detector_names())
        if (lower(n) == want) return d;
    std::string valid;
    for (const auto& [d, n] : detector_names()) {
        if (!valid.empty()) valid += ", ";
        valid += n;
    }
    throw std::invalid_argument("unknown detector '" + name + "'; valid ids: " + valid);
}

void ExperimentSpec::validate() const {
    if (gain < 1) throw std::invalid_argument("n: processing gain must be positive");
    if (paths < 1) throw std::invalid_argument("lp: path count must be positive");
    if (paths - 1 > gain) throw std::invalid_argument("lp: channel order exceeds processing gain");
    if (runs < 1) throw std::invalid_argument("runs: must be positive");
    if (symbols < 1) throw std::invalid_argument("symbols: must be positive");
    if (frames_per_run < 1) throw std::invalid_argument("frames_per_run: must be positive");
    if (branches < 1) throw std::invalid_argument("branches: must be positive");
    if (stages < 2) throw std::invalid_argument("stages: iterative schemes need at least two stages");
    if (detectors.empty()) throw std::invalid_argument("detectors: need at least one detector");
    if (users.empty()) throw std::invalid_argument("k: need at least one user count");
    for (int k : users)
        if (k < 1) throw std::invalid_argument("k: user counts must be positive");
    if (ebn0_db.empty()) throw std::invalid_argument("ebn0: need at least one value");
    if (sweep == SweepAxis::Ebn0 && ebn0_db.size() < 1)
        throw std::invalid_argument("ebn0: sweep needs values");
    if (sweep != SweepAxis::Ebn0 && ebn0_db.size() != 1)
        throw std::invalid_argument("ebn0: scalar expected unless sweeping ebn0");
    if (sweep != SweepAxis::Users && users.size() != 1)
        throw std::invalid_argument("k: scalar expected unless sweeping k");
    if (sweep == SweepAxis::Iteration && !turbo)
        throw std::invalid_argument("sweep=iteration requires turbo mode");
    if (turbo && !coded) throw std::invalid_argument("turbo: requires coded mode");
    if (turbo) {
        if (turbo_iters < 1) throw std::invalid_argument("turbo_iters: must be positive");
        for (DetectorId d : detectors)
            if (d != DetectorId::Spadf && d != DetectorId::IspaspaDf)
                throw std::invalid_argument(
                    "detectors: turbo mode supports SPA-DF and ISPASPA-DF (detector '" +
                    detector_name(d) + "' has no SISO realization here)");
    }
    if (coded) {
        if (info_bits < 1) throw std::invalid_argument("info_bits: must be positive");
        if (interleaver_spread < 1) throw std::invalid_argument("interleaver_spread: must be positive");
        ConvCode code;
        code.constraint_length = code_constraint;
        code.g1 = code_g1;
        code.g2 = code_g2;
        code.validate();
        for (DetectorId d : detectors)
            if (d == DetectorId::Optimal)
                throw std::invalid_argument("detectors: 'optimal' has no coded realization");
    }
    if (amplitudes.size() != 0) {
        if (sweep == SweepAxis::Users)
            throw std::invalid_argument("amplitudes: cannot be fixed while sweeping k");
        if (amplitudes.size() != users.front())
            throw std::invalid_argument("amplitudes: length must equal k");
    }
    for (DetectorId d : detectors)
        if (d == DetectorId::Optimal)
            for (int k : users)
                if (k > 8)
                    throw std::invalid_argument(
                        "detectors: optimal ordering is capped at k <= 8 (factorial cost)");
}

std::size_t ExperimentSpec::sweep_points() const {
    switch (sweep) {
        case SweepAxis::Ebn0: return ebn0_db.size();
        case SweepAxis::Users: return users.size();
        case SweepAxis::Iteration: return static_cast<std::size_t>(turbo_iters);
        case SweepAxis::None: return 1;
    }
    return 1;
}

double ExperimentSpec::sweep_value(std::size_t point) const {
    switch (sweep) {
        case SweepAxis::Ebn0: return ebn0_db[point];
        case SweepAxis::Users: return users[point];
        case SweepAxis::Iteration: return static_cast<double>(point + 1);
        case SweepAxis::None: return ebn0_db.front();
    }
    return 0.0;
}

std::string ExperimentSpec::sweep_name() const {
    switch (sweep) {
        case SweepAxis::Ebn0: return "ebn0_db";
        case SweepAxis::Users: return "users";
        case SweepAxis::Iteration: return "iteration";
        case SweepAxis::None: return "ebn0_db";
    }
    return "?";
}

std::string ExperimentSpec::canonical() const {
    nlohmann::ordered_json j;
    switch (sweep) {
        case SweepAxis::Ebn0: j["sweep"] = "ebn0"; break;
        case SweepAxis::Users: j["sweep"] = "users"; break;
        case SweepAxis::Iteration: j["sweep"] = "iteration"; break;
        case SweepAxis::None: j["sweep"] = "none"; break;
    }
    j["ebn0_db"] = ebn0_db;
    j["k"] = users;
    j["n"] = gain;
    j["lp"] = paths;
    j["runs"] = runs;
    j["symbols"] = symbols;
    j["frames_per_run"] = frames_per_run;
    j["branches"] = branches;
    j["stages"] = stages;
    j["seed"] = seed;
    std::vector<std::string> dets;
    for (DetectorId d : detectors) dets.push_back(detector_name(d));
    j["detectors"] = dets;
    if (amplitudes.size() != 0) {
        std::vector<double> a(amplitudes.data(), amplitudes.data() + amplitudes.size());
        j["amplitudes"] = a;
    }
    j["coded"] = coded;
    j["turbo"] = turbo;
    j["turbo_iters"] = turbo_iters;
    j["info_bits"] = info_bits;
    j["interleaver_spread"] = interleaver_spread;
    j["code_constraint"] = code_constraint;
    char oct1[16], oct2[16];
    std::snprintf(oct1, sizeof(oct1), "%o", code_g1);
    std::snprintf(oct2, sizeof(oct2), "%o", code_g2);
    j["code_generators_octal"] = {std::string(oct1), std::string(oct2)};
    j["code_puncture"] = code_puncture;
    j["cov"] = cov == CovSource::True ? "true" : "estimated";
    j["spadf_filters"] = spadf_filters == SpadfFilters::Recomputed ? "recomputed" : "shared";
    switch (selection) {
        case Selection::DDFrame: j["selection"] = "dd_frame"; break;
        case Selection::DDSymbol: j["selection"] = "dd_symbol"; break;
        case Selection::Genie: j["selection"] = "genie"; break;
    }
    j["genie_feedback"] = genie_feedback;
    return j.dump(2);
}

ExperimentSpec parse_spec_text(const std::string& text) {
    ExperimentSpec spec;
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("spec line " + std::to_string(lineno) +
                                        ": expected key = value");
        kv[lower(trim(line.substr(0, eq)))] = trim(line.substr(eq + 1));
    }

    auto take = [&](const std::string& key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto parse_bool = [](const std::string& field, const std::string& v) {
        const std::string s = lower(v);
        if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
        if (s == "0" || s == "false" || s == "no" || s == "off") return false;
        throw std::invalid_argument(field + ": expected boolean, got '" + v + "'");
    };

    if (auto v = take("sweep")) {
        const std::string s = lower(*v);
        if (s == "ebn0") spec.sweep = SweepAxis::Ebn0;
        else if (s == "users" || s == "k") spec.sweep = SweepAxis::Users;
        else if (s == "iteration" || s == "iterations") spec.sweep = SweepAxis::Iteration;
        else if (s == "none" || s == "user") spec.sweep = SweepAxis::None;
        else throw std::invalid_argument("sweep: unknown axis '" + *v + "'");
    }
    if (auto v = take("ebn0")) spec.ebn0_db = parse_grid(*v, "ebn0");
    if (auto v = take("k")) {
        spec.users.clear();
        for (double d : parse_grid(*v, "k")) spec.users.push_back(static_cast<int>(d));
    }
    if (auto v = take("n")) spec.gain = std::stoi(*v);
    if (auto v = take("lp")) spec.paths = std::stoi(*v);
    if (auto v = take("runs")) spec.runs = std::stoi(*v);
    if (auto v = take("symbols")) spec.symbols = std::stoi(*v);
    if (auto v = take("frames_per_run")) spec.frames_per_run = std::stoi(*v);
    if (auto v = take("branches")) spec.branches = std::stoi(*v);
    if (auto v = take("stages")) spec.stages = std::stoi(*v);
    if (auto v = take("seed")) spec.seed = std::stoull(*v);
    if (auto v = take("detectors")) {
        spec.detectors.clear();
        for (const auto& name : split(*v, ','))
            if (!name.empty()) spec.detectors.push_back(parse_detector(name));
    }
    if (auto v = take("amplitudes")) {
        const auto vals = parse_grid(*v, "amplitudes");
        spec.amplitudes = Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    }
    if (auto v = take("coded")) spec.coded = parse_bool("coded", *v);
    if (auto v = take("turbo")) spec.turbo = parse_bool("turbo", *v);
    if (auto v = take("turbo_iters")) spec.turbo_iters = std::stoi(*v);
    if (auto v = take("info_bits")) spec.info_bits = std::stoi(*v);
    if (auto v = take("interleaver_spread")) spec.interleaver_spread = std::stoi(*v);
    if (auto v = take("code_constraint")) spec.code_constraint = std::stoi(*v);
    if (auto v = take("code_g1")) spec.code_g1 = static_cast<unsigned>(std::stoul(*v, nullptr, 8));
    if (auto v = take("code_g2")) spec.code_g2 = static_cast<unsigned>(std::stoul(*v, nullptr, 8));
    if (auto v = take("code_puncture")) spec.code_puncture = *v;
    if (auto v = take("cov")) {
        const std::string s = lower(*v);
        if (s == "true") spec.cov = CovSource::True;
        else if (s == "estimated") spec.cov = CovSource::Estimated;
        else throw std::invalid_argument("cov: expected true|estimated");
    }
    if (auto v = take("spadf_filters")) {
        const std::string s = lower(*v);
        if (s == "recomputed") spec.spadf_filters = SpadfFilters::Recomputed;
        else if (s == "shared") spec.spadf_filters = SpadfFilters::Shared;
        else throw std::invalid_argument("spadf_filters: expected recomputed|shared");
    }
    if (auto v = take("selection")) {
        const std::string s = lower(*v);
        if (s == "dd_frame") spec.selection = Selection::DDFrame;
        else if (s == "dd_symbol") spec.selection = Selection::DDSymbol;
        else if (s == "genie") spec.selection = Selection::Genie;
        else throw std::invalid_argument("selection: expected dd_frame|dd_symbol|genie");
    }
    if (auto v = take("genie_feedback")) spec.genie_feedback = parse_bool("genie_feedback", *v);

    if (!kv.empty()) throw std::invalid_argument("spec: unknown field '" + kv.begin()->first + "'");
    spec.validate();
    return spec;
}

ExperimentSpec parse_spec_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open spec file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_spec_text(ss.str());
}

std::uint64_t BerRecord::total_errors() const {
    std::uint64_t s = 0;
    for (auto e : errors) s += e;
    return s;
}

std::uint64_t BerRecord::total_bits() const {
    std::uint64_t s = 0;
    for (auto b : bits) s += b;
    return s;
}

double BerRecord::average_ber() const {
    const std::uint64_t b = total_bits();
    return b == 0 ? 0.0 : static_cast<double>(total_errors()) / static_cast<double>(b);
}

double BerRecord::user_ber(int k) const {
    return bits[k] == 0 ? 0.0 : static_cast<double>(errors[k]) / static_cast<double>(bits[k]);
}

void ber_count(const Mat& truth, const Mat& decided, std::uint64_t& errors, std::uint64_t& bits) {
    if (truth.rows() != decided.rows() || truth.cols() != decided.cols())
        throw std::invalid_argument("bit matrix shapes differ");
    errors = 0;
    bits = static_cast<std::uint64_t>(truth.size());
    for (Eigen::Index j = 0; j < truth.cols(); ++j)
        for (Eigen::Index i = 0; i < truth.rows(); ++i)
            if (truth(i, j) != decided(i, j)) ++errors;
}

WilsonInterval wilson_interval(std::uint64_t errors, std::uint64_t bits, double z) {
    WilsonInterval w;
    if (bits == 0) return w;
    const double n = static_cast<double>(bits);
    const double p = static_cast<double>(errors) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = p + z2 / (2.0 * n);
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    w.lo = std::max(0.0, (center - half) / denom);
    w.hi = std::min(1.0, (center + half) / denom);
    return w;
}

bool ordered_or_tied(std::uint64_t err_a, std::uint64_t bits_a, std::uint64_t err_b,
                     std::uint64_t bits_b) {
    const double pa = bits_a ? static_cast<double>(err_a) / bits_a : 0.0;
    const double pb = bits_b ? static_cast<double>(err_b) / bits_b : 0.0;
    if (pa <= pb) return true;
    const auto wa = wilson_interval(err_a, bits_a);
    const auto wb = wilson_interval(err_b, bits_b);
    return wa.lo <= wb.hi;  // overlap (pa > pb case)
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SIM_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

std::vector<std::array<std::uint8_t, 2>> parse_puncture(const std::string& text) {
    std::vector<std::array<std::uint8_t, 2>> pattern;
    for (const auto& col : split(text, ',')) {
        if (col.size() != 2 || (col[0] != '0' && col[0] != '1') || (col[1] != '0' && col[1] != '1'))
            throw std::invalid_argument("code_puncture: columns must be two bits, e.g. 11,10,01");
        pattern.push_back({static_cast<std::uint8_t>(col[0] - '0'),
                           static_cast<std::uint8_t>(col[1] - '0')});
    }
    if (pattern.empty()) throw std::invalid_argument("code_puncture: empty pattern");
    return pattern;
}

ConvCode make_code(const ExperimentSpec& spec) {
    ConvCode code;
    code.constraint_length = spec.code_constraint;
    code.g1 = spec.code_g1;
    code.g2 = spec.code_g2;
    code.puncture = parse_puncture(spec.code_puncture);
    code.validate();
    return code;
}

struct PointConfig {
    SystemConfig cfg;
    double ebn0 = 0.0;
};

PointConfig point_config(const ExperimentSpec& spec, std::size_t point) {
    PointConfig pc;
    pc.ebn0 = spec.sweep == SweepAxis::Ebn0 ? spec.ebn0_db[point] : spec.ebn0_db.front();
    pc.cfg.users = spec.sweep == SweepAxis::Users ? spec.users[point] : spec.users.front();
    pc.cfg.gain = spec.gain;
    pc.cfg.paths = spec.paths;
    pc.cfg.seed = spec.seed;
    if (spec.amplitudes.size() != 0) pc.cfg.amplitudes = spec.amplitudes;
    const double rate = spec.coded ? (make_code(spec).rate()) : 1.0;
    pc.cfg.noise_var = sigma_from_ebn0(pc.ebn0, 1.0, rate);
    return pc;
}

// filter banks under either covariance source. Estimated mode follows the
// sample estimators with the general (imperfect-feedback) filter expressions.
struct BankSet {
    CMat linear_w;
    FilterBank sdf_base;
    FilterBank full;  // P-DF structure
    CMat p_eff;
    double noise_var = 0.0;
    CovSource cov = CovSource::True;
    CMat r_hat;
    CMat b_hat;
};

FilterBank estimated_structured_bank(const CMat& r_hat, const CMat& b_hat, const CMat& p_eff,
                                     const std::vector<int>& order, bool parallel) {
    const int k_users = static_cast<int>(p_eff.cols());
    FilterBank bank;
    bank.structure = parallel ? FilterStructure::PDF : FilterStructure::SDF;
    bank.order = order;
    bank.feedforward = CMat::Zero(p_eff.rows(), k_users);
    bank.feedback = CMat::Zero(k_users, k_users);
    std::vector<int> detected;
    for (int pos = 0; pos < k_users; ++pos) {
        const int k = order[pos];
        std::vector<int> d;
        if (parallel) {
            for (int j = 0; j < k_users; ++j)
                if (j != k) d.push_back(j);
        } else {
            d = detected;
        }
        CMat bd(p_eff.rows(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) bd.col(i) = b_hat.col(d[i]);
        CVec w, f;
        general_df_filters(r_hat, bd, p_eff.col(k), w, f);
        bank.feedforward.col(k) = w;
        for (std::size_t i = 0; i < d.size(); ++i) bank.feedback(d[i], k) = f(i);
        detected.push_back(k);
    }
    return bank;
}

BankSet make_banks(const CMat& p_eff, double noise_var, const std::vector<int>& base,
                   CovSource cov, const CMat& r_frame) {
    BankSet b;
    b.p_eff = p_eff;
    b.noise_var = noise_var;
    b.cov = cov;
    if (cov == CovSource::True) {
        b.linear_w = linear_mmse_bank(p_eff, noise_var);
        b.sdf_base = sdf_filters_perfect(p_eff, base, noise_var);
        b.full = pdf_bank(p_eff, noise_var);
    } else {
        b.r_hat = estimate_R(r_frame);
        HermitianSolver solver(b.r_hat);
        b.linear_w = solver.solve(p_eff);
        const Mat lin_dec = linear_detect(b.linear_w, r_frame).decisions;
        b.b_hat = estimate_B(r_frame, lin_dec);
        b.sdf_base = estimated_structured_bank(b.r_hat, b.b_hat, p_eff, base, false);
        std::vector<int> ident(p_eff.cols());
        std::iota(ident.begin(), ident.end(), 0);
        b.full = estimated_structured_bank(b.r_hat, b.b_hat, p_eff, ident, true);
    }
    return b;
}

FilterBank order_bank(const BankSet& banks, const std::vector<int>& order) {
    if (banks.cov == CovSource::True)
        return sdf_filters_perfect(banks.p_eff, order, banks.noise_var);
    return estimated_structured_bank(banks.r_hat, banks.b_hat, banks.p_eff, order, false);
}

Mat detect_uncoded(DetectorId id, const ExperimentSpec& spec, const BankSet& banks,
                   const std::vector<int>& base, const CMat& r_frame, const Mat& truth) {
    const CMat& p_eff = banks.p_eff;
    const double noise_var = banks.noise_var;
    const int k_users = static_cast<int>(p_eff.cols());
    const int t = static_cast<int>(r_frame.cols());
    SpadfOptions opts;
    opts.branches = spec.branches;
    opts.filters = spec.spadf_filters;
    opts.selection = spec.selection;
    const Mat* truth_ptr = spec.selection == Selection::Genie ? &truth : nullptr;

    switch (id) {
        case DetectorId::Linear:
            return linear_detect(banks.linear_w, r_frame).decisions;
        case DetectorId::Sdf:
            return sdf_detect(banks.sdf_base, r_frame, base).decisions;
        case DetectorId::Pdf: {
            const Mat init = spec.genie_feedback ? truth
                                                 : linear_detect(banks.linear_w, r_frame).decisions;
            return pdf_detect(banks.full, r_frame, init).decisions;
        }
        case DetectorId::Spadf: {
            const Mat init = linear_detect(banks.linear_w, r_frame).decisions;
            if (opts.filters == SpadfFilters::Shared)
                return spadf_detect(p_eff, noise_var, base, opts, r_frame, truth_ptr, &banks.sdf_base,
                                    &init)
                    .decisions;
            if (banks.cov == CovSource::Estimated) {
                // recomputed branches under estimated covariance
                const auto perms = make_branch_permutations(k_users, opts.branches, base);
                detail::BranchSelector sel(k_users, t, opts.selection, truth_ptr);
                for (const auto& bp : perms) {
                    const FilterBank bank = order_bank(banks, bp.order);
                    sel.offer(sdf_detect(bank, r_frame, bp.order).soft);
                }
                return slice_all(sel.selected());
            }
            return spadf_detect(p_eff, noise_var, base, opts, r_frame, truth_ptr).decisions;
        }
        case DetectorId::Optimal:
            return optimal_order_detect(p_eff, noise_var, r_frame, spec.selection, truth_ptr).decisions;
        case DetectorId::IssDf:
        case DetectorId::IspDf:
        case DetectorId::IspasDf:
        case DetectorId::IspapDf:
        case DetectorId::IspaspaDf: {
            IterativeScheme scheme;
            scheme.stages = spec.stages;
            scheme.stage1 = (id == DetectorId::IssDf || id == DetectorId::IspDf) ? StageKind::SDF
                                                                                 : StageKind::SPADF;
            scheme.stage2 = (id == DetectorId::IssDf || id == DetectorId::IspasDf) ? StageKind::SDF
                            : (id == DetectorId::IspaspaDf)                        ? StageKind::SPADF
                                                                                   : StageKind::PDF;
            if (banks.cov == CovSource::True)
                return iterative_detect(p_eff, noise_var, base, scheme, opts, r_frame, truth_ptr)
                    .decisions;
            // estimated covariance path mirrors the structure with estimated banks
            Mat prev;
            if (scheme.stage1 == StageKind::SDF) {
                prev = sdf_detect(banks.sdf_base, r_frame, base).decisions;
            } else {
                const Mat init = linear_detect(banks.linear_w, r_frame).decisions;
                if (opts.filters == SpadfFilters::Shared) {
                    prev = spadf_detect(p_eff, noise_var, base, opts, r_frame, truth_ptr,
                                        &banks.sdf_base, &init)
                               .decisions;
                } else {
                    const auto perms = make_branch_permutations(k_users, opts.branches, base);
                    detail::BranchSelector sel(k_users, t, opts.selection, truth_ptr);
                    for (const auto& bp : perms) {
                        const FilterBank bank = order_bank(banks, bp.order);
                        sel.offer(sdf_detect(bank, r_frame, bp.order).soft);
                    }
                    prev = slice_all(sel.selected());
                }
            }
            std::vector<int> order = base;
            for (int stage = 2; stage <= scheme.stages; ++stage) {
                order = reversed(order);
                if (scheme.stage2 == StageKind::PDF) {
                    prev = pdf_detect(banks.full, r_frame, prev).decisions;
                } else if (scheme.stage2 == StageKind::SDF) {
                    const FilterBank bank = order_bank(banks, order);
                    const CMat zff = bank.feedforward.adjoint() * r_frame;
                    Mat current = prev;
                    for (int k : order) {
                        Eigen::RowVectorXcd z = zff.row(k);
                        for (int d = 0; d < k_users; ++d) {
                            const cplx fdk = bank.feedback(d, k);
                            if (fdk != cplx(0.0, 0.0))
                                z -= std::conj(fdk) * current.row(d).cast<cplx>();
                        }
                        for (int i = 0; i < t; ++i) current(k, i) = slicer(z(i));
                    }
                    prev = current;
                } else {
                    const auto perms = make_branch_permutations(k_users, opts.branches, order);
                    detail::BranchSelector sel(k_users, t, opts.selection, truth_ptr);
                    const CMat zff = banks.full.feedforward.adjoint() * r_frame;
                    for (const auto& bp : perms) {
                        CMat soft = CMat::Zero(k_users, t);
                        Mat current = prev;
                        for (int k : bp.order) {
                            Eigen::RowVectorXcd z = zff.row(k);
                            for (int d = 0; d < k_users; ++d) {
                                const cplx fdk = banks.full.feedback(d, k);
                                if (fdk != cplx(0.0, 0.0))
                                    z -= std::conj(fdk) * current.row(d).cast<cplx>();
                            }
                            soft.row(k) = z;
                            for (int i = 0; i < t; ++i) current(k, i) = slicer(z(i));
                        }
                        sel.offer(soft);
                    }
                    prev = slice_all(sel.selected());
                }
            }
            return prev;
        }
    }
    throw std::logic_error("unhandled detector");
}

CodedDetector coded_kind(DetectorId id) {
    switch (id) {
        case DetectorId::Linear: return CodedDetector::Linear;
        case DetectorId::Sdf: return CodedDetector::SDF;
        case DetectorId::Pdf: return CodedDetector::PDF;
        case DetectorId::Spadf: return CodedDetector::SPADF;
        case DetectorId::IssDf: return CodedDetector::ISS;
        case DetectorId::IspDf: return CodedDetector::ISP;
        case DetectorId::IspasDf: return CodedDetector::ISPAS;
        case DetectorId::IspapDf: return CodedDetector::ISPAP;
        case DetectorId::IspaspaDf: return CodedDetector::ISPASPA;
        default: throw std::invalid_argument("detector has no coded realization");
    }
}

// counters[point][detector][iteration? always 0][user]
struct RunCounters {
    // flattened: detector -> per-record-row -> per-user errors/bits
    std::vector<std::vector<std::vector<std::uint64_t>>> errors;
    std::vector<std::vector<std::vector<std::uint64_t>>> bits;
};

// executes one Monte Carlo run for one sweep point
RunCounters execute_run(const ExperimentSpec& spec, std::size_t point, std::uint64_t run_index) {
    PointConfig pc = point_config(spec, point);
    pc.cfg.seed = run_seed(spec.seed, run_index);
    Rng rng(pc.cfg.seed);

    const int k_users = pc.cfg.users;
    const int rows_per_detector =
        spec.sweep == SweepAxis::Iteration ? spec.turbo_iters : 1;
    RunCounters counters;
    counters.errors.assign(spec.detectors.size(),
                           std::vector<std::vector<std::uint64_t>>(
                               rows_per_detector, std::vector<std::uint64_t>(k_users, 0)));
    counters.bits = counters.errors;

    const SignatureModel model = gen_spreading(pc.cfg, rng);
    const ChannelRealization chan = gen_channel(pc.cfg, model, rng);
    const CMat p_eff = scaled_signatures(pc.cfg, chan);
    const std::vector<int> base = power_order(pc.cfg.amps());

    if (!spec.coded) {
        Mat truth(k_users, spec.symbols * spec.frames_per_run);
        CMat r_frame(pc.cfg.chips_window(), spec.symbols * spec.frames_per_run);
        for (int f = 0; f < spec.frames_per_run; ++f) {
            const FrameBatch frame = synthesize_frame(pc.cfg, model, chan, spec.symbols, rng);
            truth.middleCols(f * spec.symbols, spec.symbols) = frame.symbols;
            r_frame.middleCols(f * spec.symbols, spec.symbols) = frame.received;
        }
        const BankSet banks = make_banks(p_eff, pc.cfg.noise_var, base, spec.cov, r_frame);
        for (std::size_t d = 0; d < spec.detectors.size(); ++d) {
            const Mat decided = detect_uncoded(spec.detectors[d], spec, banks, base, r_frame, truth);
            for (int k = 0; k < k_users; ++k) {
                std::uint64_t e = 0;
                for (Eigen::Index i = 0; i < truth.cols(); ++i)
                    if (truth(k, i) != decided(k, i)) ++e;
                counters.errors[d][0][k] += e;
                counters.bits[d][0][k] += static_cast<std::uint64_t>(truth.cols());
            }
        }
        return counters;
    }

    // coded / turbo path
    const ConvCode code = make_code(spec);
    const int t = code.code_len(spec.info_bits);
    std::vector<Interleaver> interleavers;
    interleavers.reserve(k_users);
    for (int k = 0; k < k_users; ++k)
        interleavers.push_back(make_s_random_interleaver(t, spec.interleaver_spread, rng));
    const CodedFrameSetup setup = make_coded_frame(code, k_users, spec.info_bits, interleavers, rng);
    Mat truth_info(k_users, spec.info_bits);
    for (int k = 0; k < k_users; ++k)
        for (int i = 0; i < spec.info_bits; ++i) truth_info(k, i) = setup.info[k][i];

    const FrameBatch frame = synthesize_frame_with_symbols(pc.cfg, model, chan, setup.symbols, rng);

    for (std::size_t d = 0; d < spec.detectors.size(); ++d) {
        if (spec.turbo) {
            TurboOptions topts;
            topts.iterations = spec.turbo_iters;
            topts.branches = spec.branches;
            topts.scheme = spec.detectors[d] == DetectorId::IspaspaDf ? TurboScheme::Ispaspa
                                                                      : TurboScheme::Spadf;
            const TurboTrace trace =
                turbo_iterate(setup, p_eff, pc.cfg.noise_var, base, topts, frame.received);
            const int last = spec.turbo_iters - 1;
            for (int row = 0; row < rows_per_detector; ++row) {
                const int it = spec.sweep == SweepAxis::Iteration ? row : last;
                for (int k = 0; k < k_users; ++k) {
                    std::uint64_t e = 0;
                    for (int i = 0; i < spec.info_bits; ++i)
                        if (trace.decisions[it][k][i] != (truth_info(k, i) != 0.0)) ++e;
                    counters.errors[d][row][k] += e;
                    counters.bits[d][row][k] += static_cast<std::uint64_t>(spec.info_bits);
                }
            }
        } else {
            CodedOptions copts;
            copts.branches = spec.branches;
            copts.filters = spec.spadf_filters;
            const CodedDetectorOutput out = coded_iterative_detect(
                setup, p_eff, pc.cfg.noise_var, base, coded_kind(spec.detectors[d]), copts,
                frame.received);
            for (int k = 0; k < k_users; ++k) {
                std::uint64_t e = 0;
                for (int i = 0; i < spec.info_bits; ++i)
                    if (out.info[k][i] != (truth_info(k, i) != 0.0)) ++e;
                counters.errors[d][0][k] += e;
                counters.bits[d][0][k] += static_cast<std::uint64_t>(spec.info_bits);
            }
        }
    }
    return counters;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

struct CheckpointData {
    std::vector<char> done;  // flat (point * runs + run)
    std::vector<RunCounters> counters;
};

}  // namespace

std::vector<BerRecord> run_experiment(const ExperimentSpec& spec, const RunOptions& run_opts) {
    spec.validate();
    const std::size_t n_points = spec.sweep == SweepAxis::Iteration ? 1 : spec.sweep_points();
    const std::size_t record_rows = spec.sweep_points();
    const std::size_t total_runs = n_points * static_cast<std::size_t>(spec.runs);
    const std::uint64_t spec_hash = fnv1a(spec.canonical());

    std::vector<char> done(total_runs, 0);
    std::vector<RunCounters> results(total_runs);

    // resume from an existing checkpoint when the spec matches
    if (!run_opts.checkpoint_path.empty()) {
        std::ifstream f(run_opts.checkpoint_path);
        if (f) {
            std::string header;
            std::getline(f, header);
            char expect[64];
            std::snprintf(expect, sizeof(expect), "# mudsim-ckpt v1 %016llx",
                          static_cast<unsigned long long>(spec_hash));
            if (header == expect) {
                std::string line;
                while (std::getline(f, line)) {
                    std::istringstream is(line);
                    std::size_t flat;
                    if (!(is >> flat) || flat >= total_runs) continue;
                    RunCounters rc;
                    std::size_t n_det, n_rows, n_users;
                    is >> n_det >> n_rows >> n_users;
                    rc.errors.assign(n_det, std::vector<std::vector<std::uint64_t>>(
                                                n_rows, std::vector<std::uint64_t>(n_users, 0)));
                    rc.bits = rc.errors;
                    bool ok = static_cast<bool>(is);
                    for (std::size_t d = 0; d < n_det && ok; ++d)
                        for (std::size_t r = 0; r < n_rows && ok; ++r)
                            for (std::size_t u = 0; u < n_users && ok; ++u)
                                ok = static_cast<bool>(is >> rc.errors[d][r][u] >> rc.bits[d][r][u]);
                    if (ok) {
                        results[flat] = std::move(rc);
                        done[flat] = 1;
                    }
                }
            }
        }
    }

    const long long budget =
        run_opts.stop_after_runs < 0 ? static_cast<long long>(total_runs) : run_opts.stop_after_runs;
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < total_runs; ++i)
        if (!done[i]) todo.push_back(i);
    if (static_cast<long long>(todo.size()) > budget) todo.resize(static_cast<std::size_t>(budget));

    const int threads = std::max(1, std::min<int>(resolve_threads(run_opts.threads),
                                                  static_cast<int>(std::max<std::size_t>(todo.size(), 1))));
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t slot = next.fetch_add(1);
            if (slot >= todo.size()) break;
            const std::size_t flat = todo[slot];
            const std::size_t point = flat / spec.runs;
            const std::uint64_t run_index = flat % spec.runs;
            results[flat] = execute_run(spec, point, run_index);
            done[flat] = 1;
        }
    };
    {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // checkpoint rewritten in run order; append-only semantics per run record
    if (!run_opts.checkpoint_path.empty()) {
        std::ofstream f(run_opts.checkpoint_path, std::ios::trunc);
        char header[64];
        std::snprintf(header, sizeof(header), "# mudsim-ckpt v1 %016llx",
                      static_cast<unsigned long long>(spec_hash));
        f << header << '\n';
        for (std::size_t flat = 0; flat < total_runs; ++flat) {
            if (!done[flat]) continue;
            const RunCounters& rc = results[flat];
            f << flat << ' ' << rc.errors.size() << ' '
              << (rc.errors.empty() ? 0 : rc.errors[0].size()) << ' '
              << (rc.errors.empty() || rc.errors[0].empty() ? 0 : rc.errors[0][0].size());
            for (std::size_t d = 0; d < rc.errors.size(); ++d)
                for (std::size_t r = 0; r < rc.errors[d].size(); ++r)
                    for (std::size_t u = 0; u < rc.errors[d][r].size(); ++u)
                        f << ' ' << rc.errors[d][r][u] << ' ' << rc.bits[d][r][u];
            f << '\n';
        }
    }

    // deterministic reduction ordered by run index
    std::vector<BerRecord> records;
    for (std::size_t row = 0; row < record_rows; ++row) {
        const std::size_t point = spec.sweep == SweepAxis::Iteration ? 0 : row;
        const int k_users =
            spec.sweep == SweepAxis::Users ? spec.users[point] : spec.users.front();
        for (std::size_t d = 0; d < spec.detectors.size(); ++d) {
            BerRecord rec;
            rec.detector = detector_name(spec.detectors[d]);
            rec.sweep_name = spec.sweep_name();
            rec.sweep_value = spec.sweep_value(row);
            rec.errors.assign(k_users, 0);
            rec.bits.assign(k_users, 0);
            for (int run = 0; run < spec.runs; ++run) {
                const std::size_t flat = point * spec.runs + run;
                if (!done[flat]) continue;
                const std::size_t inner_row =
                    spec.sweep == SweepAxis::Iteration ? row : 0;
                for (int k = 0; k < k_users; ++k) {
                    rec.errors[k] += results[flat].errors[d][inner_row][k];
                    rec.bits[k] += results[flat].bits[d][inner_row][k];
                }
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

void emit_results(const std::vector<BerRecord>& records, const ExperimentSpec& spec,
                  const std::string& csv_path) {
    if (records.empty()) throw std::invalid_argument("no records to emit");
    std::ofstream csv(csv_path, std::ios::trunc | std::ios::binary);
    if (!csv) throw std::runtime_error("cannot open output file: " + csv_path);
    csv << "detector,sweep_name,sweep_value,user,ber,errors,bits,seed\n";
    for (const auto& rec : records) {
        for (std::size_t k = 0; k < rec.errors.size(); ++k) {
            const double ber = rec.bits[k] ? static_cast<double>(rec.errors[k]) / rec.bits[k] : 0.0;
            csv << rec.detector << ',' << rec.sweep_name << ',' << format_double(rec.sweep_value)
                << ',' << k << ',' << format_double(ber) << ',' << rec.errors[k] << ','
                << rec.bits[k] << ',' << spec.seed << '\n';
        }
    }
    csv.close();

    std::string json_path = csv_path;
    const std::string suffix = ".csv";
    if (json_path.size() >= suffix.size() &&
        json_path.compare(json_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        json_path.resize(json_path.size() - suffix.size());
    json_path += ".json";
    std::ofstream js(json_path, std::ios::trunc | std::ios::binary);
    if (!js) throw std::runtime_error("cannot open sidecar file: " + json_path);
    js << spec.canonical() << '\n';
}

std::vector<BerRecord> parse_results_csv(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw std::runtime_error("cannot open results file: " + csv_path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty results file");
    std::vector<BerRecord> records;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        const auto cols = split(line, ',');
        if (cols.size() != 8) throw std::runtime_error("malformed results row: " + line);
        const std::string det = cols[0];
        const std::string sweep_name = cols[1];
        const double sweep_value = std::stod(cols[2]);
        if (records.empty() || records.back().detector != det ||
            records.back().sweep_name != sweep_name ||
            records.back().sweep_value != sweep_value) {
            BerRecord rec;
            rec.detector = det;
            rec.sweep_name = sweep_name;
            rec.sweep_value = sweep_value;
            records.push_back(rec);
        }
        records.back().errors.push_back(std::stoull(cols[5]));
        records.back().bits.push_back(std::stoull(cols[6]));
    }
    return records;
}

}  // namespace mudsim
