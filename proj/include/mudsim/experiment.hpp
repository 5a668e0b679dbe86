#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mudsim/detectors.hpp"
#include "mudsim/signal_model.hpp"

namespace mudsim {

enum class DetectorId {
    Linear,
    Sdf,
    Pdf,
    Spadf,
    IssDf,
    IspDf,
    IspasDf,
    IspapDf,
    IspaspaDf,
    Optimal
};

// the nine receiver structures of the comparison set, plus the exhaustive
// ordering reference
const std::vector<std::pair<DetectorId, std::string>>& detector_names();
std::string detector_name(DetectorId id);
DetectorId parse_detector(const std::string& name);

enum class SweepAxis { None, Ebn0, Users, Iteration };
enum class CovSource { True, Estimated };

struct ExperimentSpec {
    SweepAxis sweep = SweepAxis::Ebn0;
    std::vector<double> ebn0_db = {8.0};
    std::vector<int> users = {8};
    int gain = 16;
    int paths = 3;
    int runs = 200;
    int symbols = 500;       // T per frame (uncoded)
    int frames_per_run = 1;
    int branches = 4;
    int stages = 2;
    std::uint64_t seed = 1;
    std::vector<DetectorId> detectors = {DetectorId::Sdf};
    Vec amplitudes;           // optional; empty = equal power

    bool coded = false;
    bool turbo = false;
    int turbo_iters = 4;
    int info_bits = 240;
    int interleaver_spread = 8;
    int code_constraint = 6;
    unsigned code_g1 = 053;
    unsigned code_g2 = 075;
    std::string code_puncture = "11,10,01";

    CovSource cov = CovSource::True;
    SpadfFilters spadf_filters = SpadfFilters::Recomputed;
    Selection selection = Selection::DDFrame;
    bool genie_feedback = false;  // P-DF feeds true symbols (analysis mode)

    void validate() const;
    std::string canonical() const;  // deterministic serialization (hashing, sidecar)
    std::size_t sweep_points() const;
    double sweep_value(std::size_t point) const;
    std::string sweep_name() const;
};

ExperimentSpec parse_spec_text(const std::string& text);
ExperimentSpec parse_spec_file(const std::string& path);

struct BerRecord {
    std::string detector;
    std::string sweep_name;
    double sweep_value = 0.0;
    std::vector<std::uint64_t> errors;  // per user
    std::vector<std::uint64_t> bits;    // per user
    double wall_time_s = 0.0;

    std::uint64_t total_errors() const;
    std::uint64_t total_bits() const;
    double average_ber() const;
    double user_ber(int k) const;
};

void ber_count(const Mat& truth, const Mat& decided, std::uint64_t& errors, std::uint64_t& bits);

struct WilsonInterval {
    double lo = 0.0;
    double hi = 1.0;
};
WilsonInterval wilson_interval(std::uint64_t errors, std::uint64_t bits, double z = 1.959963984540054);

// a <= b, or their Wilson intervals overlap
bool ordered_or_tied(std::uint64_t err_a, std::uint64_t bits_a, std::uint64_t err_b,
                     std::uint64_t bits_b);

struct RunOptions {
    int threads = 0;                 // 0: SIM_THREADS env or hardware default
    std::string checkpoint_path;     // empty: no checkpointing
    long long stop_after_runs = -1;  // test hook: stop after issuing this many runs
};

std::vector<BerRecord> run_experiment(const ExperimentSpec& spec, const RunOptions& opts = {});

void emit_results(const std::vector<BerRecord>& records, const ExperimentSpec& spec,
                  const std::string& csv_path);
std::vector<BerRecord> parse_results_csv(const std::string& csv_path);

int resolve_threads(int requested);

}  // namespace mudsim
