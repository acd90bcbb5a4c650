#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>
#include <vector>

#include "stimkit/calibrate.hpp"
#include "stimkit/device.hpp"
#include "stimkit/energy.hpp"
#include "stimkit/errors.hpp"
#include "stimkit/reports.hpp"
#include "stimkit/serialization.hpp"
#include "stimkit/service.hpp"
#include "stimkit/signalgen.hpp"
#include "stimkit/study.hpp"

using namespace stimkit;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kValidation = 3, kState = 4, kIo = 5, kInternal = 1 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

// Writes to `path`, or stdout for "" and "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (path.empty() || path == "-") return;
        file_.open(path, std::ios::binary | std::ios::trunc);
        if (!file_) throw IoError("cannot write " + path);
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
    void close() {
        if (!file_.is_open()) return;
        file_.close();
        if (file_.fail()) throw IoError("write failed");
    }

private:
    std::ofstream file_;
};

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    return in;
}

DacLut load_lut(const std::string& path) {
    if (path.empty()) return DacLut::default_lut();
    auto in = open_input(path);
    return DacLut::read_csv(in);
}

// "1.0mA" is an amplitude that must sit on the ladder, "5" a ladder index.
std::size_t parse_ladder_level(const std::string& text, const char* field) {
    const auto ladder = AmplitudeLadder::standard();
    std::size_t used = 0;
    if (text.size() > 2 && text.compare(text.size() - 2, 2, "mA") == 0) {
        double mA = 0.0;
        try {
            mA = std::stod(text.substr(0, text.size() - 2), &used);
        } catch (const std::exception&) {
            throw UsageError(std::string(field) + ": cannot parse '" + text + "'");
        }
        if (used != text.size() - 2) throw UsageError(std::string(field) + ": cannot parse '" + text + "'");
        if (const auto level = ladder.find(mA)) return *level;
        throw ValidationError(field, text + " is not on the 0.5-3.0 mA ladder");
    }
    long index = 0;
    try {
        index = std::stol(text, &used);
    } catch (const std::exception&) {
        throw UsageError(std::string(field) + ": expected a ladder index or an amplitude like 1.0mA");
    }
    if (used != text.size()) throw UsageError(std::string(field) + ": expected a ladder index or an amplitude like 1.0mA");
    if (index < 0 || index >= static_cast<long>(kLadderSize)) {
        throw ValidationError(field, "ladder index must be in [0, 25]");
    }
    return static_cast<std::size_t>(index);
}

const std::map<std::string, std::string> kGroupingNames{{"single", "single"}, {"frequency-bands", "frequency-bands"}};
const std::map<std::string, PredictionMode> kModeNames{{"mean", PredictionMode::Mean},
                                                       {"matched", PredictionMode::MatchedLevel}};

GroupingPolicy make_policy(const std::string& grouping, Category single_reference = Category::Tonic100) {
    return grouping == "frequency-bands" ? GroupingPolicy::frequency_bands()
                                         : GroupingPolicy::single_reference(single_reference);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string category = "tonic100";
    std::string level;
    std::optional<double> amp_mA;
    double sample_rate = kDefaultSampleRateHz;
    std::string out;
    bool frame = false;
    std::string lut;
};

int run_synth(const SynthArgs& a) {
    const auto category = parse_category(a.category);
    PatternSpec spec;
    if (a.amp_mA) {
        spec.category = category;
        spec.amplitude_mA = *a.amp_mA;
    } else {
        spec = PatternSpec::at_level(category, a.level.empty() ? 5 : parse_ladder_level(a.level, "level"));
    }
    spec.validate();
    const auto signal = synthesize(spec, a.sample_rate);

    if (!a.out.empty()) {
        Output out(a.out);
        write_signal_csv(signal, out.stream());
        out.close();
    }
    auto& log = a.out == "-" ? std::cerr : std::cout;
    log << "category      " << to_string(category) << '\n'
        << "amplitude_mA  " << fmt("%.3f", spec.amplitude_mA) << '\n'
        << "pulses        " << signal.pulses().size() << '\n'
        << "samples       " << signal.size() << '\n'
        << "energy_A2s    " << fmt("%.9e", closed_form_energy(spec).a2s()) << '\n'
        << "sampled_A2s   " << fmt("%.9e", signal_energy(signal).a2s()) << '\n'
        << "net_charge_As " << fmt("%.3e", signal.net_charge() * 1e-3) << '\n';
    if (a.frame) {
        const auto frame = encode(StimCommand::from_pattern(spec), load_lut(a.lut));
        log << "frame         " << to_hex(frame) << '\n';
    }
    return kOk;
}

struct PredictArgs {
    std::vector<std::string> refs;
    std::vector<std::string> levels;
    std::string grouping = "single";
    PredictionMode mode = PredictionMode::Mean;
    std::string x;
    std::string out;
    bool json = false;
};

int run_predict(const PredictArgs& a) {
    if (a.refs.size() != a.levels.size()) throw UsageError("every --ref needs a matching --level");
    if (a.grouping == "single" && a.refs.size() != 1) throw UsageError("single grouping takes exactly one --ref");
    if (!a.x.empty() && a.mode != PredictionMode::MatchedLevel) throw UsageError("--x requires --mode matched");

    const auto profiles = build_all_profiles();
    std::map<Category, CalibrationPoint> references;
    for (std::size_t i = 0; i < a.refs.size(); ++i) {
        const auto c = parse_category(a.refs[i]);
        if (references.contains(c)) throw UsageError("duplicate --ref " + a.refs[i]);
        references.emplace(c, make_calibration_point(c, parse_ladder_level(a.levels[i], "level"),
                                                      profiles[index_of(c)]));
    }
    PredictOptions options;
    options.mode = a.mode;
    if (!a.x.empty()) options.matched_level = parse_ladder_level(a.x, "x");

    const auto policy = make_policy(a.grouping, references.begin()->first);
    const auto predictions = predict_all(references, profiles, policy, options);

    Output out(a.out);
    if (a.json) {
        Json rows = Json::array();
        for (const auto& [c, p] : predictions) rows.push_back(to_json(p));
        out.stream() << rows.dump(2) << '\n';
    } else {
        write_predictions_csv(predictions, out.stream());
    }
    out.close();
    return kOk;
}

struct SimulateArgs {
    std::size_t n = 13;
    double noise = 0.0;
    std::uint64_t seed = 0;
    std::string grouping = "single";
    std::size_t min_level = 0;
    std::size_t max_level = kLadderSize - 1;
    std::string out_dir;
};

int run_simulate(const SimulateArgs& a) {
    CohortOptions options;
    options.participants = a.n;
    options.noise_sigma = a.noise;
    options.seed = a.seed;
    options.min_reference_level = a.min_level;
    options.max_reference_level = a.max_level;

    const auto profiles = build_all_profiles();
    const auto cohort = simulate_cohort(options, profiles);
    std::vector<ParticipantCalibration> calibrations;
    for (const auto& s : cohort) calibrations.push_back(calibration_of(s));
    const auto matrix = score_matrix(calibrations, make_policy(a.grouping), profiles);

    if (!a.out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(a.out_dir, ec);
        if (ec) throw IoError("cannot create " + a.out_dir + ": " + ec.message());
        Output cohort_out((fs::path(a.out_dir) / "cohort.ndjson").string());
        write_cohort_ndjson(cohort, cohort_out.stream());
        cohort_out.close();
        Output participants((fs::path(a.out_dir) / "participant_scores.csv").string());
        write_participant_scores_csv(matrix, participants.stream());
        participants.close();
        Output categories((fs::path(a.out_dir) / "category_scores.csv").string());
        write_category_scores_csv(matrix, categories.stream());
        categories.close();
    }
    write_participant_scores_csv(matrix, std::cout);
    for (const auto& s : matrix.skipped) std::cerr << "skipped " << s.participant_id << ": " << s.reason << '\n';
    return kOk;
}

int run_profiles(const std::string& out_path, bool json) {
    const auto profiles = build_all_profiles();
    Output out(out_path);
    if (json) {
        Json rows = Json::array();
        for (const auto& p : profiles) rows.push_back(to_json(p));
        out.stream() << rows.dump(2) << '\n';
    } else {
        write_profiles_csv(profiles, out.stream());
    }
    out.close();
    return kOk;
}

int run_summarize(const std::string& cohort_path, const std::string& out_path, bool json) {
    auto in = open_input(cohort_path);
    const auto cohort = read_cohort_ndjson(in);
    const auto summary = summarize_naturalness(cohort);
    const auto report = improvement_report(summary);
    Output out(out_path);
    if (json) {
        Json j;
        j["ranking"] = to_json(summary);
        j["improvement"] = to_json(report);
        out.stream() << j.dump(2) << '\n';
    } else {
        write_naturalness_csv(summary, out.stream());
        out.stream() << '\n'
                     << "best_vs_worst," << to_string(report.best) << ',' << to_string(report.worst) << ','
                     << fmt("%.1f", report.best_vs_worst_percent) << '\n';
        for (const auto& d : report.same_frequency) {
            out.stream() << "same_frequency," << to_string(d.modulated) << ',' << to_string(d.tonic) << ','
                         << fmt("%.1f", d.percent) << '\n';
        }
    }
    out.close();
    return kOk;
}

int run_replay(const std::string& frames_path, const std::string& lut_path, double sample_rate) {
    auto in = open_input(frames_path);
    VirtualDevice device(load_lut(lut_path), sample_rate);
    std::string line;
    std::size_t n = 0;
    bool rejected = false;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') {
            continue;
        }
        ++n;
        std::vector<std::uint8_t> bytes;
        try {
            bytes = from_hex(line);
        } catch (const Error& e) {
            std::cout << n << ",error,," << e.what() << '\n';
            rejected = true;
            continue;
        }
        const auto r = device.handle(bytes);
        std::cout << n << ',' << (r.ok ? to_string(r.opcode) : std::string_view("error")) << ','
                  << fmt("%.6f", r.started_at_s) << ',';
        if (!r.ok) {
            std::cout << r.message;
            rejected = true;
        } else if (r.execution) {
            std::cout << r.execution->signal.pulses().size() << " pulses "
                      << fmt("%.9e", signal_energy(r.execution->signal).a2s()) << " A2s";
        }
        std::cout << '\n';
    }
    std::cout << "clock_s," << fmt("%.6f", device.clock()) << '\n';
    return rejected ? kValidation : kOk;
}

int run_dac(const std::string& lut_path) {
    const auto lut = load_lut(lut_path);
    const auto ladder = AmplitudeLadder::standard();
    double worst = 0.0;
    std::cout << "level_index,amplitude_mA,code,output_mA,error_mA\n";
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        const auto r = can_realize(ladder[i], lut);
        worst = std::max(worst, r.error_mA);
        std::cout << i << ',' << fmt("%.1f", ladder[i]) << ',' << r.code << ',' << fmt("%.6f", r.output_mA) << ','
                  << fmt("%.6f", r.error_mA) << '\n';
    }
    std::cout << "max_error_mA," << fmt("%.6f", worst) << '\n';
    return kOk;
}

int run_serve(ServiceConfig config) {
    // The environment variable wins over a configured directory.
    config.data_dir = resolve_data_dir(config.data_dir);
    config.validate();

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    SessionService service(config);
    HttpServer server(service, config.cors_origins);
    const int port = server.bind(config.host, config.port);
    std::cerr << "stimkit serving " << service.session_ids().size() << " session(s) from " << config.data_dir.string()
              << " on http://" << config.host << ':' << port << '\n';

    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    server.listen();
    // listen() can also return on its own; wake the waiter so it can exit.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Electrotactile stimulation toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    const auto categories = [] {
        std::vector<std::string> names;
        for (auto c : kAllCategories) names.emplace_back(to_string(c));
        return names;
    }();

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Synthesize one stimulation pattern");
    synth_cmd->add_option("--category", synth.category, "Stimulation category")->check(CLI::IsMember(categories));
    auto* level_opt = synth_cmd->add_option("--level", synth.level, "Ladder index or amplitude like 1.0mA");
    synth_cmd->add_option("--amp-mA", synth.amp_mA, "Amplitude in mA (need not be on the ladder)")
        ->excludes(level_opt);
    synth_cmd->add_option("--sample-rate", synth.sample_rate, "Sampling rate in Hz")
        ->check(CLI::Range(kMinSampleRateHz, 1e7));
    synth_cmd->add_option("--out", synth.out, "Write the sampled signal as CSV ('-' for stdout)");
    synth_cmd->add_flag("--frame", synth.frame, "Print the encoded device frame");
    synth_cmd->add_option("--lut", synth.lut, "DAC lookup table CSV for --frame");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Predict levels for every category from calibrated references");
    predict_cmd->add_option("--ref", predict.refs, "Calibrated reference category (repeatable)")
        ->required()
        ->check(CLI::IsMember(categories));
    predict_cmd->add_option("--level", predict.levels, "Selected level for each --ref")->required();
    predict_cmd->add_option("--grouping", predict.grouping, "single or frequency-bands")
        ->check(CLI::IsMember(kGroupingNames));
    predict_cmd->add_option("--mode", predict.mode, "mean or matched")
        ->transform(CLI::CheckedTransformer(kModeNames));
    predict_cmd->add_option("--x", predict.x, "Shared level for matched mode");
    predict_cmd->add_option("--out", predict.out, "Output file (default stdout)");
    predict_cmd->add_flag("--json", predict.json, "JSON instead of CSV");

    SimulateArgs simulate;
    auto* simulate_cmd = app.add_subcommand("simulate", "Simulate a synthetic cohort and score predictions");
    simulate_cmd->add_option("--n", simulate.n, "Participants")->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    simulate_cmd->add_option("--noise", simulate.noise, "Relative energy noise sigma")->check(CLI::NonNegativeNumber);
    simulate_cmd->add_option("--seed", simulate.seed, "Random seed");
    simulate_cmd->add_option("--grouping", simulate.grouping, "single or frequency-bands")
        ->check(CLI::IsMember(kGroupingNames));
    simulate_cmd->add_option("--min-level", simulate.min_level, "Lowest Tonic 100 Hz reference level")
        ->check(CLI::Range(std::size_t{0}, kLadderSize - 1));
    simulate_cmd->add_option("--max-level", simulate.max_level, "Highest Tonic 100 Hz reference level")
        ->check(CLI::Range(std::size_t{0}, kLadderSize - 1));
    simulate_cmd->add_option("--out-dir", simulate.out_dir, "Write cohort.ndjson and score CSVs here");

    std::string profiles_out;
    bool profiles_json = false;
    auto* profiles_cmd = app.add_subcommand("profiles", "Energy of every category at every ladder level");
    profiles_cmd->add_option("--out", profiles_out, "Output file (default stdout)");
    profiles_cmd->add_flag("--json", profiles_json, "JSON instead of CSV");

    std::string cohort_path, summarize_out;
    bool summarize_json = false;
    auto* summarize_cmd = app.add_subcommand("summarize", "Naturalness ranking and improvement report");
    summarize_cmd->add_option("--cohort", cohort_path, "Cohort NDJSON")->required();
    summarize_cmd->add_option("--out", summarize_out, "Output file (default stdout)");
    summarize_cmd->add_flag("--json", summarize_json, "JSON instead of CSV");

    std::string frames_path, replay_lut;
    double replay_rate = kDefaultSampleRateHz;
    auto* replay_cmd = app.add_subcommand("replay", "Feed hex frames to a virtual device");
    replay_cmd->add_option("--frames", frames_path, "One hex frame per line")->required();
    replay_cmd->add_option("--lut", replay_lut, "DAC lookup table CSV");
    replay_cmd->add_option("--sample-rate", replay_rate, "Sampling rate in Hz")->check(CLI::Range(kMinSampleRateHz, 1e7));

    std::string dac_lut;
    auto* dac_cmd = app.add_subcommand("dac", "Realizability of the amplitude ladder under a LUT");
    dac_cmd->add_option("--lut", dac_lut, "DAC lookup table CSV");

    ServiceConfig serve;
    std::string serve_lut;
    auto* serve_cmd = app.add_subcommand("serve", "Run the session service");
    serve_cmd->set_config("--config", "", "TOML/INI configuration file");
    serve_cmd->add_option("--host", serve.host, "Listen address");
    serve_cmd->add_option("--port", serve.port, "Listen port (0 picks one)")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--data-dir", serve.data_dir, "Session storage (STIMKIT_DATA_DIR overrides)");
    serve_cmd->add_option("--sample-rate", serve.sample_rate_hz, "Sampling rate in Hz")
        ->check(CLI::Range(kMinSampleRateHz, 1e7));
    serve_cmd->add_option("--lut", serve_lut, "DAC lookup table CSV");
    serve_cmd->add_option("--cors", serve.cors_origins, "Allowed browser origins ('*' for any)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*synth_cmd) return run_synth(synth);
        if (*predict_cmd) return run_predict(predict);
        if (*simulate_cmd) return run_simulate(simulate);
        if (*profiles_cmd) return run_profiles(profiles_out, profiles_json);
        if (*summarize_cmd) return run_summarize(cohort_path, summarize_out, summarize_json);
        if (*replay_cmd) return run_replay(frames_path, replay_lut, replay_rate);
        if (*dac_cmd) return run_dac(dac_lut);
        if (*serve_cmd) {
            if (!serve_lut.empty()) serve.lut_path = serve_lut;
            return run_serve(serve);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kValidation;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kValidation;
    } catch (const StateError& e) {
        std::cerr << "state error: " << e.what() << '\n';
        return kState;
    } catch (const ConfigurationError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kState;
    } catch (const DegenerateProfileError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kState;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInternal;
    }
    return kUsage;
}
