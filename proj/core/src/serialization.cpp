#include "stimkit/serialization.hpp"

#include <istream>
#include <ostream>

#include "stimkit/errors.hpp"

namespace stimkit {

namespace {

const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw ParseError(ParseError::Kind::Syntax, std::string("missing field '") + key + "'");
    }
    return j.at(key);
}

template <typename T>
T get_as(const Json& j, const char* key) {
    try {
        return field(j, key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::Syntax, std::string("field '") + key + "': " + e.what());
    }
}

std::size_t level_value(const Json& v, const std::string& where) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ParseError(ParseError::Kind::Syntax, where + " must be a non-negative integer");
    }
    const auto level = v.get<std::uint64_t>();
    if (level >= kLadderSize) throw ValidationError(where, "ladder index out of range");
    return static_cast<std::size_t>(level);
}

Json level_map(const std::map<Category, std::size_t>& m) {
    Json out = Json::object();
    for (auto c : kAllCategories) {
        if (auto it = m.find(c); it != m.end()) out[std::string(to_string(c))] = it->second;
    }
    return out;
}

std::map<Category, std::size_t> parse_level_map(const Json& j, const char* key) {
    std::map<Category, std::size_t> out;
    const Json& obj = field(j, key);
    if (!obj.is_object()) throw ParseError(ParseError::Kind::Syntax, std::string(key) + " must be an object");
    for (const auto& [name, value] : obj.items()) {
        out[parse_category(name)] = level_value(value, std::string(key) + "." + name);
    }
    return out;
}

}  // namespace

Json to_json(const SessionRecord& session) {
    Json j;
    j["participant_id"] = session.participant_id;
    j["rng_seed"] = session.rng_seed;
    j["phase"] = std::string(to_string(session.phase));
    j["calibration"] = level_map(session.calibration);
    Json sources = Json::object();
    for (auto c : kAllCategories) {
        if (auto it = session.calibration_source.find(c); it != session.calibration_source.end()) {
            sources[std::string(to_string(c))] = std::string(to_string(it->second));
        }
    }
    j["calibration_source"] = std::move(sources);
    j["adjusting"] = level_map(session.adjusting);
    Json trials = Json::array();
    for (const auto& t : session.trials) {
        Json tj;
        tj["index"] = t.index;
        tj["category"] = std::string(to_string(t.category));
        tj["rating"] = t.rating;
        trials.push_back(std::move(tj));
    }
    j["trials"] = std::move(trials);
    return j;
}

SessionRecord session_from_json(const Json& j) {
    SessionRecord s;
    s.participant_id = get_as<std::string>(j, "participant_id");
    s.rng_seed = get_as<std::uint64_t>(j, "rng_seed");
    s.phase = parse_phase(get_as<std::string>(j, "phase"));
    s.calibration = parse_level_map(j, "calibration");
    if (j.contains("calibration_source")) {
        for (const auto& [name, value] : j.at("calibration_source").items()) {
            if (!value.is_string()) throw ParseError(ParseError::Kind::Syntax, "calibration_source values are strings");
            s.calibration_source[parse_category(name)] = parse_source(value.get<std::string>());
        }
    } else {
        for (const auto& [c, level] : s.calibration) {
            (void)level;
            s.calibration_source[c] = CalibrationSource::Interactive;
        }
    }
    if (j.contains("adjusting")) s.adjusting = parse_level_map(j, "adjusting");
    const Json& trials = field(j, "trials");
    if (!trials.is_array()) throw ParseError(ParseError::Kind::Syntax, "trials must be an array");
    for (const auto& tj : trials) {
        Trial t;
        t.index = get_as<int>(tj, "index");
        t.category = parse_category(get_as<std::string>(tj, "category"));
        const Json& rating = field(tj, "rating");
        if (!rating.is_number_integer()) throw ValidationError("rating", "must be an integer in [0, 5]");
        t.rating = rating.get<int>();
        s.trials.push_back(t);
    }
    s.check_invariants();
    return s;
}

std::string dump_session(const SessionRecord& session) { return to_json(session).dump(2) + "\n"; }

SessionRecord parse_session(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(ParseError::Kind::Syntax, e.what());
    }
    return session_from_json(j);
}

void write_cohort_ndjson(const std::vector<SessionRecord>& cohort, std::ostream& out) {
    for (const auto& s : cohort) out << to_json(s).dump() << '\n';
}

std::vector<SessionRecord> read_cohort_ndjson(std::istream& in) {
    std::vector<SessionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse_session(line));
        } catch (const Error& e) {
            throw ParseError(ParseError::Kind::Syntax, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

Json to_json(const PatternSpec& spec) {
    Json j;
    j["category"] = std::string(to_string(spec.category));
    j["amplitude_mA"] = spec.amplitude_mA;
    const auto level = AmplitudeLadder::standard().find(spec.amplitude_mA);
    j["level_index"] = level ? Json(*level) : Json(nullptr);
    j["positive_width_us"] = spec.pulse.positive_us;
    j["negative_width_us"] = spec.pulse.negative_us;
    j["duration_s"] = spec.duration_s;
    j["ramp_up_s"] = spec.timing.ramp_up_s;
    j["hold_s"] = spec.timing.hold_s;
    j["ramp_down_s"] = spec.timing.ramp_down_s;
    return j;
}

PatternSpec pattern_from_json(const Json& j) {
    PatternSpec spec;
    spec.category = parse_category(get_as<std::string>(j, "category"));
    if (j.contains("amplitude_mA")) {
        spec.amplitude_mA = get_as<double>(j, "amplitude_mA");
    } else {
        spec = PatternSpec::at_level(spec.category, level_value(field(j, "level_index"), "level_index"));
    }
    if (j.contains("positive_width_us")) spec.pulse.positive_us = get_as<int>(j, "positive_width_us");
    if (j.contains("negative_width_us")) spec.pulse.negative_us = get_as<int>(j, "negative_width_us");
    if (j.contains("duration_s")) spec.duration_s = get_as<double>(j, "duration_s");
    if (j.contains("ramp_up_s")) spec.timing.ramp_up_s = get_as<double>(j, "ramp_up_s");
    if (j.contains("hold_s")) spec.timing.hold_s = get_as<double>(j, "hold_s");
    if (j.contains("ramp_down_s")) spec.timing.ramp_down_s = get_as<double>(j, "ramp_down_s");
    spec.validate();
    return spec;
}

Json to_json(const StimCommand& cmd) {
    Json j;
    j["opcode"] = std::string(to_string(cmd.opcode));
    j["waveform"] = static_cast<int>(cmd.waveform);
    j["freq_start_hz"] = cmd.freq_start_hz;
    j["freq_end_hz"] = cmd.freq_end_hz;
    j["ramp_up_ms"] = cmd.ramp_up_ms;
    j["hold_ms"] = cmd.hold_ms;
    j["ramp_down_ms"] = cmd.ramp_down_ms;
    j["positive_width_us"] = cmd.pulse.positive_us;
    j["negative_width_us"] = cmd.pulse.negative_us;
    j["amp_start_mA"] = cmd.amp_start_mA;
    j["amp_end_mA"] = cmd.amp_end_mA;
    Json channels = Json::array();
    for (std::size_t i = 0; i < kChannelCount; ++i) channels.push_back(std::string(to_string(cmd.channels[i])));
    j["channels"] = std::move(channels);
    j["duration_ms"] = cmd.duration_ms;
    return j;
}

Json to_json(const EnergyProfile& profile) {
    Json j;
    j["category"] = std::string(to_string(profile.category));
    j["label"] = std::string(display_name(profile.category));
    j["amplitudes_mA"] = profile.amplitudes_mA;
    Json energies = Json::array();
    for (const auto& e : profile.per_level) energies.push_back(e.a2s());
    j["energies_A2s"] = std::move(energies);
    j["mean_A2s"] = profile.mean.a2s();
    return j;
}

Json to_json(const PredictionResult& p) {
    Json j;
    j["category"] = std::string(to_string(p.category));
    j["reference"] = std::string(to_string(p.reference_used));
    j["predicted_energy_A2s"] = p.predicted_energy.a2s();
    j["predicted_level_index"] = p.predicted_level;
    j["predicted_amplitude_mA"] = p.predicted_amplitude_mA;
    return j;
}

Json to_json(const NaturalnessSummary& summary) {
    Json rows = Json::array();
    for (auto c : summary.ranking()) {
        const auto& s = summary.at(c);
        Json j;
        j["rank"] = s.rank;
        j["category"] = std::string(to_string(c));
        j["label"] = std::string(display_name(c));
        j["count"] = s.count;
        j["mean"] = s.mean;
        j["median"] = s.median;
        j["q1"] = s.q1;
        j["q3"] = s.q3;
        j["iqr"] = s.iqr;
        rows.push_back(std::move(j));
    }
    return rows;
}

Json to_json(const ImprovementReport& report) {
    Json j;
    j["best"] = std::string(to_string(report.best));
    j["worst"] = std::string(to_string(report.worst));
    j["best_vs_worst_percent"] = report.best_vs_worst_percent;
    Json deltas = Json::array();
    for (const auto& d : report.same_frequency) {
        Json dj;
        dj["modulated"] = std::string(to_string(d.modulated));
        dj["tonic"] = std::string(to_string(d.tonic));
        dj["percent"] = d.percent;
        deltas.push_back(std::move(dj));
    }
    j["same_frequency"] = std::move(deltas);
    return j;
}

Json to_json(const ScoreMatrix& m) {
    Json j;
    Json participants = Json::array();
    for (const auto& p : m.per_participant) {
        participants.push_back(Json{{"participant_id", p.participant_id}, {"r2_percent", p.r2_percent}});
    }
    j["per_participant"] = std::move(participants);
    Json categories = Json::array();
    for (const auto& c : m.per_category) {
        Json cj;
        cj["category"] = std::string(to_string(c.category));
        cj["r2_percent"] = c.r2_percent ? Json(*c.r2_percent) : Json(nullptr);
        if (!c.error.empty()) cj["error"] = c.error;
        categories.push_back(std::move(cj));
    }
    j["per_category"] = std::move(categories);
    j["participant_average"] = m.participant_average ? Json(*m.participant_average) : Json(nullptr);
    j["category_average"] = m.category_average ? Json(*m.category_average) : Json(nullptr);
    Json skipped = Json::array();
    for (const auto& s : m.skipped) skipped.push_back(Json{{"participant_id", s.participant_id}, {"reason", s.reason}});
    j["skipped"] = std::move(skipped);
    return j;
}

}  // namespace stimkit
