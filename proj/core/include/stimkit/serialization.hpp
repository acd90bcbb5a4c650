#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stimkit/calibrate.hpp"
#include "stimkit/device.hpp"
#include "stimkit/energy.hpp"
#include "stimkit/signalgen.hpp"
#include "stimkit/study.hpp"

namespace stimkit {

using Json = nlohmann::ordered_json;

// Session document:
//   {participant_id, rng_seed, phase, calibration: {category: level},
//    calibration_source: {category: "interactive"|"predicted"},
//    adjusting: {category: level}, trials: [{index, category, rating}]}
// Keys are emitted in a fixed order so save -> load -> save is byte-identical.
Json to_json(const SessionRecord& session);
SessionRecord session_from_json(const Json& j);

std::string dump_session(const SessionRecord& session);
SessionRecord parse_session(const std::string& text);

// One compact session document per line.
void write_cohort_ndjson(const std::vector<SessionRecord>& cohort, std::ostream& out);
std::vector<SessionRecord> read_cohort_ndjson(std::istream& in);

Json to_json(const PatternSpec& spec);
PatternSpec pattern_from_json(const Json& j);

Json to_json(const StimCommand& cmd);

Json to_json(const EnergyProfile& profile);
Json to_json(const PredictionResult& prediction);
Json to_json(const NaturalnessSummary& summary);
Json to_json(const ImprovementReport& report);
Json to_json(const ScoreMatrix& matrix);

}  // namespace stimkit
