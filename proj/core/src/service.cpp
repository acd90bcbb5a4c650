#include "stimkit/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "stimkit/energy.hpp"
#include "stimkit/errors.hpp"
#include "stimkit/signalgen.hpp"

namespace stimkit {

namespace fs = std::filesystem;

namespace {

class NotFound : public Error {
public:
    using Error::Error;
};

ServiceResponse json_response(int status, const Json& body) {
    return ServiceResponse{status, "application/json", body.dump(2) + "\n"};
}

ServiceResponse error_response(int status, std::string_view kind, const std::string& message) {
    Json body;
    body["error"] = Json{{"kind", kind}, {"message", message}};
    return json_response(status, body);
}

std::vector<std::string_view> split_path(std::string_view path) {
    std::vector<std::string_view> parts;
    while (!path.empty()) {
        const auto slash = path.find('/');
        const auto part = path.substr(0, slash);
        if (!part.empty()) parts.push_back(part);
        if (slash == std::string_view::npos) break;
        path.remove_prefix(slash + 1);
    }
    return parts;
}

Json parse_body(std::string_view body) {
    if (body.find_first_not_of(" \t\r\n") == std::string_view::npos) return Json::object();
    Json j;
    try {
        j = Json::parse(body);
    } catch (const Json::parse_error& e) {
        throw ParseError(ParseError::Kind::Syntax, std::string("request body: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("body", "expected a JSON object");
    return j;
}

std::string require_string(const Json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(key, "missing");
    if (!j.at(key).is_string()) throw ValidationError(key, "expected a string");
    return j.at(key).get<std::string>();
}

std::optional<std::int64_t> optional_integer(const Json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_number_integer()) throw ValidationError(key, "expected an integer");
    return j.at(key).get<std::int64_t>();
}

std::int64_t parse_integer(std::string_view text, const char* field) {
    std::int64_t value = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end || text.empty()) {
        throw ValidationError(field, "expected an integer, got '" + std::string(text) + "'");
    }
    return value;
}

std::size_t ladder_index(std::int64_t value, const char* field) {
    if (value < 0 || value >= static_cast<std::int64_t>(kLadderSize)) {
        throw ValidationError(field, "ladder index must be in [0, " + std::to_string(kLadderSize - 1) + "]");
    }
    return static_cast<std::size_t>(value);
}

GroupingPolicy parse_grouping(const Json& body) {
    const std::string grouping = body.contains("grouping") ? require_string(body, "grouping") : "single";
    if (grouping == "frequency-bands") {
        if (body.contains("reference")) throw ValidationError("reference", "only valid with single grouping");
        return GroupingPolicy::frequency_bands();
    }
    if (grouping != "single") throw ValidationError("grouping", "expected 'single' or 'frequency-bands'");
    const auto reference =
        body.contains("reference") ? parse_category(require_string(body, "reference")) : Category::Tonic100;
    return GroupingPolicy::single_reference(reference);
}

PredictOptions parse_predict_options(const Json& body) {
    PredictOptions options;
    const std::string mode = body.contains("mode") ? require_string(body, "mode") : "mean";
    if (mode == "matched") {
        options.mode = PredictionMode::MatchedLevel;
        if (const auto x = optional_integer(body, "x")) options.matched_level = ladder_index(*x, "x");
    } else if (mode != "mean") {
        throw ValidationError("mode", "expected 'mean' or 'matched'");
    } else if (body.contains("x")) {
        throw ValidationError("x", "only valid with matched mode");
    }
    return options;
}

Json session_json(const std::string& id, const SessionRecord& record) {
    Json j;
    j["id"] = id;
    const Json body = to_json(record);
    for (const auto& [key, value] : body.items()) j[key] = value;
    if (const auto next = record.next_trial()) {
        j["next_trial"] = Json{{"index", next->index}, {"category", to_string(next->category)}};
    } else {
        j["next_trial"] = nullptr;
    }
    return j;
}

void write_atomically(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw IoError("cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Numeric suffix of ids like "s000042", else 0.
std::size_t id_number(const std::string& id) {
    if (id.size() < 2 || id[0] != 's') return 0;
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), value);
    return (ec == std::errc{} && ptr == id.data() + id.size()) ? value : 0;
}

bool valid_id(std::string_view id) {
    return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    });
}

}  // namespace

fs::path resolve_data_dir(const fs::path& fallback) {
    if (const char* env = std::getenv("STIMKIT_DATA_DIR"); env != nullptr && *env != '\0') return fs::path(env);
    return fallback;
}

void ServiceConfig::validate() const {
    if (port < 0 || port > 65535) throw ValidationError("port", "must be in [0, 65535]");
    if (!(sample_rate_hz >= kMinSampleRateHz) || !std::isfinite(sample_rate_hz)) {
        throw ValidationError("sample_rate", "must be at least 100 kHz");
    }
    for (const auto& origin : cors_origins) {
        if (origin.empty()) throw ValidationError("cors", "empty origin");
    }
}

namespace {

DacLut load_lut(const std::optional<fs::path>& path) {
    if (!path) return DacLut::default_lut();
    std::ifstream in(*path);
    if (!in) throw IoError("cannot read LUT " + path->string());
    return DacLut::read_csv(in);
}

ServiceConfig with_data_dir(fs::path dir) {
    ServiceConfig config;
    config.data_dir = std::move(dir);
    return config;
}

}  // namespace

SessionService::SessionService(fs::path data_dir) : SessionService(with_data_dir(std::move(data_dir))) {}

SessionService::SessionService(const ServiceConfig& config)
    : data_dir_(config.data_dir),
      sample_rate_hz_(config.sample_rate_hz),
      profiles_(build_all_profiles()),
      lut_(load_lut(config.lut_path)) {
    config.validate();
    std::error_code ec;
    fs::create_directories(data_dir_ / "sessions", ec);
    if (ec) throw IoError("cannot create " + (data_dir_ / "sessions").string() + ": " + ec.message());
    write_atomically(data_dir_ / "sessions" / ".probe", "");
    fs::remove(data_dir_ / "sessions" / ".probe", ec);

    for (const auto& entry : fs::directory_iterator(data_dir_ / "sessions")) {
        if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
        const std::string id = entry.path().stem().string();
        if (!valid_id(id)) continue;
        auto slot = std::make_shared<Slot>();
        try {
            slot->record = parse_session(read_file(entry.path()));
        } catch (const IoError&) {
            throw;
        } catch (const Error& e) {
            throw IoError("corrupt session file " + entry.path().string() + ": " + e.what());
        }
        next_id_ = std::max(next_id_, id_number(id) + 1);
        sessions_.emplace(id, std::move(slot));
    }
}

SessionService::~SessionService() = default;

std::vector<std::string> SessionService::session_ids() const {
    std::shared_lock lock(sessions_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, slot] : sessions_) ids.push_back(id);
    return ids;
}

fs::path SessionService::session_path(const std::string& id) const { return data_dir_ / "sessions" / (id + ".json"); }

std::shared_ptr<SessionService::Slot> SessionService::find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
    return it->second;
}

void SessionService::persist(const std::string& id, const SessionRecord& record) const {
    write_atomically(session_path(id), dump_session(record));
}

void SessionService::emit(Slot& slot, std::string type, Json data) {
    slot.events.push_back(Event{slot.events.size() + 1, std::move(type), std::move(data)});
}

ServiceResponse SessionService::handle(std::string_view method, std::string_view path, const Query& query,
                                       std::string_view body) {
    try {
        const auto parts = split_path(path);
        const bool get = method == "GET";
        const bool post = method == "POST";
        auto route = [&](bool method_ok) {
            if (!method_ok) throw std::invalid_argument("method");
        };

        if (parts.size() == 1 && parts[0] == "profiles") {
            route(get);
            return profiles();
        }
        if (parts.size() == 2 && parts[0] == "signals" && parts[1] == "preview") {
            route(get);
            return preview(query);
        }
        if (!parts.empty() && parts[0] == "sessions") {
            if (parts.size() == 1) {
                route(get || post);
                return post ? create_session(body) : list_sessions();
            }
            const std::string id(parts[1]);
            if (parts.size() == 2) {
                route(get);
                return get_session(id);
            }
            if (parts.size() == 3) {
                const auto action = parts[2];
                if (action == "calibration") return route(post), calibrate(id, body);
                if (action == "predict") return route(post), predict(id, body);
                if (action == "summary") return route(get), summary(id);
                if (action == "play") return route(post), play(id, body);
                if (action == "events") return route(get), events(id, query);
            }
            if (parts.size() == 5 && parts[2] == "trials" && parts[4] == "rating") {
                route(post);
                return rate(id, parts[3], body);
            }
        }
        return error_response(404, "not_found", "no route for " + std::string(path));
    } catch (const std::invalid_argument&) {
        return error_response(405, "method_not_allowed", std::string(method) + " not allowed on " + std::string(path));
    } catch (const NotFound& e) {
        return error_response(404, "not_found", e.what());
    } catch (const ParseError& e) {
        return error_response(400, "parse", e.what());
    } catch (const ValidationError& e) {
        return error_response(400, "validation", e.what());
    } catch (const StateError& e) {
        return error_response(409, "state", e.what());
    } catch (const ConfigurationError& e) {
        return error_response(409, "configuration", e.what());
    } catch (const DegenerateProfileError& e) {
        return error_response(409, "configuration", e.what());
    } catch (const IoError& e) {
        return error_response(500, "io", e.what());
    } catch (const Json::exception& e) {
        return error_response(400, "validation", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

ServiceResponse SessionService::create_session(std::string_view body) {
    const Json j = parse_body(body);
    std::optional<std::string> participant;
    if (j.contains("participant_id")) {
        participant = require_string(j, "participant_id");
        if (participant->empty() || participant->size() > 64) {
            throw ValidationError("participant_id", "must be 1 to 64 characters");
        }
    }
    std::uint64_t seed = 0;
    if (j.contains("rng_seed")) {
        if (!j.at("rng_seed").is_number_unsigned()) throw ValidationError("rng_seed", "expected a non-negative integer");
        seed = j.at("rng_seed").get<std::uint64_t>();
    } else {
        std::random_device rd;
        seed = (static_cast<std::uint64_t>(rd()) << 32) | rd();
    }

    std::unique_lock lock(sessions_mutex_);
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%06zu", next_id_);
    const std::string id = buf;
    auto slot = std::make_shared<Slot>();
    slot->record = SessionRecord::start(participant.value_or(id), seed);
    persist(id, slot->record);
    ++next_id_;
    emit(*slot, "created", Json{{"id", id}});
    sessions_.emplace(id, slot);
    return json_response(201, session_json(id, slot->record));
}

ServiceResponse SessionService::list_sessions() const {
    Json rows = Json::array();
    for (const auto& id : session_ids()) {
        const auto slot = find(id);
        std::lock_guard lock(slot->mutex);
        rows.push_back(Json{{"id", id},
                            {"participant_id", slot->record.participant_id},
                            {"phase", to_string(slot->record.phase)}});
    }
    return json_response(200, rows);
}

ServiceResponse SessionService::get_session(const std::string& id) const {
    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    return json_response(200, session_json(id, slot->record));
}

ServiceResponse SessionService::calibrate(const std::string& id, std::string_view body) {
    const Json j = parse_body(body);
    const auto category = parse_category(require_string(j, "category"));
    const auto action = parse_action(require_string(j, "action"));

    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    auto next = calibration_step(slot->record, category, action);
    persist(id, next);
    slot->record = std::move(next);
    emit(*slot, "calibration",
         Json{{"category", to_string(category)},
              {"action", to_string(action)},
              {"level_index", slot->record.current_level(category)},
              {"phase", to_string(slot->record.phase)}});
    return json_response(200, session_json(id, slot->record));
}

ServiceResponse SessionService::predict(const std::string& id, std::string_view body) {
    const Json j = parse_body(body);
    const auto policy = parse_grouping(j);
    const auto options = parse_predict_options(j);
    bool apply = false;
    if (j.contains("apply")) {
        if (!j.at("apply").is_boolean()) throw ValidationError("apply", "expected a boolean");
        apply = j.at("apply").get<bool>();
    }

    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    const auto predictions = predict_for_session(slot->record, profiles_, policy, options);

    Json out;
    out["grouping"] = policy.mode() == GroupingPolicy::Mode::FrequencyBands ? "frequency-bands" : "single";
    Json rows = Json::array();
    for (const auto& [category, p] : predictions) {
        Json row = to_json(p);
        const auto r = can_realize(p.predicted_amplitude_mA, lut_);
        row["dac_code"] = r.code;
        row["dac_error_mA"] = r.error_mA;
        rows.push_back(std::move(row));
    }
    out["predictions"] = std::move(rows);
    out["applied"] = apply;
    if (apply) {
        auto next = apply_predictions(slot->record, predictions);
        persist(id, next);
        slot->record = std::move(next);
        emit(*slot, "predictions_applied", Json{{"count", predictions.size()}});
    }
    out["session"] = session_json(id, slot->record);
    return json_response(200, out);
}

ServiceResponse SessionService::rate(const std::string& id, std::string_view trial, std::string_view body) {
    const auto index = parse_integer(trial, "trial");
    const Json j = parse_body(body);
    const auto rating = optional_integer(j, "rating");
    if (!rating) throw ValidationError("rating", "missing");
    if (*rating < 0 || *rating > kMaxRating) throw ValidationError("rating", "must be an integer in [0, 5]");
    if (index < 1 || index > kTrialCount) throw ValidationError("trial", "index must be in [1, 24]");

    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    auto next = rate_trial(slot->record, static_cast<int>(index), static_cast<int>(*rating));
    persist(id, next);
    slot->record = std::move(next);
    emit(*slot, "rating", Json{{"index", index}, {"rating", *rating}, {"phase", to_string(slot->record.phase)}});
    return json_response(200, session_json(id, slot->record));
}

ServiceResponse SessionService::summary(const std::string& id) const {
    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    const auto& s = slot->record;
    const auto ladder = amplitude_ladder();

    Json out;
    out["id"] = id;
    out["participant_id"] = s.participant_id;
    out["phase"] = to_string(s.phase);
    out["interactive_calibrations"] = s.interactive_calibrations();
    out["calibration_reduction_percent"] = s.calibration_reduction_percent();
    out["trials_completed"] = s.trials.size();
    out["trials_total"] = kTrialCount;

    Json rows = Json::array();
    for (auto c : kAllCategories) {
        Json row;
        row["category"] = to_string(c);
        row["label"] = display_name(c);
        if (s.is_calibrated(c)) {
            const auto level = s.calibration.at(c);
            row["level_index"] = level;
            row["amplitude_mA"] = ladder[level];
            row["source"] = to_string(s.calibration_source.at(c));
            row["energy_A2s"] = profiles_[index_of(c)].per_level[level].a2s();
        } else {
            row["level_index"] = nullptr;
            row["amplitude_mA"] = nullptr;
            row["source"] = nullptr;
            row["energy_A2s"] = nullptr;
        }
        Json ratings = Json::array();
        double sum = 0.0;
        for (const auto& t : s.trials) {
            if (t.category != c) continue;
            ratings.push_back(t.rating);
            sum += t.rating;
        }
        row["mean_rating"] = ratings.empty() ? Json(nullptr) : Json(sum / static_cast<double>(ratings.size()));
        row["ratings"] = std::move(ratings);
        rows.push_back(std::move(row));
    }
    out["categories"] = std::move(rows);
    if (s.phase == Phase::Done) {
        out["naturalness"] = to_json(summarize_naturalness(std::span(&s, 1)));
    } else {
        out["naturalness"] = nullptr;
    }
    return json_response(200, out);
}

ServiceResponse SessionService::play(const std::string& id, std::string_view body) {
    const Json j = parse_body(body);
    const auto category = parse_category(require_string(j, "category"));
    const auto requested = optional_integer(j, "level_index");

    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    const std::size_t level =
        requested ? ladder_index(*requested, "level_index") : slot->record.current_level(category);
    const auto cmd = StimCommand::from_pattern(PatternSpec::at_level(category, level));
    const auto frame = encode(cmd, lut_);
    emit(*slot, "playing", Json{{"category", to_string(category)}, {"level_index", level}});
    const auto result = execute(cmd, lut_, sample_rate_hz_);
    const double energy = signal_energy(result.signal).a2s();
    emit(*slot, "finished",
         Json{{"category", to_string(category)}, {"level_index", level}, {"energy_A2s", energy}});

    Json out;
    out["category"] = to_string(category);
    out["level_index"] = level;
    out["frame_hex"] = to_hex(frame);
    out["amplitude_mA"] = result.amp_end_mA;
    out["pulses"] = result.signal.pulses().size();
    out["energy_A2s"] = energy;
    out["net_charge_As"] = result.signal.net_charge() * 1e-3;
    return json_response(200, out);
}

ServiceResponse SessionService::events(const std::string& id, const Query& query) const {
    std::size_t since = 0;
    if (const auto it = query.find("since"); it != query.end()) {
        const auto v = parse_integer(it->second, "since");
        if (v < 0) throw ValidationError("since", "must be non-negative");
        since = static_cast<std::size_t>(v);
    }
    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    std::string stream;
    for (const auto& e : slot->events) {
        if (e.seq <= since) continue;
        stream += "id: " + std::to_string(e.seq) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
    }
    return ServiceResponse{200, "text/event-stream", stream};
}

ServiceResponse SessionService::preview(const Query& query) const {
    const auto cat = query.find("category");
    if (cat == query.end()) throw ValidationError("category", "missing");
    const auto category = parse_category(cat->second);
    const auto lvl = query.find("level");
    if (lvl == query.end()) throw ValidationError("level", "missing");
    const auto level = ladder_index(parse_integer(lvl->second, "level"), "level");
    std::size_t points = kMaxPreviewPoints;
    if (const auto it = query.find("points"); it != query.end()) {
        const auto v = parse_integer(it->second, "points");
        if (v < 1 || v > static_cast<std::int64_t>(kMaxPreviewPoints)) {
            throw ValidationError("points", "must be in [1, 3000]");
        }
        points = static_cast<std::size_t>(v);
    }

    const auto spec = PatternSpec::at_level(category, level);
    const auto signal = synthesize(spec, sample_rate_hz_);
    const auto samples = signal.samples();
    const std::size_t n = std::min(points, samples.size());

    Json t = Json::array();
    Json i = Json::array();
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t lo = b * samples.size() / n;
        const std::size_t hi = (b + 1) * samples.size() / n;
        std::size_t best = lo;
        for (std::size_t k = lo; k < hi; ++k) {
            if (std::abs(samples[k]) > std::abs(samples[best])) best = k;
        }
        t.push_back(static_cast<double>(best) * signal.dt());
        i.push_back(samples[best]);
    }

    Json out;
    out["category"] = to_string(category);
    out["level_index"] = level;
    out["amplitude_mA"] = spec.amplitude_mA;
    out["duration_s"] = signal.duration();
    out["sample_rate_hz"] = signal.sample_rate();
    out["pulses"] = signal.pulses().size();
    out["t_s"] = std::move(t);
    out["i_mA"] = std::move(i);
    return json_response(200, out);
}

ServiceResponse SessionService::profiles() const {
    Json rows = Json::array();
    for (const auto& p : profiles_) rows.push_back(to_json(p));
    return json_response(200, rows);
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
    SessionService& service;
    std::vector<std::string> cors;
    httplib::Server server;

    void allow_origin(const httplib::Request& req, httplib::Response& res) const {
        if (cors.empty() || !req.has_header("Origin")) return;
        const auto origin = req.get_header_value("Origin");
        const bool any = std::find(cors.begin(), cors.end(), "*") != cors.end();
        if (!any && std::find(cors.begin(), cors.end(), origin) == cors.end()) return;
        res.set_header("Access-Control-Allow-Origin", any ? "*" : origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }

    Impl(SessionService& s, std::vector<std::string> origins) : service(s), cors(std::move(origins)) {
        auto handler = [this](const httplib::Request& req, httplib::Response& res) {
            SessionService::Query query;
            for (const auto& [key, value] : req.params) query.emplace(key, value);
            const auto out = service.handle(req.method, req.path, query, req.body);
            res.status = out.status;
            res.set_content(out.body, out.content_type);
            allow_origin(req, res);
        };
        server.Options(".*", [this](const httplib::Request& req, httplib::Response& res) {
            res.status = 204;
            allow_origin(req, res);
        });
        // SO_REUSEADDR only, so a second server on a busy port fails to bind.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
        });
        server.Get(".*", handler);
        server.Post(".*", handler);
        server.Put(".*", handler);
        server.Delete(".*", handler);
        server.Patch(".*", handler);
    }
};

HttpServer::HttpServer(SessionService& service, std::vector<std::string> cors_origins)
    : impl_(std::make_unique<Impl>(service, std::move(cors_origins))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound <= 0) throw IoError("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw IoError("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    }
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace stimkit
